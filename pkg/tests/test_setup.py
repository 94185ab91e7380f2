"""
Tests for the dependency installer
"""

import setup


def test_harness_brings_the_engine_along():
    assert setup.stacks_for("engine") == ["engine"]
    assert setup.stacks_for("harness") == ["engine", "harness"]
    assert setup.stacks_for("both") == ["engine", "harness"]


def test_satisfied_stacks_are_skipped(monkeypatch):
    installed = []
    monkeypatch.setattr(setup, "check_stack_dependencies", lambda stack: stack == "engine")
    monkeypatch.setattr(setup, "install_dependencies", lambda stack: installed.append(stack) or True)
    assert setup.bring_up("both")
    assert installed == ["harness"]


def test_force_reinstalls_and_stops_at_first_failure(monkeypatch):
    installed = []
    monkeypatch.setattr(setup, "check_stack_dependencies", lambda stack: True)
    monkeypatch.setattr(setup, "install_dependencies", lambda stack: installed.append(stack) and False)
    assert not setup.bring_up("both", force=True)
    assert installed == ["engine"]


def test_blank_answer_cancels(monkeypatch):
    monkeypatch.setattr("builtins.input", lambda prompt: "")
    assert setup.main([]) == 0


def test_menu_accepts_numbers_and_names(monkeypatch):
    answers = iter(["9", "harness"])
    monkeypatch.setattr("builtins.input", lambda prompt: next(answers))
    assert setup.ask_choice() == "harness"
