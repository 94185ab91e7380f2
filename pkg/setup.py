#!/usr/bin/env python3
"""
Setup script for the Meta-Learning Lab

Brings the engine and/or harness stacks up to date: stacks whose requirements
already import cleanly are skipped, the rest go through pip. With --verify the
gradient check suite runs once everything is installed.
"""

import argparse
import subprocess
import sys

from launcher import ROOT, STACKS, check_stack_dependencies, install_dependencies

MIN_PYTHON = (3, 11)
CHOICES = list(STACKS) + ["both"]


def stacks_for(choice):
    """The harness imports the engine, so it always brings the engine along"""
    if choice == "engine":
        return ["engine"]
    return ["engine", "harness"]


def bring_up(choice, force=False):
    """Install every stack behind `choice` that is missing packages; True when all are usable"""
    pending = [stack for stack in stacks_for(choice) if force or not check_stack_dependencies(stack)]
    if not pending:
        print("✅ Nothing to install")
        return True
    for stack in pending:
        if not install_dependencies(stack):
            print(f"❌ Stopped at the {STACKS[stack][0]}; later stacks were not touched")
            return False
    return True


def verify():
    """Run the gradient check suite through the launcher"""
    print("🔍 Running gradient checks...")
    result = subprocess.run([sys.executable, str(ROOT / "launcher.py"), "gradcheck"])
    if result.returncode == 0:
        print("✅ Gradient checks passed")
    else:
        print(f"❌ Gradient checks exited with code {result.returncode}")
    return result.returncode == 0


def ask_choice():
    """Interactive stack selection; None when the user backs out"""
    print("🧠 Meta-Learning Lab Setup")
    for number, choice in enumerate(CHOICES, start=1):
        label = "Engine + Harness" if choice == "both" else STACKS[choice][0]
        print(f"  [{number}] {label}")
    while True:
        try:
            answer = input(f"Stack to install (1-{len(CHOICES)}, blank to quit): ").strip()
        except (KeyboardInterrupt, EOFError):
            print()
            return None
        if not answer:
            return None
        if answer.isdigit() and 1 <= int(answer) <= len(CHOICES):
            return CHOICES[int(answer) - 1]
        if answer in CHOICES:
            return answer
        print(f"⚠️  '{answer}' is not one of the listed stacks")


def main(argv=None):
    parser = argparse.ArgumentParser(description="Meta-Learning Lab setup")
    parser.add_argument("--stack", choices=CHOICES, help="Install without the interactive menu")
    parser.add_argument("--force", action="store_true", help="Reinstall even when the packages import")
    parser.add_argument("--verify", action="store_true", help="Run the gradient checks afterwards")
    args = parser.parse_args(argv)

    if sys.version_info < MIN_PYTHON:
        print(f"❌ Python {'.'.join(map(str, MIN_PYTHON))}+ is required, found {sys.version.split()[0]}")
        return 1

    choice = args.stack or ask_choice()
    if choice is None:
        print("👋 Setup cancelled")
        return 0
    if not bring_up(choice, args.force):
        return 1
    if args.verify and "harness" in stacks_for(choice) and not verify():
        return 1
    print(f"🚀 Ready: python launcher.py train --config {ROOT / 'config' / 'sinusoid.json'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
