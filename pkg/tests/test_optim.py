import numpy as np
import pytest

from engine.optim import Adam


def test_first_step_moves_by_learning_rate():
    # bias correction makes the first update lr * g / |g|
    adam = Adam(lr=0.1)
    updated = adam.step({"w": np.array([1.0, -2.0])}, {"w": np.array([0.5, -3.0])})
    np.testing.assert_allclose(updated["w"], [0.9, -1.9], atol=1e-6)


def test_minimizes_quadratic():
    adam = Adam(lr=0.05)
    params = {"w": np.array([3.0, -4.0])}
    for _ in range(2000):
        params = adam.step(params, {"w": 2.0 * params["w"]})
    np.testing.assert_allclose(params["w"], [0.0, 0.0], atol=1e-2)


def test_inputs_are_not_modified():
    adam = Adam(lr=0.1)
    w = np.array([1.0])
    adam.step({"w": w}, {"w": np.array([1.0])})
    assert w[0] == 1.0


def test_reset_only_touches_named_keys():
    adam = Adam(lr=0.1)
    params = {"w": np.array([1.0]), "s": np.array([0.0])}
    grads = {"w": np.array([1.0]), "s": np.array([1.0])}
    adam.step(params, grads)
    adam.step(params, grads)
    adam.reset(["w"])
    assert "w" not in adam.m
    assert adam.t["s"] == 2
    adam.step(params, grads)
    assert adam.t["w"] == 1


def test_rejects_non_positive_learning_rate():
    with pytest.raises(ValueError):
        Adam(lr=0.0)
