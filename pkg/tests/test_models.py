import numpy as np
import pytest

from engine.autodiff import Graph, ShapeError
from engine.models import (MlpSpec, accuracy, classification_spec, evaluate_loss, forward, init_params,
                           bind_params, predict, regression_spec)
from engine.params import ParamVector


def test_param_layout():
    spec = regression_spec()
    assert spec.layer_sizes == (1, 40, 40, 1)
    shapes = dict(spec.param_shapes())
    assert shapes == {"W1": (40, 1), "b1": (40,), "W2": (40, 40), "b2": (40,), "W3": (1, 40), "b3": (1,)}
    assert classification_spec(16, 5).layer_sizes == (16, 64, 64, 5)


def test_invalid_specs():
    with pytest.raises(ValueError):
        MlpSpec((1,), "relu")
    with pytest.raises(ValueError):
        MlpSpec((1, 4, 1), "sigmoid")


def test_init_is_deterministic_with_zero_biases():
    spec = regression_spec((8,))
    a = init_params(spec, seed=11)
    assert a == init_params(spec, seed=11)
    assert a != init_params(spec, seed=12)
    np.testing.assert_array_equal(a["b1"], np.zeros(8))
    limit = np.sqrt(6.0 / (1 + 8))
    assert np.all(np.abs(a["W1"]) <= limit)


def test_zero_weights_give_zero_output():
    spec = regression_spec((4,))
    theta = ParamVector((name, np.zeros(shape)) for name, shape in spec.param_shapes())
    out = predict(spec, theta, np.array([[1.0], [-2.0], [3.5]]))
    np.testing.assert_array_equal(out, np.zeros((3, 1)))


def test_forward_rejects_wrong_input_width():
    spec = regression_spec((4,))
    graph = Graph()
    params = bind_params(graph, init_params(spec, 0))
    with pytest.raises(ShapeError):
        forward(spec, params, graph.constant(np.zeros((3, 2))))


def test_perfect_regression_fit_has_zero_loss():
    spec = regression_spec((4,))
    theta = init_params(spec, 3)
    x = np.linspace(-1, 1, 6).reshape(-1, 1)
    y = predict(spec, theta, x)
    loss, acc = evaluate_loss(spec, theta, x, y, "mse")
    assert loss == pytest.approx(0.0, abs=1e-15)
    assert acc is None


def test_uniform_logits_classifier():
    spec = classification_spec(3, 5, (4,))
    theta = ParamVector((name, np.zeros(shape)) for name, shape in spec.param_shapes())
    rng = np.random.default_rng(0)
    x = rng.normal(size=(10_000, 3))
    y = rng.integers(0, 5, size=10_000)
    loss, acc = evaluate_loss(spec, theta, x, y, "cross_entropy")
    assert loss == pytest.approx(np.log(5), abs=1e-12)
    assert acc == pytest.approx(0.2, abs=0.02)


def test_accuracy_breaks_ties_towards_first_index():
    logits = np.array([[1.0, 1.0], [0.0, 2.0]])
    assert accuracy(logits, np.array([0, 1])) == 1.0
    assert accuracy(logits, np.array([1, 1])) == 0.5
