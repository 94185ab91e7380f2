import math

import numpy as np
import pytest

from engine.weight_generator import WeightConfig, WeightError, compute_weights


def test_single_task_gets_all_weight():
    np.testing.assert_array_equal(compute_weights([0.3], [0.1], WeightConfig()), [1.0])


def test_gap_proportional_weights():
    weights = compute_weights([0.1, 0.2], [0.3, 0.6], WeightConfig(threshold=1.0))
    np.testing.assert_allclose(weights, [1 / 3, 2 / 3], atol=1e-15)


def test_threshold_branch():
    weights = compute_weights([2.0, 0.1], [2.5, 0.3], WeightConfig(threshold=1.0))
    np.testing.assert_allclose(weights, [5 / 6, 1 / 6], atol=1e-15)


def test_all_negative_gaps_fall_back_to_uniform():
    weights = compute_weights([0.5, 0.5], [0.4, 0.4], WeightConfig(threshold=1.0))
    np.testing.assert_array_equal(weights, [0.5, 0.5])


def test_simplex_over_random_losses():
    rng = np.random.default_rng(0)
    cfg = WeightConfig(threshold=1.0)
    for _ in range(100_000 // 50):
        support = rng.uniform(0, 2, size=(50, 4))
        query = rng.uniform(0, 2, size=(50, 4))
        for s, q in zip(support, query):
            weights = compute_weights(s, q, cfg)
            assert np.all(weights >= 0)
            assert abs(weights.sum() - 1.0) <= 1e-12


def test_larger_gap_gets_larger_weight():
    weights = compute_weights([0.1, 0.1, 0.1], [0.2, 0.5, 0.3], WeightConfig())
    assert weights[1] > weights[2] > weights[0]


def test_scaling_gaps_keeps_weights():
    support = np.array([0.1, 0.2, 0.3])
    gaps = np.array([0.05, 0.2, 0.1])
    a = compute_weights(support, support + gaps, WeightConfig())
    b = compute_weights(support, support + 3.0 * gaps, WeightConfig())
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_floor_clamps_negative_gaps():
    weights = compute_weights([0.1, 0.1], [0.0, 0.3], WeightConfig(floor=0.2))
    np.testing.assert_allclose(weights, [0.5, 0.5])


def test_signed_ablation_keeps_negative_gaps():
    weights = compute_weights([0.1, 0.1], [0.0, 0.4], WeightConfig(signed=True))
    np.testing.assert_allclose(weights, [-0.5, 1.5])


def test_default_thresholds():
    assert WeightConfig.for_loss("cross_entropy", way=5).threshold == pytest.approx(math.log(5))
    assert WeightConfig.for_loss("mse", way=1).threshold == 1.0
    assert WeightConfig.for_loss("mse", way=1, threshold=0.4).threshold == 0.4


def test_invalid_inputs():
    with pytest.raises(WeightError):
        compute_weights([0.1, float("nan")], [0.2, 0.3], WeightConfig())
    with pytest.raises(WeightError):
        compute_weights([0.1, 0.2], [0.2], WeightConfig())
    with pytest.raises(WeightError):
        WeightConfig(threshold=0.0)
    with pytest.raises(WeightError):
        WeightConfig(floor=-0.1)
