from __future__ import annotations

import numpy as np
import pytest

from stixelflow.learner import LogisticGD, default_learner, sigmoid_scalar
from stixelflow.rng import SplitMix64

from .oracles import scalar_logistic_gd, scalar_predict


def random_problem(seed: int, n: int, d: int, separable: bool = False):
    rng = SplitMix64(seed)
    rows = [[rng.uniform(-2.0, 2.0) for _ in range(d)] for _ in range(n)]
    if separable:
        # wide margin on the first covariate decides the label
        for i, row in enumerate(rows):
            row[0] += 3.0 if i % 2 == 0 else -3.0
        y = [1.0 if i % 2 == 0 else 0.0 for i in range(n)]
    else:
        y = [1.0 if rng.uniform() < 0.5 else 0.0 for _ in range(n)]
    return rows, y


def test_matches_scalar_gradient_descent_oracle():
    for seed, n, d in [(1, 12, 3), (2, 25, 5), (3, 40, 8), (4, 10, 1)]:
        rows, y = random_problem(seed, n, d)
        got = default_learner().train(np.asarray(rows), np.asarray(y))
        want = scalar_logistic_gd(rows, y)
        assert np.allclose(got, want, rtol=0, atol=1e-9), (seed, got, want)


def test_predict_probability_matches_oracle():
    rows, y = random_problem(5, 20, 4)
    learner = default_learner()
    w = learner.train(np.asarray(rows), np.asarray(y))
    for row in rows[:5]:
        assert learner.predict_probability(w, row) == pytest.approx(
            scalar_predict(list(w), row), abs=1e-12)


def test_all_present_subset_predicts_presence_at_mean_env():
    # 50 observations, every count positive: probability at the mean
    # environment must exceed one half after training
    rng = SplitMix64(77)
    rows = [[rng.uniform(-1.0, 1.0) for _ in range(4)] for _ in range(50)]
    y = [1.0] * 50
    learner = default_learner()
    w = learner.train(np.asarray(rows), np.asarray(y))
    mean_env = [sum(col) / len(rows) for col in zip(*rows)]
    assert learner.predict_probability(w, mean_env) > 0.5


def test_separable_subset_reaches_high_training_accuracy():
    rows, y = random_problem(6, 40, 3, separable=True)
    learner = default_learner()
    w = learner.train(np.asarray(rows), np.asarray(y))
    correct = sum(
        1 for row, label in zip(rows, y)
        if (learner.predict_probability(w, row) >= 0.5) == (label == 1.0))
    assert correct / len(rows) >= 0.9


def test_training_is_deterministic():
    rows, y = random_problem(8, 30, 5)
    a = default_learner().train(np.asarray(rows), np.asarray(y))
    b = default_learner().train(np.asarray(rows), np.asarray(y))
    assert a == b


def test_non_finite_covariates_rejected():
    X = np.asarray([[1.0, float("nan")], [0.0, 1.0]])
    with pytest.raises(ValueError):
        default_learner().train(X, np.asarray([1.0, 0.0]))


def test_bias_is_not_regularized():
    # with pure-noise features and all-positive labels, the bias keeps
    # climbing while regularized weights stay near zero
    rows = [[0.0] for _ in range(20)]
    y = [1.0] * 20
    w = LogisticGD(iterations=500).train(np.asarray(rows), np.asarray(y))
    assert w[0] > 1.0
    assert abs(w[1]) < 1e-9


def test_sigmoid_scalar_stability():
    assert sigmoid_scalar(0.0) == 0.5
    assert sigmoid_scalar(800.0) == 1.0
    assert sigmoid_scalar(-800.0) == pytest.approx(0.0, abs=1e-300)
