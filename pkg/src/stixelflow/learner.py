"""Per-stixel base learner.

The default is L2-regularized logistic regression on (bias, env) trained
by full-batch gradient descent: fixed iteration count, fixed step, zero
initialization. The bias column is not regularized. Everything is plain
numpy on small dense matrices, so training a stixel is deterministic given
the (order-normalized) subset.

Any object with the same ``train`` / ``predict_probability`` surface can
be swapped in; the pipeline does not care what the learner is.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def sigmoid_scalar(z: float) -> float:
    """Numerically stable logistic function for one value."""
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


@dataclass(frozen=True)
class LogisticGD:
    """Full-batch gradient-descent logistic regression.

    Defaults are the run defaults: 200 iterations, step 0.1, L2 0.001.
    The update is

        p = 1 / (1 + exp(-Xb w))
        w = decay * w - (step / n) * Xb^T (p - y)

    with decay = 1 - step * l2 on every weight except the bias. An exp
    overflow in the hot loop is harmless (p saturates at 0 exactly), so
    the loop runs with overflow warnings suppressed.
    """

    iterations: int = 200
    step: float = 0.1
    l2: float = 0.001

    def train(self, X: np.ndarray, y: np.ndarray, seed: int = 0) -> tuple[float, ...]:
        """Weights (bias first) for features X (n x D) and labels y in {0,1}.

        Zero initialization makes the seed irrelevant here; it stays in the
        signature so stochastic learners can plug in without interface
        changes.
        """
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if not np.all(np.isfinite(X)):
            raise ValueError("non-finite covariates in training matrix")
        n, d = X.shape
        Xb = np.hstack([np.ones((n, 1)), X])
        XbT = np.ascontiguousarray(Xb.T)
        w = np.zeros(d + 1, dtype=np.float64)
        decay = np.full(d + 1, 1.0 - self.step * self.l2)
        decay[0] = 1.0  # bias is not penalized
        scale = self.step / n
        with np.errstate(over="ignore"):
            for _ in range(self.iterations):
                p = 1.0 / (1.0 + np.exp(-(Xb @ w)))
                w = decay * w - scale * (XbT @ (p - y))
        return tuple(float(v) for v in w)

    def predict_probability(self, weights: tuple[float, ...], env) -> float:
        """Occurrence probability for one environment vector."""
        z = weights[0]
        for wj, xj in zip(weights[1:], env):
            z += wj * xj
        return sigmoid_scalar(z)


def default_learner() -> LogisticGD:
    return LogisticGD()
