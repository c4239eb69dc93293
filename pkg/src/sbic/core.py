"""Similarity kernel: weighted distance, exponential similarity, analytic
gradients, leave-one-out / test-point scores, and the probability link.

Everything here is a pure function of its arguments.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import LabeledDataset

# Below this weighted distance the similarity gradient is non-smooth; it is
# defined as zero there so downstream residual systems stay finite.
SINGULARITY_EPS = 1e-12

# Similarity mass below this floor triggers the minority-prior fallback in the
# score functions instead of a 0/0.
DENOMINATOR_FLOOR = 1e-300


class ScoreUnderflowWarning(UserWarning):
    """Every similarity underflowed; the score fell back to the minority prior."""


@dataclass(frozen=True)
class LinkFunction:
    """CDF on [0, 1] mapping a similarity score to a class-1 probability.

    Only the uniform kind is implemented: F(z) = z clamped to
    [eps, 1 - eps], density 1. The clamp keeps log-likelihood terms finite.
    """

    kind: str = "uniform"
    clamp_epsilon: float = 1e-9

    def __post_init__(self):
        if self.kind != "uniform":
            raise ValueError(f"unsupported link kind {self.kind!r}")
        if not 0.0 < self.clamp_epsilon < 0.5:
            raise ValueError("clamp_epsilon must lie in (0, 0.5)")


def link_apply(link: LinkFunction, z):
    """Return (F(z), f(z)). Accepts scalars or arrays; clamping happens here,
    before any caller takes a log."""
    eps = link.clamp_epsilon
    F = np.clip(z, eps, 1.0 - eps)
    if np.isscalar(z) or np.ndim(z) == 0:
        return float(F), 1.0
    return F, np.ones_like(F)


def _check_dims(w, x, y):
    w = np.asarray(w, dtype=float)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (w.shape == x.shape == y.shape) or w.ndim != 1:
        raise ValueError(
            f"dimension mismatch: w has shape {w.shape}, points {x.shape} and {y.shape}"
        )
    return w, x, y


def weighted_distance(w, x, y) -> float:
    """sqrt(sum_j w_j (x_j - y_j)^2)."""
    w, x, y = _check_dims(w, x, y)
    return float(np.sqrt(np.sum(w * (x - y) ** 2)))


def similarity(w, x, y) -> float:
    """exp(-weighted_distance); 1 exactly when the weighted difference vanishes."""
    return float(np.exp(-weighted_distance(w, x, y)))


def similarity_gradients(w, x, a) -> tuple[np.ndarray, np.ndarray]:
    """Partial derivatives of S_w(x, a) with respect to w and to a.

    grad_w_j = -S (x_j - a_j)^2 / (2 d),  grad_a_j = S w_j (x_j - a_j) / d.
    Within SINGULARITY_EPS of a coincident pair both gradients are zero by
    definition (regularization, not an error).
    """
    w, x, a = _check_dims(w, x, a)
    d = np.sqrt(np.sum(w * (x - a) ** 2))
    if d <= SINGULARITY_EPS:
        return np.zeros_like(w), np.zeros_like(w)
    s = np.exp(-d)
    diff = x - a
    grad_w = -s * diff**2 / (2.0 * d)
    grad_a = s * w * diff / d
    return grad_w, grad_a


def weighted_distance_matrix(w, X, Y) -> np.ndarray:
    """Pairwise weighted distances, shape (len(X), len(Y)).

    Accumulates one (n, m) slice per dimension to avoid an (n, m, p) tensor.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    w = np.asarray(w, dtype=float)
    if X.shape[1] != Y.shape[1] or w.shape != (X.shape[1],):
        raise ValueError("dimension mismatch between weights and point sets")
    d2 = np.zeros((X.shape[0], Y.shape[0]))
    for j in range(X.shape[1]):
        d2 += w[j] * (X[:, j, None] - Y[None, :, j]) ** 2
    return np.sqrt(d2)


def similarity_matrix(w, X, Y) -> np.ndarray:
    return np.exp(-weighted_distance_matrix(w, X, Y))


def _scores(S: np.ndarray, y: np.ndarray, prior: float):
    denom = S.sum(axis=1)
    num = S @ y.astype(float)
    flags = denom < DENOMINATOR_FLOOR
    z = np.empty_like(denom)
    ok = ~flags
    z[ok] = num[ok] / denom[ok]
    z[flags] = prior
    return z, flags


def loo_scores(w, data: LabeledDataset, return_flags: bool = False):
    """Leave-one-out similarity-weighted label average z_i for every point.

    z_i = sum_{l != i} S_w(x_i, x_l) y_l / sum_{l != i} S_w(x_i, x_l), always
    in [0, 1]. Rows whose similarity mass underflows get the minority prior
    and raise a ScoreUnderflowWarning; pass return_flags=True to get the
    per-row fallback mask as well.
    """
    if data.n < 2:
        raise ValueError("leave-one-out scores need at least 2 points")
    S = similarity_matrix(w, data.X, data.X)
    np.fill_diagonal(S, 0.0)
    z, flags = _scores(S, data.y, data.n_minority / data.n)
    if flags.any():
        warnings.warn(
            f"{int(flags.sum())} leave-one-out score(s) fell back to the minority prior",
            ScoreUnderflowWarning,
            stacklevel=2,
        )
    if return_flags:
        return z, flags
    return z


def loo_score(w, data: LabeledDataset, i: int) -> float:
    """Leave-one-out score of training point i."""
    return float(loo_scores(w, data)[int(i)])


def test_scores(w, data: LabeledDataset, X_star, return_flags: bool = False):
    """Similarity-weighted label averages of test points over the whole
    training set; same fallback rules as loo_scores."""
    if data.n < 1:
        raise ValueError("empty training dataset")
    X_star = np.atleast_2d(np.asarray(X_star, dtype=float))
    S = similarity_matrix(w, X_star, data.X)
    z, flags = _scores(S, data.y, data.n_minority / data.n)
    if flags.any():
        warnings.warn(
            f"{int(flags.sum())} test score(s) fell back to the minority prior",
            ScoreUnderflowWarning,
            stacklevel=2,
        )
    if return_flags:
        return z, flags
    return z


def test_score(w, data: LabeledDataset, x_star) -> float:
    return float(test_scores(w, data, np.asarray(x_star, dtype=float)[None, :])[0])
