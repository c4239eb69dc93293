"""ROC analysis, cross-validated benchmarking, and rank-based comparison of
algorithms across test sets."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .data import LabeledDataset, stratified_folds
from .ensemble import ensemble_predict_batch, train_ensemble

ROC_GRID_SIZE = 101  # fixed false-alarm grid for vertical curve averaging


class DegenerateTestSetWarning(UserWarning):
    """A test set was missing one class; the undefined rate was reported as 0."""


def _check_scored(scores, labels):
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-d arrays of equal length")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0 or 1")
    return scores, labels


def fa_md(scores, labels, threshold: float) -> tuple[float, float]:
    """False-alarm and mis-detection rates at one decision threshold.

    A point is labeled positive exactly when its score exceeds the threshold.
    FA is the fraction of true negatives labeled positive; MD the fraction of
    true positives labeled negative. A missing class makes the corresponding
    rate 0 (with a warning) rather than 0/0.
    """
    scores, labels = _check_scored(scores, labels)
    neg = labels == 0
    pos = labels == 1
    if not neg.any() or not pos.any():
        warnings.warn("test set is missing one class; its rate is reported as 0",
                      DegenerateTestSetWarning, stacklevel=2)
    fa = float(np.mean(scores[neg] > threshold)) if neg.any() else 0.0
    md = float(np.mean(scores[pos] <= threshold)) if pos.any() else 0.0
    return fa, md


@dataclass
class RocCurve:
    """Staircase of (false alarm, detection power) points, from (0,0) to (1,1),
    both coordinates non-decreasing."""

    fa: np.ndarray
    dp: np.ndarray

    def __post_init__(self):
        self.fa = np.asarray(self.fa, dtype=float)
        self.dp = np.asarray(self.dp, dtype=float)
        if self.fa.shape != self.dp.shape or self.fa.ndim != 1 or len(self.fa) < 2:
            raise ValueError("a curve needs matching 1-d coordinate arrays")
        if (self.fa[0], self.dp[0]) != (0.0, 0.0) or (self.fa[-1], self.dp[-1]) != (1.0, 1.0):
            raise ValueError("curve must run from (0,0) to (1,1)")
        if np.any(np.diff(self.fa) < 0) or np.any(np.diff(self.dp) < 0):
            raise ValueError("curve coordinates must be non-decreasing")


def roc_curve(scores, labels) -> RocCurve:
    """Threshold sweep over the sorted distinct scores (with sentinels above
    the maximum and below the minimum), emitting one (FA, 1-MD) point per
    threshold. Equivalent to stepping the threshold by less than the smallest
    score gap."""
    scores, labels = _check_scored(scores, labels)
    if len(scores) == 0:
        raise ValueError("empty score set")
    n_neg = int(np.sum(labels == 0))
    n_pos = int(np.sum(labels == 1))

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    cum_pos = np.cumsum(sorted_labels == 1)
    cum_neg = np.cumsum(sorted_labels == 0)
    # indices where a strictly lower score starts: thresholds between groups
    last_of_group = np.flatnonzero(np.diff(sorted_scores) != 0)
    boundaries = np.concatenate([last_of_group, [len(scores) - 1]])

    fa = [0.0]
    dp = [0.0]
    for b in boundaries:
        fa.append(cum_neg[b] / n_neg if n_neg else 0.0)
        dp.append(cum_pos[b] / n_pos if n_pos else 0.0)
    fa.append(1.0)
    dp.append(1.0)

    pts = np.column_stack([fa, dp])
    keep = np.ones(len(pts), dtype=bool)
    keep[1:] = np.any(np.diff(pts, axis=0) != 0, axis=1)
    pts = pts[keep]
    return RocCurve(pts[:, 0], pts[:, 1])


def auc(curve: RocCurve) -> float:
    """Trapezoidal area under the curve over the false-alarm axis."""
    widths = np.diff(curve.fa)
    heights = 0.5 * (curve.dp[1:] + curve.dp[:-1])
    return float(np.sum(widths * heights))


def _interp_dp(curve: RocCurve, fa_grid: np.ndarray) -> np.ndarray:
    # collapse vertical segments to their upper end so interpolation is well
    # defined at duplicated false-alarm values
    fa, idx = np.unique(curve.fa, return_index=True)
    upper = np.empty(len(fa))
    bounds = np.append(idx, len(curve.fa))
    for k in range(len(fa)):
        upper[k] = curve.dp[bounds[k + 1] - 1]
    return np.interp(fa_grid, fa, upper)


def average_roc(curves: list[RocCurve]) -> RocCurve:
    """Vertical averaging: detection power interpolated on a fixed grid of
    false-alarm values and averaged across curves."""
    if len(curves) == 0:
        raise ValueError("need at least one curve")
    grid = np.linspace(0.0, 1.0, ROC_GRID_SIZE)
    mean_dp = np.mean([_interp_dp(c, grid) for c in curves], axis=0)
    if mean_dp[0] > 0.0:
        # keep the staircase anchored at the origin (vertical first segment)
        grid = np.concatenate([[0.0], grid])
        mean_dp = np.concatenate([[0.0], mean_dp])
    return RocCurve(grid, mean_dp)


@dataclass
class CrossValidationResult:
    fold_curves: list[RocCurve]
    fold_aucs: np.ndarray
    mean_auc: float
    std_auc: float
    average_curve: RocCurve
    fold_indices: list[np.ndarray] = field(default_factory=list)


def cross_validate(data: LabeledDataset, folds: int, seed: int = 0,
                   **ensemble_kwargs) -> CrossValidationResult:
    """Stratified k-fold evaluation of the full training pipeline.

    Trains an ensemble on each k-1 fold union and scores the held-out fold.
    The requested cluster count is capped by each training split's majority
    size. Reports per-fold curves and AUCs plus their mean, standard deviation
    (over folds, ddof=1) and the vertically averaged curve.
    """
    from .ensemble import derive_seeds

    fold_seed, *train_seeds = derive_seeds(seed, 1 + folds)
    fold_idx = stratified_folds(data, folds, fold_seed)
    all_idx = np.arange(data.n)

    curves, aucs = [], []
    for f in range(folds):
        test_idx = fold_idx[f]
        train_idx = np.setdiff1d(all_idx, test_idx)
        train = data.subset(train_idx)
        test = data.subset(test_idx)
        if train.n_majority == 0 or train.n_minority == 0 or \
           test.n_majority == 0 or test.n_minority == 0:
            raise ValueError(f"fold {f} left a split without both classes")
        kwargs = dict(ensemble_kwargs)
        if kwargs.get("K") is not None:
            kwargs["K"] = min(int(kwargs["K"]), train.n_majority)
        ens = train_ensemble(train, seed=train_seeds[f], **kwargs)
        scores = ensemble_predict_batch(ens, test.X)
        curve = roc_curve(scores, test.y)
        curves.append(curve)
        aucs.append(auc(curve))

    aucs = np.array(aucs)
    return CrossValidationResult(
        fold_curves=curves, fold_aucs=aucs,
        mean_auc=float(aucs.mean()),
        std_auc=float(aucs.std(ddof=1)) if folds > 1 else 0.0,
        average_curve=average_roc(curves),
        fold_indices=fold_idx,
    )


@dataclass
class RankMatrix:
    """Per-test-set ranks of algorithm AUCs; the best algorithm in a row gets
    the highest rank, ties share the average of their ranks."""

    auc_values: np.ndarray  # (m_d, m_a)
    ranks: np.ndarray  # (m_d, m_a)
    column_means: np.ndarray  # (m_a,)


def rank_matrix(auc_table) -> RankMatrix:
    table = np.asarray(auc_table, dtype=float)
    if table.ndim != 2:
        raise ValueError("AUC table must be 2-d (test sets x algorithms)")
    if not np.all(np.isfinite(table)):
        raise ValueError("AUC table has missing or non-finite entries")
    ranks = np.vstack([rankdata(row, method="average") for row in table])
    return RankMatrix(auc_values=table, ranks=ranks, column_means=ranks.mean(axis=0))


def friedman_statistic(rank_means, m_d: int, m_a: int) -> float:
    """Rank-based test statistic comparing m_a algorithms over m_d test sets;
    compare against a chi-squared distribution with m_a - 1 degrees of
    freedom."""
    rank_means = np.asarray(rank_means, dtype=float)
    if m_a < 2 or m_d < 1:
        raise ValueError("need at least 2 algorithms and 1 test set")
    if rank_means.shape != (m_a,):
        raise ValueError("one rank mean per algorithm required")
    return float(
        12.0 * m_d / (m_a * (m_a + 1))
        * (np.sum(rank_means**2) - m_a * (m_a + 1) ** 2 / 4.0)
    )
