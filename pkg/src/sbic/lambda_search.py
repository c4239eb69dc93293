"""Constraint thresholds and exhaustive grid selection of the Lagrangian
coefficients by the relaxation value."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import core, model
from .core import LinkFunction
from .data import LabeledDataset
from .model import FittedModel, PenaltyConfig, SolverConfig

DEFAULT_LAMBDA1 = (0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35)
DEFAULT_LAMBDA2 = (0.5, 1.0, 3.0, 5.0, 7.0, 9.0, 11.0)


class ThresholdWarning(UserWarning):
    """A class had fewer than 2 points; its threshold was reported as 0."""


@dataclass(frozen=True)
class LambdaGrid:
    lambda1_candidates: tuple[float, ...] = DEFAULT_LAMBDA1
    lambda2_candidates: tuple[float, ...] = DEFAULT_LAMBDA2

    def __post_init__(self):
        for cands in (self.lambda1_candidates, self.lambda2_candidates):
            if len(cands) == 0:
                raise ValueError("candidate sets must be nonempty")
            if min(cands) < 0:
                raise ValueError("candidate coefficients must be nonnegative")


def compute_thresholds(w, minority_X, majority_X, T: int) -> tuple[float, float]:
    """Similarity thresholds for the two constraints.

    Minority side: T/n+ times the total pairwise minority similarity, i.e. the
    absent points should be at least as similar to the minority as the
    minority points are to each other, on average. Majority side: the same
    construction over the undersampled majority block scaled by a further 1/4.
    Classes with fewer than 2 points get a zero threshold and a warning.
    """
    w = np.asarray(w, dtype=float)
    minority_X = np.atleast_2d(minority_X)
    majority_X = np.atleast_2d(majority_X)

    def upper_sum(pts):
        S = core.similarity_matrix(w, pts, pts)
        return float(S[np.triu_indices(len(pts), k=1)].sum())

    if len(minority_X) < 2:
        warnings.warn("fewer than 2 minority points; Delta set to 0", ThresholdWarning,
                      stacklevel=2)
        Delta = 0.0
    else:
        Delta = T / len(minority_X) * upper_sum(minority_X)
    if len(majority_X) < 2:
        warnings.warn("fewer than 2 majority points; delta set to 0", ThresholdWarning,
                      stacklevel=2)
        delta = 0.0
    else:
        delta = T / (4.0 * len(majority_X)) * upper_sum(majority_X)
    return Delta, delta


@dataclass
class GridCell:
    lambda1: float
    lambda2: float
    r_value: float
    model: FittedModel


@dataclass
class GridSelection:
    """Outcome of a grid search: the chosen coefficients with their fitted
    model and relaxation value, plus per-cell diagnostics."""

    penalty: PenaltyConfig
    model: FittedModel
    r_value: float
    unconstrained: FittedModel
    cells: list[GridCell] = field(default_factory=list)


def grid_select(data: LabeledDataset, grid: LambdaGrid | None = None,
                link: LinkFunction | None = None,
                solver: SolverConfig | None = None,
                T: int | None = None) -> GridSelection:
    """Pick the Lagrangian coefficients minimizing the relaxation value.

    First fits the unconstrained model (both coefficients zero, no absent
    points) to obtain the weights used for the thresholds and to warm-start
    every grid cell. Each cell then solves the full stationarity system and
    is scored by the penalized objective at its solution. Ties are broken
    toward the smaller lambda2, then the smaller lambda1. If no cell
    converged, the cell with the smallest residual norm is returned instead,
    still flagged non-converged in its diagnostics.
    """
    grid = grid or LambdaGrid()
    link = link or LinkFunction()
    solver = solver or SolverConfig()
    T_eff = data.p if T is None else int(T)
    if T_eff < 1:
        raise ValueError("grid selection needs at least one absent point")

    unconstrained = model.solve_stationary(
        data, PenaltyConfig(), link, solver, init=(np.ones(data.p), np.empty((0, data.p)))
    )
    Delta, delta = compute_thresholds(
        unconstrained.weights, data.minority_X, data.majority_X, T_eff
    )
    rng = np.random.default_rng(solver.seed)
    absent0 = model.default_absent_init(data, T_eff, rng)

    # Grid cells start from all-ones weights rather than the unconstrained
    # optimum: when the likelihood maximizer runs off to large weights the
    # absent-point similarities underflow there and the penalty terms can no
    # longer steer the solve.
    w_start = np.ones(data.p)
    cells = []
    for lam2 in sorted(grid.lambda2_candidates):
        for lam1 in sorted(grid.lambda1_candidates):
            penalty = PenaltyConfig(lam1, lam2, Delta, delta)
            fitted = model.solve_stationary(
                data, penalty, link, solver,
                init=(w_start.copy(), absent0.copy()),
            )
            r_val = model.penalized_objective(
                fitted.weights, fitted.absent, data, penalty, link
            )
            cells.append(GridCell(lam1, lam2, r_val, fitted))

    converged = [c for c in cells if c.model.diagnostics.converged]
    pool = converged if converged else cells
    if converged:
        best = min(pool, key=lambda c: (c.r_value, c.lambda2, c.lambda1))
    else:
        best = min(pool, key=lambda c: (c.model.diagnostics.residual_norm, c.lambda2, c.lambda1))
    return GridSelection(
        penalty=best.model.penalty, model=best.model, r_value=best.r_value,
        unconstrained=unconstrained, cells=cells,
    )
