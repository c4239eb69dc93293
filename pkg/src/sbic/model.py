"""Penalized likelihood model: objective, analytic gradients, the stationarity
residual system, a damped least-squares solve, prediction, and persistence.

The decision variables are the p similarity weights and T absent points
(each a p-vector), so the stationarity system has (T+1)p equations. Weights
are kept nonnegative by clamping after every accepted solver step.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import core
from .core import LinkFunction, link_apply
from .data import LabeledDataset

_FD_STEP = np.sqrt(np.finfo(float).eps)


@dataclass(frozen=True)
class PenaltyConfig:
    """Lagrangian coefficients and similarity thresholds for the two
    absent-point constraints (minority side, majority side)."""

    lambda1: float = 0.0
    lambda2: float = 0.0
    Delta: float = 0.0
    delta: float = 0.0

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.Delta, self.delta) < 0:
            raise ValueError("penalty coefficients and thresholds must be nonnegative")


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 200
    residual_tolerance: float = 1e-6  # infinity norm of the residual
    step_tolerance: float = 1e-10
    seed: int = 0

    def __post_init__(self):
        if self.residual_tolerance <= 0 or self.step_tolerance <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class SolveDiagnostics:
    residual_norm: float  # 2-norm of the residual at exit
    residual_inf: float  # infinity norm at exit
    iterations: int
    converged: bool
    failure: str | None = None


@dataclass
class FittedModel:
    """Converged (weights, absent set) for one dataset. Immutable by
    convention; safe to share for concurrent prediction."""

    weights: np.ndarray
    absent: np.ndarray  # shape (T, p); row t is one absent point
    penalty: PenaltyConfig
    training_data: LabeledDataset
    link: LinkFunction
    diagnostics: SolveDiagnostics

    @property
    def p(self) -> int:
        return len(self.weights)

    @property
    def T(self) -> int:
        return self.absent.shape[0]


def log_likelihood(w, data: LabeledDataset, link: LinkFunction) -> float:
    """Bernoulli log-likelihood of the labels under leave-one-out scores.

    Clamped link values keep every term finite, so the result is always a
    finite number <= 0.
    """
    z = core.loo_scores(w, data)
    F, _ = link_apply(link, z)
    y = data.y.astype(float)
    return float(np.sum(y * np.log(F) + (1.0 - y) * np.log(1.0 - F)))


def penalty_sums(w, absent, data: LabeledDataset) -> tuple[float, float]:
    """Total absent-to-minority and absent-to-majority similarity."""
    absent = np.atleast_2d(absent)
    if absent.shape[0] == 0:
        return 0.0, 0.0
    s_min = float(core.similarity_matrix(w, data.minority_X, absent).sum())
    s_maj = float(core.similarity_matrix(w, data.majority_X, absent).sum())
    return s_min, s_maj


def penalized_objective(w, absent, data: LabeledDataset, penalty: PenaltyConfig,
                        link: LinkFunction) -> float:
    """Log-likelihood plus the two weighted constraint-slack terms."""
    l = log_likelihood(w, data, link)
    if penalty.lambda1 == 0.0 and penalty.lambda2 == 0.0:
        return l
    s_min, s_maj = penalty_sums(w, absent, data)
    return (
        l
        + penalty.lambda1 * (s_min - penalty.Delta)
        + penalty.lambda2 * (s_maj - penalty.delta)
    )


def _pairwise_sq_diff(X, Y, j):
    return (X[:, j, None] - Y[None, :, j]) ** 2


def _likelihood_grad_w(w, data: LabeledDataset, link: LinkFunction) -> np.ndarray:
    """d(log-likelihood)/dw via the quotient rule on the leave-one-out scores.

    Rows whose similarity mass underflowed are treated as locally constant
    (their score is the prior fallback) and contribute nothing.
    """
    X, y = data.X, data.y.astype(float)
    n, p = X.shape
    d = core.weighted_distance_matrix(w, X, X)
    S = np.exp(-d)
    np.fill_diagonal(S, 0.0)

    A = S.sum(axis=1)
    AY = S @ y
    ok = A >= core.DENOMINATOR_FLOOR
    z = np.where(ok, AY / np.where(ok, A, 1.0), data.n_minority / data.n)
    F, f = link_apply(link, z)
    c = (y - F) * f / (F * (1.0 - F))

    # similarity derivative factor -S / (2 d), zero at (near-)coincident pairs
    with np.errstate(divide="ignore", invalid="ignore"):
        base = np.where(d > core.SINGULARITY_EPS, -S / (2.0 * d), 0.0)

    grad = np.empty(p)
    A2 = np.where(ok, A * A, 1.0)
    for j in range(p):
        Sdot = base * _pairwise_sq_diff(X, X, j)
        Nj = Sdot.sum(axis=1)
        Bj = Sdot @ y
        dz = np.where(ok, (A * Bj - AY * Nj) / A2, 0.0)
        grad[j] = np.sum(c * dz)
    return grad


def _penalty_grad_w(w, absent, data: LabeledDataset, penalty: PenaltyConfig) -> np.ndarray:
    """Gradient of the constraint-slack terms with respect to the weights."""
    p = len(w)
    absent = np.atleast_2d(absent)
    grad = np.zeros(p)
    if absent.shape[0] == 0 or (penalty.lambda1 == 0.0 and penalty.lambda2 == 0.0):
        return grad
    for lam, pts in ((penalty.lambda1, data.minority_X), (penalty.lambda2, data.majority_X)):
        if lam == 0.0 or len(pts) == 0:
            continue
        d = core.weighted_distance_matrix(w, pts, absent)
        with np.errstate(divide="ignore", invalid="ignore"):
            base = np.where(d > core.SINGULARITY_EPS, -np.exp(-d) / (2.0 * d), 0.0)
        for j in range(p):
            grad[j] += lam * np.sum(base * _pairwise_sq_diff(pts, absent, j))
    return grad


def gradient_weights(w, absent, data: LabeledDataset, penalty: PenaltyConfig,
                     link: LinkFunction) -> np.ndarray:
    """Analytic d(objective)/dw: likelihood part plus penalty part."""
    return _likelihood_grad_w(w, data, link) + _penalty_grad_w(w, absent, data, penalty)


def gradient_absent(w, absent, data: LabeledDataset, penalty: PenaltyConfig) -> np.ndarray:
    """Analytic d(objective)/d(absent points), shape (T, p).

    Only the penalty terms involve the absent points, so both coefficients at
    zero give an exactly zero matrix.
    """
    absent = np.atleast_2d(absent)
    T, p = absent.shape
    grad = np.zeros((T, p))
    if T == 0:
        return grad
    w = np.asarray(w, dtype=float)
    for lam, pts in ((penalty.lambda1, data.minority_X), (penalty.lambda2, data.majority_X)):
        if lam == 0.0 or len(pts) == 0:
            continue
        d = core.weighted_distance_matrix(w, pts, absent)  # (n_pts, T)
        with np.errstate(divide="ignore", invalid="ignore"):
            base = np.where(d > core.SINGULARITY_EPS, np.exp(-d) / d, 0.0)
        for j in range(p):
            diff = pts[:, j, None] - absent[None, :, j]  # (n_pts, T)
            grad[:, j] += lam * w[j] * (base * diff).sum(axis=0)
    return grad


def residual_system(w, absent, data: LabeledDataset, penalty: PenaltyConfig,
                    link: LinkFunction) -> np.ndarray:
    """The (T+1)p stationarity conditions: [d/dw ; vectorized d/d(absent)].

    Zero exactly at stationary points of the penalized objective; its squared
    2-norm is the least-squares objective the solver minimizes.
    """
    rw = gradient_weights(w, absent, data, penalty, link)
    ra = gradient_absent(w, absent, data, penalty)
    return np.concatenate([rw, ra.ravel()])


def _residual_parts(w, absent, data, penalty, link, lik_grad=None):
    if lik_grad is None:
        lik_grad = _likelihood_grad_w(w, data, link)
    rw = lik_grad + _penalty_grad_w(w, absent, data, penalty)
    ra = gradient_absent(w, absent, data, penalty)
    return np.concatenate([rw, ra.ravel()])


def _fd_jacobian(w, absent, data, penalty, link, r0, lik_grad0):
    """Forward-difference Jacobian of the residual system.

    Perturbing an absent coordinate cannot change the likelihood block, so
    those columns reuse the cached likelihood gradient; only weight columns
    pay for a full recomputation.
    """
    p = len(w)
    T = absent.shape[0]
    m = p + T * p
    J = np.empty((m, m))
    for j in range(p):
        h = _FD_STEP * max(1.0, abs(w[j]))
        wj = w.copy()
        wj[j] += h
        J[:, j] = (_residual_parts(wj, absent, data, penalty, link) - r0) / h
    flat = absent.ravel()
    for k in range(T * p):
        h = _FD_STEP * max(1.0, abs(flat[k]))
        fk = flat.copy()
        fk[k] += h
        J[:, p + k] = (
            _residual_parts(w, fk.reshape(T, p), data, penalty, link, lik_grad=lik_grad0) - r0
        ) / h
    return J


def default_absent_init(data: LabeledDataset, T: int, rng: np.random.Generator) -> np.ndarray:
    """Midpoints of randomly paired (minority, majority) points: starts the
    absent set near the class boundary."""
    mins = data.minority_X
    majs = data.majority_X
    pts = np.empty((T, data.p))
    for t in range(T):
        i = rng.integers(len(mins))
        j = rng.integers(len(majs))
        pts[t] = 0.5 * (mins[i] + majs[j])
    return pts


# Iteration budget for the absent-point settling phase that precedes the
# least-squares polish. The absent subproblem (weights held fixed) is a plain
# similarity-attraction landscape whose nearby local maximum is exactly where
# the formulation wants the absent points; starting the polish there keeps the
# coupled solve inside the right basin.
SETTLE_ITERATIONS = 100


def _settle_absent(data, penalty, w, A):
    """Backtracking gradient ascent on the absent block only.

    Maximizes the penalty part of the objective over the absent points with
    the weights frozen; a no-op when both coefficients are zero or there are
    no absent points.
    """
    if A.shape[0] == 0 or (penalty.lambda1 == 0.0 and penalty.lambda2 == 0.0):
        return A

    def pen_value(A_):
        s_min, s_maj = penalty_sums(w, A_, data)
        return penalty.lambda1 * s_min + penalty.lambda2 * s_maj

    g = pen_value(A)
    alpha = 1.0
    for _ in range(SETTLE_ITERATIONS):
        grad = gradient_absent(w, A, data, penalty)
        grad_inf = float(np.max(np.abs(grad)))
        if not np.isfinite(grad_inf) or grad_inf <= 1e-8:
            break
        improved = False
        for _ in range(40):
            A_t = A + alpha * grad
            g_t = pen_value(A_t)
            if np.isfinite(g_t) and g_t > g:
                A, g = A_t, g_t
                improved = True
                alpha *= 1.5
                break
            alpha *= 0.5
        if not improved:
            break
    return A


def _run_lm(data, penalty, link, solver, w0, absent0, iteration_callback=None):
    """Damped least-squares iteration on the stationarity residual system.

    Steps are accepted only when they reduce the squared residual (damping
    grows geometrically otherwise, following the usual gain-ratio rule), and
    the weight block is clamped at zero after every trial step, so the final
    residual norm never exceeds the starting one and weights stay feasible
    throughout.
    """
    p = len(w0)
    T = absent0.shape[0]
    w = np.maximum(np.asarray(w0, dtype=float).copy(), 0.0)
    A = np.asarray(absent0, dtype=float).copy().reshape(T, p)

    lik = _likelihood_grad_w(w, data, link)
    r = _residual_parts(w, A, data, penalty, link, lik_grad=lik)
    if not np.all(np.isfinite(r)):
        return w, A, SolveDiagnostics(np.inf, np.inf, 0, False, failure="nan")
    cost = float(r @ r)
    mu = None
    nu = 2.0
    iterations = 0
    converged = float(np.max(np.abs(r))) <= solver.residual_tolerance

    for it in range(1, solver.max_iterations + 1):
        if converged:
            break
        iterations = it
        J = _fd_jacobian(w, A, data, penalty, link, r, lik)
        if not np.all(np.isfinite(J)):
            return w, A, SolveDiagnostics(
                float(np.linalg.norm(r)), float(np.max(np.abs(r))), iterations, False,
                failure="nan",
            )
        JtJ = J.T @ J
        Jtr = J.T @ r
        if mu is None:
            mu = 1e-3 * max(float(np.max(np.diag(JtJ))), 1e-12)

        accepted = False
        delta = None
        for _ in range(60):
            try:
                delta = np.linalg.solve(JtJ + mu * np.eye(len(Jtr)), -Jtr)
            except np.linalg.LinAlgError:
                mu *= nu
                nu *= 2.0
                continue
            w_t = np.maximum(w + delta[:p], 0.0)
            A_t = A + delta[p:].reshape(T, p)
            lik_t = _likelihood_grad_w(w_t, data, link)
            r_t = _residual_parts(w_t, A_t, data, penalty, link, lik_grad=lik_t)
            cost_t = float(r_t @ r_t) if np.all(np.isfinite(r_t)) else np.inf
            if cost_t < cost:
                predicted = float(delta @ (mu * delta - Jtr))
                rho = (cost - cost_t) / predicted if predicted > 0 else 0.0
                step = float(np.linalg.norm(np.concatenate([w_t - w, (A_t - A).ravel()])))
                w, A, r, lik, cost = w_t, A_t, r_t, lik_t, cost_t
                mu = mu * max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
                nu = 2.0
                accepted = True
                break
            mu *= nu
            nu *= 2.0
        if iteration_callback is not None:
            iteration_callback(w.copy(), A.copy())
        if not accepted:
            # damping exhausted without an improving step: step collapse
            converged = delta is not None and float(np.linalg.norm(delta)) <= solver.step_tolerance
            break
        if float(np.max(np.abs(r))) <= solver.residual_tolerance or step <= solver.step_tolerance:
            converged = True

    return w, A, SolveDiagnostics(
        residual_norm=float(np.linalg.norm(r)),
        residual_inf=float(np.max(np.abs(r))),
        iterations=iterations,
        converged=bool(converged),
    )


def solve_stationary(data: LabeledDataset, penalty: PenaltyConfig,
                     link: LinkFunction | None = None,
                     solver: SolverConfig | None = None,
                     T: int | None = None,
                     init: tuple[np.ndarray, np.ndarray] | None = None,
                     iteration_callback=None) -> FittedModel:
    """Fit weights and absent points by driving the stationarity residuals to
    zero with the damped least-squares iteration.

    T defaults to the input dimension p. T=0 is the degenerate
    similarity-only mode (no absent points, only the weight equations). If the
    residuals go non-finite the solve restarts once from a perturbed start
    before reporting failure in the diagnostics.
    """
    if data.n_majority == 0 or data.n_minority == 0:
        raise ValueError("training data must contain both classes")
    link = link or LinkFunction()
    solver = solver or SolverConfig()
    p = data.p

    if init is not None:
        w0 = np.asarray(init[0], dtype=float).copy()
        absent0 = np.atleast_2d(np.asarray(init[1], dtype=float)).copy()
        if absent0.size == 0:
            absent0 = absent0.reshape(0, p)
        if w0.shape != (p,) or absent0.shape[1] != p:
            raise ValueError("init shapes do not match the data dimension")
    else:
        T_eff = p if T is None else int(T)
        if T_eff < 0:
            raise ValueError("T must be nonnegative")
        rng = np.random.default_rng(solver.seed)
        w0 = np.ones(p)
        absent0 = default_absent_init(data, T_eff, rng) if T_eff > 0 else np.empty((0, p))

    w1, A1 = _ascent_phase(data, penalty, link, solver, np.maximum(w0, 0.0), absent0.copy(),
                           iteration_callback)
    w, A, diag = _run_lm(data, penalty, link, solver, w1, A1, iteration_callback)
    if diag.failure == "nan":
        rng = np.random.default_rng(solver.seed + 1)
        w_r = np.maximum(w0 + 0.01 * rng.standard_normal(p), 0.0)
        A_r = absent0 + (0.01 * rng.standard_normal(absent0.shape) if absent0.size else 0.0)
        w1, A1 = _ascent_phase(data, penalty, link, solver, w_r, A_r)
        w, A, diag = _run_lm(data, penalty, link, solver, w1, A1, iteration_callback)
        if diag.failure == "nan":
            diag.failure = "nan residuals after one restart"

    return FittedModel(weights=w, absent=A, penalty=penalty, training_data=data,
                       link=link, diagnostics=diag)


def fit_esf(data: LabeledDataset, link: LinkFunction | None = None,
            solver: SolverConfig | None = None) -> FittedModel:
    """Similarity-only classifier: zero penalty coefficients, no absent points."""
    return solve_stationary(data, PenaltyConfig(0.0, 0.0, 0.0, 0.0), link, solver, T=0)


def predict_proba(model: FittedModel, x_star) -> float:
    """P(y = 1 | x*) = F(test score); always within the link clamp."""
    z = core.test_score(model.weights, model.training_data, x_star)
    F, _ = link_apply(model.link, z)
    return F


def predict_proba_batch(model: FittedModel, X_star) -> np.ndarray:
    z = core.test_scores(model.weights, model.training_data, X_star)
    F, _ = link_apply(model.link, z)
    return F


# ---------------------------------------------------------------------------
# persistence: flat text document, fixed field order, 17 significant digits

FORMAT_VERSION = 1


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def model_to_text(model: FittedModel) -> str:
    lines = [
        f"version {FORMAT_VERSION}",
        f"p {model.p}",
        f"T {model.T}",
        "w " + " ".join(_fmt(v) for v in model.weights),
    ]
    for t in range(model.T):
        lines.append("absent " + " ".join(_fmt(v) for v in model.absent[t]))
    lines += [
        f"lambda1 {_fmt(model.penalty.lambda1)}",
        f"lambda2 {_fmt(model.penalty.lambda2)}",
        f"Delta {_fmt(model.penalty.Delta)}",
        f"delta {_fmt(model.penalty.delta)}",
        f"link {model.link.kind}",
        f"checksum {model.training_data.checksum()}",
    ]
    return "\n".join(lines) + "\n"


def save_model(model: FittedModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(model_to_text(model))


def model_from_text(text: str, training_data: LabeledDataset) -> FittedModel:
    """Rebuild a model from its flat document. The training data must be
    supplied by the caller and is verified against the stored checksum."""
    fields: list[tuple[str, str]] = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        key, _, value = line.partition(" ")
        fields.append((key, value))
    kv = {}
    absent_rows = []
    for key, value in fields:
        if key == "absent":
            absent_rows.append([float(v) for v in value.split()])
        else:
            kv[key] = value
    if int(kv["version"]) != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {kv['version']}")
    p = int(kv["p"])
    T = int(kv["T"])
    w = np.array([float(v) for v in kv["w"].split()])
    if w.shape != (p,) or len(absent_rows) != T:
        raise ValueError("model document is inconsistent with its declared shape")
    absent = np.array(absent_rows, dtype=float).reshape(T, p)
    if kv["checksum"] != training_data.checksum():
        raise ValueError("training data checksum mismatch")
    penalty = PenaltyConfig(
        lambda1=float(kv["lambda1"]), lambda2=float(kv["lambda2"]),
        Delta=float(kv["Delta"]), delta=float(kv["delta"]),
    )
    return FittedModel(
        weights=w, absent=absent, penalty=penalty, training_data=training_data,
        link=LinkFunction(kind=kv["link"]),
        diagnostics=SolveDiagnostics(np.nan, np.nan, 0, True, failure=None),
    )


def load_model(path, training_data: LabeledDataset) -> FittedModel:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_text(fh.read(), training_data)
