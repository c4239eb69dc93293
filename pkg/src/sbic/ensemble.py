"""Cluster-based undersampling ensemble: k-means over the majority inputs,
member dataset construction, per-member coefficient selection, and averaged
probability prediction."""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace

import numpy as np

from . import model as model_mod
from .core import LinkFunction
from .data import LabeledDataset
from .lambda_search import LambdaGrid, grid_select
from .model import FittedModel, SolverConfig, model_to_text, model_from_text


def derive_seeds(seed: int, n: int) -> list[int]:
    """Deterministically expand one root seed into n independent sub-seeds.

    Root -> (clustering, undersampling, one per ensemble member, ...); the
    k-th sub-seed never changes when unrelated configuration does.
    """
    children = np.random.SeedSequence(seed).spawn(n)
    return [int(c.generate_state(1)[0]) for c in children]


@dataclass
class ClusterAssignment:
    centroids: np.ndarray  # (K, p)
    labels: np.ndarray  # (n,) cluster index per point

    @property
    def K(self) -> int:
        return self.centroids.shape[0]

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.labels == k)


def _sq_dist_to(points, centroid):
    return np.sum((points - centroid) ** 2, axis=1)


def _plusplus_init(points, K, rng):
    n = len(points)
    chosen = [int(rng.integers(n))]
    d2 = _sq_dist_to(points, points[chosen[0]])
    while len(chosen) < K:
        total = d2.sum()
        if total <= 0.0:
            # all remaining mass at distance zero: fall back to an unchosen index
            remaining = np.setdiff1d(np.arange(n), np.array(chosen))
            idx = int(remaining[rng.integers(len(remaining))])
        else:
            idx = int(rng.choice(n, p=d2 / total))
        chosen.append(idx)
        d2 = np.minimum(d2, _sq_dist_to(points, points[idx]))
    return points[np.array(chosen)].copy()


def kmeans(points, K: int, seed: int, max_iterations: int = 100) -> ClusterAssignment:
    """Lloyd iterations from k-means++ seeding until the assignment stops
    changing (or the iteration cap). Deterministic given the seed. An empty
    cluster is repaired by stealing the point currently farthest from its own
    centroid."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(points)
    if not 1 <= K <= n:
        raise ValueError(f"K must be between 1 and the number of points ({n}), got {K}")
    rng = np.random.default_rng(seed)
    centroids = _plusplus_init(points, K, rng)

    labels = np.full(n, -1)
    for _ in range(max_iterations):
        dists = np.stack([_sq_dist_to(points, c) for c in centroids])  # (K, n)
        new_labels = np.argmin(dists, axis=0)

        # repair empties: move over the globally worst-fitting point
        for k in range(K):
            if np.any(new_labels == k):
                continue
            own = dists[new_labels, np.arange(n)].copy()
            # only steal from clusters that keep at least one point
            counts = np.bincount(new_labels, minlength=K)
            own[counts[new_labels] <= 1] = -np.inf
            new_labels[int(np.argmax(own))] = k

        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for k in range(K):
            centroids[k] = points[labels == k].mean(axis=0)
    return ClusterAssignment(centroids=centroids, labels=labels)


def build_undersampled(data: LabeledDataset, clusters: ClusterAssignment,
                       U: int, seed: int) -> list[LabeledDataset]:
    """U datasets, each pairing one uniformly drawn majority point per cluster
    with every minority point. Draws are independent across datasets and
    clusters. Majority representatives keep their original block order, so
    singleton clusters reproduce the majority set exactly."""
    if U < 1:
        raise ValueError("U must be at least 1")
    maj_idx_all = np.arange(data.n_majority)
    covered = np.unique(clusters.labels)
    if len(clusters.labels) != data.n_majority:
        raise ValueError("cluster assignment does not cover the majority block")
    rng = np.random.default_rng(seed)
    minority_rows = np.arange(data.n_majority, data.n)
    out = []
    for _ in range(U):
        reps = []
        for k in range(clusters.K):
            members = maj_idx_all[clusters.labels == k]
            reps.append(int(members[rng.integers(len(members))]))
        reps = np.sort(np.array(reps, dtype=int))
        idx = np.concatenate([reps, minority_rows])
        out.append(data.subset(idx))
    return out


@dataclass
class MemberReport:
    """Training diagnostics for one ensemble member."""

    index: int
    lambda1: float
    lambda2: float
    Delta: float
    delta: float
    r_value: float
    residual_norm: float
    iterations: int
    converged: bool
    esf: bool


@dataclass
class SbicEnsemble:
    members: list[FittedModel]
    member_data: list[LabeledDataset]
    priors: np.ndarray
    clustering: ClusterAssignment | None = None
    reports: list[MemberReport] = field(default_factory=list)
    scale: float = 1.0  # normalization applied to the training inputs
    seed: int = 0

    def __post_init__(self):
        self.priors = np.asarray(self.priors, dtype=float)
        if len(self.members) != len(self.member_data) or len(self.members) != len(self.priors):
            raise ValueError("members, member_data and priors must align")
        if np.any(self.priors < 0) or abs(self.priors.sum() - 1.0) > 1e-12:
            raise ValueError("priors must be nonnegative and sum to 1")

    @property
    def U(self) -> int:
        return len(self.members)

    @property
    def p(self) -> int:
        return self.members[0].p


def default_cluster_count(data: LabeledDataset) -> int:
    """Guidance default: at least 50 clusters when feasible, capped by the
    majority size, and scaled with the minority size."""
    return min(data.n_majority, max(50, 3 * data.n_minority))


def train_ensemble(data: LabeledDataset, K: int | None = None, U: int = 3,
                   T: int | None = None, grid: LambdaGrid | None = None,
                   link: LinkFunction | None = None,
                   solver: SolverConfig | None = None,
                   seed: int = 0, esf: bool = False) -> SbicEnsemble:
    """Full training pipeline over one dataset.

    Clusters the majority inputs, draws U undersampled datasets, and fits one
    model per dataset (grid-selected coefficients, or the similarity-only fit
    when esf=True). Members that fail to converge stay in the ensemble but are
    flagged in their report; if every member fails the whole call raises.
    """
    if data.n_majority == 0 or data.n_minority == 0:
        raise ValueError("training data must contain both classes")
    K_eff = default_cluster_count(data) if K is None else int(K)
    if K_eff > data.n_majority:
        raise ValueError(f"K={K_eff} exceeds the majority size {data.n_majority}")
    solver = solver or SolverConfig()
    link = link or LinkFunction()

    cluster_seed, under_seed, *member_seeds = derive_seeds(seed, 2 + U)
    clusters = kmeans(data.majority_X, K_eff, cluster_seed)
    member_data = build_undersampled(data, clusters, U, under_seed)

    members, reports = [], []
    for ell, d_ell in enumerate(member_data):
        member_solver = replace(solver, seed=member_seeds[ell])
        if esf:
            fitted = model_mod.fit_esf(d_ell, link, member_solver)
            r_value = model_mod.log_likelihood(fitted.weights, d_ell, link)
            pen = fitted.penalty
        else:
            selection = grid_select(d_ell, grid, link, member_solver, T)
            fitted = selection.model
            r_value = selection.r_value
            pen = selection.penalty
        members.append(fitted)
        reports.append(MemberReport(
            index=ell, lambda1=pen.lambda1, lambda2=pen.lambda2,
            Delta=pen.Delta, delta=pen.delta, r_value=r_value,
            residual_norm=fitted.diagnostics.residual_norm,
            iterations=fitted.diagnostics.iterations,
            converged=fitted.diagnostics.converged, esf=esf,
        ))

    if all(m.diagnostics.failure is not None for m in members):
        raise RuntimeError("every ensemble member failed to produce a usable model")
    priors = np.full(len(members), 1.0 / len(members))
    return SbicEnsemble(members=members, member_data=member_data, priors=priors,
                        clustering=clusters, reports=reports, seed=seed)


def ensemble_predict(ens: SbicEnsemble, x_star) -> float:
    """Prior-weighted average of the member probabilities at one point."""
    probs = [model_mod.predict_proba(m, x_star) for m in ens.members]
    return float(np.dot(ens.priors, probs))


def ensemble_predict_batch(ens: SbicEnsemble, X_star) -> np.ndarray:
    X_star = np.atleast_2d(np.asarray(X_star, dtype=float))
    out = np.zeros(len(X_star))
    for prior, member in zip(ens.priors, ens.members):
        out += prior * model_mod.predict_proba_batch(member, X_star)
    return out


# ---------------------------------------------------------------------------
# persistence: container document embedding each member's model document and
# training data, plus clustering metadata and seeds

def ensemble_to_text(ens: SbicEnsemble) -> str:
    fmt = lambda v: format(float(v), ".17g")
    lines = [
        "format sbic-ensemble",
        "version 1",
        f"U {ens.U}",
        f"scale {fmt(ens.scale)}",
        f"seed {ens.seed}",
        "priors " + " ".join(fmt(v) for v in ens.priors),
        f"K {ens.clustering.K if ens.clustering is not None else 0}",
    ]
    for ell in range(ens.U):
        lines.append(f"begin member {ell}")
        lines.append("begin model")
        lines.append(model_to_text(ens.members[ell]).rstrip("\n"))
        lines.append("end model")
        csv_text = ens.member_data[ell].to_csv_text()
        lines.append(f"begin data {len(csv_text.splitlines())}")
        lines.append(csv_text.rstrip("\n"))
        lines.append("end data")
        lines.append(f"end member {ell}")
    return "\n".join(lines) + "\n"


def save_ensemble(ens: SbicEnsemble, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(ensemble_to_text(ens))


def ensemble_from_text(text: str) -> SbicEnsemble:
    from .data import load_csv  # local import to reuse the CSV parser via a buffer

    lines = text.splitlines()
    if not lines or lines[0] != "format sbic-ensemble":
        raise ValueError("not an ensemble document")
    header = {}
    i = 1
    while i < len(lines) and not lines[i].startswith("begin member"):
        key, _, value = lines[i].partition(" ")
        header[key] = value
        i += 1
    U = int(header["U"])
    members, member_data = [], []
    while i < len(lines):
        if not lines[i].startswith("begin member"):
            i += 1
            continue
        i += 1  # begin model
        if lines[i] != "begin model":
            raise ValueError("malformed ensemble document: expected model block")
        i += 1
        model_lines = []
        while lines[i] != "end model":
            model_lines.append(lines[i])
            i += 1
        i += 1  # past end model
        if not lines[i].startswith("begin data"):
            raise ValueError("malformed ensemble document: expected data block")
        n_csv = int(lines[i].split()[2])
        csv_block = "\n".join(lines[i + 1 : i + 1 + n_csv]) + "\n"
        i += 1 + n_csv
        if lines[i] != "end data":
            raise ValueError("malformed ensemble document: unterminated data block")
        i += 2  # past end data, end member
        data = _dataset_from_csv_text(csv_block)
        members.append(model_from_text("\n".join(model_lines), data))
        member_data.append(data)
    if len(members) != U:
        raise ValueError(f"expected {U} members, found {len(members)}")
    priors = np.array([float(v) for v in header["priors"].split()])
    return SbicEnsemble(members=members, member_data=member_data, priors=priors,
                        clustering=None, scale=float(header["scale"]),
                        seed=int(header["seed"]))


def _dataset_from_csv_text(csv_text: str) -> LabeledDataset:
    import csv as _csv

    reader = _csv.reader(io.StringIO(csv_text))
    header = next(reader)
    label_idx = len(header) - 1
    X, y = [], []
    for record in reader:
        if not record:
            continue
        X.append([float(v) for i, v in enumerate(record) if i != label_idx])
        y.append(int(record[label_idx]))
    return LabeledDataset.from_arrays(
        np.array(X), np.array(y), feature_names=tuple(header[:label_idx]),
        label_name=header[label_idx],
    )


def load_ensemble(path) -> SbicEnsemble:
    with open(path, "r", encoding="utf-8") as fh:
        return ensemble_from_text(fh.read())
