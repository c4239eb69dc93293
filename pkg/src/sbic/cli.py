"""Command-line toolkit: toy dataset generation, ensemble training,
prediction, cross-validated benchmarking, coefficient sweeps, and rank-based
comparison of result tables.

Every command is deterministic given its inputs, configuration and seed; all
randomness flows from one root seed expanded by the documented splitting
scheme. Output files are written atomically (temp file, then rename).
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
import tempfile

import numpy as np

from .core import LinkFunction
from .data import generate_toy, load_csv, normalize, save_csv
from .ensemble import (SbicEnsemble, ensemble_predict_batch, ensemble_to_text,
                       load_ensemble, train_ensemble)
from .evaluation import (RocCurve, auc, average_roc, cross_validate,
                         friedman_statistic, rank_matrix)
from .lambda_search import DEFAULT_LAMBDA1, DEFAULT_LAMBDA2, LambdaGrid
from .model import SolverConfig

EXIT_OK = 0
EXIT_NUMERIC = 1
EXIT_USAGE = 2

DEFAULT_SWEEP_RANGE1 = "0:4:9"
DEFAULT_SWEEP_RANGE2 = "0:11:12"


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".sbic-tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


# ---------------------------------------------------------------------------
# configuration: flat key/value files mirroring the flags; flags override file

_CONFIG_ORDER = (
    "which", "data", "model", "table", "out", "out-dir", "seed", "K", "U", "T",
    "folds", "lambda1-grid", "lambda2-grid", "lambda1-range", "lambda2-range",
    "esf", "label-column", "threshold",
)


def parse_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}: line {lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


def config_to_text(command: str, cfg: dict) -> str:
    lines = [f"command = {command}"]
    for key in _CONFIG_ORDER:
        if key in cfg and cfg[key] is not None:
            lines.append(f"{key} = {cfg[key]}")
    return "\n".join(lines) + "\n"


def _merge(args: argparse.Namespace, keys: dict[str, str | None]) -> dict[str, str | None]:
    """Merge precedence: command-line flag, then config file, then default."""
    file_values = parse_config_file(args.config) if getattr(args, "config", None) else {}
    merged = {}
    for key, default in keys.items():
        flag_value = getattr(args, key.replace("-", "_"), None)
        if flag_value is not None:
            merged[key] = str(flag_value) if not isinstance(flag_value, bool) else "true"
        elif key in file_values:
            merged[key] = file_values[key]
        else:
            merged[key] = default
    return merged


def _parse_grid(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(","))


def _parse_range(text: str) -> np.ndarray:
    parts = text.split(":")
    if len(parts) != 3:
        raise ValueError(f"range must be start:stop:count, got {text!r}")
    start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
    if count < 1:
        raise ValueError("range count must be at least 1")
    return np.linspace(start, stop, count)


def _grid_from_cfg(cfg) -> LambdaGrid:
    return LambdaGrid(
        lambda1_candidates=_parse_grid(cfg["lambda1-grid"]),
        lambda2_candidates=_parse_grid(cfg["lambda2-grid"]),
    )


def _ensemble_kwargs(cfg, data) -> dict:
    return dict(
        K=None if cfg["K"] in (None, "auto") else int(cfg["K"]),
        U=int(cfg["U"]),
        T=None if cfg["T"] in (None, "auto") else int(cfg["T"]),
        grid=_grid_from_cfg(cfg),
        link=LinkFunction(),
        solver=SolverConfig(),
        esf=cfg["esf"] == "true",
    )


_TRAIN_DEFAULTS = {
    "seed": "0", "K": None, "U": "3", "T": None,
    "lambda1-grid": ",".join(str(v) for v in DEFAULT_LAMBDA1),
    "lambda2-grid": ",".join(str(v) for v in DEFAULT_LAMBDA2),
    "esf": "false", "label-column": "label",
}


# ---------------------------------------------------------------------------
# commands

def cmd_toy(args) -> int:
    cfg = _merge(args, {"which": None, "seed": "0", "out": None})
    if cfg["which"] is None or cfg["out"] is None:
        raise ValueError("toy requires --which and --out")
    dataset = generate_toy(int(cfg["which"]), int(cfg["seed"]))
    _atomic_write(cfg["out"], dataset.to_csv_text())
    print(f"wrote {dataset.n} rows ({dataset.n_majority} majority, "
          f"{dataset.n_minority} minority) to {cfg['out']}")
    return EXIT_OK


def _member_report_text(ens: SbicEnsemble) -> str:
    lines = ["member lambda1 lambda2 Delta delta R residual iterations converged mode"]
    for r in ens.reports:
        lines.append(
            f"{r.index} {_fmt(r.lambda1)} {_fmt(r.lambda2)} {_fmt(r.Delta)} "
            f"{_fmt(r.delta)} {_fmt(r.r_value)} {_fmt(r.residual_norm)} "
            f"{r.iterations} {str(r.converged).lower()} {'esf' if r.esf else 'sbic'}"
        )
    lam1 = np.mean([r.lambda1 for r in ens.reports])
    lam2 = np.mean([r.lambda2 for r in ens.reports])
    lines.append(f"average lambda1 {_fmt(lam1)}")
    lines.append(f"average lambda2 {_fmt(lam2)}")
    return "\n".join(lines) + "\n"


def cmd_fit(args) -> int:
    cfg = _merge(args, {"data": None, "out": None, **_TRAIN_DEFAULTS})
    if cfg["data"] is None or cfg["out"] is None:
        raise ValueError("fit requires --data and --out")
    dataset = load_csv(cfg["data"], cfg["label-column"])
    normalized, scale = normalize(dataset)
    ens = train_ensemble(normalized, seed=int(cfg["seed"]),
                         **_ensemble_kwargs(cfg, normalized))
    ens.scale = scale
    _atomic_write(cfg["out"], ensemble_to_text(ens))
    _atomic_write(cfg["out"] + ".config", config_to_text("fit", cfg))
    sys.stdout.write(_member_report_text(ens))
    bad = [r.index for r in ens.reports if not r.converged]
    if bad:
        print(f"warning: member(s) {bad} did not converge", file=sys.stderr)
    print(f"wrote ensemble ({ens.U} member(s)) to {cfg['out']}")
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg = _merge(args, {"model": None, "data": None, "out": None,
                        "label-column": "label", "threshold": None})
    if cfg["model"] is None or cfg["data"] is None or cfg["out"] is None:
        raise ValueError("predict requires --model, --data and --out")
    ens = load_ensemble(cfg["model"])

    with open(cfg["data"], "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{cfg['data']}: file is empty, expected a header row")
        drop = header.index(cfg["label-column"]) if cfg["label-column"] in header else None
        rows = []
        for r, record in enumerate(reader):
            if not record or (len(record) == 1 and record[0].strip() == ""):
                continue
            feats = [float(v) for i, v in enumerate(record) if i != drop]
            if len(feats) != ens.p:
                raise ValueError(
                    f"{cfg['data']}: row {r}: expected {ens.p} feature value(s), got {len(feats)}"
                )
            rows.append(feats)

    threshold = None if cfg["threshold"] is None else float(cfg["threshold"])
    out_lines = ["score" if threshold is None else "score,label"]
    if rows:
        X = np.asarray(rows, dtype=float) * ens.scale
        scores = ensemble_predict_batch(ens, X)
        for s in scores:
            if threshold is None:
                out_lines.append(_fmt(s))
            else:
                out_lines.append(f"{_fmt(s)},{int(s > threshold)}")
    _atomic_write(cfg["out"], "\n".join(out_lines) + "\n")
    print(f"wrote {len(rows)} score(s) to {cfg['out']}")
    return EXIT_OK


def _roc_to_csv(curve: RocCurve) -> str:
    lines = ["fa,dp"]
    for a, b in zip(curve.fa, curve.dp):
        lines.append(f"{_fmt(a)},{_fmt(b)}")
    return "\n".join(lines) + "\n"


def cmd_cv(args) -> int:
    cfg = _merge(args, {"data": None, "out-dir": None, "folds": "5", **_TRAIN_DEFAULTS})
    if cfg["data"] is None or cfg["out-dir"] is None:
        raise ValueError("cv requires --data and --out-dir")
    dataset = load_csv(cfg["data"], cfg["label-column"])
    normalized, _ = normalize(dataset)
    folds = int(cfg["folds"])
    result = cross_validate(normalized, folds, seed=int(cfg["seed"]),
                            **_ensemble_kwargs(cfg, normalized))

    out_dir = cfg["out-dir"]
    os.makedirs(out_dir, exist_ok=True)
    for f, curve in enumerate(result.fold_curves, start=1):
        _atomic_write(os.path.join(out_dir, f"roc_fold{f}.csv"), _roc_to_csv(curve))
    _atomic_write(os.path.join(out_dir, "roc_average.csv"), _roc_to_csv(result.average_curve))

    name = os.path.splitext(os.path.basename(cfg["data"]))[0]
    algorithm = "esf" if cfg["esf"] == "true" else "sbic"
    lines = ["dataset,fold,algorithm,auc"]
    for f, a in enumerate(result.fold_aucs, start=1):
        lines.append(f"{name},{f},{algorithm},{_fmt(a)}")
    summary = f"{result.mean_auc * 100:.2f} ({result.std_auc * 100:.2f})"
    lines.append(f'{name},mean (stdev),{algorithm},"{summary}"')
    _atomic_write(os.path.join(out_dir, "auc_summary.csv"), "\n".join(lines) + "\n")
    _atomic_write(os.path.join(out_dir, "run.config"), config_to_text("cv", cfg))

    print(f"{name}: mean AUC {summary} over {folds} folds; outputs in {out_dir}")
    return EXIT_OK


def cmd_lambda_sweep(args) -> int:
    cfg = _merge(args, {
        "data": None, "out": None, "folds": "5",
        "lambda1-range": DEFAULT_SWEEP_RANGE1, "lambda2-range": DEFAULT_SWEEP_RANGE2,
        "seed": "0", "K": None, "U": "3", "T": None,
        "esf": "false", "label-column": "label",
        "lambda1-grid": _TRAIN_DEFAULTS["lambda1-grid"],
        "lambda2-grid": _TRAIN_DEFAULTS["lambda2-grid"],
    })
    if cfg["data"] is None or cfg["out"] is None:
        raise ValueError("lambda-sweep requires --data and --out")
    dataset = load_csv(cfg["data"], cfg["label-column"])
    normalized, _ = normalize(dataset)
    folds = int(cfg["folds"])
    l1_values = _parse_range(cfg["lambda1-range"])
    l2_values = _parse_range(cfg["lambda2-range"])

    base = _ensemble_kwargs(cfg, normalized)
    lines = ["lambda1,lambda2,auc"]
    for l1 in l1_values:
        for l2 in l2_values:
            kwargs = dict(base)
            kwargs["grid"] = LambdaGrid((float(l1),), (float(l2),))
            result = cross_validate(normalized, folds, seed=int(cfg["seed"]), **kwargs)
            lines.append(f"{_fmt(l1)},{_fmt(l2)},{_fmt(result.mean_auc)}")
    _atomic_write(cfg["out"], "\n".join(lines) + "\n")
    _atomic_write(cfg["out"] + ".config", config_to_text("lambda-sweep", cfg))
    print(f"wrote {len(l1_values) * len(l2_values)} sweep cells to {cfg['out']}")
    return EXIT_OK


def cmd_friedman(args) -> int:
    cfg = _merge(args, {"table": None})
    if cfg["table"] is None:
        raise ValueError("friedman requires --table")
    with open(cfg["table"], "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"dataset", "fold", "algorithm", "auc"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(
                f"{cfg['table']}: expected columns dataset, fold, algorithm, auc"
            )
        cells: dict[tuple[str, str], dict[str, float]] = {}
        algorithms: list[str] = []
        test_sets: list[tuple[str, str]] = []
        for record in reader:
            key = (record["dataset"], record["fold"])
            algo = record["algorithm"]
            try:
                value = float(record["auc"])
            except ValueError:
                continue  # summary rows are not numeric cells
            if key not in cells:
                cells[key] = {}
                test_sets.append(key)
            if algo not in algorithms:
                algorithms.append(algo)
            cells[key][algo] = value

    table = np.empty((len(test_sets), len(algorithms)))
    for i, key in enumerate(test_sets):
        for j, algo in enumerate(algorithms):
            if algo not in cells[key]:
                raise ValueError(
                    f"missing AUC for dataset {key[0]!r}, fold {key[1]!r}, algorithm {algo!r}"
                )
            table[i, j] = cells[key][algo]
    rm = rank_matrix(table)
    stat = friedman_statistic(rm.column_means, len(test_sets), len(algorithms))
    for algo, mean in zip(algorithms, rm.column_means):
        print(f"{algo} {mean:.4f}")
    print(f"friedman_statistic {_fmt(stat)}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sbic",
        description="Similarity-based classification for imbalanced binary data",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, *names):
        if "config" in names:
            p.add_argument("--config", help="flat key/value config file; flags override it")
        if "seed" in names:
            p.add_argument("--seed", type=int)
        if "label-column" in names:
            p.add_argument("--label-column")
        if "train" in names:
            p.add_argument("--K", type=int, help="number of majority clusters")
            p.add_argument("--U", type=int, help="number of undersampled datasets")
            p.add_argument("--T", type=int, help="number of absent points")
            p.add_argument("--lambda1-grid", help="comma-separated candidates")
            p.add_argument("--lambda2-grid", help="comma-separated candidates")
            p.add_argument("--esf", action="store_const", const=True,
                           help="similarity-only mode: zero coefficients, no absent points")

    p_toy = sub.add_parser("toy", help="generate a benchmark dataset as CSV")
    p_toy.add_argument("--which", type=int, choices=(1, 2, 3))
    p_toy.add_argument("--out")
    add_common(p_toy, "config", "seed")
    p_toy.set_defaults(func=cmd_toy)

    p_fit = sub.add_parser("fit", help="train an ensemble and persist it")
    p_fit.add_argument("--data")
    p_fit.add_argument("--out")
    add_common(p_fit, "config", "seed", "label-column", "train")
    p_fit.set_defaults(func=cmd_fit)

    p_pred = sub.add_parser("predict", help="score new points with a saved ensemble")
    p_pred.add_argument("--model")
    p_pred.add_argument("--data")
    p_pred.add_argument("--out")
    p_pred.add_argument("--threshold", type=float,
                        help="also emit hard labels at this decision threshold")
    add_common(p_pred, "config", "label-column")
    p_pred.set_defaults(func=cmd_predict)

    p_cv = sub.add_parser("cv", help="stratified cross-validated benchmark")
    p_cv.add_argument("--data")
    p_cv.add_argument("--out-dir")
    p_cv.add_argument("--folds", type=int)
    add_common(p_cv, "config", "seed", "label-column", "train")
    p_cv.set_defaults(func=cmd_cv)

    p_sweep = sub.add_parser("lambda-sweep",
                             help="AUC surface over fixed coefficient pairs")
    p_sweep.add_argument("--data")
    p_sweep.add_argument("--out")
    p_sweep.add_argument("--folds", type=int)
    p_sweep.add_argument("--lambda1-range", help="start:stop:count")
    p_sweep.add_argument("--lambda2-range", help="start:stop:count")
    add_common(p_sweep, "config", "seed", "label-column", "train")
    p_sweep.set_defaults(func=cmd_lambda_sweep)

    p_fr = sub.add_parser("friedman", help="rank means and test statistic of an AUC table")
    p_fr.add_argument("--table")
    add_common(p_fr, "config")
    p_fr.set_defaults(func=cmd_friedman)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
