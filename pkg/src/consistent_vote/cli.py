"""Command-line entry point.

    consistent-vote [--config run.json] [--out DIR] [--threads N] [--verbose] COMMAND ...

Commands: train-pool, evaluate, curves, attribution-stability,
counterexample, check-bounds. Exit status is 0 on success, 1 when a check
fails, 2 on configuration or input errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from collections.abc import Sequence
from pathlib import Path

import numpy as np

from . import __version__
from .attribution import attribution_stability_report, ensemble_attributions
from .config import RunConfig, load_run_config
from .counterexample import (
    GridFunction,
    construct_hhat,
    default_offset,
    label_regions,
    parse_expression,
    sign_grid,
    verify_construction,
)
from .ensemble import (
    ABS_NEQ,
    ABSTAIN,
    STRICT_NEQ,
    create_ensemble,
    model_votes,
    pairwise_flip_rates,
    plurality_from_votes,
    sample_states,
    selective_from_votes,
)
from .errors import ConsistentVoteError
from .pipeline import ModelPool, default_workers, load_pool, save_pool
from .rng import Stream, mix64
from .stats import p_value_table
from .theory import (
    abstention_curves,
    check_mode_agreement_bound,
    check_pairwise_consistency_bound,
    fresh_source,
    pool_source,
)

log = logging.getLogger("consistent_vote")

REPORT_FORMAT_VERSION = 1
POOL_FILE = "pool.json"


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"format_version": REPORT_FORMAT_VERSION, **obj}, indent=2, sort_keys=True) + "\n")


def _mean_std(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), float(v.std())


# ---------------------------------------------------------------------------
# train-pool
# ---------------------------------------------------------------------------


def cmd_train_pool(cfg: RunConfig, out: Path, workers: int = 1) -> Path:
    train, _ = cfg.load_data()
    dist = cfg.distribution(len(train))
    start = time.perf_counter()
    pool = create_ensemble(cfg.pipeline, train, sample_states(dist, cfg.pool_size), workers=workers)
    log.info("trained %d models in %.1fs", len(pool), time.perf_counter() - start)
    path = out / POOL_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    save_pool(pool, path)
    return path


def _load_checked_pool(cfg: RunConfig, path: Path) -> ModelPool:
    return load_pool(path, expected_fingerprint=cfg.fingerprint())


def _draw_ensembles(pool_size: int, n: int, count: int, seed: int) -> list[np.ndarray]:
    """``count`` subsets of ``n`` pool indices, each uniform without replacement."""
    if n > pool_size:
        raise ConsistentVoteError(f"ensemble size {n} exceeds pool size {pool_size}")
    stream = Stream(mix64(seed, n))
    return [np.sort(stream.sample_without_replacement(pool_size, n)) for _ in range(count)]


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

EVAL_HEADER = [
    "kind", "n", "alpha", "num_ensembles", "num_pairs",
    "selective_accuracy_mean", "selective_accuracy_std",
    "selective_error_mean",
    "abstention_rate_mean", "abstention_rate_std",
    "plain_accuracy_mean", "plain_accuracy_std",
    "pflip_abs_neq_fraction", "pflip_strict_neq_fraction", "plain_pflip_fraction",
]  # fmt: skip


def evaluate_pool(cfg: RunConfig, pool: ModelPool, test) -> dict:
    """Resampled-ensemble accuracy, abstention and disagreement for every (n, alpha)."""
    votes = model_votes(pool.models, test.features)
    y = test.labels
    rows, dumps, group_rows = [], [], []
    groups = test.groups.get(cfg.group_by) if cfg.group_by else None
    for n in cfg.ensemble_sizes:
        subsets = _draw_ensembles(len(pool), n, cfg.num_resamples, cfg.resample_seed)
        table = p_value_table(n)
        plain = np.stack([plurality_from_votes(votes[s], pool.num_classes) for s in subsets])
        plain_flip, pairs = pairwise_flip_rates(plain, ABS_NEQ)
        for alpha in cfg.alphas:
            sel = np.stack([selective_from_votes(votes[s], pool.num_classes, alpha, table)[0] for s in subsets])
            correct = (sel == y).mean(axis=1)
            abstain = (sel == ABSTAIN).mean(axis=1)
            flip_abs, _ = pairwise_flip_rates(sel, ABS_NEQ)
            flip_strict, _ = pairwise_flip_rates(sel, STRICT_NEQ)
            acc_m, acc_s = _mean_std(correct)
            abs_m, abs_s = _mean_std(abstain)
            plain_m, plain_s = _mean_std((plain == y).mean(axis=1))
            rows.append([
                cfg.randomness_kind, n, alpha, len(subsets), pairs,
                acc_m, acc_s, 1.0 - acc_m, abs_m, abs_s, plain_m, plain_s,
                float(np.mean(flip_abs > 0)), float(np.mean(flip_strict > 0)), float(np.mean(plain_flip > 0)),
            ])  # fmt: skip
            for t in range(len(y)):
                dumps.append([n, alpha, t, int(y[t]), *map(int, sel[:, t]), float(flip_abs[t]), float(flip_strict[t])])
            if groups is not None:
                for g in sorted(set(groups)):
                    m = groups == g
                    g_abs = float((sel[:, m] == ABSTAIN).mean())
                    group_rows.append([
                        n, alpha, g, int(m.sum()),
                        float((sel[:, m] == y[m]).mean()), g_abs,
                        float((plain[:, m] == y[m]).mean()),
                        int(g_abs > abs_m + cfg.group_margin),
                    ])  # fmt: skip
    return {"rows": rows, "dumps": dumps, "group_rows": group_rows}


def cmd_evaluate(cfg: RunConfig, pool_path: Path, out: Path) -> dict:
    pool = _load_checked_pool(cfg, pool_path)
    if max(cfg.ensemble_sizes) > len(pool):
        raise ConsistentVoteError(
            f"pool has {len(pool)} models, fewer than the largest ensemble size {max(cfg.ensemble_sizes)}"
        )
    _, test = cfg.load_data()
    result = evaluate_pool(cfg, pool, test)
    _write_csv(out / "evaluation.csv", EVAL_HEADER, result["rows"])
    e = cfg.num_resamples
    _write_csv(
        out / "decisions.csv",
        ["n", "alpha", "point", "label", *[f"ensemble_{i}" for i in range(e)], "p_flip_abs_neq", "p_flip_strict_neq"],
        result["dumps"],
    )
    if cfg.group_by:
        _write_csv(
            out / "groups.csv",
            ["n", "alpha", "group", "size", "selective_accuracy", "abstention_rate", "plain_accuracy", "flagged"],
            result["group_rows"],
        )
    _write_json(
        out / "evaluation.json",
        {
            "config_fingerprint": cfg.fingerprint(),
            "pool_size": len(pool),
            "test_size": len(test),
            "abstain_label": ABSTAIN,
            "rows": [dict(zip(EVAL_HEADER, r)) for r in result["rows"]],
        },
    )
    return result


# ---------------------------------------------------------------------------
# curves
# ---------------------------------------------------------------------------


def cmd_curves(n_list, alpha_list, resolution: int, out: Path) -> Path:
    points = abstention_curves(n_list, alpha_list, resolution)
    path = out / "curves.csv"
    _write_csv(
        path,
        ["p", "n", "alpha", "abstention", "consistency_bound"],
        ([c.p, c.n, c.alpha, c.abstention_prob, c.consistency_lower_bound] for c in points),
    )
    _write_json(
        out / "curves.json",
        {
            "n_list": list(map(int, n_list)),
            "alpha_list": list(map(float, alpha_list)),
            "resolution": resolution,
            "beta": "analytic abstention probability under the binary agreement model",
        },
    )
    return path


# ---------------------------------------------------------------------------
# attribution-stability
# ---------------------------------------------------------------------------


def cmd_attribution_stability(cfg: RunConfig, pool_path: Path, out: Path) -> list:
    pool = _load_checked_pool(cfg, pool_path)
    _, test = cfg.load_data()
    k = min(cfg.top_k, test.width)
    if k < cfg.top_k:
        log.warning("top_k=%d exceeds the %d input features; using k=%d", cfg.top_k, test.width, k)
    settings = cfg.attribution
    pools_by_size = {
        n: [pool.select(s) for s in _draw_ensembles(len(pool), n, settings.num_ensembles, cfg.resample_seed)]
        for n in settings.sizes
    }
    rows = attribution_stability_report(
        pools_by_size, test, k, baseline_points=settings.baseline_points, seed=cfg.resample_seed
    )
    header = ["n", "metric", "mean", "std", "baseline_mean", "count", "undefined"]
    table = [[r.n, r.metric, r.mean, r.std, r.baseline_mean, r.count, r.undefined] for r in rows]
    _write_csv(out / "attribution_stability.csv", header, table)
    _write_json(out / "attribution_stability.json", {"k": k, "rows": [dict(zip(header, r)) for r in table]})
    dump = []
    for n, pools in pools_by_size.items():
        for e, p in enumerate(pools):
            attr, targets = ensemble_attributions(p, test.features)
            for t in range(len(test)):
                dump.append([n, e, t, int(targets[t]), *map(float, attr[t])])
    _write_csv(out / "attributions.csv", ["n", "ensemble", "point", "target", *test.feature_names], dump)
    return rows


# ---------------------------------------------------------------------------
# counterexample
# ---------------------------------------------------------------------------


def cmd_counterexample(
    h_expr: str,
    g_expr: str,
    lower: Sequence[float],
    upper: Sequence[float],
    resolution: int,
    epsilon: float,
    out: Path,
    c: float | None = None,
    grad_tol: float = 1e-6,
):
    dims = len(lower)
    if dims not in (1, 2) or len(upper) != dims:
        raise ConsistentVoteError("--lower/--upper must give 1 or 2 matching bounds")
    variables = ("x", "y")[:dims]
    res = (resolution,) * dims
    h = GridFunction.sample(parse_expression(h_expr, variables), lower, upper, res)
    g = GridFunction.sample(parse_expression(g_expr, variables), lower, upper, res)
    H = sign_grid(h)
    c = default_offset(g) if c is None else c
    hhat = construct_hhat(H, g, epsilon, c)
    report = verify_construction(H, hhat, g, epsilon, grad_tol)
    d = label_regions(H).distance
    mesh = np.meshgrid(*H.axes, indexing="ij")
    coords = [m.ravel() for m in mesh]
    _write_csv(
        out / "counterexample_grid.csv",
        [*variables, "H", "g", "hhat", "distance"],
        zip(*[list(map(float, a)) for a in (*coords, H.values.ravel(), g.values.ravel(), hhat.values.ravel(), d.ravel())]),
    )
    _write_json(
        out / "counterexample.json",
        {"h": h_expr, "g": g_expr, "lower": list(lower), "upper": list(upper), "resolution": resolution,
         "epsilon": epsilon, "c": c, "report": report.to_json()},
    )  # fmt: skip
    return report


# ---------------------------------------------------------------------------
# check-bounds
# ---------------------------------------------------------------------------


def cmd_check_bounds(cfg: RunConfig, out: Path, source: str = "fresh", pool_path: Path | None = None,
                     trials: int | None = None, workers: int = 1):  # fmt: skip
    train, test = cfg.load_data()
    dist = cfg.distribution(len(train))
    b = cfg.bounds
    mode_trials = trials or b.trials
    pair_trials = trials or b.pair_trials
    if source == "pool":
        pool = _load_checked_pool(cfg, pool_path)
        src = pool_source(pool)
        mode_trials = min(mode_trials, (len(pool) - b.oracle_samples) // b.mode_n)
        pair_trials = min(pair_trials, len(pool) // (2 * b.pair_n))
        if mode_trials < 1 or pair_trials < 1:
            raise ConsistentVoteError(f"pool of {len(pool)} models is too small for the configured checks")
    else:
        src = fresh_source(cfg.pipeline, train, dist, workers=workers)
    mode = check_mode_agreement_bound(
        cfg.pipeline, train, dist, b.mode_n, b.alpha, test, mode_trials, b.oracle_samples, source=src
    )
    pair = check_pairwise_consistency_bound(
        cfg.pipeline, train, dist, b.pair_n, b.alpha, test, pair_trials, source=src
    )
    reports = [mode, pair]
    _write_json(out / "bounds.json", {"source": source, "checks": [r.to_json() for r in reports]})
    return reports


# ---------------------------------------------------------------------------


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="consistent-vote", description=__doc__.split("\n\n")[0])
    p.add_argument("--config", type=Path, help="run configuration (JSON)")
    p.add_argument("--out", type=Path, help="output directory (default: config output_dir or ./out)")
    p.add_argument("--threads", type=int, help="worker processes for training (env CONSISTENT_VOTE_THREADS)")
    p.add_argument("--verbose", "-v", action="store_true")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("train-pool", help="train pool_size models from successive random states")

    ev = sub.add_parser("evaluate", help="accuracy, abstention and disagreement of resampled ensembles")
    ev.add_argument("--pool", type=Path, help=f"pool file (default: OUT/{POOL_FILE})")

    cu = sub.add_parser("curves", help="analytic abstention and consistency curves")
    cu.add_argument("--n-list", type=_ints, default=[5, 10, 15, 20])
    cu.add_argument("--alpha-list", type=_floats, default=[0.05, 0.01])
    cu.add_argument("--resolution", type=int, default=101)

    at = sub.add_parser("attribution-stability", help="similarity of ensemble saliency maps across ensembles")
    at.add_argument("--pool", type=Path)

    ce = sub.add_parser("counterexample", help="same labels with arbitrary gradients, built and verified")
    ce.add_argument("--h", default="x", help="expression whose sign is the classifier, e.g. 'x*y'")
    ce.add_argument("--g", default="sin(x)", help="target function, e.g. 'cos(x)*sin(y)'")
    ce.add_argument("--lower", type=_floats, default=[-math.pi])
    ce.add_argument("--upper", type=_floats, default=[math.pi])
    ce.add_argument("--resolution", type=int, default=1024, help="cells per axis")
    ce.add_argument("--epsilon", type=float, default=0.2)
    ce.add_argument("--c", type=float, default=None)
    ce.add_argument("--grad-tol", type=float, default=1e-6)

    cb = sub.add_parser("check-bounds", help="Monte-Carlo checks of the mode-agreement and consistency bounds")
    cb.add_argument("--source", choices=("fresh", "pool"), default="fresh")
    cb.add_argument("--pool", type=Path)
    cb.add_argument("--trials", type=int, default=None)
    return p


def _run(args) -> int:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    out = args.out or Path(cfg.output_dir or "out")
    workers = args.threads if args.threads else default_workers()
    pool_path = getattr(args, "pool", None) or out / POOL_FILE

    if args.command == "train-pool":
        path = cmd_train_pool(cfg, out, workers)
        print(f"wrote {path}")
    elif args.command == "evaluate":
        result = cmd_evaluate(cfg, pool_path, out)
        for r in result["rows"]:
            row = dict(zip(EVAL_HEADER, r))
            print(
                f"n={row['n']:>3} alpha={row['alpha']:<5} acc={row['selective_accuracy_mean']:.3f} "
                f"abstain={row['abstention_rate_mean']:.3f} plain_acc={row['plain_accuracy_mean']:.3f} "
                f"pflip>0: selective={row['pflip_abs_neq_fraction']:.3f} plain={row['plain_pflip_fraction']:.3f}"
            )
    elif args.command == "curves":
        print(f"wrote {cmd_curves(args.n_list, args.alpha_list, args.resolution, out)}")
    elif args.command == "attribution-stability":
        for r in cmd_attribution_stability(cfg, pool_path, out):
            print(f"n={r.n:>3} {r.metric:<20} mean={r.mean:.4f} std={r.std:.4f} baseline={r.baseline_mean:.4f}")
    elif args.command == "counterexample":
        report = cmd_counterexample(
            args.h, args.g, args.lower, args.upper, args.resolution, args.epsilon, out, args.c, args.grad_tol
        )
        print(json.dumps(report.to_json(), indent=2))
        return 0 if report.passed else 1
    elif args.command == "check-bounds":
        reports = cmd_check_bounds(cfg, out, args.source, pool_path, args.trials, workers)
        for r in reports:
            status = "PASS" if r.passed else "FAIL"
            print(f"{status} {r.name}: empirical={r.empirical_rate:.4f} bound={r.bound:.4f} slack={r.slack:.4f}")
        return 0 if all(r.passed for r in reports) else 1
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _run(args)
    except (ConsistentVoteError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
