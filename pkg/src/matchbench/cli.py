"""Command-line front end: simulate markets, run estimators, reproduce the
canonical-correlation bias benchmark, and sweep Monte Carlo bias tables.

Configs and reports are JSON, bulk tables are CSV (RFC 4180, 17
significant digits). Outputs are byte-identical across reruns of the same
config and seed; anything timing-related goes to the console only.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, MatchbenchError, NumericalError
from .estimators import (
    EstimatorResult,
    cca,
    compute_moments,
    mrs_estimate,
    ols_index,
    spearman_estimate,
)
from .market import MarketSpec, MatchedSample, counterexample_market, simulate_market
from .oracle import (
    CounterexampleReport,
    closed_form_counterexample,
    gaussian_closed_form,
    monte_carlo_counterexample,
    numeric_counterexample,
)
from .saliency import rank1_weights, svd_decompose
from .distributions import gaussian

DATA_METHODS = ("cca", "ols", "spearman", "mrs")
ALL_METHODS = DATA_METHODS + ("saliency",)

_SQRT1_2 = 1.0 / math.sqrt(2.0)


def _derived_seed(seed: int, *tags: int) -> int:
    return int(np.random.SeedSequence([int(seed), *tags]).generate_state(1, np.uint64)[0])


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """One experiment: a market, sample size, seed, and requested methods."""

    market: MarketSpec
    n: int = 1000
    seed: int = 0
    methods: tuple[str, ...] = ("cca",)
    sweep: tuple[int, ...] | None = None
    replications: int = 1
    out_dir: str | None = None
    spearman: dict = field(default_factory=dict)
    affinity: np.ndarray | None = None

    def __post_init__(self):
        if self.n < 2:
            raise ConfigError("n: need at least 2")
        if not self.methods:
            raise ConfigError("methods: must not be empty")
        for m in self.methods:
            if m not in ALL_METHODS:
                raise ConfigError(f"methods: unknown method {m!r} (choose from {ALL_METHODS})")
        if self.replications < 1:
            raise ConfigError("replications: must be >= 1")
        if self.sweep is not None and any(int(v) < 2 for v in self.sweep):
            raise ConfigError("sweep: every sample size must be >= 2")

    def to_json_dict(self) -> dict:
        obj: dict = {
            "market": self.market.to_json(),
            "n": self.n,
            "seed": self.seed,
            "methods": list(self.methods),
            "replications": self.replications,
        }
        if self.sweep is not None:
            obj["sweep"] = [int(v) for v in self.sweep]
        if self.out_dir is not None:
            obj["out_dir"] = self.out_dir
        if self.spearman:
            obj["spearman"] = dict(self.spearman)
        if self.affinity is not None:
            obj["affinity"] = [[float(v) for v in row] for row in self.affinity]
        return obj

    @staticmethod
    def from_json_dict(obj: dict) -> "ExperimentConfig":
        if not isinstance(obj, dict):
            raise ConfigError("config root must be a JSON object")
        allowed = {"market", "n", "seed", "methods", "sweep", "replications", "out_dir", "spearman", "affinity"}
        extra = set(obj) - allowed
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        if "market" not in obj:
            raise ConfigError("market: missing")
        try:
            market = MarketSpec.from_json(obj["market"])
        except ValueError as exc:
            raise ConfigError(f"market: {exc}") from exc
        spearman = obj.get("spearman", {})
        if not isinstance(spearman, dict):
            raise ConfigError("spearman: must be an object")
        affinity = obj.get("affinity")
        return ExperimentConfig(
            market=market,
            n=int(obj.get("n", 1000)),
            seed=int(obj.get("seed", 0)),
            methods=tuple(obj.get("methods", ["cca"])),
            sweep=tuple(int(v) for v in obj["sweep"]) if "sweep" in obj else None,
            replications=int(obj.get("replications", 1)),
            out_dir=obj.get("out_dir"),
            spearman=spearman,
            affinity=np.asarray(affinity, dtype=float) if affinity is not None else None,
        )


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return ExperimentConfig.from_json_dict(obj)


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n")


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([format(v, ".17g") if isinstance(v, float) else v for v in row])


def _thread_count() -> int:
    default = min(4, os.cpu_count() or 1)
    env = os.environ.get("MATCHBENCH_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"MATCHBENCH_THREADS: {env!r} is not an integer") from exc
    return default


def angular_error(estimate, truth) -> float:
    """Angle between weight directions, invariant to scale and sign."""
    e = np.asarray(estimate, dtype=float)
    t = np.asarray(truth, dtype=float)
    cos = abs(e @ t) / (np.linalg.norm(e) * np.linalg.norm(t))
    return float(math.acos(min(1.0, cos)))


def _apply_overrides(config: ExperimentConfig, args) -> ExperimentConfig:
    changes = {}
    if getattr(args, "n", None) is not None:
        changes["n"] = args.n
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "methods", None):
        changes["methods"] = tuple(args.methods.split(","))
    if not changes:
        return config
    base = config.to_json_dict()
    base.update({k: (list(v) if isinstance(v, tuple) else v) for k, v in changes.items()})
    return ExperimentConfig.from_json_dict(base)


def _out_dir(args, config: ExperimentConfig | None = None) -> Path:
    out = args.out or (config.out_dir if config else None) or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _sample_summary(sample: MatchedSample, spec: MarketSpec, seed: int) -> dict:
    u = sample.x_index(spec.alpha)
    v = sample.y_index(spec.beta)
    return {
        "n": sample.n,
        "dx": sample.dx,
        "dy": sample.dy,
        "seed": seed,
        "index_variance_x": float(np.var(u)),
        "index_variance_y": float(np.var(v)),
        "tie_count_x": int(sample.n - np.unique(u).size),
        "tie_count_y": int(sample.n - np.unique(v).size),
    }


def cmd_simulate(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    out = _out_dir(args, config)
    sample = simulate_market(config.market, config.n, config.seed)
    sample_path = out / "sample.csv"
    sample.to_csv(sample_path)
    write_json(out / "summary.json", _sample_summary(sample, config.market, config.seed))
    print(f"wrote {sample_path} ({sample.n} couples) and {out / 'summary.json'}")
    return 0


def _estimate_one(method: str, sample: MatchedSample, config: ExperimentConfig) -> EstimatorResult:
    if method == "cca":
        return cca(compute_moments(sample))
    if method == "ols":
        return ols_index(sample)
    if method == "spearman":
        opts = config.spearman
        return spearman_estimate(
            sample,
            restarts=int(opts.get("restarts", 32)),
            seed=_derived_seed(config.seed, 1),
            grid_resolution=float(opts.get("grid_resolution", 1e-3)),
        )
    if method == "mrs":
        return mrs_estimate(sample).to_result()
    raise ConfigError(f"method {method!r} cannot run on a sample")


def _estimate_saliency(config: ExperimentConfig, rank_tol: float) -> dict:
    if config.affinity is None:
        raise ConfigError("affinity: methods include 'saliency' but no affinity matrix is configured")
    decomp = svd_decompose(config.affinity, rank_tol=rank_tol)
    obj = {"method": "saliency", **decomp.to_json_dict()}
    if decomp.numerical_rank == 1:
        alpha, beta = rank1_weights(decomp)
        obj["alpha"] = [float(a) for a in alpha]
        obj["beta"] = [float(b) for b in beta]
    else:
        obj["alpha"] = None
        obj["beta"] = None
    return obj


def cmd_estimate(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    sample = MatchedSample.from_csv(args.sample)
    if sample.dx != config.market.dx or sample.dy != config.market.dy:
        raise ConfigError(
            f"sample dims ({sample.dx}, {sample.dy}) do not match market "
            f"({config.market.dx}, {config.market.dy})"
        )
    out = _out_dir(args, config)
    for method in config.methods:
        started = time.perf_counter()
        if method == "saliency":
            payload = _estimate_saliency(config, rank_tol=args.tol if args.tol is not None else 1e-8)
        else:
            payload = _estimate_one(method, sample, config).to_json_dict()
        elapsed = time.perf_counter() - started
        path = out / f"estimate_{method}.json"
        write_json(path, payload)
        # timing stays on the console so report files are reproducible
        print(f"{method}: wrote {path} in {elapsed:.3f}s")
    return 0


def _report_from_sample(spec: MarketSpec, n: int, seed: int) -> CounterexampleReport:
    """Monte Carlo column obtained through the full simulation pipeline."""
    sample = simulate_market(spec, n, seed)
    v = sample.y_index(spec.beta)
    vc = v - v.mean()
    covs, ses = [], []
    for j in range(2):
        prods = (sample.xs[:, j] - sample.xs[:, j].mean()) * vc
        covs.append(float(prods.mean()))
        ses.append(float(np.std(prods, ddof=1) / math.sqrt(n)))
    ratio = covs[1] / covs[0]
    stderrs = {
        "cov_x1": ses[0],
        "cov_x2": ses[1],
        "ratio_cca": abs(ratio) * math.hypot(ses[0] / covs[0], ses[1] / covs[1]),
    }
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio_true = float(np.divide(spec.alpha[1], spec.alpha[0]))
    return CounterexampleReport(
        cov_x1=covs[0],
        cov_x2=covs[1],
        ratio_cca=ratio,
        ratio_true=ratio_true,
        expectation_terms={},
        method="monte_carlo",
        stderrs=stderrs,
    )


def _gaussian_comparison_market() -> MarketSpec:
    return MarketSpec(
        dx=2,
        dy=1,
        alpha=np.array([_SQRT1_2, _SQRT1_2]),
        beta=np.array([1.0]),
        p_components=(gaussian(1.0), gaussian(1.0)),
        q_components=(gaussian(1.0),),
    )


def cmd_counterexample(args) -> int:
    tol = args.tol if args.tol is not None else 1e-9
    n = args.n if args.n is not None else 1_000_000
    seed = args.seed if args.seed is not None else 0
    out = _out_dir(args)

    if args.gaussian:
        spec = _gaussian_comparison_market()
        closed = gaussian_closed_form(spec)
        quad = numeric_counterexample(spec, tol)
        mc = _report_from_sample(spec, n, seed)
    else:
        spec = counterexample_market()
        closed = closed_form_counterexample()
        quad = numeric_counterexample(spec, tol)
        mc = monte_carlo_counterexample(n, seed)

    def within(a: float, b: float, band: float) -> bool:
        return bool(abs(a - b) <= band)

    agreement = {
        "quadrature_vs_closed": {
            "cov_x1": within(quad.cov_x1, closed.cov_x1, 10 * tol),
            "cov_x2": within(quad.cov_x2, closed.cov_x2, 10 * tol),
            "ratio_cca": within(quad.ratio_cca, closed.ratio_cca, 100 * tol),
        },
        "monte_carlo_vs_closed": {
            "cov_x1": within(mc.cov_x1, closed.cov_x1, 3 * mc.stderrs["cov_x1"]),
            "cov_x2": within(mc.cov_x2, closed.cov_x2, 3 * mc.stderrs["cov_x2"]),
            "ratio_cca": within(mc.ratio_cca, closed.ratio_cca, 3 * mc.stderrs["ratio_cca"]),
        },
    }
    flag = "CONSISTENT" if abs(closed.ratio_cca - closed.ratio_true) <= 0.05 else "INCONSISTENT"

    payload = {
        "flag": flag,
        "tol": tol,
        "n_monte_carlo": n,
        "seed": seed,
        "market": spec.to_json(),
        "closed_form": closed.to_json_dict(),
        "quadrature": quad.to_json_dict(),
        "monte_carlo": mc.to_json_dict(),
        "agreement": agreement,
    }
    write_json(out / "counterexample.json", payload)

    rows = [
        ("cov_x1", closed.cov_x1, quad.cov_x1, mc.cov_x1),
        ("cov_x2", closed.cov_x2, quad.cov_x2, mc.cov_x2),
        ("ratio_cca", closed.ratio_cca, quad.ratio_cca, mc.ratio_cca),
        ("ratio_true", closed.ratio_true, quad.ratio_true, mc.ratio_true),
    ]
    print(f"{'quantity':<12}{'closed_form':>16}{'quadrature':>16}{'monte_carlo':>16}")
    for name, c, q, m in rows:
        print(f"{name:<12}{c:>16.7f}{q:>16.7f}{m:>16.7f}")
    print(f"verdict: {flag} (cca ratio {closed.ratio_cca:.6f} vs true ratio {closed.ratio_true:.6f})")
    print(f"wrote {out / 'counterexample.json'}")
    return 0


@dataclass(frozen=True)
class BenchmarkTable:
    """Aggregated weight-recovery errors per (method, sample size)."""

    rows: list[dict]

    def write_csv(self, path: Path) -> None:
        header = ["method", "n", "replications", "mean_angular_error", "sd_angular_error", "mean_ratio"]
        out_rows = []
        for row in self.rows:
            out_rows.append([
                row["method"],
                row["n"],
                row["replications"],
                row["mean_angular_error"],
                "" if row["sd_angular_error"] is None else row["sd_angular_error"],
                "" if row["mean_ratio"] is None else row["mean_ratio"],
            ])
        write_csv(path, header, out_rows)


def _benchmark_task(config: ExperimentConfig, n: int, rep: int, task_index: int) -> list[dict]:
    sim_seed = _derived_seed(config.seed, task_index, 0)
    est_seed = _derived_seed(config.seed, task_index, 1)
    sample = simulate_market(config.market, n, sim_seed)
    truth = config.market.alpha
    records = []
    for method in config.methods:
        if method == "spearman":
            result = spearman_estimate(
                sample,
                restarts=int(config.spearman.get("restarts", 32)),
                seed=est_seed,
                grid_resolution=float(config.spearman.get("grid_resolution", 1e-3)),
            )
        else:
            result = _estimate_one(method, sample, config)
        ratio = None
        if config.market.dx == 2 and result.alpha_hat[0] != 0:
            ratio = float(result.alpha_hat[1] / result.alpha_hat[0])
        records.append({
            "method": method,
            "n": n,
            "replication": rep,
            "angular_error": angular_error(result.alpha_hat, truth),
            "ratio": ratio,
            "objective": float(result.objective) if np.isfinite(result.objective) else None,
        })
    return records


def cmd_benchmark(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    if not config.sweep:
        raise ConfigError("sweep: benchmark needs a non-empty sweep of sample sizes")
    for m in config.methods:
        if m not in DATA_METHODS:
            raise ConfigError(f"methods: {m!r} cannot run in a benchmark sweep")
    out = _out_dir(args, config)

    tasks = [
        (n, rep, idx)
        for idx, (n, rep) in enumerate(
            (n, rep) for n in config.sweep for rep in range(config.replications)
        )
    ]
    with ThreadPoolExecutor(max_workers=_thread_count()) as pool:
        futures = [pool.submit(_benchmark_task, config, n, rep, idx) for n, rep, idx in tasks]
        records = [row for fut in futures for row in fut.result()]

    records.sort(key=lambda r: (r["method"], r["n"], r["replication"]))
    long_rows = [
        [r["method"], r["n"], r["replication"], r["angular_error"],
         "" if r["ratio"] is None else r["ratio"],
         "" if r["objective"] is None else r["objective"]]
        for r in records
    ]
    write_csv(out / "benchmark_long.csv", ["method", "n", "replication", "angular_error", "ratio", "objective"], long_rows)

    table_rows = []
    for method in sorted(set(config.methods)):
        for n in sorted(config.sweep):
            errs = [r["angular_error"] for r in records if r["method"] == method and r["n"] == n]
            ratios = [r["ratio"] for r in records if r["method"] == method and r["n"] == n and r["ratio"] is not None]
            table_rows.append({
                "method": method,
                "n": n,
                "replications": len(errs),
                "mean_angular_error": float(np.mean(errs)),
                "sd_angular_error": float(np.std(errs, ddof=1)) if len(errs) > 1 else None,
                "mean_ratio": float(np.mean(ratios)) if ratios else None,
            })
    table = BenchmarkTable(rows=table_rows)
    table.write_csv(out / "benchmark.csv")
    print(f"wrote {out / 'benchmark.csv'} and {out / 'benchmark_long.csv'} "
          f"({len(records)} estimator runs)")
    return 0


def cmd_saliency(args) -> int:
    rank_tol = args.tol if args.tol is not None else 1e-8
    if args.affinity:
        try:
            matrix = np.loadtxt(args.affinity, delimiter=",", ndmin=2)
        except OSError as exc:
            raise ConfigError(f"cannot read affinity matrix {args.affinity}: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"{args.affinity}: not a dense numeric CSV: {exc}") from exc
    elif args.config:
        config = load_config(args.config)
        if config.affinity is None:
            raise ConfigError("affinity: config has no inline affinity matrix")
        matrix = config.affinity
    else:
        raise ConfigError("saliency needs --affinity CSV or --config with an inline matrix")
    out = _out_dir(args)
    decomp = svd_decompose(matrix, rank_tol=rank_tol)
    payload = decomp.to_json_dict()
    if decomp.numerical_rank == 1:
        alpha, beta = rank1_weights(decomp)
        payload["alpha"] = [float(a) for a in alpha]
        payload["beta"] = [float(b) for b in beta]
    write_json(out / "saliency.json", payload)
    shares = ", ".join(f"{s:.4f}" for s in decomp.shares)
    print(f"numerical rank {decomp.numerical_rank} (tol {rank_tol}); surplus shares: {shares}")
    print(f"wrote {out / 'saliency.json'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="matchbench",
        description="Simulate single-index matching markets and benchmark index-weight estimators.",
    )
    sub = parser.add_subparsers(dest="command")

    def add_common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="JSON experiment config")
        p.add_argument("--n", type=int, help="override sample size")
        p.add_argument("--seed", type=int, help="override seed")
        p.add_argument("--out", help="output directory")

    p_sim = sub.add_parser("simulate", help="draw a matched sample and write it to CSV")
    add_common(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_est = sub.add_parser("estimate", help="run estimators on a sample CSV")
    add_common(p_est)
    p_est.add_argument("--sample", required=True, help="matched sample CSV")
    p_est.add_argument("--methods", help="comma-separated method override")
    p_est.add_argument("--tol", type=float, help="rank tolerance for the saliency method")
    p_est.set_defaults(func=cmd_estimate)

    p_ctr = sub.add_parser("counterexample", help="closed form vs quadrature vs Monte Carlo")
    p_ctr.add_argument("--tol", type=float, help="quadrature tolerance (default 1e-9)")
    p_ctr.add_argument("--n", type=int, help="Monte Carlo draws (default 1e6)")
    p_ctr.add_argument("--seed", type=int, help="Monte Carlo seed (default 0)")
    p_ctr.add_argument("--out", help="output directory")
    p_ctr.add_argument("--gaussian", action="store_true",
                       help="run the all-Gaussian comparison market instead")
    p_ctr.set_defaults(func=cmd_counterexample)

    p_ben = sub.add_parser("benchmark", help="bias-versus-n sweep across methods")
    add_common(p_ben)
    p_ben.add_argument("--methods", help="comma-separated method override")
    p_ben.set_defaults(func=cmd_benchmark)

    p_sal = sub.add_parser("saliency", help="SVD saliency analysis of an affinity matrix")
    p_sal.add_argument("--affinity", help="dense CSV matrix")
    p_sal.add_argument("--config", help="config with an inline affinity matrix")
    p_sal.add_argument("--tol", type=float, help="numerical rank tolerance (default 1e-8)")
    p_sal.add_argument("--out", help="output directory")
    p_sal.set_defaults(func=cmd_saliency)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except MatchbenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
