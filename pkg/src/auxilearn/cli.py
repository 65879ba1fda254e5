"""Command-line entry point: ``auxilearn check-hypergrad | run | report``.

Exit codes: 0 success, 1 failed check or aborted run, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import os
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from auxilearn import __version__
from auxilearn.errors import AuxiLearnError, ConfigurationError, ContractError, NumericError
from auxilearn.experiments.analysis import mean_sem
from auxilearn.experiments.config import EXPERIMENTS, load_config, parse_toml
from auxilearn.experiments.runners import run_experiment
from auxilearn.hypergrad import HypergradConfig, top_eigenvalue
from auxilearn.autodiff import HessianOperator
from auxilearn.oracles import random_quadratic, rel_error
from auxilearn.trainer.checkpoint import atomic_write_text, save_checkpoint
from auxilearn.trainer.config import build_dataclass

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
OUT_ENV = "AUXILEARN_OUT"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


# ----------------------------------------------------------------------------
# check-hypergrad


@dataclass(frozen=True)
class CheckConfig:
    n_problems: int = 20
    max_w: int = 10
    max_phi: int = 3
    cond: float = 10.0
    J: int = 500
    J_path: tuple[int, ...] = (10, 50, 100, 200, 500)
    alpha_scale: float = 0.9
    power_iters: int = 200
    fd_eps: float = 1e-5
    fd_tol: float = 1e-4
    neumann_tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.n_problems < 1 or self.J < 1 or self.max_w < 1 or self.max_phi < 1:
            raise ConfigurationError("counts must be >= 1")
        if not self.alpha_scale > 0 or not self.cond >= 1:
            raise ConfigurationError("alpha_scale must be > 0 and cond >= 1")


def load_check_config(text: str | None) -> CheckConfig:
    if text is None:
        return CheckConfig()
    data = parse_toml(text)
    unknown = sorted(set(data) - {"check"})
    if unknown:
        raise ConfigurationError(f"unknown section(s): {', '.join(unknown)}")
    return build_dataclass(CheckConfig, data.get("check", {}), "check", CheckConfig())


def check_hypergrad(cfg: CheckConfig) -> dict:
    """Exact-vs-finite-difference and Neumann-vs-exact checks on random quadratics."""
    rng = np.random.default_rng(cfg.seed)
    fd_errors, neumann_errors, paths, divergent = [], [], [], []
    for i in range(cfg.n_problems):
        prob = random_quadratic(rng, cfg.max_w, cfg.max_phi, cfg.cond)
        phi = rng.standard_normal(prob.dim_phi)
        exact = prob.exact(phi)
        fd_errors.append(rel_error(exact, prob.fd_hypergrad(phi, cfg.fd_eps)))
        L_A, L_T, wp, pp = prob.graph(prob.w_star(phi), phi)
        lam = top_eigenvalue(HessianOperator(L_T, wp), cfg.power_iters, seed=i)
        alpha = cfg.alpha_scale / lam
        lam_max = float(np.max(np.linalg.eigvalsh(prob.A)))
        if abs(1.0 - alpha * lam_max) >= 1.0 - 1e-9:
            divergent.append(i)
        path = []
        for J in sorted(set(cfg.J_path) | {cfg.J}):
            hc = HypergradConfig(J=J, alpha=alpha, clip_norm=None, divergence_factor=1e300)
            report = prob.neumann(phi, hc)
            err = rel_error(report.grad_phi, exact) if np.all(np.isfinite(report.grad_phi)) else float("inf")
            path.append({"J": J, "rel_error": err})
        paths.append(path)
        neumann_errors.append(next(p["rel_error"] for p in path if p["J"] == cfg.J))
    checks = {
        "exact_vs_finite_difference": {"max_rel_error": max(fd_errors), "tol": cfg.fd_tol},
        f"neumann_J{cfg.J}_vs_exact": {"max_rel_error": max(neumann_errors), "tol": cfg.neumann_tol},
    }
    for check in checks.values():
        err = check["max_rel_error"]
        check["passed"] = bool(np.isfinite(err) and err <= check["tol"])
    failed = [name for name, c in checks.items() if not c["passed"]]
    if divergent:
        failed.append("neumann_divergence")
    return {
        "checks": checks,
        "divergence": {"detected": bool(divergent), "problems": divergent,
                       "rule": "|1 - alpha * lambda_max| >= 1"},
        "neumann_paths": paths,
        "failed": failed,
        "passed": not failed,
    }


def cmd_check_hypergrad(args) -> int:
    text = Path(args.config).read_text() if args.config else None
    cfg = load_check_config(text)
    report = check_hypergrad(cfg)
    if not args.verbose:
        report.pop("neumann_paths")
    print(json.dumps(report, indent=2, sort_keys=True))
    if not report["passed"]:
        print(f"failed checks: {', '.join(report['failed'])}", file=sys.stderr)
    return EXIT_OK if report["passed"] else EXIT_FAIL


# ----------------------------------------------------------------------------
# run


def git_blob_hash(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def parse_seeds(text: str | None, base: int) -> list[int]:
    """``N`` means N consecutive seeds from the config seed; ``a,b,c`` lists them."""
    if text is None:
        return [base]
    try:
        if "," in text:
            seeds = [int(s) for s in text.split(",") if s.strip()]
        else:
            n = int(text)
            if n < 1:
                raise ValueError
            seeds = list(range(base, base + n))
    except ValueError:
        raise UsageError(f"--seeds must be a positive count or a comma list, got {text!r}") from None
    if len(set(seeds)) != len(seeds):
        raise UsageError("--seeds contains duplicates")
    return seeds


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _write_csv(path: Path, rows: list[dict]) -> None:
    buf = io.StringIO()
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    atomic_write_text(path, buf.getvalue())


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def execute_run(experiment: str, config_bytes: bytes, config_name: str, seed: int, run_dir: str) -> dict:
    """Run one (experiment, config, seed) into ``run_dir``; returns the summary."""
    run_dir = Path(run_dir)
    cfg = load_config(experiment, parse_toml(config_bytes.decode()))
    run_dir.mkdir(parents=True)
    started = _now()
    (run_dir / "config.toml").write_bytes(config_bytes)
    result = run_experiment(cfg, seed, log_dir=run_dir)
    for name, rows in result.tables.items():
        _write_csv(run_dir / f"{name}.csv", rows)
    for name, grid in result.landscapes.items():
        atomic_write_text(run_dir / f"landscape_{name}.csv", grid.to_csv())
    save_checkpoint(run_dir / "checkpoint.json", {"runs": result.checkpoints})
    summary = {"experiment": experiment, "seed": seed, **result.summary}
    atomic_write_text(run_dir / "summary.json", json.dumps(summary, indent=2, sort_keys=True, default=_json_default))
    manifest = {
        "run_id": run_dir.name,
        "experiment": experiment,
        "seed": seed,
        "config_file": config_name,
        "config_hash": git_blob_hash(config_bytes),
        "output_dir": str(run_dir.resolve()),
        "started": started,
        "finished": _now(),
        "version": __version__,
        "resolved_config": cfg.to_dict(),
    }
    atomic_write_text(run_dir / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True))
    return summary


def aggregate(summaries: list[dict]) -> list[dict]:
    """mean and SEM of every numeric summary field, grouped by experiment."""
    groups: dict[str, list[dict]] = {}
    for s in summaries:
        groups.setdefault(s.get("experiment", "?"), []).append(s)
    rows = []
    for experiment, items in groups.items():
        keys = [k for k in items[0] if k not in ("experiment", "seed")]
        for key in keys:
            values = [s[key] for s in items if isinstance(s.get(key), (int, float)) and not isinstance(s.get(key), bool)]
            if len(values) != len(items):
                continue
            mean, sem = mean_sem(values)
            rows.append({
                "experiment": experiment,
                "metric": key,
                "mean": mean,
                "sem": "" if sem is None else sem,
                "n": len(values),
                "note": "single-seed" if sem is None else "",
            })
    return rows


def cmd_run(args) -> int:
    if args.config:
        path = Path(args.config)
        try:
            config_bytes = path.read_bytes()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config: {exc}") from exc
        config_name = path.name
    else:
        config_bytes = b""
        config_name = "<defaults>"
    cfg = load_config(args.experiment, parse_toml(config_bytes.decode()))
    seeds = parse_seeds(args.seeds, cfg.train.seed)
    out = Path(args.out or os.environ.get(OUT_ENV) or "runs")
    chash = git_blob_hash(config_bytes)[:12]
    dirs = [out / f"{args.experiment}-{chash}-s{seed}" for seed in seeds]
    existing = [d for d in dirs if d.exists()]
    if existing and not args.overwrite:
        raise UsageError(f"run directory exists (pass --overwrite to replace): {existing[0]}")
    for d in existing:
        shutil.rmtree(d)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(args.experiment, config_bytes, config_name, seed, str(d)) for seed, d in zip(seeds, dirs)]
    if args.parallel and len(jobs) > 1:
        with ProcessPoolExecutor() as pool:
            summaries = list(pool.map(execute_run, *zip(*jobs)))
    else:
        summaries = [execute_run(*job) for job in jobs]
    for d in dirs:
        print(d)
    if len(seeds) > 1:
        agg = out / f"{args.experiment}-{chash}-aggregate.csv"
        _write_csv(agg, aggregate(summaries))
        print(agg)
    return EXIT_OK


# ----------------------------------------------------------------------------
# report


def cmd_report(args) -> int:
    summaries, failures = [], []
    for raw in args.run_dirs:
        d = Path(raw)
        try:
            manifest = json.loads((d / "manifest.json").read_text())
            summary = json.loads((d / "summary.json").read_text())
            if "experiment" not in manifest:
                raise ValueError("manifest lacks an experiment field")
        except (OSError, ValueError) as exc:
            failures.append(str(d))
            print(f"warning: skipping {d}: {exc}", file=sys.stderr)
            continue
        summaries.append({"experiment": manifest["experiment"], **summary})
    if not summaries:
        print("error: no readable run directories", file=sys.stderr)
        return EXIT_FAIL
    rows = aggregate(summaries)
    if args.json:
        atomic_write_text(args.json, json.dumps({"rows": rows, "skipped": failures}, indent=2, sort_keys=True))
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["experiment", "metric", "mean", "sem", "n", "note"], lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    if args.out:
        atomic_write_text(args.out, buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


# ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="auxilearn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("check-hypergrad", help="numerical checks of the hypergradient on random quadratics")
    p.add_argument("--config", help="TOML file with a [check] table")
    p.add_argument("--verbose", action="store_true", help="include per-problem Neumann error paths")
    p.set_defaults(func=cmd_check_hypergrad)

    p = sub.add_parser("run", help="run an experiment")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", help="TOML file overriding the experiment defaults")
    p.add_argument("--out", help=f"output root (default ${OUT_ENV} or ./runs)")
    p.add_argument("--seeds", help="number of seeds, or a comma-separated list")
    p.add_argument("--overwrite", action="store_true", help="replace existing run directories")
    p.add_argument("--parallel", action="store_true", help="run seeds in parallel processes")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="aggregate run directories (mean and SEM)")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", help="CSV path (default stdout)")
    p.add_argument("--json", help="also write a JSON aggregate here")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ConfigurationError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, AuxiLearnError) as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
