"""Command-line driver.

``fkpbnn run <config>`` trains every configured seed and writes, per seed,
``trace.jsonl``, ``metrics.json``, ``ensemble.csv`` and ``psi.csv`` under
``<output_dir>/<experiment>/<algorithm>/seed_<k>/``, then a ``summary.csv``
for the whole output directory. ``fkpbnn summarize <dir>`` rebuilds that
summary and ``fkpbnn gen-data`` writes a synthetic data set as CSV.

Exit status: 0 on success, 2 for invalid configuration or input, 3 when a
seed fails during training.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .datasets import make_crescent_data, make_moons_data, make_regression_data, save_csv
from .exceptions import ConfigError, CSVFormatError, KernelTargetError, SingularParameterError, WeightCollapseError
from .experiments import run_seed

EXIT_OK, EXIT_CONFIG, EXIT_TRAINING = 0, 2, 3

METRIC_ORDER = ("nlpd", "rmse", "ece", "accuracy", "psi_hat", "psi_error")
_NO_STD = "(\u2014)"  # sample std is undefined for one run

# failures that abort a seed rather than indicating a bad configuration
TRAINING_ERRORS = (FloatingPointError, WeightCollapseError, SingularParameterError, KernelTargetError)


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"cannot serialise {type(v).__name__}")


def seed_dir(cfg: RunConfig, seed: int) -> Path:
    return Path(cfg.output_dir) / cfg.experiment / cfg.algorithm / f"seed_{seed}"


def _run_one(cfg: RunConfig, seed: int) -> tuple:
    """Train one seed and write its artefacts; returns ``(seed, error or None)``."""
    out = seed_dir(cfg, seed)
    out.mkdir(parents=True, exist_ok=True)
    chash = cfg.config_hash()
    started = time.time()
    with (out / "trace.jsonl").open("w", encoding="utf-8") as trace:
        def on_record(rec):
            trace.write(json.dumps({"seed": seed, "config_hash": chash, **rec}, default=_jsonable) + "\n")

        try:
            res = run_seed(cfg, seed, on_record=on_record)
        except TRAINING_ERRORS as err:
            msg = f"{type(err).__name__}: {err}"
            (out / "error.json").write_text(json.dumps(
                {"seed": seed, "config_hash": chash, "error": msg}, indent=2) + "\n")
            return seed, msg
    fit = res["fit"]
    metrics = {"experiment": cfg.experiment, "algorithm": cfg.algorithm, "seed": seed,
               "config_hash": chash, **res["metrics"],
               "best_iteration": fit.result.best_iteration,
               "n_reinit": fit.result.state.n_reinit}
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True, default=_jsonable) + "\n")
    fit.ensemble.save(out / "ensemble.csv")
    np.savetxt(out / "psi.csv", fit.psi, header="psi", comments="", fmt="%.17g")
    # wall-clock data stays out of metrics.json so reruns compare byte for byte
    (out / "timing.json").write_text(json.dumps(
        {"seed": seed, "config_hash": chash, "started": started, "seconds": time.time() - started}) + "\n")
    err_file = out / "error.json"
    if err_file.exists():
        err_file.unlink()
    return seed, None


def run(cfg: RunConfig) -> int:
    Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
    (Path(cfg.output_dir) / f"config.{cfg.config_hash()}.json").write_text(
        json.dumps(cfg.to_dict(), indent=2, sort_keys=True, default=_jsonable) + "\n")
    if cfg.jobs > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(min(cfg.jobs, len(cfg.seeds))) as pool:
            outcomes = list(pool.map(_run_one, [cfg] * len(cfg.seeds), cfg.seeds))
    else:
        outcomes = [_run_one(cfg, s) for s in cfg.seeds]
    failed = [(s, m) for s, m in outcomes if m is not None]
    for s, m in failed:
        print(f"seed {s} failed: {m}", file=sys.stderr)
    if len(failed) < len(outcomes):
        table = summarize(cfg.output_dir)
        sys.stdout.write(table)
    return EXIT_TRAINING if failed else EXIT_OK


def _fmt(values) -> str:
    values = np.asarray(values, dtype=float)
    mean = f"{values.mean():.2f}"
    if values.shape[0] < 2:
        return f"{mean} {_NO_STD}"
    return f"{mean} ({values.std(ddof=1):.2f})"


def collect_metrics(directory) -> list:
    return [json.loads(p.read_text()) for p in sorted(Path(directory).rglob("metrics.json"))]


def summary_rows(runs) -> tuple:
    """Group runs by ``(experiment, algorithm)``; returns ``(header, rows)``."""
    groups = {}
    for r in runs:
        groups.setdefault((r["experiment"], r["algorithm"]), []).append(r)
    metrics = [m for m in METRIC_ORDER if any(m in r for r in runs)]
    header = ["experiment", "algorithm", "n_runs"] + metrics
    rows = []
    for (exp, alg) in sorted(groups, key=lambda k: (k[1], k[0])):
        g = groups[exp, alg]
        row = [exp, alg, str(len(g))]
        for m in metrics:
            vals = [r[m] for r in g if r.get(m) is not None]
            row.append(_fmt(vals) if vals else "")
        rows.append(row)
    return header, rows


def summarize(directory) -> str:
    """Write ``summary.csv`` in ``directory`` and return its text."""
    runs = collect_metrics(directory)
    if not runs:
        raise FileNotFoundError(f"no completed runs (metrics.json) under {directory}")
    header, rows = summary_rows(runs)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    text = buf.getvalue()
    (Path(directory) / "summary.csv").write_text(text, encoding="utf-8")
    return text


def gen_data(experiment: str, seed: int, out, n_per_split=100, noise_std=0.3, n_data=100) -> None:
    if experiment == "crescent":
        ds = make_crescent_data(N=n_data, seed=seed)
    elif experiment == "regression":
        ds = make_regression_data(n_per_split, seed)
    elif experiment == "moons":
        ds = make_moons_data(n_per_split, noise_std, seed)
    else:
        raise ValueError(f"unknown experiment {experiment!r}")
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    save_csv(ds, out)


def _overrides(args) -> list:
    ov = list(args.set or [])
    if args.seeds is not None:
        ov.append(f"experiment.seeds=[{args.seeds}]")
    if args.algorithm is not None:
        ov.append(f"algorithm.name={args.algorithm}")
    if args.epochs is not None:
        ov.append(f"algorithm.epochs={args.epochs}")
    if args.n_particles is not None:
        ov.append(f"algorithm.n_particles={args.n_particles}")
    if args.output_dir is not None:
        ov.append(f"run.output_dir={str(args.output_dir)!r}")
    if args.workers is not None:
        ov.append(f"run.n_workers={args.workers}")
    if args.jobs is not None:
        ov.append(f"run.jobs={args.jobs}")
    return ov


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fkpbnn", description="Train partial Bayesian networks with SMC samplers.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train every seed of a configuration")
    r.add_argument("config", help="config file, or the name of a shipped preset (crescent, regression, moons)")
    r.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override any config field")
    r.add_argument("--seeds", help="comma-separated seed list")
    r.add_argument("--algorithm", help="smc, sgsmc, ohsmc, map, map_hmc or sgsmc_hmc")
    r.add_argument("--epochs", type=int)
    r.add_argument("--n-particles", type=int)
    r.add_argument("--output-dir")
    r.add_argument("--workers", type=int, help="threads per run for particle work")
    r.add_argument("--jobs", type=int, help="seeds run in parallel processes")

    s = sub.add_parser("summarize", help="aggregate metrics.json files into summary.csv")
    s.add_argument("directory")

    g = sub.add_parser("gen-data", help="write a synthetic data set as CSV")
    g.add_argument("experiment", choices=("crescent", "regression", "moons"))
    g.add_argument("seed", type=int)
    g.add_argument("out")
    g.add_argument("--n-per-split", type=int, default=100)
    g.add_argument("--noise-std", type=float, default=0.3)
    g.add_argument("--n-data", type=int, default=100)
    return p


def resolve_config_path(name) -> Path:
    path = Path(name)
    if path.exists() or path.suffix:
        return path
    preset = Path(__file__).parent / "presets" / f"{name}.preset"
    return preset if preset.exists() else path


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        try:
            cfg = load_config(resolve_config_path(args.config), _overrides(args))
            return run(cfg)
        except ConfigError as err:
            print(f"config error: {err}", file=sys.stderr)
            return EXIT_CONFIG
        except (CSVFormatError, FileNotFoundError) as err:
            print(f"input error: {err}", file=sys.stderr)
            return EXIT_CONFIG
    if args.command == "summarize":
        try:
            sys.stdout.write(summarize(args.directory))
        except FileNotFoundError as err:
            print(f"error: {err}", file=sys.stderr)
            return EXIT_CONFIG
        return EXIT_OK
    if args.n_per_split < 1 or args.n_data < 1 or args.noise_std < 0:
        print("error: sizes must be positive and noise non-negative", file=sys.stderr)
        return EXIT_CONFIG
    gen_data(args.experiment, args.seed, args.out, args.n_per_split, args.noise_std, args.n_data)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
