"""Command-line interface.

Subcommands: gen-synth, prepare-data, train, evaluate, sweep-missingness.
Every run takes a JSON config file plus repeatable --set dotted.key=value
overrides; unknown keys are hard errors. Results documents are JSON with a
stable key order: everything outside the run_info block is byte-identical
across reruns with the same config and seeds.
"""

from __future__ import annotations

import argparse
import json
import logging
import subprocess
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .config import apply_overrides, config_to_dict, load_config
from .datasets import generate_synthetic, write_long_csv
from .errors import (
    CacheError,
    ConfigError,
    FitnetError,
    NumericError,
    ParseError,
)
from .sweep import missingness_sweep, write_sweep_csv
from .training import (
    evaluate_model,
    load_model,
    prepare_data,
    run_experiment,
    save_model,
    write_prepared_cache,
)

log = logging.getLogger(__name__)

RESULTS_FORMAT = "fitnet-results-1"


def build_description():
    """git describe of the working tree, else the package version."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True, text=True, timeout=10,
        )
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except OSError:
        pass
    return f"fitnet-{__version__}"


def _run_info(started, wall_clock=None):
    return {
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "wall_clock_sec": time.perf_counter() - started if wall_clock is None else wall_clock,
        "build": build_description(),
    }


def _write_results(path, command, cfg, metrics, run_info):
    doc = {
        "format_version": RESULTS_FORMAT,
        "command": command,
        "config": config_to_dict(cfg),
        "metrics": metrics,
        "run_info": run_info,
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _load_cfg(args):
    cfg = load_config(args.config)
    cfg = apply_overrides(cfg, args.set or [])
    if getattr(args, "out", None):
        cfg.output_dir = args.out
    cfg.validate()
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return cfg, out_dir


def cmd_gen_synth(args):
    cfg, out_dir = _load_cfg(args)
    if cfg.data.synthetic is None:
        raise ConfigError("gen-synth needs data.synthetic in the config")
    records = generate_synthetic(cfg.data.synthetic)
    data_path = out_dir / "data.csv"
    labels_path = out_dir / "labels.csv"
    write_long_csv(records, data_path, labels_path)
    n_obs = sum(r.n_observations for r in records)
    print(f"wrote {len(records)} records ({n_obs} observations) to {data_path}")
    print(f"labels: {labels_path}")
    return 0


def cmd_prepare_data(args):
    cfg, out_dir = _load_cfg(args)
    started = time.perf_counter()
    cohort = write_prepared_cache(cfg, out_dir)
    print(f"cached {len(cohort.record_ids)} records to {out_dir}")
    worst = max(cohort.missing_rates)
    print(f"per-signal missing rates: max {worst:.4f}, "
          f"mean {sum(cohort.missing_rates) / len(cohort.missing_rates):.4f}")
    log.info("prepare-data finished in %.1fs", time.perf_counter() - started)
    return 0


def cmd_train(args):
    cfg, out_dir = _load_cfg(args)
    started = time.perf_counter()
    metrics, models, wall = run_experiment(cfg)
    for seed, (params, _) in models.items():
        save_model(params, out_dir / f"model_seed{seed}.npz")
    _write_results(out_dir / "results.json", "train", cfg, metrics,
                   _run_info(started, wall_clock=wall))
    agg = metrics["aggregate"]["test_macro_f"]
    print(f"test macro-F median {agg['median']:.4f} "
          f"(min {agg['min']:.4f}, max {agg['max']:.4f}) over "
          f"{len(cfg.training.seeds)} seed(s)")
    print(f"results: {out_dir / 'results.json'}")
    return 0


def cmd_evaluate(args):
    cfg, out_dir = _load_cfg(args)
    run_dir = Path(args.run_dir) if args.run_dir else out_dir
    started = time.perf_counter()
    records = None
    per_seed = {}
    values = []
    for idx, seed in enumerate(cfg.training.seeds):
        model_path = run_dir / f"model_seed{seed}.npz"
        if not model_path.is_file():
            raise ConfigError(f"no saved model at {model_path}")
        split_seed = cfg.split.seed + idx if cfg.split.vary_with_training_seed else None
        prepared = prepare_data(cfg, records=records, split_seed=split_seed)
        params = load_model(cfg, prepared, model_path)
        ids = getattr(prepared.split, args.split)
        report = evaluate_model(params, prepared, ids)
        per_seed[str(seed)] = report.to_dict()
        values.append(report.macro_f)
    values.sort()
    n = len(values)
    median = values[n // 2] if n % 2 else (values[n // 2 - 1] + values[n // 2]) / 2
    metrics = {"split": args.split, "per_seed": per_seed,
               "aggregate": {"macro_f_median": median, "macro_f_values": values}}
    _write_results(out_dir / "evaluation.json", "evaluate", cfg, metrics, _run_info(started))
    print(f"{args.split} macro-F median {median:.4f} over {n} seed(s)")
    print(f"results: {out_dir / 'evaluation.json'}")
    return 0


def cmd_sweep(args):
    cfg, out_dir = _load_cfg(args)
    started = time.perf_counter()
    rows, medians = missingness_sweep(cfg)
    csv_path = out_dir / "sweep.csv"
    write_sweep_csv(rows, medians, csv_path)
    metrics = {"rows": rows, "medians": medians}
    _write_results(out_dir / "sweep_results.json", "sweep-missingness", cfg, metrics,
                   _run_info(started))
    failures = sum(1 for r in rows if r["status"] != "ok")
    print(f"{len(rows)} sweep rows ({failures} failed); medians:")
    for m in medians:
        f_text = "failed" if m["macro_f"] is None else f"{m['macro_f']:.4f}"
        print(f"  {m['model']:>12s} @ {m['fraction']:.2f}: {f_text}")
    print(f"csv: {csv_path}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fitnet",
        description="Classify irregular, multi-resolution time series with "
                    "missing values (FIT model family).",
    )
    parser.add_argument("--version", action="version", version=f"fitnet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_run_dir=False):
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config entry (dotted path, JSON value)")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--quiet", action="store_true", help="warnings only")
        if needs_run_dir:
            p.add_argument("--run-dir", help="directory holding model_seed*.npz "
                                             "(default: the output directory)")

    p = sub.add_parser("gen-synth", help="generate a synthetic dataset as long CSV")
    common(p)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("prepare-data", help="parse, grid and cache a dataset")
    common(p)
    p.set_defaults(func=cmd_prepare_data)

    p = sub.add_parser("train", help="train over all configured seeds")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate saved models on a split")
    common(p, needs_run_dir=True)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep-missingness", help="train/evaluate across removal fractions")
    common(p)
    p.set_defaults(func=cmd_sweep)
    return parser


_EXIT_CODES = [
    (ConfigError, 2, "config"),
    (ParseError, 3, "parse"),
    (CacheError, 4, "cache"),
    (NumericError, 5, "numeric"),
    (FitnetError, 6, "contract"),
]


def run_cli(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if getattr(args, "quiet", False) else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except FitnetError as exc:
        for klass, code, label in _EXIT_CODES:
            if isinstance(exc, klass):
                print(f"error[{label}]: {exc}", file=sys.stderr)
                return code
        raise AssertionError("unreachable")


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
