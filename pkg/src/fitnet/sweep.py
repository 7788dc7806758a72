"""Controlled-missingness sweep: degrade, rebuild, retrain, score.

For every (model kind, fraction) cell the pristine records are degraded by
removing the given fraction of observations per signal, features are rebuilt
from scratch, and one training run per configured seed is scored on the test
split. One CSV row is emitted per (model, fraction, seed) plus one median
row per (model, fraction); a failed training marks its row and the sweep
continues.

A fraction-0 cell reproduces a plain train/evaluate run with the same seed
bit for bit, because the degradation step is a seeded no-op.
"""

from __future__ import annotations

import copy
import csv
import logging
from multiprocessing import get_context

from .config import ExperimentConfig
from .errors import ConfigError
from .training import evaluate_model, prepare_data, train_model

log = logging.getLogger(__name__)

__all__ = ["missingness_sweep", "write_sweep_csv", "SWEEP_COLUMNS"]

SWEEP_COLUMNS = ["row_type", "model", "fraction", "seed", "status", "macro_f",
                 "weighted_f", "accuracy"]


def _cell_config(cfg: ExperimentConfig, kind, fraction) -> ExperimentConfig:
    cell = copy.deepcopy(cfg)
    cell.model.kind = kind
    cell.data.missingness = float(fraction)
    return cell


def _run_cell(args):
    """One (model, fraction) cell: prepare once, train per seed."""
    cfg, kind, fraction = args
    rows = []
    try:
        prepared = prepare_data(cfg)
    except Exception as exc:  # failure poisons every seed of the cell
        log.warning("prepare failed for %s @ %.2f: %s", kind, fraction, exc)
        for seed in cfg.training.seeds:
            rows.append(_row(kind, fraction, seed, "failed", error=str(exc)))
        return rows
    for seed in cfg.training.seeds:
        try:
            params, _ = train_model(cfg, prepared, seed)
            report = evaluate_model(params, prepared, prepared.split.test)
            rows.append(_row(kind, fraction, seed, "ok", report=report))
        except Exception as exc:
            log.warning("training failed for %s @ %.2f seed %s: %s",
                        kind, fraction, seed, exc)
            rows.append(_row(kind, fraction, seed, "failed", error=str(exc)))
    return rows


def _row(kind, fraction, seed, status, report=None, error=None):
    return {
        "row_type": "cell",
        "model": kind,
        "fraction": float(fraction),
        "seed": seed,
        "status": status,
        "macro_f": report.macro_f if report else None,
        "weighted_f": report.weighted_f if report else None,
        "accuracy": report.accuracy if report else None,
        "error": error,
    }


def _median(values):
    xs = sorted(values)
    n = len(xs)
    return xs[n // 2] if n % 2 else (xs[n // 2 - 1] + xs[n // 2]) / 2.0


def missingness_sweep(cfg: ExperimentConfig, fractions=None, model_kinds=None):
    """Returns (rows, medians): per-seed cell rows plus per-(model, fraction)
    median rows over the runs that succeeded."""
    cfg.validate()
    if cfg.data.source == "cache":
        raise ConfigError(
            "the sweep rebuilds features from raw observations; "
            "data.source cannot be 'cache'"
        )
    fractions = list(cfg.sweep.fractions if fractions is None else fractions)
    kinds = list(cfg.sweep.models if model_kinds is None else model_kinds)
    for f in fractions:
        if not 0.0 <= f <= 1.0:
            raise ConfigError(f"sweep fraction {f} outside [0, 1]")
    if sorted(fractions) != fractions:
        raise ConfigError("sweep fractions must be sorted ascending")
    cells = [(_cell_config(cfg, kind, fraction), kind, fraction)
             for kind in kinds for fraction in fractions]
    workers = max(1, int(cfg.sweep.workers))
    if workers > 1 and len(cells) > 1:
        with get_context("spawn").Pool(min(workers, len(cells))) as pool:
            results = pool.map(_run_cell, cells)
    else:
        results = [_run_cell(c) for c in cells]
    rows = [row for cell_rows in results for row in cell_rows]
    rows.sort(key=lambda r: (r["model"], r["fraction"], str(r["seed"])))
    medians = []
    for kind in kinds:
        for fraction in fractions:
            ok = [r["macro_f"] for r in rows
                  if r["model"] == kind and r["fraction"] == float(fraction)
                  and r["status"] == "ok"]
            medians.append({
                "row_type": "median",
                "model": kind,
                "fraction": float(fraction),
                "seed": "",
                "status": "ok" if ok else "failed",
                "macro_f": _median(ok) if ok else None,
                "weighted_f": None,
                "accuracy": None,
                "error": None,
            })
    return rows, medians


def write_sweep_csv(rows, medians, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for row in list(rows) + list(medians):
            writer.writerow([
                row["row_type"], row["model"], repr(row["fraction"]), row["seed"],
                row["status"],
                "" if row["macro_f"] is None else repr(row["macro_f"]),
                "" if row["weighted_f"] is None else repr(row["weighted_f"]),
                "" if row["accuracy"] is None else repr(row["accuracy"]),
            ])
