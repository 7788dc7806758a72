"""Preprocessed-feature cache with bit-exact round-trip.

Layout of a cache directory:

* ``manifest.json`` — versioned text manifest: grid step, horizon, signal
  names, normalization stats, split definition, labels, per-signal missing
  rates, and a sha256 digest per record payload.
* ``records/<record_id>.bin`` — one binary file per record: the magic bytes
  ``FITF``, a little-endian u32 format version, u32 T and u32 M, then the
  values/mask/delta/last arrays and the per-signal means, all little-endian
  float64 in row-major order.

Floats inside the manifest round-trip exactly through JSON (shortest-repr
serialization), so read(write(x)) == x bitwise.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CacheVersionError, ConfigError, CorruptionError
from .features import DatasetSplit, FitFeatures, NormalizationStats

__all__ = ["CACHE_FORMAT_VERSION", "CacheManifest", "write_cache", "read_cache"]

CACHE_FORMAT_VERSION = 1
_MAGIC = b"FITF"
_HEADER = struct.Struct("<4sIII")


@dataclass
class CacheManifest:
    grid_step: float
    horizon: float
    signal_names: list
    normalized: bool
    labels: dict  # record id -> class index
    stats: NormalizationStats | None = None
    split: DatasetSplit | None = None
    missing_rates: list | None = None
    extra: dict | None = None


def _record_payload(f: FitFeatures) -> bytes:
    parts = [
        _HEADER.pack(_MAGIC, CACHE_FORMAT_VERSION, f.n_steps, f.n_signals),
        f.values.astype("<f8").tobytes(),
        f.mask.astype("<f8").tobytes(),
        f.delta.astype("<f8").tobytes(),
        f.last.astype("<f8").tobytes(),
        f.means.astype("<f8").tobytes(),
    ]
    return b"".join(parts)


def _decode_payload(blob: bytes, path):
    if len(blob) < _HEADER.size:
        raise CorruptionError(f"{path}: truncated header")
    magic, version, T, M = _HEADER.unpack_from(blob)
    if magic != _MAGIC:
        raise CorruptionError(f"{path}: bad magic {magic!r}")
    if version != CACHE_FORMAT_VERSION:
        raise CacheVersionError(
            f"{path}: record format version {version}, reader supports {CACHE_FORMAT_VERSION}"
        )
    expected = _HEADER.size + (4 * T * M + M) * 8
    if len(blob) != expected:
        raise CorruptionError(f"{path}: expected {expected} bytes, found {len(blob)}")
    body = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size)
    n = T * M
    values = body[0:n].reshape(T, M).copy()
    mask = body[n : 2 * n].reshape(T, M).copy()
    delta = body[2 * n : 3 * n].reshape(T, M).copy()
    last = body[3 * n : 4 * n].reshape(T, M).copy()
    means = body[4 * n : 4 * n + M].copy()
    return values, mask, delta, last, means


def write_cache(directory, features, manifest: CacheManifest):
    """Write features plus manifest; record files first, manifest last, each
    via atomic rename so a crashed writer never leaves a readable cache."""
    directory = Path(directory)
    records_dir = directory / "records"
    records_dir.mkdir(parents=True, exist_ok=True)
    entries = {}
    for f in features:
        if f.record_id is None:
            raise ConfigError("cannot cache features without a record id")
        payload = _record_payload(f)
        name = f"{f.record_id}.bin"
        target = records_dir / name
        tmp = records_dir / (name + ".tmp")
        tmp.write_bytes(payload)
        os.replace(tmp, target)
        entries[f.record_id] = {
            "file": f"records/{name}",
            "sha256": hashlib.sha256(payload).hexdigest(),
        }
    doc = {
        "format_version": CACHE_FORMAT_VERSION,
        "grid_step": manifest.grid_step,
        "horizon": manifest.horizon,
        "signal_names": manifest.signal_names,
        "normalized": manifest.normalized,
        "labels": manifest.labels,
        "stats": manifest.stats.to_lists() if manifest.stats is not None else None,
        "split": (
            {
                "train": manifest.split.train,
                "val": manifest.split.val,
                "test": manifest.split.test,
                "seed": manifest.split.seed,
                "ratios": list(manifest.split.ratios),
            }
            if manifest.split is not None
            else None
        ),
        "missing_rates": manifest.missing_rates,
        "extra": manifest.extra,
        "records": entries,
    }
    tmp = directory / "manifest.json.tmp"
    tmp.write_text(json.dumps(doc, indent=1, sort_keys=True))
    os.replace(tmp, directory / "manifest.json")


def read_cache(directory):
    """Read a cache directory back into (features, manifest).

    Raises CacheVersionError on a format mismatch and CorruptionError on
    truncation or checksum failure; nothing is returned partially.
    """
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.is_file():
        raise CorruptionError(f"{directory}: no manifest.json")
    try:
        doc = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise CorruptionError(f"{manifest_path}: invalid JSON ({exc})") from None
    version = doc.get("format_version")
    if version != CACHE_FORMAT_VERSION:
        raise CacheVersionError(
            f"{manifest_path}: cache format version {version}, "
            f"reader supports {CACHE_FORMAT_VERSION}"
        )
    labels = doc.get("labels") or {}
    features = []
    for rid, entry in sorted(doc["records"].items()):
        path = directory / entry["file"]
        if not path.is_file():
            raise CorruptionError(f"{path}: record file missing")
        blob = path.read_bytes()
        digest = hashlib.sha256(blob).hexdigest()
        if digest != entry["sha256"]:
            raise CorruptionError(f"{path}: sha256 mismatch")
        values, mask, delta, last, means = _decode_payload(blob, path)
        features.append(
            FitFeatures(
                values=values,
                mask=mask,
                delta=delta,
                last=last,
                means=means,
                grid_step=float(doc["grid_step"]),
                horizon=float(doc["horizon"]),
                record_id=rid,
                label=labels.get(rid),
                signal_names=doc.get("signal_names"),
                normalized=bool(doc.get("normalized", False)),
            )
        )
    stats = None
    if doc.get("stats") is not None:
        stats = NormalizationStats.from_lists(doc["stats"])
    split = None
    if doc.get("split") is not None:
        s = doc["split"]
        split = DatasetSplit(
            train=s["train"], val=s["val"], test=s["test"],
            seed=int(s["seed"]), ratios=tuple(s["ratios"]),
        )
    manifest = CacheManifest(
        grid_step=float(doc["grid_step"]),
        horizon=float(doc["horizon"]),
        signal_names=doc.get("signal_names"),
        normalized=bool(doc.get("normalized", False)),
        labels=labels,
        stats=stats,
        split=split,
        missing_rates=doc.get("missing_rates"),
        extra=doc.get("extra"),
    )
    return features, manifest
