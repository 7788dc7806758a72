"""From irregular raw observations to gridded model features.

Conventions used throughout the package:

* mask polarity: mask = 1 means the signal was OBSERVED in that grid bin.
* delta: 0 at observed steps; otherwise the time elapsed since the signal's
  most recent observation at or before the step. Before the first
  observation, delta counts time since the start of the sequence, so step t
  (0-indexed) carries delta = t * grid_step.
* last: carry-forward of the most recent observed value, falling back to the
  signal mean before any observation.
* grid bins are half-open: bin t covers [t*step, (t+1)*step), and the last
  observation landing in a bin wins.

Together these make (mask, delta, last) mutually consistent: the currently
observed value always reaches a model through the `last` channel.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ContractError

log = logging.getLogger(__name__)

__all__ = [
    "RawRecord",
    "FitFeatures",
    "NormalizationStats",
    "DatasetSplit",
    "grid_record",
    "build_fit_features",
    "featurize_record",
    "compute_normalization",
    "normalize_features",
    "inject_missingness",
    "split_dataset",
    "pearson_corr",
]


@dataclass
class RawRecord:
    """Per-signal lists of (timestamp, value) observations plus a label."""

    record_id: str
    label: int | None
    observations: list  # one list of (timestamp, value) per signal, time-sorted
    signal_names: list | None = None

    @property
    def n_signals(self):
        return len(self.observations)

    @property
    def n_observations(self):
        return sum(len(obs) for obs in self.observations)

    def validate(self):
        for s, obs in enumerate(self.observations):
            times = [t for t, _ in obs]
            if any(b < a for a, b in zip(times, times[1:])):
                raise ContractError(
                    f"record {self.record_id}: signal {s} timestamps not sorted"
                )
        return self


@dataclass
class FitFeatures:
    """Gridded per-step, per-signal tensors consumed by the models.

    All arrays have shape (T, M) except `means`, which is (M,) and holds the
    per-signal mean used as the fallback value (the x_avg channel).
    """

    values: np.ndarray
    mask: np.ndarray
    delta: np.ndarray
    last: np.ndarray
    means: np.ndarray
    grid_step: float
    horizon: float
    record_id: str | None = None
    label: int | None = None
    signal_names: list | None = None
    normalized: bool = False

    @property
    def n_steps(self):
        return self.mask.shape[0]

    @property
    def n_signals(self):
        return self.mask.shape[1]


@dataclass
class NormalizationStats:
    """Per-signal mean/std over observed training entries only."""

    mean: np.ndarray
    std: np.ndarray
    observed_counts: np.ndarray = field(default=None)

    @property
    def n_signals(self):
        return self.mean.shape[0]

    def to_lists(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_lists(cls, d):
        return cls(mean=np.asarray(d["mean"], float), std=np.asarray(d["std"], float))


@dataclass
class DatasetSplit:
    train: list
    val: list
    test: list
    seed: int
    ratios: tuple

    def all_ids(self):
        return list(self.train) + list(self.val) + list(self.test)


def grid_record(raw: RawRecord, grid_step: float, horizon: float):
    """Bin raw observations onto a regular grid.

    Returns (values, mask, n_dropped): mask = 1 where a bin holds at least
    one observation, values = the last observation in the bin (0 where
    mask = 0, never read). Observations at or beyond the horizon are dropped
    and counted, not errors.
    """
    if grid_step <= 0:
        raise ContractError(f"grid_step must be positive, got {grid_step}")
    if horizon < grid_step:
        raise ContractError(f"horizon {horizon} smaller than grid_step {grid_step}")
    T = int(math.ceil(horizon / grid_step - 1e-9))
    M = raw.n_signals
    values = np.zeros((T, M))
    mask = np.zeros((T, M))
    dropped = 0
    for s, obs in enumerate(raw.observations):
        for ts, v in obs:
            idx = int(math.floor(ts / grid_step + 1e-9))
            if ts < 0 or idx >= T:
                dropped += 1
                continue
            values[idx, s] = v
            mask[idx, s] = 1.0
    return values, mask, dropped


def build_fit_features(values, mask, grid_step, means, *, horizon=None, record_id=None,
                       label=None, signal_names=None):
    """Derive the delta and last-observed channels from a gridded record.

    Single streaming pass per signal via a running "index of most recent
    observation"; the test suite checks it against an O(T^2) rescan.
    """
    values = np.asarray(values, float)
    mask = np.asarray(mask, float)
    means = np.asarray(means, float)
    if values.shape != mask.shape:
        raise ContractError(f"values shape {values.shape} != mask shape {mask.shape}")
    T, M = mask.shape
    if means.shape != (M,):
        raise ConfigError(f"means must cover all {M} signals, got shape {means.shape}")

    steps = np.arange(T)[:, None]
    obs_step = np.where(mask > 0, steps, -1)
    last_obs = np.maximum.accumulate(obs_step, axis=0)
    seen = last_obs >= 0
    delta = np.where(seen, (steps - last_obs) * grid_step, steps * grid_step).astype(float)
    carried = np.take_along_axis(values, np.maximum(last_obs, 0), axis=0)
    last = np.where(seen, carried, means[None, :])
    return FitFeatures(
        values=values,
        mask=mask,
        delta=delta,
        last=last,
        means=means.copy(),
        grid_step=float(grid_step),
        horizon=float(horizon if horizon is not None else T * grid_step),
        record_id=record_id,
        label=label,
        signal_names=signal_names,
    )


def featurize_record(raw: RawRecord, grid_step, horizon, means):
    """grid_record followed by build_fit_features, keeping id/label metadata."""
    values, mask, _ = grid_record(raw, grid_step, horizon)
    return build_fit_features(
        values,
        mask,
        grid_step,
        means,
        horizon=horizon,
        record_id=raw.record_id,
        label=raw.label,
        signal_names=raw.signal_names,
    )


def compute_normalization(train_features) -> NormalizationStats:
    """Per-signal mean and population std over observed entries of the
    training records. Degenerate signals (no observations anywhere, or raw
    std below 1e-12) get std 1; unobserved signals also get mean 0."""
    train_features = list(train_features)
    if not train_features:
        raise ContractError("compute_normalization: empty training set")
    M = train_features[0].n_signals
    total = np.zeros(M)
    count = np.zeros(M)
    for f in train_features:
        total += (f.values * f.mask).sum(axis=0)
        count += f.mask.sum(axis=0)
    mean = np.divide(total, count, out=np.zeros(M), where=count > 0)
    sq = np.zeros(M)
    for f in train_features:
        sq += (((f.values - mean[None, :]) ** 2) * f.mask).sum(axis=0)
    var = np.divide(sq, count, out=np.zeros(M), where=count > 0)
    std = np.sqrt(var)
    never = count == 0
    if never.any():
        log.warning(
            "signals %s have no observed training entries; using mean 0, std 1",
            np.nonzero(never)[0].tolist(),
        )
    std = np.where(std < 1e-12, 1.0, std)
    return NormalizationStats(mean=mean, std=std, observed_counts=count)


def normalize_features(features: FitFeatures, stats: NormalizationStats) -> FitFeatures:
    """Z-score the value-like channels with training statistics and scale
    delta by 1/horizon. Unobserved value entries stay stored as 0."""
    if stats.n_signals != features.n_signals:
        raise ConfigError(
            f"stats cover {stats.n_signals} signals, features have {features.n_signals}"
        )
    mu, sd = stats.mean[None, :], stats.std[None, :]
    return replace(
        features,
        values=((features.values - mu) / sd) * features.mask,
        last=(features.last - mu) / sd,
        means=(features.means - stats.mean) / stats.std,
        delta=features.delta / features.horizon,
        normalized=True,
    )


def inject_missingness(record: RawRecord, fraction: float, rng) -> RawRecord:
    """Remove round(fraction * n_obs) observations per signal, uniformly
    without replacement, and return the degraded copy."""
    if not 0.0 <= fraction <= 1.0:
        raise ContractError(f"fraction must be in [0, 1], got {fraction}")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    degraded = []
    for obs in record.observations:
        n = len(obs)
        n_remove = int(math.floor(fraction * n + 0.5))
        if n_remove == 0:
            degraded.append(list(obs))
            continue
        drop = set(rng.choice(n, size=n_remove, replace=False).tolist())
        degraded.append([o for i, o in enumerate(obs) if i not in drop])
    return RawRecord(
        record_id=record.record_id,
        label=record.label,
        observations=degraded,
        signal_names=record.signal_names,
    )


def split_dataset(records, ratios, seed) -> DatasetSplit:
    """Stratified, seeded train/val/test split by record label.

    Within each class the ids are shuffled and assigned contiguously, so each
    class lands in every part proportionally (within rounding).
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ConfigError(f"need three positive ratios, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"ratios must sum to 1, got {sum(ratios)}")
    by_label = {}
    for r in records:
        if r.label is None:
            raise ContractError(f"record {r.record_id} has no label")
        by_label.setdefault(r.label, []).append(r.record_id)
    rng = np.random.default_rng(seed)
    train, val, test = [], [], []
    for label in sorted(by_label):
        ids = by_label[label]
        if len(ids) < 3:
            raise ConfigError(
                f"class {label} has {len(ids)} records, fewer than the 3 split parts"
            )
        order = rng.permutation(len(ids))
        shuffled = [ids[i] for i in order]
        n = len(ids)
        c1 = int(math.floor(ratios[0] * n + 0.5))
        c2 = int(math.floor((ratios[0] + ratios[1]) * n + 0.5))
        train.extend(shuffled[:c1])
        val.extend(shuffled[c1:c2])
        test.extend(shuffled[c2:])
    return DatasetSplit(train=train, val=val, test=test, seed=int(seed), ratios=ratios)


def pearson_corr(x, y, joint_mask):
    """Pearson r over jointly observed entries.

    Returns (r, defined); defined is False (and r = 0.0) when fewer than two
    joint observations exist or either side has zero variance.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    sel = np.asarray(joint_mask) > 0
    xs, ys = x[sel], y[sel]
    if xs.size < 2:
        return 0.0, False
    xc = xs - xs.mean()
    yc = ys - ys.mean()
    vx = float((xc * xc).sum())
    vy = float((yc * yc).sum())
    if vx <= 0.0 or vy <= 0.0:
        return 0.0, False
    r = float((xc * yc).sum() / math.sqrt(vx * vy))
    return max(-1.0, min(1.0, r)), True
