"""Data preparation, the training loop with early stopping, and evaluation.

Preparation runs the full leakage-safe pipeline: grid raw records, split,
compute normalization statistics on the training part only, select support
signals and (for the multi-resolution kinds) partition signals into fast and
slow branches on training data only, then normalize every split with the
training statistics.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .cache import CacheManifest, read_cache, write_cache
from .config import ExperimentConfig, resolve_data_path
from .datasets import cohort_manifest, generate_synthetic, load_long_csv, load_physionet_set
from .errors import ConfigError, ContractError, NumericError
from .features import (
    DatasetSplit,
    FitFeatures,
    RawRecord,
    build_fit_features,
    compute_normalization,
    grid_record,
    inject_missingness,
    normalize_features,
    split_dataset,
)
from .metrics import MetricsReport, compute_metrics
from .models import (
    BranchAssignment,
    ModelKind,
    SupportMap,
    ba_mean_forward,
    fit_forward,
    init_fit_model,
    multifit_forward,
    partition_fast_slow,
    select_support_signals,
)
from .optim import Adam, Sgd
from .sequence import cross_entropy
from .tensor import backward

log = logging.getLogger(__name__)

__all__ = [
    "PreparedData",
    "TrainingHistory",
    "load_records",
    "prepare_data",
    "train_model",
    "evaluate_model",
    "run_experiment",
    "save_model",
    "load_model",
]

EVAL_CHUNK = 256


@dataclass
class TrainingHistory:
    train_loss: list = field(default_factory=list)
    val_macro_f: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_macro_f: float = 0.0
    n_epochs: int = 0

    def to_dict(self):
        return {
            "train_loss": self.train_loss,
            "val_macro_f": self.val_macro_f,
            "best_epoch": self.best_epoch,
            "best_val_macro_f": self.best_val_macro_f,
            "n_epochs": self.n_epochs,
        }


@dataclass
class PreparedData:
    """Model-ready feature bundles for one split of one dataset."""

    kind: ModelKind
    n_classes: int
    split: DatasetSplit
    labels: dict
    # single-grid kinds
    features: dict | None = None          # record id -> normalized FitFeatures
    supports: SupportMap | None = None    # global indices
    model_stats: object = None            # stats in model-input space (BA-mean)
    raw_stats: object = None              # stats in raw space (for reporting)
    # multi-resolution kinds
    fast_features: dict | None = None
    slow_features: dict | None = None
    assignment: BranchAssignment | None = None
    signal_names: list | None = None
    label_names: list | None = None

    def branch_signal_counts(self):
        if self.kind.is_multi:
            return [len(self.assignment.fast_signals()), len(self.assignment.slow_signals())]
        some = next(iter(self.features.values()))
        return [some.n_signals]

    def branch_supports_local(self):
        if not self.kind.is_multi:
            return [self.supports]
        out = []
        for signals in (self.assignment.fast_signals(), self.assignment.slow_signals()):
            local_index = {g: i for i, g in enumerate(signals)}
            out.append(SupportMap({
                local_index[g]: tuple(local_index[o] for o in self.supports.for_signal(g))
                for g in signals
            }))
        return out


def load_records(cfg: ExperimentConfig):
    """Load raw records for any non-cache source."""
    source = cfg.data.source
    if source == "synthetic":
        return generate_synthetic(cfg.data.synthetic)
    if source == "long_csv":
        data_path = resolve_data_path(cfg.data.path)
        labels_path = resolve_data_path(cfg.data.labels_path)
        for p, what in ((data_path, "data.path"), (labels_path, "data.labels_path")):
            if p is None or not p.is_file():
                raise ConfigError(f"{what} must point at an existing file, got {p}")
        records, _ = load_long_csv(data_path.read_text(), labels_path.read_text())
        return records
    if source == "physionet":
        return load_physionet_set(
            resolve_data_path(cfg.data.path), resolve_data_path(cfg.data.labels_path)
        )
    raise ConfigError(f"load_records cannot handle data.source {source!r}")


def inject_records(records, fraction, missing_seed):
    """Degrade every record with one shared seeded stream (record order fixed)."""
    if fraction <= 0.0:
        return list(records)
    rng = np.random.default_rng([int(missing_seed), int(round(fraction * 1_000_000))])
    return [inject_missingness(r, fraction, rng) for r in records]


def _n_classes(records):
    labels = sorted({r.label for r in records})
    if labels != list(range(len(labels))):
        raise ConfigError(f"labels must be contiguous from 0, got {labels}")
    if len(labels) < 2:
        raise ConfigError("need records of at least 2 classes")
    return len(labels)


def _grid_all(records, grid_step, horizon):
    gridded = {}
    dropped = 0
    for r in records:
        values, mask, d = grid_record(r, grid_step, horizon)
        gridded[r.record_id] = (values, mask)
        dropped += d
    if dropped:
        log.info("gridding dropped %d out-of-horizon observations", dropped)
    return gridded


def _features_for(records, gridded, grid_step, horizon, mean_mode, stats):
    out = {}
    for r in records:
        values, mask = gridded[r.record_id]
        if mean_mode == "per_record":
            count = mask.sum(axis=0)
            total = (values * mask).sum(axis=0)
            means = np.where(count > 0, np.divide(total, np.maximum(count, 1)), stats.mean)
        else:
            means = stats.mean
        out[r.record_id] = build_fit_features(
            values, mask, grid_step, means, horizon=horizon,
            record_id=r.record_id, label=r.label, signal_names=r.signal_names,
        )
    return out


def _provisional(gridded, ids, grid_step, horizon):
    M = next(iter(gridded.values()))[0].shape[1]
    zeros = np.zeros(M)
    return [
        build_fit_features(gridded[i][0], gridded[i][1], grid_step, zeros, horizon=horizon)
        for i in ids
    ]


def prepare_data(cfg: ExperimentConfig, records=None, split_seed=None) -> PreparedData:
    """Build normalized, model-ready features plus split/supports/branches."""
    kind = ModelKind.parse(cfg.model.kind)
    if cfg.data.source == "cache" and records is None:
        return _prepare_from_cache(cfg, kind)
    if records is None:
        records = load_records(cfg)
    records = inject_records(records, cfg.data.missingness, cfg.data.missing_seed)
    n_classes = _n_classes(records)
    split = split_dataset(
        records, cfg.split.ratios, cfg.split.seed if split_seed is None else split_seed
    )
    labels = {r.record_id: r.label for r in records}
    signal_names = records[0].signal_names

    prepared = PreparedData(
        kind=kind, n_classes=n_classes, split=split, labels=labels,
        signal_names=signal_names,
    )
    grid_step, horizon = cfg.data.grid_step, cfg.data.horizon

    if kind.is_multi:
        base_grid = _grid_all(records, grid_step, horizon)
        base_train = _provisional(base_grid, split.train, grid_step, horizon)
        slow_step = cfg.data.slow_grid_step or 8.0 * grid_step
        assignment = partition_fast_slow(
            base_train, fast_step=grid_step, slow_step=slow_step,
            overrides=cfg.data.branch_overrides or None,
        )
        prepared.assignment = assignment
        supports_global = {}
        branch_features = {}
        for branch_label, signals, step in (
            ("fast", assignment.fast_signals(), assignment.fast_step),
            ("slow", assignment.slow_signals(), assignment.slow_step),
        ):
            if not signals:
                raise ConfigError(
                    f"{branch_label} branch is empty; use a single-branch model"
                )
            sub_records = [
                RawRecord(r.record_id, r.label, [r.observations[s] for s in signals])
                for r in records
            ]
            sub_gridded = _grid_all(sub_records, step, horizon)
            train_prov = _provisional(sub_gridded, split.train, step, horizon)
            stats = compute_normalization(train_prov)
            feats = _features_for(sub_records, sub_gridded, step, horizon,
                                  cfg.data.mean_mode, stats)
            feats = {i: normalize_features(f, stats) for i, f in feats.items()}
            if kind.uses_supports:
                k = min(cfg.model.support_k, len(signals) - 1)
                if k < cfg.model.support_k:
                    log.info("%s branch has %d signals; support k clamped to %d",
                             branch_label, len(signals), k)
                local = select_support_signals(train_prov, k)
                for li, g in enumerate(signals):
                    supports_global[g] = tuple(signals[lo] for lo in local.for_signal(li))
            else:
                for g in signals:
                    supports_global[g] = ()
            branch_features[branch_label] = feats
        prepared.supports = SupportMap(supports_global)
        prepared.fast_features = branch_features["fast"]
        prepared.slow_features = branch_features["slow"]
        return prepared

    gridded = _grid_all(records, grid_step, horizon)
    train_prov = _provisional(gridded, split.train, grid_step, horizon)
    raw_stats = compute_normalization(train_prov)
    features = _features_for(records, gridded, grid_step, horizon,
                             cfg.data.mean_mode, raw_stats)
    features = {i: normalize_features(f, raw_stats) for i, f in features.items()}
    prepared.raw_stats = raw_stats
    prepared.features = features
    if kind.uses_supports:
        prepared.supports = select_support_signals(train_prov, cfg.model.support_k)
    else:
        M = next(iter(features.values())).n_signals
        prepared.supports = SupportMap.empty(M)
    if kind is ModelKind.BA_MEAN:
        prepared.model_stats = compute_normalization(
            [features[i] for i in split.train]
        )
    return prepared


def _prepare_from_cache(cfg: ExperimentConfig, kind: ModelKind) -> PreparedData:
    if kind.is_multi:
        raise ConfigError(
            "the cache stores single-grid features; multi-resolution models "
            "need a raw data source"
        )
    path = resolve_data_path(cfg.data.path)
    if path is None:
        raise ConfigError("data.path must point at a cache directory")
    features_list, manifest = read_cache(path)
    if manifest.split is None:
        raise ConfigError(f"cache at {path} holds no split definition")
    features = {}
    for f in features_list:
        if f.label is None:
            raise ConfigError(f"cached record {f.record_id} has no label")
        features[f.record_id] = f
    records = [
        RawRecord(f.record_id, f.label, [[] for _ in range(f.n_signals)])
        for f in features_list
    ]
    n_classes = _n_classes(records)
    split = manifest.split
    train_feats = [features[i] for i in split.train]
    if not manifest.normalized:
        stats = manifest.stats or compute_normalization(train_feats)
        features = {i: normalize_features(f, stats) for i, f in features.items()}
        train_feats = [features[i] for i in split.train]
        raw_stats = stats
    else:
        raw_stats = manifest.stats
    prepared = PreparedData(
        kind=kind, n_classes=n_classes, split=split,
        labels={f.record_id: f.label for f in features_list},
        signal_names=manifest.signal_names, raw_stats=raw_stats,
        features=features,
    )
    if kind.uses_supports:
        prepared.supports = select_support_signals(train_feats, cfg.model.support_k)
    else:
        prepared.supports = SupportMap.empty(train_feats[0].n_signals)
    if kind is ModelKind.BA_MEAN:
        prepared.model_stats = compute_normalization(train_feats)
    return prepared


def write_prepared_cache(cfg: ExperimentConfig, out_dir):
    """prepare-data: grid + split + stats, then persist raw (un-normalized)
    features so later runs can re-derive everything without raw sources."""
    kind = ModelKind.parse(cfg.model.kind)
    if kind.is_multi:
        raise ConfigError("prepare-data caches single-grid features; pick a single-branch kind")
    records = load_records(cfg)
    records = inject_records(records, cfg.data.missingness, cfg.data.missing_seed)
    _n_classes(records)
    split = split_dataset(records, cfg.split.ratios, cfg.split.seed)
    gridded = _grid_all(records, cfg.data.grid_step, cfg.data.horizon)
    train_prov = _provisional(gridded, split.train, cfg.data.grid_step, cfg.data.horizon)
    stats = compute_normalization(train_prov)
    features = _features_for(records, gridded, cfg.data.grid_step, cfg.data.horizon,
                             cfg.data.mean_mode, stats)
    ordered = [features[r.record_id] for r in records]
    cohort = cohort_manifest(ordered)
    manifest = CacheManifest(
        grid_step=cfg.data.grid_step,
        horizon=cfg.data.horizon,
        signal_names=records[0].signal_names,
        normalized=False,
        labels=cohort.labels,
        stats=stats,
        split=split,
        missing_rates=cohort.missing_rates,
    )
    write_cache(out_dir, ordered, manifest)
    return cohort


def _forward(prepared: PreparedData, params, ids):
    kind = prepared.kind
    if kind is ModelKind.BA_MEAN:
        feats = [prepared.features[i] for i in ids]
        return ba_mean_forward(feats, prepared.model_stats, params)
    if kind.is_multi:
        fast = [prepared.fast_features[i] for i in ids]
        slow = [prepared.slow_features[i] for i in ids]
        return multifit_forward(fast, slow, prepared.supports, prepared.assignment, params)
    feats = [prepared.features[i] for i in ids]
    return fit_forward(feats, prepared.supports, params)


def predict(prepared: PreparedData, params, ids):
    preds = np.empty(len(ids), dtype=int)
    for lo in range(0, len(ids), EVAL_CHUNK):
        chunk = ids[lo : lo + EVAL_CHUNK]
        probs = _forward(prepared, params, chunk)
        preds[lo : lo + len(chunk)] = probs.data.argmax(axis=-1)
    return preds


def evaluate_model(params, prepared: PreparedData, split_ids) -> MetricsReport:
    """Argmax predictions over one split, scored against the labels."""
    ids = list(split_ids)
    if not ids:
        raise ContractError("evaluate_model: empty split")
    y_true = np.array([prepared.labels[i] for i in ids])
    y_pred = predict(prepared, params, ids)
    return compute_metrics(y_true, y_pred, prepared.n_classes)


def _build_model(cfg: ExperimentConfig, prepared: PreparedData, seed):
    init_rng = np.random.default_rng([int(seed), 1])
    return init_fit_model(
        prepared.kind,
        n_classes=prepared.n_classes,
        rng=init_rng,
        branch_signals=prepared.branch_signal_counts(),
        branch_supports=None if prepared.kind is ModelKind.BA_MEAN
        else prepared.branch_supports_local(),
        d_h=cfg.model.hidden_size,
        d_r=cfg.model.cell_size,
        head_hidden=cfg.model.head_hidden,
        fusion_size=cfg.model.fusion_size,
        cell_activation=cfg.model.cell_activation,
    )


def _make_optimizer(cfg: ExperimentConfig, params):
    t = cfg.training
    name = t.optimizer.lower()
    if name == "adam":
        return Adam(params.parameters(), lr=t.learning_rate, beta1=t.beta1,
                    beta2=t.beta2, eps=t.epsilon, clip_norm=t.clip_norm)
    if name == "sgd":
        return Sgd(params.parameters(), lr=t.learning_rate, clip_norm=t.clip_norm)
    raise ConfigError(f"unknown optimizer {t.optimizer!r}")


def train_model(cfg: ExperimentConfig, prepared: PreparedData, seed):
    """Cross-entropy training with early stopping on validation macro-F.

    Keeps the best-validation snapshot; stops once `patience` epochs pass
    without improvement. Fully seeded: init and shuffling derive from `seed`.
    Returns (params, history) with the best snapshot loaded.
    """
    if not prepared.split.train or not prepared.split.val:
        raise ConfigError("training needs non-empty train and validation splits")
    params = _build_model(cfg, prepared, seed)
    optimizer = _make_optimizer(cfg, params)
    shuffle_rng = np.random.default_rng([int(seed), 2])
    train_ids = list(prepared.split.train)
    batch_size = cfg.training.batch_size
    history = TrainingHistory()
    best_snapshot = params.snapshot()
    best_f = -1.0
    best_epoch = 0
    for epoch in range(1, cfg.training.epochs + 1):
        order = shuffle_rng.permutation(len(train_ids))
        epoch_loss = 0.0
        try:
            for lo in range(0, len(train_ids), batch_size):
                batch = [train_ids[i] for i in order[lo : lo + batch_size]]
                labels = np.array([prepared.labels[i] for i in batch])
                probs = _forward(prepared, params, batch)
                loss = cross_entropy(probs, labels)
                backward(loss, params.parameters())
                optimizer.step()
                epoch_loss += float(loss.data) * len(batch)
        except NumericError as exc:
            raise NumericError(f"training diverged at epoch {epoch}: {exc}") from exc
        history.train_loss.append(epoch_loss / len(train_ids))
        val_f = evaluate_model(params, prepared, prepared.split.val).macro_f
        history.val_macro_f.append(val_f)
        if val_f > best_f:
            best_f = val_f
            best_epoch = epoch
            best_snapshot = params.snapshot()
        if (epoch - best_epoch) >= cfg.training.patience:
            break
    history.best_epoch = best_epoch
    history.best_val_macro_f = best_f
    history.n_epochs = len(history.train_loss)
    params.load_snapshot(best_snapshot)
    return params, history


def save_model(params, path):
    np.savez(path, **params.snapshot())


def load_model(cfg: ExperimentConfig, prepared: PreparedData, path):
    """Rebuild the parameter skeleton from config + data and fill it from a
    saved snapshot; shape mismatches mean the config or data changed."""
    params = _build_model(cfg, prepared, seed=0)
    with np.load(path) as blob:
        snapshot = {name: blob[name] for name in blob.files}
    params.load_snapshot(snapshot)
    return params


def run_experiment(cfg: ExperimentConfig, records=None):
    """Train and evaluate over every configured seed.

    Returns a JSON-ready document section plus the trained parameter sets
    keyed by seed. When split.vary_with_training_seed is set, the i-th seed
    uses split seed split.seed + i (PhysioNet-style multi-split averaging).
    """
    cfg.validate()
    if records is None and cfg.data.source != "cache":
        records = load_records(cfg)
    t0 = time.perf_counter()
    per_seed = {}
    models = {}
    test_fs = []
    for idx, seed in enumerate(cfg.training.seeds):
        split_seed = cfg.split.seed + idx if cfg.split.vary_with_training_seed else None
        prepared = prepare_data(cfg, records=records, split_seed=split_seed)
        params, history = train_model(cfg, prepared, seed)
        val_report = evaluate_model(params, prepared, prepared.split.val)
        test_report = evaluate_model(params, prepared, prepared.split.test)
        per_seed[str(seed)] = {
            "history": history.to_dict(),
            "val": val_report.to_dict(),
            "test": test_report.to_dict(),
        }
        models[seed] = (params, prepared)
        test_fs.append(test_report.macro_f)
        log.info("seed %s: test macro-F %.4f (best epoch %d)",
                 seed, test_report.macro_f, history.best_epoch)
    aggregate = {
        "test_macro_f": _summary(test_fs),
        "val_macro_f": _summary([per_seed[str(s)]["val"]["macro"]["f_score"]
                                 for s in cfg.training.seeds]),
    }
    doc = {"per_seed": per_seed, "aggregate": aggregate}
    return doc, models, time.perf_counter() - t0


def _summary(xs):
    xs = sorted(xs)
    n = len(xs)
    median = xs[n // 2] if n % 2 else (xs[n // 2 - 1] + xs[n // 2]) / 2.0
    return {
        "median": median,
        "mean": sum(xs) / n,
        "min": xs[0],
        "max": xs[-1],
        "values": xs,
    }
