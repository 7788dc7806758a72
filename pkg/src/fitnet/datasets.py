"""Dataset loaders and the synthetic generator.

Formats:

* PhysioNet-2012-style per-patient files: CSV with header ``Time,Parameter,Value``
  and times as ``HH:MM`` elapsed since admission. Exactly the 37 temporal
  variables are retained (see PHYSIONET_SIGNALS); the static admission
  descriptors (RecordID, Age, Gender, Height, ICUType) are dropped, and -1
  sentinel values are dropped with a counter.
* Outcomes file: CSV with RecordID and Survival columns; Survival == -1 is
  the no-recorded-death sentinel and labels the patient as survived.
* Generic long format: ``record_id,signal,timestamp,value`` plus a label CSV
  ``record_id,label``.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError
from .features import RawRecord

log = logging.getLogger(__name__)

__all__ = [
    "PHYSIONET_SIGNALS",
    "STATIC_DESCRIPTORS",
    "LABEL_SURVIVED",
    "LABEL_DIED",
    "ParseCounters",
    "SyntheticConfig",
    "CohortManifest",
    "parse_physionet_record",
    "parse_outcomes",
    "load_physionet_set",
    "load_long_csv",
    "generate_synthetic",
    "write_long_csv",
    "cohort_manifest",
]

# The 37 temporal variables, in their catalogue order.
PHYSIONET_SIGNALS = [
    "ALP", "ALT", "AST", "Albumin", "BUN", "Bilirubin", "Cholesterol",
    "Creatinine", "DiasABP", "FiO2", "GCS", "Glucose", "HCO3", "HCT", "HR",
    "K", "Lactate", "MAP", "MechVent", "Mg", "NIDiasABP", "NIMAP", "NISysABP",
    "Na", "PaCO2", "PaO2", "Platelets", "RespRate", "SaO2", "SysABP", "Temp",
    "TroponinI", "TroponinT", "Urine", "WBC", "Weight", "pH",
]

# Admission-time descriptors; these are not modeled.
STATIC_DESCRIPTORS = {"RecordID", "Age", "Gender", "Height", "ICUType"}

LABEL_SURVIVED = 0
LABEL_DIED = 1
OUTCOME_LABEL_NAMES = ["survived", "died"]


@dataclass
class ParseCounters:
    sentinel_values: int = 0
    unknown_parameters: int = 0
    descriptor_rows: int = 0


@dataclass
class CohortManifest:
    """Record ids, labels, and the cohort-wide missing rate per signal."""

    record_ids: list
    labels: dict
    missing_rates: list

    def validate(self):
        for rate in self.missing_rates:
            if not 0.0 <= rate <= 1.0:
                raise ConfigError(f"missing rate {rate} outside [0, 1]")
        return self


def cohort_manifest(features) -> CohortManifest:
    """Missing rate per signal = fraction of unobserved grid cells."""
    feats = list(features)
    total = np.zeros(feats[0].n_signals)
    cells = 0
    for f in feats:
        total += f.mask.sum(axis=0)
        cells += f.n_steps
    rates = (1.0 - total / cells).tolist()
    return CohortManifest(
        record_ids=[f.record_id for f in feats],
        labels={f.record_id: f.label for f in feats if f.label is not None},
        missing_rates=rates,
    ).validate()


def _parse_hhmm(text, line_no):
    parts = text.split(":")
    if len(parts) != 2:
        raise ParseError(f"bad time {text!r}, expected HH:MM", line=line_no)
    try:
        hours, minutes = int(parts[0]), int(parts[1])
    except ValueError:
        raise ParseError(f"bad time {text!r}, expected HH:MM", line=line_no) from None
    if hours < 0 or not 0 <= minutes < 60:
        raise ParseError(f"bad time {text!r}", line=line_no)
    return hours + minutes / 60.0


def parse_physionet_record(text, record_id=None, counters=None) -> RawRecord:
    """Parse one per-patient file into a RawRecord over the 37 signals.

    The record id is taken from the RecordID descriptor row unless given
    explicitly. The label is left unset; see parse_outcomes.
    """
    counters = counters if counters is not None else ParseCounters()
    index = {name: i for i, name in enumerate(PHYSIONET_SIGNALS)}
    observations = [[] for _ in PHYSIONET_SIGNALS]
    reader = csv.reader(io.StringIO(text))
    for line_no, row in enumerate(reader, start=1):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if line_no == 1 and [c.strip().lower() for c in row[:3]] == ["time", "parameter", "value"]:
            continue
        if len(row) < 3:
            raise ParseError(f"expected Time,Parameter,Value, got {row!r}", line=line_no)
        time_text, parameter, value_text = row[0].strip(), row[1].strip(), row[2].strip()
        if parameter in STATIC_DESCRIPTORS:
            counters.descriptor_rows += 1
            if parameter == "RecordID" and record_id is None:
                record_id = value_text
            continue
        if parameter not in index:
            counters.unknown_parameters += 1
            continue
        hours = _parse_hhmm(time_text, line_no)
        try:
            value = float(value_text)
        except ValueError:
            raise ParseError(f"bad value {value_text!r}", line=line_no) from None
        if value == -1.0:
            counters.sentinel_values += 1
            continue
        observations[index[parameter]].append((hours, value))
    for obs in observations:
        obs.sort(key=lambda tv: tv[0])
    return RawRecord(
        record_id=record_id if record_id is not None else "unknown",
        label=None,
        observations=observations,
        signal_names=list(PHYSIONET_SIGNALS),
    )


def parse_outcomes(text):
    """Outcome labels per record id.

    Survival carries -1 when no death was recorded within the study, which
    labels the patient as survived; any other value labels died. Cohort
    counts are logged so they can be eyeballed against the published
    4000-record / 2526-survivor figures.
    """
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty outcomes file") from None
    columns = {name.strip(): i for i, name in enumerate(header)}
    if "RecordID" not in columns or "Survival" not in columns:
        raise ParseError(f"outcomes header must name RecordID and Survival, got {header!r}")
    rid_col, surv_col = columns["RecordID"], columns["Survival"]
    labels = {}
    for line_no, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) <= max(rid_col, surv_col):
            raise ParseError(f"short outcomes row {row!r}", line=line_no)
        rid = row[rid_col].strip()
        if rid in labels:
            raise ParseError(f"duplicate RecordID {rid}", line=line_no)
        try:
            survival = float(row[surv_col])
        except ValueError:
            raise ParseError(f"bad Survival value {row[surv_col]!r}", line=line_no) from None
        labels[rid] = LABEL_SURVIVED if survival == -1.0 else LABEL_DIED
    survivors = sum(1 for v in labels.values() if v == LABEL_SURVIVED)
    log.info("outcomes: %d records, %d survivors", len(labels), survivors)
    return labels


def load_physionet_set(records_dir, outcomes_path) -> list:
    """Load a directory of per-patient files plus the outcomes file.

    Records without an outcome row are excluded with a warning.
    """
    records_dir = Path(records_dir)
    outcomes_path = Path(outcomes_path)
    if not records_dir.is_dir():
        raise ConfigError(f"record directory not found: {records_dir}")
    if not outcomes_path.is_file():
        raise ConfigError(f"outcomes file not found: {outcomes_path}")
    labels = parse_outcomes(outcomes_path.read_text())
    counters = ParseCounters()
    records = []
    skipped = 0
    for path in sorted(records_dir.glob("*.txt")):
        record = parse_physionet_record(path.read_text(), record_id=path.stem,
                                        counters=counters)
        if record.record_id not in labels:
            skipped += 1
            log.warning("record %s has no outcome row; excluded", record.record_id)
            continue
        record.label = labels[record.record_id]
        records.append(record)
    log.info(
        "loaded %d records (%d without outcomes, %d sentinel values dropped, "
        "%d unknown parameters)",
        len(records), skipped, counters.sentinel_values, counters.unknown_parameters,
    )
    return records


def load_long_csv(data_text, labels_text):
    """Load the generic long format plus its label file.

    Returns (records, label_names): class indices follow the sorted order of
    the distinct label values, and label_names maps index -> original value.
    """
    reader = csv.reader(io.StringIO(data_text))
    try:
        header = [c.strip() for c in next(reader)]
    except StopIteration:
        raise ParseError("empty data file") from None
    required = ["record_id", "signal", "timestamp", "value"]
    if sorted(header) != sorted(required):
        raise ParseError(f"data header must contain exactly {required}, got {header!r}")
    cols = {name: header.index(name) for name in required}
    per_record = {}
    signals = set()
    for line_no, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} columns, got {row!r}", line=line_no)
        rid = row[cols["record_id"]].strip()
        signal = row[cols["signal"]].strip()
        try:
            ts = float(row[cols["timestamp"]])
            value = float(row[cols["value"]])
        except ValueError:
            raise ParseError(f"unparseable number in {row!r}", line=line_no) from None
        per_record.setdefault(rid, {}).setdefault(signal, []).append((ts, value))
        signals.add(signal)

    label_reader = csv.reader(io.StringIO(labels_text))
    try:
        label_header = [c.strip() for c in next(label_reader)]
    except StopIteration:
        raise ParseError("empty label file") from None
    if label_header != ["record_id", "label"]:
        raise ParseError(f"label header must be record_id,label, got {label_header!r}")
    raw_labels = {}
    for line_no, row in enumerate(label_reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 2:
            raise ParseError(f"expected record_id,label, got {row!r}", line=line_no)
        raw_labels[row[0].strip()] = row[1].strip()

    values = sorted(set(raw_labels.values()))
    try:
        values.sort(key=float)
    except ValueError:
        pass  # non-numeric labels stay in lexicographic order
    label_index = {v: i for i, v in enumerate(values)}

    signal_names = sorted(signals)
    records = []
    for rid in sorted(per_record):
        if rid not in raw_labels:
            raise ParseError(f"label file has no entry for record id {rid!r}")
        observations = [sorted(per_record[rid].get(name, [])) for name in signal_names]
        records.append(
            RawRecord(
                record_id=rid,
                label=label_index[raw_labels[rid]],
                observations=observations,
                signal_names=list(signal_names),
            )
        )
    return records, values


def write_long_csv(records, data_path, labels_path):
    """Write records in the long format consumed by load_long_csv."""
    data_path = Path(data_path)
    labels_path = Path(labels_path)
    with data_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["record_id", "signal", "timestamp", "value"])
        for record in records:
            names = record.signal_names or [f"s{i}" for i in range(record.n_signals)]
            for name, obs in zip(names, record.observations):
                for ts, value in obs:
                    writer.writerow([record.record_id, name, repr(ts), repr(value)])
    with labels_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["record_id", "label"])
        for record in records:
            writer.writerow([record.record_id, record.label])


SYNTH_RULES = ("trend", "level", "freq")


@dataclass
class SyntheticConfig:
    """Desk-scale generator of class-labelled multi-rate irregular records.

    Each record is driven by smooth latent processes (random level, drift and
    oscillation). Signals in a correlated group share a common latent at
    strength rho; the class-dependent component (per `rule`) is mixed into
    the latents feeding `informative_signals`. Sampling periods control the
    raw resolution per signal, and `missing_fraction` drops observations
    independently after sampling.
    """

    n_signals: int = 4
    periods: list = field(default_factory=lambda: [1.0])
    rho: float = 0.0
    n_classes: int = 2
    rule: str = "trend"
    missing_fraction: float = 0.0
    n_records: int = 100
    horizon: float = 24.0
    seed: int = 0
    correlated_groups: list = field(default_factory=list)
    informative_signals: list = field(default_factory=lambda: [0])
    class_separation: float = 1.0
    noise: float = 0.1
    jitter: float = 0.0
    level_scale: float = 1.0  # spread of per-record baselines
    drift_scale: float = 1.0  # spread of per-record nuisance slopes

    def signal_periods(self):
        periods = list(self.periods)
        if len(periods) == 1:
            periods = periods * self.n_signals
        if len(periods) != self.n_signals:
            raise ConfigError(
                f"got {len(periods)} periods for {self.n_signals} signals"
            )
        return [float(p) for p in periods]

    def validate(self):
        if self.n_signals < 1 or self.n_records < 1:
            raise ConfigError("n_signals and n_records must be positive")
        if not 0.0 <= self.missing_fraction <= 1.0:
            raise ConfigError(f"missing_fraction {self.missing_fraction} outside [0, 1]")
        if not -1.0 <= self.rho <= 1.0:
            raise ConfigError(f"rho {self.rho} outside [-1, 1]")
        if self.n_classes < 2:
            raise ConfigError("need at least 2 classes")
        if self.rule not in SYNTH_RULES:
            raise ConfigError(f"unknown label rule {self.rule!r}; expected one of {SYNTH_RULES}")
        if any(p <= 0 for p in self.signal_periods()):
            raise ConfigError("sampling periods must be positive")
        if self.horizon <= 0:
            raise ConfigError("horizon must be positive")
        seen = set()
        for group in self.correlated_groups:
            for s in group:
                if not 0 <= s < self.n_signals:
                    raise ConfigError(f"correlated group names signal {s} out of range")
                if s in seen:
                    raise ConfigError(f"signal {s} appears in two correlated groups")
                seen.add(s)
        for s in self.informative_signals:
            if not 0 <= s < self.n_signals:
                raise ConfigError(f"informative signal {s} out of range")
        return self


def _draw_latent(rng, level_scale=1.0, drift_scale=1.0):
    return {
        "level": rng.normal(0.0, 0.5 * level_scale),
        "slope": rng.normal(0.0, 0.3 * drift_scale),
        "amp": rng.uniform(0.5, 1.0),
        "freq": rng.uniform(1.0, 3.0),
        "phase": rng.uniform(0.0, 2.0 * math.pi),
    }


def _latent_value(lat, t, horizon):
    x = 2.0 * t / horizon - 1.0
    return (
        lat["level"]
        + lat["slope"] * x
        + lat["amp"] * np.sin(2.0 * math.pi * lat["freq"] * t / horizon + lat["phase"])
    )


def _class_component(cfg, label, phase, t):
    spread = 2.0 * label / (cfg.n_classes - 1) - 1.0  # -1 .. +1 across classes
    if cfg.rule == "trend":
        return cfg.class_separation * spread * (2.0 * t / cfg.horizon - 1.0)
    if cfg.rule == "level":
        return cfg.class_separation * spread * np.ones_like(t)
    # freq: class-specific oscillation above the base-frequency band
    freq = 4.0 + 2.0 * label
    return cfg.class_separation * np.sin(2.0 * math.pi * freq * t / cfg.horizon + phase)


def generate_synthetic(cfg: SyntheticConfig) -> list:
    """Deterministic class-labelled cohort; same config -> identical records."""
    cfg.validate()
    periods = cfg.signal_periods()
    group_of = {}
    for g, group in enumerate(cfg.correlated_groups):
        for s in group:
            group_of[s] = g
    informative = set(cfg.informative_signals)
    records = []
    for r in range(cfg.n_records):
        rng = np.random.default_rng([cfg.seed, r])
        label = r % cfg.n_classes
        class_phase = rng.uniform(0.0, 2.0 * math.pi)
        group_latents = [
            _draw_latent(rng, cfg.level_scale, cfg.drift_scale)
            for _ in cfg.correlated_groups
        ]
        group_informative = [
            any(s in informative for s in group) for group in cfg.correlated_groups
        ]
        idio_latents = [
            _draw_latent(rng, cfg.level_scale, cfg.drift_scale)
            for _ in range(cfg.n_signals)
        ]
        observations = []
        for s in range(cfg.n_signals):
            n_ticks = int(math.ceil(cfg.horizon / periods[s] - 1e-9))
            base = np.arange(n_ticks) * periods[s]
            if cfg.jitter > 0:
                base = base + cfg.jitter * periods[s] * rng.random(n_ticks)
                base = np.minimum(base, np.nextafter(cfg.horizon, 0.0))
            values = _latent_value(idio_latents[s], base, cfg.horizon)
            if s in group_of:
                g = group_of[s]
                common = _latent_value(group_latents[g], base, cfg.horizon)
                if group_informative[g]:
                    common = common + _class_component(cfg, label, class_phase, base)
                w = math.sqrt(abs(cfg.rho))
                values = w * common + math.sqrt(1.0 - abs(cfg.rho)) * values
            elif s in informative:
                values = values + _class_component(cfg, label, class_phase, base)
            if cfg.noise > 0:
                values = values + cfg.noise * rng.normal(size=n_ticks)
            keep = np.ones(n_ticks, bool)
            if cfg.missing_fraction > 0:
                keep = rng.random(n_ticks) >= cfg.missing_fraction
            observations.append(
                [(float(t), float(v)) for t, v, k in zip(base, values, keep) if k]
            )
        records.append(
            RawRecord(
                record_id=f"synth{r:05d}",
                label=label,
                observations=observations,
                signal_names=[f"s{i}" for i in range(cfg.n_signals)],
            )
        )
    return records
