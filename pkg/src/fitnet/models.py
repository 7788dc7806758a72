"""The FIT model family.

FIT replaces imputation with a learned per-signal "memory cell": at every
grid step each signal contributes the 4-vector [avg, last, flag, delta],
an affine layer turns it into a dense representation, the per-signal
representations are concatenated, and the sequence of concatenations feeds a
BiLSTM with global attention and a classifier head.

FIT-V additionally concatenates the 4-vectors of a signal's support signals
(chosen by absolute Pearson correlation on training data) into its memory
cell input. Multi-FIT / Multi-FIT-V split the signals into a fast and a slow
branch, each gridded at its own step and run through its own FIT stack; the
two attention contexts are fused by an affine layer before classification.
BA-mean is the baseline: mean-imputed values into the same BiLSTM+attention.

Forward functions accept either one feature set (vector tensors) or a list
of feature sets with identical grids (row-batched tensors).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, ContractError, DimensionError
from .features import FitFeatures, NormalizationStats, pearson_corr
from .sequence import (
    AttentionParams,
    BiLstmParams,
    ClassifierHead,
    bilstm_forward,
    classify,
    global_attention,
    init_attention,
    init_bilstm,
    init_classifier_head,
    init_uniform,
)
from .tensor import Parameter, Tensor, affine, concat, relu, tanh
from .tensor import check_unique_names as _check_unique

__all__ = [
    "ModelKind",
    "SignalVector",
    "SupportMap",
    "BranchAssignment",
    "MemoryCellParams",
    "BranchParams",
    "FitModelParams",
    "build_signal_vector",
    "memory_cell_forward",
    "concat_representations",
    "mean_imputed_values",
    "fit_forward",
    "ba_mean_forward",
    "multifit_forward",
    "select_support_signals",
    "partition_fast_slow",
    "init_fit_model",
]


class ModelKind(str, Enum):
    BA_MEAN = "ba_mean"
    FIT = "fit"
    FIT_V = "fit_v"
    MULTI_FIT = "multi_fit"
    MULTI_FIT_V = "multi_fit_v"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).lower().replace("-", "_"))
        except ValueError:
            raise ConfigError(
                f"unknown model kind {name!r}; expected one of "
                f"{[k.value for k in cls]}"
            ) from None

    @property
    def is_multi(self):
        return self in (ModelKind.MULTI_FIT, ModelKind.MULTI_FIT_V)

    @property
    def uses_supports(self):
        return self in (ModelKind.FIT_V, ModelKind.MULTI_FIT_V)


@dataclass
class SignalVector:
    """Memory-cell input for one signal at one step: [avg, last, flag, delta]."""

    avg: float
    last: float
    flag: float
    delta: float

    def to_array(self):
        return np.array([self.avg, self.last, self.flag, self.delta])


@dataclass
class SupportMap:
    """Ordered support-signal indices per signal; empty lists mean plain FIT."""

    supports: dict

    @classmethod
    def empty(cls, n_signals):
        return cls({s: () for s in range(n_signals)})

    def for_signal(self, s):
        return tuple(self.supports.get(s, ()))

    def is_all_empty(self):
        return all(len(v) == 0 for v in self.supports.values())

    def validate(self, n_signals):
        for s, sup in self.supports.items():
            if not 0 <= s < n_signals:
                raise ConfigError(f"support map names signal {s} outside 0..{n_signals - 1}")
            if len(set(sup)) != len(sup):
                raise ConfigError(f"signal {s} has duplicate support indices {sup}")
            for other in sup:
                if other == s:
                    raise ConfigError(f"signal {s} cannot support itself")
                if not 0 <= other < n_signals:
                    raise ConfigError(
                        f"signal {s} support index {other} outside 0..{n_signals - 1}"
                    )
        return self


@dataclass
class BranchAssignment:
    """Fast/slow label per signal plus the per-branch grid steps."""

    branch: list  # "fast" | "slow" per signal index
    fast_step: float
    slow_step: float
    scores: list  # per-signal sparsity score (mean of sum(delta)/duration)

    def fast_signals(self):
        return [s for s, b in enumerate(self.branch) if b == "fast"]

    def slow_signals(self):
        return [s for s, b in enumerate(self.branch) if b == "slow"]


@dataclass
class MemoryCellParams:
    """Per-signal affine layer over [own 4-vector, support 4-vectors]."""

    W: Parameter  # (d_r, 4 * (1 + n_supports))
    b: Parameter  # (d_r,)
    activation: str | None = None  # None keeps the layer purely affine

    @property
    def output_size(self):
        return self.W.data.shape[0]

    @property
    def n_supports(self):
        return self.W.data.shape[1] // 4 - 1

    def parameters(self):
        return [self.W, self.b]


@dataclass
class BranchParams:
    cells: list | None  # one MemoryCellParams per branch signal; None for BA-mean
    bilstm: BiLstmParams
    attention: AttentionParams

    def parameters(self):
        out = []
        if self.cells is not None:
            for c in self.cells:
                out.extend(c.parameters())
        out.extend(self.bilstm.parameters())
        out.extend(self.attention.parameters())
        return out


@dataclass
class FusionParams:
    W: Parameter
    b: Parameter

    def parameters(self):
        return [self.W, self.b]


@dataclass
class FitModelParams:
    kind: ModelKind
    branches: list  # one BranchParams for single-grid kinds, two for multi
    head: ClassifierHead
    fusion: FusionParams | None = None

    def parameters(self):
        out = []
        for br in self.branches:
            out.extend(br.parameters())
        if self.fusion is not None:
            out.extend(self.fusion.parameters())
        out.extend(self.head.parameters())
        return _check_unique(out)

    def snapshot(self):
        return {p.name: p.data.copy() for p in self.parameters()}

    def load_snapshot(self, snap):
        for p in self.parameters():
            if p.name not in snap:
                raise ConfigError(f"snapshot missing parameter {p.name!r}")
            if snap[p.name].shape != p.data.shape:
                raise DimensionError(
                    f"snapshot shape {snap[p.name].shape} != {p.data.shape} for {p.name!r}"
                )
            p.data[...] = snap[p.name]


def build_signal_vector(features: FitFeatures, signal: int, step: int) -> SignalVector:
    """Read one signal's memory-cell input off the feature tensors."""
    if not 0 <= step < features.n_steps or not 0 <= signal < features.n_signals:
        raise ContractError(
            f"(signal={signal}, step={step}) out of range for "
            f"T={features.n_steps}, M={features.n_signals}"
        )
    return SignalVector(
        avg=float(features.means[signal]),
        last=float(features.last[step, signal]),
        flag=float(features.mask[step, signal]),
        delta=float(features.delta[step, signal]),
    )


def _cell_apply(x: Tensor, cell: MemoryCellParams) -> Tensor:
    out = affine(x, cell.W, cell.b)
    if cell.activation is None:
        return out
    if cell.activation == "tanh":
        return tanh(out)
    if cell.activation == "relu":
        return relu(out)
    raise ConfigError(f"unknown memory-cell activation {cell.activation!r}")


def memory_cell_forward(v: Tensor, supports, cell: MemoryCellParams) -> Tensor:
    """Concatenate own vector and support vectors, then apply the cell."""
    supports = list(supports)
    if len(supports) != cell.n_supports:
        raise DimensionError(
            f"cell expects {cell.n_supports} support vectors, got {len(supports)}"
        )
    x = concat([v] + supports) if supports else v
    return _cell_apply(x, cell)


def concat_representations(reps) -> Tensor:
    """Concatenate per-signal representations in ascending signal order."""
    reps = list(reps)
    widths = {r.data.shape[-1] for r in reps}
    if len(widths) > 1:
        raise DimensionError(f"representation widths differ: {sorted(widths)}")
    return concat(reps) if len(reps) > 1 else reps[0]


def _channel_stack(features):
    """Stack [avg, last, flag, delta] into one array.

    Returns (arr, batched): arr has shape (T, M, 4) for a single feature set
    or (B, T, M, 4) for a list of identically gridded feature sets.
    """
    if isinstance(features, FitFeatures):
        f = features
        avg = np.broadcast_to(f.means[None, :], f.mask.shape)
        return np.stack([avg, f.last, f.mask, f.delta], axis=-1), False
    feats = list(features)
    if not feats:
        raise ContractError("empty feature batch")
    shape = feats[0].mask.shape
    for f in feats:
        if f.mask.shape != shape:
            raise ContractError(
                f"batch mixes grids: {f.mask.shape} vs {shape}"
            )
    stacked = [
        np.stack(
            [np.broadcast_to(f.means[None, :], f.mask.shape), f.last, f.mask, f.delta],
            axis=-1,
        )
        for f in feats
    ]
    return np.stack(stacked, axis=0), True


def _validate_cells(supports: SupportMap, cells, n_signals):
    if len(cells) != n_signals:
        raise ConfigError(f"model has {len(cells)} memory cells for {n_signals} signals")
    supports.validate(n_signals)
    for s in range(n_signals):
        k = len(supports.for_signal(s))
        if cells[s].n_supports != k:
            raise ConfigError(
                f"signal {s}: support map lists {k} supports but its cell "
                f"was built for {cells[s].n_supports}"
            )


def _branch_context(features, supports: SupportMap, branch: BranchParams):
    """Memory cells -> concatenation -> BiLSTM -> attention for one branch."""
    arr, batched = _channel_stack(features)
    n_steps, n_signals = arr.shape[-3], arr.shape[-2]
    _validate_cells(supports, branch.cells, n_signals)
    columns = {s: (s, *supports.for_signal(s)) for s in range(n_signals)}
    reps_seq = []
    for t in range(n_steps):
        step_arr = arr[:, t] if batched else arr[t]
        reps = []
        for s in range(n_signals):
            cols = columns[s]
            x = step_arr[..., cols, :].reshape(*step_arr.shape[:-2], 4 * len(cols))
            reps.append(_cell_apply(Tensor(x), branch.cells[s]))
        reps_seq.append(concat_representations(reps))
    hidden = bilstm_forward(reps_seq, branch.bilstm)
    _, context = global_attention(hidden, branch.attention)
    return context


def fit_forward(features, supports: SupportMap, params: FitModelParams) -> Tensor:
    """Class probabilities for FIT / FIT-V on a single grid.

    FIT is FIT-V with an all-empty support map; given identical parameters
    the two take the same code path and produce identical outputs.
    """
    if params.kind not in (ModelKind.FIT, ModelKind.FIT_V):
        raise ContractError(f"fit_forward got model kind {params.kind.value}")
    context = _branch_context(features, supports, params.branches[0])
    return classify(context, params.head)


def mean_imputed_values(features: FitFeatures, stats: NormalizationStats) -> np.ndarray:
    """(T, M) input matrix for the baseline: the observed value where
    mask = 1, the per-signal training mean everywhere else."""
    if stats.n_signals != features.n_signals:
        raise ConfigError(
            f"normalization stats cover {stats.n_signals} signals, "
            f"need {features.n_signals}"
        )
    return features.values * features.mask + stats.mean[None, :] * (1.0 - features.mask)


def ba_mean_forward(features, stats: NormalizationStats, params: FitModelParams) -> Tensor:
    """Baseline: observed values with per-signal training-mean imputation,
    fed to BiLSTM + attention. No mask/delta/last channels are used."""
    if params.kind is not ModelKind.BA_MEAN:
        raise ContractError(f"ba_mean_forward got model kind {params.kind.value}")
    single = isinstance(features, FitFeatures)
    feats = [features] if single else list(features)
    imputed = np.stack([mean_imputed_values(f, stats) for f in feats], axis=0)
    if single:
        imputed = imputed[0]
    n_steps = feats[0].n_steps
    X = [Tensor(imputed[..., t, :]) for t in range(n_steps)]
    hidden = bilstm_forward(X, params.branches[0].bilstm)
    _, context = global_attention(hidden, params.branches[0].attention)
    return classify(context, params.head)


def _local_support_map(supports: SupportMap, branch_signals, label, assignment):
    local_index = {g: i for i, g in enumerate(branch_signals)}
    local = {}
    for i, g in enumerate(branch_signals):
        mapped = []
        for other in supports.for_signal(g):
            if assignment.branch[other] != label:
                raise ConfigError(
                    f"signal {g} ({label}) has cross-branch support {other} "
                    f"({assignment.branch[other]}); supports must stay within a branch"
                )
            mapped.append(local_index[other])
        local[i] = tuple(mapped)
    return SupportMap(local)


def multifit_forward(fast, slow, supports: SupportMap, assignment: BranchAssignment,
                     params: FitModelParams) -> Tensor:
    """Two-branch forward: each branch runs its own memory cells, BiLSTM and
    attention; the two context vectors are concatenated, fused by an affine
    layer, and classified."""
    if not params.kind.is_multi:
        raise ContractError(f"multifit_forward got model kind {params.kind.value}")
    fast_signals = assignment.fast_signals()
    slow_signals = assignment.slow_signals()
    if not fast_signals or not slow_signals:
        raise ConfigError(
            "one branch has zero signals; use the single-branch FIT model instead"
        )
    contexts = []
    for branch_params, feats, signals, label in (
        (params.branches[0], fast, fast_signals, "fast"),
        (params.branches[1], slow, slow_signals, "slow"),
    ):
        n = feats.n_signals if isinstance(feats, FitFeatures) else feats[0].n_signals
        if n != len(signals):
            raise ConfigError(
                f"{label} features carry {n} signals but the assignment lists {len(signals)}"
            )
        local = _local_support_map(supports, signals, label, assignment)
        contexts.append(_branch_context(feats, local, branch_params))
    fused = tanh(affine(concat(contexts), params.fusion.W, params.fusion.b))
    return classify(fused, params.head)


def select_support_signals(train_features, k: int) -> SupportMap:
    """Pick each signal's k most correlated partners on training data.

    Correlation is Pearson r over jointly observed grid cells pooled across
    all training records (pairwise-complete); pairs with fewer than 2 joint
    observations count as r = 0. Ties break toward the lower signal index.
    """
    feats = list(train_features)
    if not feats:
        raise ContractError("select_support_signals: empty training set")
    n_signals = feats[0].n_signals
    if k >= n_signals:
        raise ConfigError(f"k={k} must be smaller than the signal count {n_signals}")
    if k < 0:
        raise ConfigError(f"k must be >= 0, got {k}")
    values = np.concatenate([f.values for f in feats], axis=0)
    mask = np.concatenate([f.mask for f in feats], axis=0)
    strength = np.zeros((n_signals, n_signals))
    for i in range(n_signals):
        for j in range(i + 1, n_signals):
            r, defined = pearson_corr(values[:, i], values[:, j], mask[:, i] * mask[:, j])
            strength[i, j] = strength[j, i] = abs(r) if defined else 0.0
    supports = {}
    for s in range(n_signals):
        others = [o for o in range(n_signals) if o != s]
        others.sort(key=lambda o: (-strength[s, o], o))
        supports[s] = tuple(others[:k])
    return SupportMap(supports)


def partition_fast_slow(train_features, fast_step=None, slow_step=None,
                        overrides=None) -> BranchAssignment:
    """Split signals into fast/slow by their sparsity scores.

    The score of a signal is the mean over training records of
    sum(delta) / record duration: densely observed signals score near 0.
    Signals are sorted by score and the split is made at the largest gap
    between adjacent sorted scores; per-signal overrides win over the
    automatic choice.
    """
    feats = list(train_features)
    if not feats:
        raise ContractError("partition_fast_slow: empty training set")
    n_signals = feats[0].n_signals
    if n_signals < 2:
        raise ContractError("need at least 2 signals to partition")
    if fast_step is None:
        fast_step = feats[0].grid_step
    if slow_step is None:
        slow_step = 8.0 * fast_step
    ratio = slow_step / fast_step
    if slow_step < fast_step or abs(ratio - round(ratio)) > 1e-9:
        raise ConfigError(
            f"slow step {slow_step} must be an integer multiple of fast step {fast_step}"
        )
    scores = np.zeros(n_signals)
    for f in feats:
        scores += f.delta.sum(axis=0) / f.horizon
    scores /= len(feats)

    branch = [None] * n_signals
    auto_needed = [s for s in range(n_signals)
                   if not (overrides and (s in overrides or str(s) in overrides))]
    if overrides:
        for key, value in overrides.items():
            s = int(key)
            if not 0 <= s < n_signals:
                raise ConfigError(f"branch override names signal {s} outside 0..{n_signals - 1}")
            if value not in ("fast", "slow"):
                raise ConfigError(f"branch override for signal {s} must be fast|slow, got {value!r}")
            branch[s] = value
    if auto_needed:
        if float(scores.max() - scores.min()) < 1e-12:
            raise ConfigError(
                "all sparsity scores are identical; assign branches manually "
                "via branch overrides"
            )
        order = sorted(range(n_signals), key=lambda s: (scores[s], s))
        gaps = [scores[order[i + 1]] - scores[order[i]] for i in range(n_signals - 1)]
        split_at = int(np.argmax(gaps))
        fast_set = set(order[: split_at + 1])
        for s in auto_needed:
            branch[s] = "fast" if s in fast_set else "slow"
    return BranchAssignment(
        branch=branch,
        fast_step=float(fast_step),
        slow_step=float(slow_step),
        scores=scores.tolist(),
    )


def init_fit_model(kind, *, n_classes, rng, branch_signals, branch_supports=None,
                   d_h=32, d_r=8, head_hidden=32, fusion_size=32,
                   cell_activation=None, ba_mean_inputs=None) -> FitModelParams:
    """Build a fresh parameter set for any model kind.

    branch_signals: per-branch signal counts ([M] for single-grid kinds,
    [M_fast, M_slow] for multi). branch_supports: per-branch SupportMap with
    branch-local indices (defaults to all-empty). For BA-mean,
    ba_mean_inputs overrides the BiLSTM input width (defaults to M).
    """
    kind = ModelKind.parse(kind)
    if n_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {n_classes}")
    expected_branches = 2 if kind.is_multi else 1
    if len(branch_signals) != expected_branches:
        raise ConfigError(
            f"{kind.value} needs {expected_branches} branch(es), got {len(branch_signals)}"
        )
    if branch_supports is None:
        branch_supports = [SupportMap.empty(m) for m in branch_signals]
    branches = []
    for b, (m, supports) in enumerate(zip(branch_signals, branch_supports)):
        prefix = f"branch{b}"
        if kind is ModelKind.BA_MEAN:
            cells = None
            d_in = ba_mean_inputs if ba_mean_inputs is not None else m
        else:
            supports.validate(m)
            cells = []
            for s in range(m):
                width = 4 * (1 + len(supports.for_signal(s)))
                cells.append(
                    MemoryCellParams(
                        W=Parameter(init_uniform(rng, (d_r, width), width), f"{prefix}.cell{s}.W"),
                        b=Parameter(np.zeros(d_r), f"{prefix}.cell{s}.b"),
                        activation=cell_activation,
                    )
                )
            d_in = m * d_r
        bilstm = init_bilstm(d_in, d_h, rng, f"{prefix}.bilstm")
        attention = init_attention(2 * d_h, rng, f"{prefix}.attn")
        branches.append(BranchParams(cells=cells, bilstm=bilstm, attention=attention))
    fusion = None
    head_in = 2 * d_h
    if kind.is_multi:
        fused_in = 2 * (2 * d_h)
        fusion = FusionParams(
            W=Parameter(init_uniform(rng, (fusion_size, fused_in), fused_in), "fusion.W"),
            b=Parameter(np.zeros(fusion_size), "fusion.b"),
        )
        head_in = fusion_size
    head = init_classifier_head(head_in, head_hidden, n_classes, rng, "head")
    params = FitModelParams(kind=kind, branches=branches, head=head, fusion=fusion)
    params.parameters()  # enforce unique identifiers
    return params
