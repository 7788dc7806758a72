"""LSTM building blocks: cell step, bidirectional scan, global attention,
and the softmax classifier head.

All functions accept either a single vector per time step, shape (d,), or a
row-batch of records, shape (B, d); the two layouts produce the same numbers
row for row.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError
from .tensor import (
    Parameter,
    affine,
    concat,
    linear,
    log,
    mean_all,
    mul,
    narrow,
    pick,
    sigmoid,
    softmax,
    tanh,
    weighted_sum,
    zeros,
)

__all__ = [
    "LstmCellParams",
    "BiLstmParams",
    "AttentionParams",
    "ClassifierHead",
    "init_uniform",
    "init_lstm_cell",
    "init_bilstm",
    "init_attention",
    "init_classifier_head",
    "lstm_cell_step",
    "bilstm_forward",
    "global_attention",
    "classify",
    "cross_entropy",
]


def init_uniform(rng, shape, fan_in):
    """Seeded uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class LstmCellParams:
    """Gate weights for one LSTM cell, gate order i, f, g, o along rows.

    The forget-gate bias section is initialized to +1 so cells start out
    remembering, which eases gradient flow over long sequences.
    """

    W_x: Parameter  # (4*d_h, d_in)
    W_h: Parameter  # (4*d_h, d_h)
    b: Parameter  # (4*d_h,)

    @property
    def hidden_size(self):
        return self.W_h.data.shape[1]

    @property
    def input_size(self):
        return self.W_x.data.shape[1]

    def parameters(self):
        return [self.W_x, self.W_h, self.b]


def init_lstm_cell(d_in, d_h, rng, prefix):
    b = np.zeros(4 * d_h)
    b[d_h : 2 * d_h] = 1.0
    return LstmCellParams(
        W_x=Parameter(init_uniform(rng, (4 * d_h, d_in), d_in), f"{prefix}.W_x"),
        W_h=Parameter(init_uniform(rng, (4 * d_h, d_h), d_h), f"{prefix}.W_h"),
        b=Parameter(b, f"{prefix}.b"),
    )


def lstm_cell_step(x_t, h_prev, c_prev, p):
    """One LSTM step: returns (h, c).

    i, f, o are sigmoid gates, g the tanh candidate;
    c = f*c_prev + i*g and h = o*tanh(c).
    """
    d = p.hidden_size
    if x_t.data.shape[-1] != p.input_size:
        raise DimensionError(
            f"lstm step: input width {x_t.data.shape[-1]} != cell input size {p.input_size}"
        )
    if h_prev.data.shape[-1] != d or c_prev.data.shape[-1] != d:
        raise DimensionError(
            f"lstm step: state widths {h_prev.data.shape[-1]}/{c_prev.data.shape[-1]}"
            f" != hidden size {d}"
        )
    z = linear(x_t, p.W_x) + linear(h_prev, p.W_h) + p.b
    i = sigmoid(narrow(z, 0, d))
    f = sigmoid(narrow(z, d, 2 * d))
    g = tanh(narrow(z, 2 * d, 3 * d))
    o = sigmoid(narrow(z, 3 * d, 4 * d))
    c = mul(f, c_prev) + mul(i, g)
    h = mul(o, tanh(c))
    return h, c


@dataclass
class BiLstmParams:
    forward_cell: LstmCellParams
    backward_cell: LstmCellParams

    @property
    def hidden_size(self):
        return self.forward_cell.hidden_size

    @property
    def output_size(self):
        return 2 * self.hidden_size

    def parameters(self):
        return self.forward_cell.parameters() + self.backward_cell.parameters()


def init_bilstm(d_in, d_h, rng, prefix):
    return BiLstmParams(
        forward_cell=init_lstm_cell(d_in, d_h, rng, f"{prefix}.fwd"),
        backward_cell=init_lstm_cell(d_in, d_h, rng, f"{prefix}.bwd"),
    )


def _scan(X, cell):
    lead = X[0].data.shape[:-1]
    h = zeros(lead + (cell.hidden_size,))
    c = zeros(lead + (cell.hidden_size,))
    states = []
    for x_t in X:
        h, c = lstm_cell_step(x_t, h, c, cell)
        states.append(h)
    return states


def bilstm_forward(X, p):
    """Run both directions over a sequence of step inputs.

    Returns one hidden state per step: the forward state at t concatenated
    with the backward state at t, width 2*d_h.
    """
    X = list(X)
    if not X:
        raise DomainError("bilstm_forward: empty sequence")
    fwd = _scan(X, p.forward_cell)
    bwd = _scan(list(reversed(X)), p.backward_cell)[::-1]
    return [concat([f, b]) for f, b in zip(fwd, bwd)]


@dataclass
class AttentionParams:
    """Scoring vector mapping a hidden state to one scalar per step."""

    w: Parameter  # (1, 2*d_h)

    def parameters(self):
        return [self.w]


def init_attention(d_hidden, rng, prefix):
    return AttentionParams(w=Parameter(init_uniform(rng, (1, d_hidden), d_hidden), f"{prefix}.w"))


def global_attention(H, p):
    """Location-based global attention over a hidden-state sequence.

    Each state gets a scalar score, the scores are softmaxed across time,
    and the states are pooled by their weights into a single context vector.
    Returns (weights, context).
    """
    H = list(H)
    if not H:
        raise DomainError("global_attention: empty sequence")
    scores = concat([linear(h, p.w) for h in H])
    a = softmax(scores)
    context = weighted_sum(a, H)
    return a, context


@dataclass
class ClassifierHead:
    """One hidden affine + tanh, then an affine onto class logits."""

    W1: Parameter
    b1: Parameter
    W2: Parameter
    b2: Parameter

    @property
    def n_classes(self):
        return self.W2.data.shape[0]

    def parameters(self):
        return [self.W1, self.b1, self.W2, self.b2]


def init_classifier_head(d_in, d_hidden, n_classes, rng, prefix):
    return ClassifierHead(
        W1=Parameter(init_uniform(rng, (d_hidden, d_in), d_in), f"{prefix}.W1"),
        b1=Parameter(np.zeros(d_hidden), f"{prefix}.b1"),
        W2=Parameter(init_uniform(rng, (n_classes, d_hidden), d_hidden), f"{prefix}.W2"),
        b2=Parameter(np.zeros(n_classes), f"{prefix}.b2"),
    )


def classify(context, head):
    """Class probabilities from a context vector; rows sum to 1."""
    logits = affine(tanh(affine(context, head.W1, head.b1)), head.W2, head.b2)
    return softmax(logits)


def cross_entropy(probs, labels):
    """Negative log-likelihood of the true class, averaged over the batch.

    probs: (C,) with an int label, or (B, C) with a length-B label array.
    """
    picked = pick(probs, labels)
    if picked.data.shape == ():
        return -log(picked)
    return -mean_all(log(picked))
