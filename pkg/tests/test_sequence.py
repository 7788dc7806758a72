import numpy as np
import pytest

from fitnet.errors import DimensionError, DomainError
from fitnet.gradcheck import grad_check
from fitnet.sequence import (
    bilstm_forward,
    classify,
    cross_entropy,
    global_attention,
    init_attention,
    init_bilstm,
    init_classifier_head,
    init_lstm_cell,
    lstm_cell_step,
)
from fitnet.tensor import sum_all, tensor, zeros


def _zero_cell(d_in, d_h):
    cell = init_lstm_cell(d_in, d_h, np.random.default_rng(0), "z")
    cell.W_x.data[...] = 0.0
    cell.W_h.data[...] = 0.0
    cell.b.data[...] = 0.0
    return cell


def test_lstm_zero_weights_gate_arithmetic():
    # with all-zero weights: i = f = o = 0.5, g = 0, so c and h stay 0
    cell = _zero_cell(3, 2)
    h, c = lstm_cell_step(tensor([1.0, -2.0, 0.5]), zeros(2), zeros(2), cell)
    assert np.array_equal(c.data, [0.0, 0.0])
    assert np.array_equal(h.data, [0.0, 0.0])


def test_lstm_large_forget_bias_asymptote():
    # as the forget bias grows, c -> c_prev + i*g
    rng = np.random.default_rng(1)
    cell = init_lstm_cell(3, 2, rng, "cell")
    cell.b.data[2:4] = 50.0  # forget-gate section
    x = tensor(rng.normal(size=3))
    c_prev = tensor(rng.normal(size=2))
    h, c = lstm_cell_step(x, zeros(2), c_prev, cell)

    d = 2
    z = cell.W_x.data @ x.data + cell.b.data
    i = 1 / (1 + np.exp(-z[:d]))
    g = np.tanh(z[2 * d : 3 * d])
    assert np.allclose(c.data, c_prev.data + i * g, atol=1e-3)


def test_lstm_shape_contract_and_errors():
    cell = _zero_cell(3, 4)
    h, c = lstm_cell_step(tensor(np.zeros(3)), zeros(4), zeros(4), cell)
    assert h.data.shape == (4,) and c.data.shape == (4,)
    with pytest.raises(DimensionError):
        lstm_cell_step(tensor(np.zeros(5)), zeros(4), zeros(4), cell)
    with pytest.raises(DimensionError):
        lstm_cell_step(tensor(np.zeros(3)), zeros(2), zeros(4), cell)


def test_bilstm_shapes_and_single_step_structure():
    rng = np.random.default_rng(2)
    p = init_bilstm(3, 2, rng, "b")
    X = [tensor(rng.normal(size=3)) for _ in range(5)]
    H = bilstm_forward(X, p)
    assert len(H) == 5
    assert all(h.data.shape == (4,) for h in H)

    # T = 1: concatenation of two independent single-step cells on x_1
    H1 = bilstm_forward(X[:1], p)
    hf, _ = lstm_cell_step(X[0], zeros(2), zeros(2), p.forward_cell)
    hb, _ = lstm_cell_step(X[0], zeros(2), zeros(2), p.backward_cell)
    assert np.array_equal(H1[0].data, np.concatenate([hf.data, hb.data]))


def test_bilstm_empty_sequence_rejected():
    p = init_bilstm(3, 2, np.random.default_rng(0), "b")
    with pytest.raises(DomainError):
        bilstm_forward([], p)


def test_bilstm_reversal_symmetry():
    # reversing the input and swapping the direction cells yields the
    # time-reversed outputs with halves swapped
    rng = np.random.default_rng(3)
    p = init_bilstm(3, 2, rng, "b")
    swapped = type(p)(forward_cell=p.backward_cell, backward_cell=p.forward_cell)
    X = [tensor(rng.normal(size=3)) for _ in range(6)]
    H = bilstm_forward(X, p)
    H_rev = bilstm_forward(list(reversed(X)), swapped)
    d = 2
    for t in range(6):
        expect = np.concatenate(
            [H[t].data[d:], H[t].data[:d]]
        )  # swap forward/backward halves
        assert np.allclose(H_rev[5 - t].data, expect, atol=1e-12)


def test_attention_uniform_on_identical_states():
    p = init_attention(4, np.random.default_rng(4), "a")
    h = tensor([0.3, -0.2, 1.0, 0.5])
    a, context = global_attention([h, h, h], p)
    assert np.allclose(a.data, [1 / 3] * 3, atol=1e-12)
    assert np.allclose(context.data, h.data, atol=1e-12)


def test_attention_weights_normalized():
    rng = np.random.default_rng(5)
    p = init_attention(4, rng, "a")
    H = [tensor(rng.normal(size=4)) for _ in range(7)]
    a, _ = global_attention(H, p)
    assert abs(a.data.sum() - 1.0) < 1e-9
    assert (a.data >= 0).all()


def test_attention_saturation_picks_dominant_step():
    rng = np.random.default_rng(6)
    p = init_attention(4, rng, "a")
    H = [tensor(rng.normal(size=4)) for _ in range(5)]
    w = p.w.data[0]
    scores = np.array([float(w @ h.data) for h in H])
    winner = int(scores.argmax())
    # push the winner's score 20 above the others
    H[winner] = tensor(H[winner].data + 20.0 * w / float(w @ w))
    _, context = global_attention(H, p)
    assert np.abs(context.data - H[winner].data).max() < 1e-6


def test_classifier_probabilities_and_shift_invariance():
    rng = np.random.default_rng(7)
    head = init_classifier_head(4, 5, 3, rng, "h")
    ctx = tensor(rng.normal(size=4))
    probs = classify(ctx, head)
    assert abs(probs.data.sum() - 1.0) < 1e-9
    base_argmax = int(probs.data.argmax())
    head.b2.data += 3.7  # uniform logit shift
    shifted = classify(ctx, head)
    assert int(shifted.data.argmax()) == base_argmax


def test_binary_head_softmax_oracle():
    rng = np.random.default_rng(8)
    head = init_classifier_head(2, 2, 2, rng, "h")
    # force logits [0, ln 3] regardless of context
    head.W1.data[...] = 0.0
    head.b1.data[...] = 0.0
    head.W2.data[...] = 0.0
    head.b2.data[...] = [0.0, np.log(3.0)]
    probs = classify(tensor([1.0, -1.0]), head)
    assert np.allclose(probs.data, [0.25, 0.75], atol=1e-12)


def test_cross_entropy_single_and_batched():
    probs = tensor([0.25, 0.75])
    assert abs(float(cross_entropy(probs, 1).data) - (-np.log(0.75))) < 1e-12
    batch = tensor([[0.25, 0.75], [0.5, 0.5]])
    expect = -(np.log(0.75) + np.log(0.5)) / 2
    assert abs(float(cross_entropy(batch, [1, 0]).data) - expect) < 1e-12


def test_bilstm_attention_pipeline_grad_check():
    rng = np.random.default_rng(9)
    p = init_bilstm(2, 3, rng, "b")
    att = init_attention(6, rng, "a")
    head = init_classifier_head(6, 4, 2, rng, "h")
    X = [tensor(rng.normal(size=2)) for _ in range(4)]
    params = p.parameters() + att.parameters() + head.parameters()

    def forward():
        H = bilstm_forward(X, p)
        _, ctx = global_attention(H, att)
        return cross_entropy(classify(ctx, head), 1)

    assert grad_check(forward, params) < 1e-4


def test_batched_bilstm_matches_single_records():
    rng = np.random.default_rng(10)
    p = init_bilstm(3, 2, rng, "b")
    att = init_attention(4, rng, "a")
    X = rng.normal(size=(4, 6, 3))  # B=4, T=6
    batched_H = bilstm_forward([tensor(X[:, t]) for t in range(6)], p)
    _, batched_ctx = global_attention(batched_H, att)
    for i in range(4):
        H = bilstm_forward([tensor(X[i, t]) for t in range(6)], p)
        _, ctx = global_attention(H, att)
        assert np.allclose(batched_ctx.data[i], ctx.data, atol=1e-12)
