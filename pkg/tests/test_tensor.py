import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fitnet.errors import ContractError, DimensionError, DomainError, NumericError
from fitnet.tensor import (
    Parameter,
    Tensor,
    affine,
    backward,
    concat,
    linear,
    log,
    mean_all,
    narrow,
    pick,
    relu,
    sigmoid,
    softmax,
    sum_all,
    tanh,
    tensor,
    weighted_sum,
)

finite_floats = st.floats(min_value=-50, max_value=50, allow_nan=False)


def test_affine_identity():
    W = Parameter(np.eye(2), "W")
    b = Parameter(np.zeros(2), "b")
    out = affine(tensor([3.0, -1.0]), W, b)
    assert np.array_equal(out.data, [3.0, -1.0])


def test_affine_hand_matrix_multiply():
    # oracle: [[1,2],[3,4]] @ [1,1] + [1,1] = [1+2+1, 3+4+1]
    W = Parameter([[1.0, 2.0], [3.0, 4.0]], "W")
    b = Parameter([1.0, 1.0], "b")
    out = affine(tensor([1.0, 1.0]), W, b)
    assert np.array_equal(out.data, [4.0, 8.0])


def test_affine_shape_mismatch_names_both_shapes():
    W = Parameter(np.eye(2), "W")
    b = Parameter(np.zeros(2), "b")
    with pytest.raises(DimensionError, match=r"\(3,\).*\(2, 2\)"):
        affine(tensor([1.0, 2.0, 3.0]), W, b)


def test_affine_batched_matches_rowwise():
    rng = np.random.default_rng(0)
    W = Parameter(rng.normal(size=(3, 4)), "W")
    b = Parameter(rng.normal(size=3), "b")
    X = rng.normal(size=(5, 4))
    batched = affine(tensor(X), W, b).data
    for i in range(5):
        row = affine(tensor(X[i]), W, b).data
        assert np.allclose(batched[i], row, rtol=1e-13, atol=0)


def test_softmax_symmetry():
    out = softmax(tensor([0.0, 0.0]))
    assert np.allclose(out.data, [0.5, 0.5])


def test_softmax_exponential_ratio():
    # oracle: e^0 : e^ln3 = 1 : 3
    out = softmax(tensor([0.0, math.log(3.0)]))
    assert np.allclose(out.data, [0.25, 0.75], atol=1e-12)


def test_softmax_empty_input_rejected():
    with pytest.raises(DomainError):
        softmax(tensor(np.zeros(0)))


@given(st.lists(finite_floats, min_size=1, max_size=8), finite_floats)
def test_softmax_shift_invariance_and_normalization(vals, c):
    base = softmax(tensor(vals)).data
    shifted = softmax(tensor([v + c for v in vals])).data
    assert np.allclose(base, shifted, atol=1e-12)
    assert abs(base.sum() - 1.0) < 1e-9
    assert (base >= 0).all()


def test_nan_rejected_at_graph_entry():
    with pytest.raises(NumericError):
        Tensor([1.0, float("nan")])


def test_backward_sum_of_leaf_gives_ones():
    w = Parameter([1.0, 2.0, 3.0], "w")
    backward(sum_all(w), [w])
    assert np.array_equal(w.grad, [1.0, 1.0, 1.0])


def test_backward_unused_parameter_gets_zero_gradient():
    w = Parameter([1.0, 2.0], "w")
    unused = Parameter([5.0], "unused")
    backward(sum_all(w), [w, unused])
    assert np.array_equal(unused.grad, [0.0])


def test_backward_rejects_non_scalar_loss():
    w = Parameter([1.0, 2.0], "w")
    with pytest.raises(ContractError):
        backward(w, [w])


def test_backward_linearity_of_sub_losses():
    rng = np.random.default_rng(3)
    w = Parameter(rng.normal(size=4), "w")
    x1 = tensor(rng.normal(size=4))
    x2 = tensor(rng.normal(size=4))

    def loss(x):
        return sum_all(tanh(w * x))

    backward(loss(x1) + loss(x2), [w])
    combined = w.grad.copy()
    backward(loss(x1), [w])
    g1 = w.grad.copy()
    backward(loss(x2), [w])
    g2 = w.grad.copy()
    assert np.allclose(combined, g1 + g2, atol=1e-12)


def test_duplicate_parameter_names_rejected():
    a = Parameter([1.0], "w")
    b = Parameter([2.0], "w")
    with pytest.raises(ContractError):
        backward(sum_all(a + b), [a, b])


def test_concat_narrow_round_trip_gradients():
    a = Parameter([1.0, 2.0], "a")
    b = Parameter([3.0], "b")
    joined = concat([a, b])
    assert np.array_equal(joined.data, [1.0, 2.0, 3.0])
    backward(sum_all(narrow(joined, 0, 2)), [a, b])
    assert np.array_equal(a.grad, [1.0, 1.0])
    assert np.array_equal(b.grad, [0.0])


def test_pick_batched_and_single_agree():
    probs = np.array([[0.2, 0.8], [0.6, 0.4]])
    batched = pick(tensor(probs), [1, 0])
    assert np.allclose(batched.data, [0.8, 0.6])
    single = pick(tensor(probs[0]), 1)
    assert float(single.data) == 0.8
    with pytest.raises(ContractError):
        pick(tensor(probs[0]), 5)


def test_weighted_sum_matches_manual():
    w = tensor([0.25, 0.75])
    vs = [tensor([1.0, 0.0]), tensor([0.0, 2.0])]
    out = weighted_sum(w, vs)
    assert np.allclose(out.data, [0.25, 1.5])


def test_log_rejects_non_positive():
    with pytest.raises(NumericError):
        log(tensor([1.0, 0.0]))


def test_elementwise_activations_finite_on_extremes():
    x = tensor([-5e2, 0.0, 5e2])
    assert np.isfinite(sigmoid(x).data).all()
    assert np.isfinite(tanh(x).data).all()
    assert np.isfinite(relu(x).data).all()


def test_mean_all_gradient():
    w = Parameter([2.0, 4.0, 6.0, 8.0], "w")
    backward(mean_all(w), [w])
    assert np.allclose(w.grad, 0.25)


def test_linear_batch_gradient_sums_over_rows():
    W = Parameter(np.ones((1, 2)), "W")
    X = tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
    backward(sum_all(linear(X, W)), [W])
    assert np.array_equal(W.grad, [[4.0, 6.0]])
