import numpy as np
import pytest

from fitnet.errors import ConfigError, ContractError, DimensionError
from fitnet.features import build_fit_features, compute_normalization
from fitnet.gradcheck import grad_check
from fitnet.models import (
    BranchAssignment,
    MemoryCellParams,
    ModelKind,
    SupportMap,
    ba_mean_forward,
    build_signal_vector,
    concat_representations,
    fit_forward,
    init_fit_model,
    mean_imputed_values,
    memory_cell_forward,
    multifit_forward,
    partition_fast_slow,
    select_support_signals,
)
from fitnet.sequence import cross_entropy
from fitnet.tensor import Parameter, tensor


def make_features(T, M, seed, density=0.6, grid_step=1.0, means=None):
    rng = np.random.default_rng(seed)
    mask = (rng.random((T, M)) < density).astype(float)
    values = rng.normal(size=(T, M)) * mask
    if means is None:
        means = rng.normal(size=M)
    return build_fit_features(values, mask, grid_step, means)


def test_signal_vector_observed_then_unobserved():
    values = np.array([[2.0], [0.0]])
    mask = np.array([[1.0], [0.0]])
    f = build_fit_features(values, mask, 1.0, np.array([1.5]))
    v0 = build_signal_vector(f, 0, 0)
    assert (v0.avg, v0.last, v0.flag, v0.delta) == (1.5, 2.0, 1.0, 0.0)
    v1 = build_signal_vector(f, 0, 1)
    assert (v1.avg, v1.last, v1.flag, v1.delta) == (1.5, 2.0, 0.0, 1.0)


def test_signal_vector_never_observed_fallback():
    f = build_fit_features(np.zeros((3, 1)), np.zeros((3, 1)), 2.0, np.array([1.5]))
    v = build_signal_vector(f, 0, 2)
    assert (v.avg, v.last, v.flag, v.delta) == (1.5, 1.5, 0.0, 4.0)


def test_signal_vector_out_of_range():
    f = make_features(3, 2, 0)
    with pytest.raises(ContractError):
        build_signal_vector(f, 2, 0)
    with pytest.raises(ContractError):
        build_signal_vector(f, 0, 3)


def _identity_cell(width, d_r=None, name="c"):
    d_r = d_r if d_r is not None else width
    W = np.eye(d_r, width)
    return MemoryCellParams(W=Parameter(W, f"{name}.W"), b=Parameter(np.zeros(d_r), f"{name}.b"))


def test_memory_cell_identity_case():
    cell = _identity_cell(4)
    v = tensor([1.5, 2.0, 1.0, 0.0])
    out = memory_cell_forward(v, [], cell)
    assert np.array_equal(out.data, v.data)


def test_memory_cell_one_support_concatenation():
    cell = _identity_cell(8, d_r=8)
    v = tensor([1.0, 2.0, 3.0, 4.0])
    sup = tensor([5.0, 6.0, 7.0, 8.0])
    out = memory_cell_forward(v, [sup], cell)
    assert out.data.shape == (8,)
    assert np.array_equal(out.data, np.arange(1.0, 9.0))


def test_memory_cell_support_count_mismatch():
    cell = _identity_cell(8)
    with pytest.raises(DimensionError):
        memory_cell_forward(tensor(np.zeros(4)), [], cell)


def test_memory_cell_output_width():
    rng = np.random.default_rng(1)
    cell = MemoryCellParams(
        W=Parameter(rng.normal(size=(3, 4)), "c.W"), b=Parameter(rng.normal(size=3), "c.b")
    )
    out = memory_cell_forward(tensor(rng.normal(size=4)), [], cell)
    assert out.data.shape == (3,)


def test_memory_cell_linearity():
    rng = np.random.default_rng(2)
    cell = MemoryCellParams(
        W=Parameter(rng.normal(size=(3, 4)), "c.W"), b=Parameter(rng.normal(size=3), "c.b")
    )
    v1 = rng.normal(size=4)
    v2 = rng.normal(size=4)

    def apply(v):
        return memory_cell_forward(tensor(v), [], cell).data

    lhs = apply(v1 + v2) - apply(v2)
    rhs = apply(v1) - apply(np.zeros(4))
    assert np.abs(lhs - rhs).max() < 1e-10


def test_concat_representations_contract():
    a, b = tensor([1.0, 2.0]), tensor([3.0, 4.0])
    assert np.array_equal(concat_representations([a]).data, a.data)
    joined = concat_representations([a, b])
    assert joined.data.shape == (4,)
    swapped = concat_representations([b, a])
    assert np.array_equal(swapped.data, [3.0, 4.0, 1.0, 2.0])
    with pytest.raises(DimensionError):
        concat_representations([a, tensor([1.0, 2.0, 3.0])])


def test_fit_equals_fitv_with_empty_supports_bitwise():
    f = make_features(6, 3, 3)
    rng = np.random.default_rng(0)
    fit = init_fit_model("fit", n_classes=2, rng=rng, branch_signals=[3], d_h=4, d_r=2)
    fitv = init_fit_model("fit_v", n_classes=2, rng=np.random.default_rng(0), branch_signals=[3],
                          d_h=4, d_r=2)
    out_fit = fit_forward(f, SupportMap.empty(3), fit)
    out_fitv = fit_forward(f, SupportMap.empty(3), fitv)
    assert np.array_equal(out_fit.data, out_fitv.data)


def test_fit_forward_probabilities_normalized():
    f = make_features(5, 3, 4)
    params = init_fit_model("fit", n_classes=3, rng=np.random.default_rng(1),
                            branch_signals=[3], d_h=4, d_r=2)
    probs = fit_forward(f, SupportMap.empty(3), params)
    assert abs(probs.data.sum() - 1.0) < 1e-9


def test_fit_forward_support_map_mismatch():
    f = make_features(5, 3, 4)
    params = init_fit_model("fit", n_classes=2, rng=np.random.default_rng(1),
                            branch_signals=[3], d_h=4, d_r=2)
    lopsided = SupportMap({0: (1,), 1: (), 2: ()})
    with pytest.raises(ConfigError):
        fit_forward(f, lopsided, params)


def test_fit_pipeline_grad_check():
    f = make_features(6, 3, 5)
    supports = SupportMap({0: (1,), 1: (2,), 2: (0,)})
    params = init_fit_model("fit_v", n_classes=2, rng=np.random.default_rng(2),
                            branch_signals=[3], branch_supports=[supports], d_h=3, d_r=2)

    def forward():
        return cross_entropy(fit_forward(f, supports, params), 1)

    assert grad_check(forward, params.parameters()) < 1e-4


def test_mean_imputation_oracle():
    values = np.array([[2.0], [0.0], [4.0]])
    mask = np.array([[1.0], [0.0], [1.0]])
    f = build_fit_features(values, mask, 1.0, np.array([3.0]))
    stats = compute_normalization([f])
    assert stats.mean[0] == 3.0
    imputed = mean_imputed_values(f, stats)
    assert np.array_equal(imputed[:, 0], [2.0, 3.0, 4.0])


def test_ba_mean_fully_observed_is_noop_and_all_missing_is_mean():
    rng = np.random.default_rng(6)
    values = rng.normal(size=(4, 2))
    full = build_fit_features(values, np.ones((4, 2)), 1.0, np.zeros(2))
    stats = compute_normalization([full])
    assert np.array_equal(mean_imputed_values(full, stats), values)

    never = build_fit_features(np.zeros((4, 2)), np.zeros((4, 2)), 1.0, np.zeros(2))
    imputed = mean_imputed_values(never, stats)
    assert np.array_equal(imputed, np.tile(stats.mean, (4, 1)))


def test_ba_mean_forward_runs_and_checks_stats_coverage():
    f = make_features(5, 3, 7)
    stats = compute_normalization([f])
    params = init_fit_model("ba_mean", n_classes=2, rng=np.random.default_rng(3),
                            branch_signals=[3], d_h=4)
    probs = ba_mean_forward(f, stats, params)
    assert abs(probs.data.sum() - 1.0) < 1e-9
    short = compute_normalization([make_features(5, 2, 8)])
    with pytest.raises(ConfigError):
        ba_mean_forward(f, short, params)


def _two_branch_setup(seed=9):
    fast = make_features(8, 2, seed, grid_step=1.0)
    slow = make_features(2, 1, seed + 1, grid_step=4.0)
    assignment = BranchAssignment(branch=["fast", "fast", "slow"], fast_step=1.0,
                                  slow_step=4.0, scores=[0.0, 0.0, 1.0])
    params = init_fit_model("multi_fit", n_classes=2, rng=np.random.default_rng(seed),
                            branch_signals=[2, 1], d_h=3, d_r=2, fusion_size=4)
    return fast, slow, assignment, params


def test_multifit_forward_shapes_and_branch_lengths():
    fast, slow, assignment, params = _two_branch_setup()
    assert slow.n_steps < fast.n_steps
    probs = multifit_forward(fast, slow, SupportMap.empty(3), assignment, params)
    assert abs(probs.data.sum() - 1.0) < 1e-9
    # fused input is the two contexts side by side
    assert params.fusion.W.data.shape[1] == 2 * (2 * 3)


def test_multifit_rejects_empty_branch():
    fast, slow, assignment, params = _two_branch_setup()
    all_fast = BranchAssignment(branch=["fast", "fast", "fast"], fast_step=1.0,
                                slow_step=4.0, scores=[0.0] * 3)
    with pytest.raises(ConfigError):
        multifit_forward(fast, slow, SupportMap.empty(3), all_fast, params)


def test_multifit_rejects_cross_branch_support():
    fast, slow, assignment, params = _two_branch_setup()
    cross = SupportMap({0: (2,), 1: (), 2: ()})
    with pytest.raises(ConfigError):
        multifit_forward(fast, slow, cross, assignment, params)


def test_multifit_grad_check():
    # batched over 3 records; the seeds keep every true gradient magnitude
    # above the finite-difference noise floor (~1e-10 / 1e-8 guard)
    fast = [make_features(8, 2, 600 + i, grid_step=1.0) for i in range(3)]
    slow = [make_features(2, 1, 650 + i, grid_step=4.0) for i in range(3)]
    assignment = BranchAssignment(branch=["fast", "fast", "slow"], fast_step=1.0,
                                  slow_step=4.0, scores=[0.0, 0.0, 1.0])
    supports = SupportMap({0: (1,), 1: (0,), 2: ()})
    params = init_fit_model(
        "multi_fit_v", n_classes=2, rng=np.random.default_rng(6), branch_signals=[2, 1],
        branch_supports=[SupportMap({0: (1,), 1: (0,)}), SupportMap({0: ()})],
        d_h=3, d_r=2, fusion_size=4,
    )
    labels = np.array([0, 1, 0])

    def forward():
        return cross_entropy(multifit_forward(fast, slow, supports, assignment, params), labels)

    assert grad_check(forward, params.parameters()) < 1e-4


def test_select_supports_duplicated_signal_pairs_up():
    rng = np.random.default_rng(12)
    base = rng.normal(size=(30, 1))
    values = np.concatenate([base, base, rng.normal(size=(30, 1))], axis=1)
    f = build_fit_features(values, np.ones((30, 3)), 1.0, np.zeros(3))
    sm = select_support_signals([f], 1)
    assert sm.for_signal(0) == (1,)
    assert sm.for_signal(1) == (0,)


def test_select_supports_k_bounds():
    f = make_features(10, 3, 13, density=1.0)
    with pytest.raises(ConfigError):
        select_support_signals([f], 3)
    sm = select_support_signals([f], 0)
    assert sm.is_all_empty()


def test_select_supports_list_lengths_match_k():
    feats = [make_features(20, 21, seed, density=0.7) for seed in range(3)]
    sm = select_support_signals(feats, 5)
    assert all(len(sm.for_signal(s)) == 5 for s in range(21))
    sm2 = select_support_signals([make_features(20, 37, 99, density=0.5)], 2)
    assert all(len(sm2.for_signal(s)) == 2 for s in range(37))


def test_select_supports_invariant_under_rescaling():
    feats = [make_features(40, 4, seed, density=0.8) for seed in range(2)]
    sm = select_support_signals(feats, 2)
    scaled = []
    factors = np.array([2.0, -0.5, 10.0, 0.1])
    offsets = np.array([1.0, -3.0, 0.0, 7.0])
    for f in feats:
        scaled.append(build_fit_features(
            (f.values * factors[None, :] + offsets[None, :]) * f.mask,
            f.mask, f.grid_step, f.means * factors + offsets))
    sm_scaled = select_support_signals(scaled, 2)
    assert sm.supports == sm_scaled.supports


def test_partition_dense_signal_is_fast_and_sparse_is_slow():
    T = 40
    mask = np.zeros((T, 2))
    mask[:, 0] = 1.0  # observed every step
    mask[::10, 1] = 1.0  # observed every 10 steps
    f = build_fit_features(np.ones((T, 2)) * mask, mask, 1.0, np.zeros(2))
    a = partition_fast_slow([f])
    assert a.branch == ["fast", "slow"]
    assert a.scores[0] < 1e-9
    assert a.slow_step == 8.0 * a.fast_step


def test_partition_override_wins():
    T = 40
    mask = np.zeros((T, 3))
    mask[:, 0] = 1.0
    mask[::2, 1] = 1.0
    mask[::10, 2] = 1.0
    f = build_fit_features(np.zeros((T, 3)), mask, 1.0, np.zeros(3))
    a = partition_fast_slow([f], overrides={"1": "slow"})
    assert a.branch[1] == "slow"


def test_partition_identical_scores_rejected():
    f = build_fit_features(np.ones((5, 2)), np.ones((5, 2)), 1.0, np.zeros(2))
    with pytest.raises(ConfigError):
        partition_fast_slow([f])


def test_partition_deterministic_and_total():
    feats = [make_features(30, 5, seed, density=0.4) for seed in range(3)]
    a1 = partition_fast_slow(feats)
    a2 = partition_fast_slow(feats)
    assert a1.branch == a2.branch
    assert all(b in ("fast", "slow") for b in a1.branch)


def test_model_kind_parse():
    assert ModelKind.parse("FIT-V") is ModelKind.FIT_V
    with pytest.raises(ConfigError):
        ModelKind.parse("gru")


def test_snapshot_round_trip():
    params = init_fit_model("fit", n_classes=2, rng=np.random.default_rng(14),
                            branch_signals=[2], d_h=3, d_r=2)
    snap = params.snapshot()
    for p in params.parameters():
        p.data += 1.0
    params.load_snapshot(snap)
    f = make_features(4, 2, 15)
    probs = fit_forward(f, SupportMap.empty(2), params)
    params2 = init_fit_model("fit", n_classes=2, rng=np.random.default_rng(14),
                             branch_signals=[2], d_h=3, d_r=2)
    probs2 = fit_forward(f, SupportMap.empty(2), params2)
    assert np.array_equal(probs.data, probs2.data)
