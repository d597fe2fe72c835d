import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grcn import autodiff as ad
from grcn import refine as rf
from grcn.autodiff import Tensor


def param(x):
    return Tensor(x, requires_grad=True)


# --- project_items ----------------------------------------------------------


def test_identity_projection(rng):
    x = rng.uniform(0, 3, size=(5, 4))
    out = rf.project_items(x, np.eye(4), np.zeros(4), slope=0.2)
    np.testing.assert_array_equal(out.data, x)


def test_bias_only_projection():
    out = rf.project_items(np.ones((3, 2)), np.zeros((2, 2)), np.array([1.0, -1.0]), slope=0.1)
    np.testing.assert_allclose(out.data, [[1.0, -0.1]] * 3)


def test_projection_gradient(rng):
    feats = rng.standard_normal((6, 4))
    w, b = param(rng.standard_normal((3, 4))), param(rng.standard_normal(3))
    target = Tensor(rng.standard_normal((6, 3)))
    errs = ad.gradcheck(lambda: ad.sum(rf.project_items(feats, w, b, 0.05) * target), [w, b])
    assert max(errs) < 1e-4


def test_projection_shape_mismatch():
    with pytest.raises(ad.ShapeError):
        rf.project_items(np.ones((2, 3)), np.ones((4, 2)), np.zeros(4))


def test_feature_table_validation():
    with pytest.raises(ValueError):
        rf.ModalityFeatureTable("visual", [[1.0, np.nan]])
    with pytest.raises(ValueError):
        rf.ModalityFeatureTable("haptic", [[1.0]])


# --- routing ----------------------------------------------------------------


def test_routing_fixed_point():
    u0 = np.array([0.6, 0.8, 0.0])
    out = rf.route_preference(Tensor(u0), Tensor(u0[None, :]), 1)
    np.testing.assert_allclose(out.data, u0, atol=1e-15)


@pytest.mark.parametrize("iters", [1, 2, 3, 6])
def test_routing_symmetric_neighbours_stay_on_bisector(iters):
    u0 = np.array([1.0, 0.0, 0.0])
    items = np.array([[0.5, 1.0, 0.2], [0.5, -1.0, 0.2]])
    out = rf.route_preference(Tensor(u0), Tensor(items), iters).data
    assert abs(out[1]) < 1e-12
    assert abs(np.linalg.norm(out) - 1.0) < 1e-12


def test_routing_planted_cluster():
    rng = np.random.default_rng(42)
    c = rng.standard_normal(8)
    c /= np.linalg.norm(c)
    items = 2.0 * c + 0.3 * rng.standard_normal((5, 8))
    u0 = rng.standard_normal(8)
    out = rf.route_preference(Tensor(u0), Tensor(items), 3).data
    assert out @ c > (u0 / np.linalg.norm(u0)) @ c


def test_routing_zero_iterations_normalizes():
    u0 = np.array([3.0, 4.0])
    np.testing.assert_allclose(rf.route_preference(Tensor(u0), Tensor(np.ones((2, 2))), 0).data, [0.6, 0.8])


def test_routing_empty_neighbourhood():
    with pytest.raises(rf.RoutingError):
        rf.route_preference(Tensor(np.ones(3)), Tensor(np.zeros((0, 3))), 2)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 4))
def test_route_all_matches_per_user_routing_and_is_unit(seed, iters):
    rng = np.random.default_rng(seed)
    n_users, n_items, d = 4, 7, 3
    edges = np.unique(rng.integers(0, [n_users, n_items], size=(12, 2)), axis=0)
    seeds = rng.standard_normal((n_users, d))
    items = rng.standard_normal((n_items, d))
    out = rf.route_all(Tensor(seeds), Tensor(items), edges[:, 0], edges[:, 1], n_users, iters).data
    np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-10)
    for u in range(n_users):
        nb = edges[edges[:, 0] == u, 1]
        if nb.size:
            ref = rf.route_preference(Tensor(seeds[u]), Tensor(items[nb]), iters).data
            np.testing.assert_allclose(out[u], ref, atol=1e-12)
        else:
            np.testing.assert_allclose(out[u], seeds[u] / np.linalg.norm(seeds[u]), atol=1e-12)


def test_routing_gradient(rng):
    seeds = param(rng.standard_normal((3, 4)))
    items = param(rng.standard_normal((5, 4)))
    users = np.array([0, 0, 1, 1, 1, 2])
    its = np.array([0, 3, 1, 2, 4, 4])
    target = Tensor(rng.standard_normal((3, 4)))
    errs = ad.gradcheck(lambda: ad.sum(rf.route_all(seeds, items, users, its, 3, 3) * target), [seeds, items])
    assert max(errs) < 1e-4


# --- affinity ---------------------------------------------------------------


def test_affinity_degree_one():
    s_ui, s_iu = rf.affinity_scores(Tensor([[1.0, 2.0]]), Tensor([[3.0, -1.0]]), np.array([0]), np.array([0]), 1, 1)
    assert s_ui.data.tolist() == [1.0] and s_iu.data.tolist() == [1.0]


def test_affinity_equal_neighbours():
    s_ui, _ = rf.affinity_scores(
        Tensor([[1.0, 0.0]]), Tensor([[2.0, 1.0], [2.0, -1.0]]), np.array([0, 0]), np.array([0, 1]), 1, 2
    )
    np.testing.assert_allclose(s_ui.data, [0.5, 0.5])


def test_affinity_closed_form():
    s_ui, s_iu = rf.affinity_scores(
        Tensor([[1.0, 0.0]]), Tensor([[np.log(3.0), 0.0], [0.0, 5.0]]), np.array([0, 0]), np.array([0, 1]), 1, 2
    )
    np.testing.assert_allclose(s_ui.data, [0.75, 0.25], rtol=1e-14)
    np.testing.assert_array_equal(s_iu.data, [1.0, 1.0])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-50, 50))
def test_affinity_neighbourhood_sums_and_shift_invariance(seed, shift):
    rng = np.random.default_rng(seed)
    n_users, n_items = 5, 6
    edges = np.unique(rng.integers(0, [n_users, n_items], size=(15, 2)), axis=0)
    users, items = edges[:, 0], edges[:, 1]
    upref = rng.standard_normal((n_users, 3))
    ivec = rng.standard_normal((n_items, 3))
    s_ui, s_iu = rf.affinity_scores(Tensor(upref), Tensor(ivec), users, items, n_users, n_items)
    for owner, s, n in ((users, s_ui.data, n_users), (items, s_iu.data, n_items)):
        sums = np.bincount(owner, weights=s, minlength=n)
        present = np.bincount(owner, minlength=n) > 0
        np.testing.assert_allclose(sums[present], 1.0, atol=1e-10)
        assert np.all((s > 0) & (s <= 1))
    # shifting every logit in a user's neighbourhood by a constant
    logits = np.einsum("ed,ed->e", upref[users], ivec[items]) + shift
    np.testing.assert_allclose(ad.segment_softmax(Tensor(logits), users, n_users).data, s_ui.data, atol=1e-12)


# --- fusion -----------------------------------------------------------------


def _fuse(scores, rho, mode):
    per = [Tensor([s]) for s in scores]
    return rf.fuse_scores(per, Tensor([rho]), np.array([0]), 1, mode).data[0]


def test_fusion_unit_base_is_max():
    assert _fuse([0.2, 0.5, 0.3], [1, 1, 1], "base_max") == 0.5


def test_fusion_weighted_base():
    assert _fuse([0.9, 0.4, 0.1], [0.5, 1, 1], "base_max") == pytest.approx(0.45, abs=1e-15)


@pytest.mark.parametrize("mode, expected", [("base_max", 0.3 * 0.7), ("max", 0.7), ("mean", 0.7)])
def test_fusion_single_modality(mode, expected):
    assert _fuse([0.7], [0.3], mode) == pytest.approx(expected)


def test_fusion_mean():
    assert _fuse([0.2, 0.5, 0.3], [1, 1, 1], "mean") == pytest.approx(1 / 3)


def test_fusion_hard_prunes_below_neighbourhood_mean():
    per = [Tensor([0.1, 0.6, 0.3])]
    out = rf.fuse_scores(per, Tensor(np.ones((1, 1))), np.array([0, 0, 0]), 1, "hard").data
    np.testing.assert_allclose(out, [0.0, 0.6 - 1 / 3, 0.0], atol=1e-15)


def test_fusion_uniform_is_inverse_degree():
    out = rf.fuse_scores([Tensor(np.ones(3))], Tensor(np.ones((2, 1))), np.array([0, 0, 1]), 2, "uniform").data
    np.testing.assert_allclose(out, [0.5, 0.5, 1.0])


def test_fusion_errors():
    with pytest.raises(rf.FusionError):
        rf.fuse_scores([], Tensor(np.ones((1, 1))), np.array([0]), 1)
    with pytest.raises(rf.FusionError):
        rf.fuse_scores([Tensor([1.0])], Tensor(np.ones((1, 1))), np.array([0]), 1, "median")


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["max", "mean"]))
def test_fusion_permutation_invariant_without_base(seed, mode):
    rng = np.random.default_rng(seed)
    scores = [rng.uniform(0, 1, 6) for _ in range(3)]
    owner = rng.integers(0, 3, 6)
    rho = Tensor(rng.standard_normal((3, 3)))
    ref = rf.fuse_scores([Tensor(s) for s in scores], rho, owner, 3, mode).data
    perm = rng.permutation(3)
    got = rf.fuse_scores([Tensor(scores[p]) for p in perm], rho, owner, 3, mode).data
    np.testing.assert_allclose(got, ref, atol=1e-15)


def test_fusion_gradient(rng):
    per = [param(rng.uniform(0.1, 1, 5)) for _ in range(2)]
    rho = param(rng.uniform(0.5, 1.5, (3, 2)))
    owner = np.array([0, 0, 1, 2, 2])
    errs = ad.gradcheck(lambda: ad.sum(rf.fuse_scores(per, rho, owner, 3, "base_max") * Tensor(np.arange(5.0))), per + [rho])
    assert max(errs) < 1e-4


# --- whole layer ------------------------------------------------------------


def test_refine_output_shapes_and_normalization(small_model):
    params, graph, features = small_model
    train = graph.train_edges()
    out = rf.refine(params.refine, features, train[:, 0], train[:, 1], graph.num_users, graph.num_items, 3)
    assert len(out.weights) == train.shape[0]
    for m in params.refine.modalities:
        np.testing.assert_allclose(np.linalg.norm(out.user_pref[m].data, axis=1), 1.0, atol=1e-10)
        a, b = out.weights.per_modality[m]
        np.testing.assert_allclose(np.bincount(train[:, 0], weights=a.data)[np.unique(train[:, 0])], 1.0, atol=1e-10)
        np.testing.assert_allclose(np.bincount(train[:, 1], weights=b.data)[np.unique(train[:, 1])], 1.0, atol=1e-10)
    s_ui, s_iu = out.weights.as_arrays()
    assert np.all(s_ui >= 0) and np.all(s_iu >= 0)
