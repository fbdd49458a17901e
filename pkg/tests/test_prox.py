import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lassonet.errors import ContractError
from lassonet.prox import (
    ProxParams,
    apply_prox_all_features,
    general_hier_prox,
    group_hier_prox,
    hier_prox,
    hierarchy_feasible,
    prox_objective,
    prox_oracle,
    soft_threshold,
)
from oracles import prox_instances


def test_soft_threshold_examples():
    assert soft_threshold(3.0, 1.0) == 2.0
    assert soft_threshold(-1.0, 2.0) == 0.0
    assert soft_threshold(-2.0, 0.5) == -1.5
    with pytest.raises(ContractError):
        soft_threshold(1.0, -0.1)


@given(st.floats(-1e6, 1e6), st.floats(0, 1e6))
def test_soft_threshold_shrinks(x, lam):
    r = soft_threshold(x, lam)
    assert abs(r) <= abs(x)
    assert np.sign(r) in (0.0, np.sign(x))


def test_params_validation():
    with pytest.raises(ContractError, match="linear-only"):
        ProxParams(1.0, m=0.0)
    with pytest.raises(ContractError):
        ProxParams(-1.0)
    with pytest.raises(ContractError):
        ProxParams(1.0, lam_bar=-0.5)


# Worked examples ------------------------------------------------------------


def test_hier_prox_boundary_example():
    r = hier_prox(1.0, [2.0], ProxParams(0.0, 1.0))
    assert r.theta == pytest.approx(1.5, abs=1e-12)
    assert r.w == pytest.approx([1.5], abs=1e-12)
    obj, _ = prox_oracle([1.0], [2.0], ProxParams(0.0, 1.0))
    assert prox_objective(1.0, [2.0], r.theta, r.w, ProxParams(0.0, 1.0)) == pytest.approx(obj, abs=1e-8)


def test_hier_prox_inactive_constraint_is_identity():
    r = hier_prox(3.0, [1.0], ProxParams(0.0, 10.0))
    assert r.theta == 3.0 and r.w.tolist() == [1.0]


def test_hier_prox_zero_w_soft_thresholds():
    r = hier_prox(5.0, [0.0], ProxParams(1.0, 10.0))
    assert r.theta == 4.0 and r.w.tolist() == [0.0]


@pytest.mark.parametrize("lam,m", [(0.0, 1.0), (1.0, 10.0), (0.3, 0.1)])
def test_hier_prox_zero_fixed_point(lam, m):
    r = hier_prox(0.0, [0.0, 0.0], ProxParams(lam, m))
    assert r.theta == 0.0 and r.w.tolist() == [0.0, 0.0]


def test_group_prox_examples():
    r = group_hier_prox([3.0, 4.0], [0.0], ProxParams(1.0, 1.0))
    np.testing.assert_allclose(r.theta, [2.4, 3.2], atol=1e-12)
    assert r.w.tolist() == [0.0]
    r = group_hier_prox([2.0], [1.0], ProxParams(0.0, 1.0))
    assert r.theta.tolist() == [2.0] and r.w.tolist() == [1.0]


def test_group_prox_zero_theta_matches_oracle():
    p = ProxParams(0.1, 1.0)
    r = group_hier_prox([0.0, 0.0], [5.0], p)
    obj, _ = prox_oracle([0.0, 0.0], [5.0], p)
    got = prox_objective([0.0, 0.0], [5.0], r.theta, r.w, p)
    assert got <= obj + 1e-8
    assert hierarchy_feasible(r.theta[None, :], r.w[None, :], 1.0)
    # keeping everything at zero is strictly worse than the returned point
    assert got < prox_objective([0.0, 0.0], [5.0], [0.0, 0.0], [0.0], p)


def test_general_prox_examples():
    r = general_hier_prox([1.0], [2.0], ProxParams(0.0, 1.0, lam_bar=0.5))
    assert r.theta[0] == pytest.approx(1.25, abs=1e-12)
    assert r.w[0] == pytest.approx(1.25, abs=1e-12)
    r = general_hier_prox([0.0], [1.0], ProxParams(1.0, 1.0))
    assert r.theta.tolist() == [0.0] and r.w.tolist() == [0.0]


def test_scalar_wrappers_reject_lam_bar():
    with pytest.raises(ContractError):
        hier_prox(1.0, [1.0], ProxParams(0.1, 1.0, 0.2))
    with pytest.raises(ContractError):
        group_hier_prox([1.0], [1.0], ProxParams(0.1, 1.0, 0.2))


# Oracle agreement ------------------------------------------------------------


def _call(operator, v, u, p):
    if operator == "hier":
        r = hier_prox(v, u, p)
        return np.array([r.theta]), r.w
    fn = group_hier_prox if operator == "group" else general_hier_prox
    r = fn(v, u, p)
    return r.theta, r.w


@pytest.mark.parametrize("operator", ["hier", "group", "general"])
def test_matches_oracle_on_random_instances(operator):
    rng = np.random.default_rng({"hier": 1, "group": 2, "general": 3}[operator])
    for v, u, p in prox_instances(300, rng, operator):
        theta, w = _call(operator, v, u, p)
        obj, _ = prox_oracle(v, u, p)
        assert prox_objective(v, u, theta, w, p) <= obj + 1e-6
        assert np.max(np.abs(w)) <= p.m * np.linalg.norm(theta)


def test_oracle_against_two_dimensional_grid():
    # with K = 1 the problem lives in (b, w); a dense 2-D grid is a fully independent check
    rng = np.random.default_rng(7)
    for _ in range(20):
        v, u = rng.uniform(-3, 3, 2)
        p = ProxParams(float(rng.choice([0.0, 0.1, 1.0])), float(rng.choice([0.1, 1.0, 10.0])),
                       float(rng.choice([0.0, 0.3])))
        best, cb, cw, half = np.inf, 0.0, 0.0, 4.0
        for _ in range(12):  # zoom in around the best feasible grid point
            b = np.linspace(cb - half, cb + half, 401)
            w = np.linspace(cw - half, cw + half, 401)
            B, W = np.meshgrid(b, w, indexing="ij")
            f = 0.5 * (v - B) ** 2 + 0.5 * (u - W) ** 2 + p.lam * np.abs(B) + p.lam_bar * np.abs(W)
            f = np.where(np.abs(W) <= p.m * np.abs(B), f, np.inf)
            i = np.unravel_index(np.argmin(f), f.shape)
            best = min(best, f[i])
            cb, cw, half = B[i], W[i], half / 4
        obj, _ = prox_oracle([v], [u], p)
        assert obj <= best + 1e-12
        assert obj >= best - 1e-8


def test_oracle_grid_refinement_monotone():
    rng = np.random.default_rng(11)
    for v, u, p in prox_instances(30, rng, "general"):
        objs = [prox_oracle(v, u, p, grid_steps=g)[0] for g in (100, 200, 400, 800)]
        assert all(b <= a + 1e-12 for a, b in zip(objs, objs[1:]))


def test_oracle_full_shrinkage():
    v, u = np.array([1.0, -2.0]), np.array([0.5, -1.5, 2.0])
    m = 2.0
    p = ProxParams(np.linalg.norm(v) + m * np.abs(u).sum(), m)
    _, r = prox_oracle(v, u, p)
    assert np.all(r.theta == 0.0)


# Reductions -----------------------------------------------------------------


def test_lasso_reduction_exact():
    rng = np.random.default_rng(5)
    for _ in range(500):
        theta = float(rng.normal() * 3)
        lam = float(rng.choice([0.0, 0.1, 1.0, rng.uniform(0, 5)]))
        K = int(rng.integers(0, 5))
        r = hier_prox(theta, np.zeros(K), ProxParams(lam, float(rng.choice([0.1, 1.0, 10.0]))))
        assert r.theta == soft_threshold(theta, lam)
        assert np.all(r.w == 0.0)


def test_general_equals_group_without_lam_bar():
    rng = np.random.default_rng(6)
    for v, u, p in prox_instances(200, rng, "group"):
        a = general_hier_prox(v, u, p)
        b = group_hier_prox(v, u, p)
        np.testing.assert_allclose(a.theta, b.theta, rtol=0, atol=1e-12)
        np.testing.assert_allclose(a.w, b.w, rtol=0, atol=1e-12)


def test_identity_when_unpenalised_and_slack():
    rng = np.random.default_rng(8)
    for _ in range(200):
        m = float(rng.choice([0.1, 1.0, 10.0]))
        v = rng.uniform(-3, 3, int(rng.integers(1, 4)))
        K = int(rng.integers(1, 6))
        u = rng.uniform(-1, 1, K) * 0.99 * m * np.linalg.norm(v)
        r = general_hier_prox(v, u, ProxParams(0.0, m))
        assert np.array_equal(r.theta, v) and np.array_equal(r.w, u)


# Properties -----------------------------------------------------------------

finite = st.floats(-5, 5, allow_nan=False)


@settings(max_examples=300, deadline=None)
@given(
    st.lists(finite, min_size=1, max_size=4),
    st.lists(finite, min_size=0, max_size=7),
    st.sampled_from([0.0, 0.1, 1.0, 3.0]),
    st.sampled_from([0.0, 0.3]),
    st.sampled_from([0.1, 1.0, 10.0]),
)
def test_feasible_and_shrinking(v, u, lam, lam_bar, m):
    v, u = np.array(v), np.array(u)
    r = general_hier_prox(v, u, ProxParams(lam, m, lam_bar))
    if u.size:
        assert hierarchy_feasible(r.theta[None, :], r.w[None, :], m)
    assert np.all(np.abs(r.w) <= np.abs(u))
    if np.linalg.norm(v) > 0:
        # output is a non-negative multiple of the input direction
        scale = np.linalg.norm(r.theta) / np.linalg.norm(v)
        np.testing.assert_allclose(r.theta, scale * v, atol=1e-12)
    assert 0 <= r.m_tilde <= u.size


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([False, True]))
def test_all_features_decomposes(seed, grouped):
    rng = np.random.default_rng(seed)
    d, K = 5, 4
    theta = rng.normal(size=(d, 3)) if grouped else rng.normal(size=d)
    w1 = rng.normal(size=(d, K)) * 3
    p = ProxParams(float(rng.uniform(0, 1)), float(rng.choice([0.1, 1.0, 10.0])))
    t_all, w_all = apply_prox_all_features(theta, w1, p)
    assert hierarchy_feasible(t_all, w_all, p.m)
    for j in range(d):
        if grouped:
            r = group_hier_prox(theta[j], w1[j], p)
            np.testing.assert_array_equal(t_all[j], r.theta)
        else:
            r = hier_prox(float(theta[j]), w1[j], p)
            assert t_all[j] == r.theta
        np.testing.assert_array_equal(w_all[j], r.w)


def test_all_features_zero_and_shape_checks():
    t, w = apply_prox_all_features(np.zeros(3), np.zeros((3, 2)), ProxParams(0.5, 1.0))
    assert not t.any() and not w.any()
    with pytest.raises(ContractError):
        apply_prox_all_features(np.zeros(3), np.zeros((4, 2)), ProxParams(0.5, 1.0))
    with pytest.raises(ContractError):
        apply_prox_all_features(np.zeros((3, 2)), np.zeros((3, 2)), ProxParams(0.5, 1.0), grouped=False)


def test_extreme_scales_stay_feasible():
    rng = np.random.default_rng(9)
    for scale in (1e-12, 1e-6, 1e6, 1e12):
        theta = rng.normal(size=(20, 3)) * scale
        w1 = rng.normal(size=(20, 16)) * scale
        for m in (0.1, 1.0, 10.0):
            t, w = apply_prox_all_features(theta, w1, ProxParams(0.1 * scale, m))
            assert hierarchy_feasible(t, w, m)


def test_breakpoint_rounding_and_subnormal_inputs():
    # v one ulp below |u| rounds the boundary candidate onto the breakpoint
    v = np.nextafter(1e300, 0.0)
    r = general_hier_prox([v], [1e300], ProxParams(0.0, 1.0))
    assert np.isfinite(r.theta).all() and hierarchy_feasible(r.theta[None], r.w[None], 1.0)
    v = np.nextafter(2.0, 0.0)
    r = general_hier_prox([v], [2.0], ProxParams(0.0, 1.0))
    assert hierarchy_feasible(r.theta[None], r.w[None], 1.0)
    # a subnormal direction must not overflow when rescaled
    r = general_hier_prox([0.0, 2.2e-309], [1.0], ProxParams(0.0, 1.0))
    assert np.isfinite(r.theta).all() and np.isfinite(r.w).all()
    t, _ = apply_prox_all_features(np.array([[3e-200, 4e-200]]), np.zeros((1, 2)), ProxParams(0.0, 1.0))
    assert t[0].tolist() == [3e-200, 4e-200]
