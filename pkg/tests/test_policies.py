import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import pseudogames as pg
from pseudogames import autodiff as ad
from pseudogames import projections as proj
from pseudogames.game import SpecificationError
from pseudogames.policies import (
    Architecture,
    GenericScheme,
    PolicyParams,
    AdversaryParams,
    ProjectionBlock,
    ProjectionSpec,
    dependent_eval,
    finite_diff_check,
    grad_policy,
    policy_eval,
)


# ---------------------------------------------------------------------------
# simplex projection


def test_simplex_of_zeros_is_uniform():
    assert np.allclose(proj.project_simplex(np.zeros(2)), [0.5, 0.5])


def test_simplex_hand_value():
    # softmax(ln 3, 0) = (3, 1) / 4
    out = proj.project_simplex(np.array([np.log(3.0), 0.0]))
    assert np.allclose(out, [0.75, 0.25], atol=1e-12)


def test_simplex_saturation():
    out = proj.project_simplex(np.array([100.0, 0.0]))
    assert abs(out[0] - 1.0) < 1e-10 and out[1] < 1e-10


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=8))
def test_simplex_membership_property(vals):
    out = proj.project_simplex(np.asarray(vals, dtype=np.float64))
    assert np.all(out > 0)
    assert abs(out.sum() - 1.0) < 1e-9


# ---------------------------------------------------------------------------
# budget scaling


def test_budget_scale_affordable_unchanged():
    p = np.array([0.5, 0.5])
    q = np.zeros(0)
    e = np.array([1.0, 1.0])
    raw_x = np.array([0.4, 0.4])  # cost 0.4 << wealth 1.0
    x, b = proj.budget_scale(raw_x, np.zeros(0), p, q, e)
    assert np.allclose(ad.value_of(x), raw_x, atol=1e-9)


def test_budget_scale_overspent_bundle():
    p = np.array([0.5, 0.5])
    e = np.array([1.0, 1.0])
    raw_x = np.array([4.0, 4.0])  # cost 4 = 4x wealth
    x, _ = proj.budget_scale(raw_x, np.zeros(0), p, np.zeros(0), e)
    cost = ad.value_of(x) @ p
    assert cost <= e @ p + 1e-12
    assert cost >= 0.99 * (e @ p)  # scaled onto the budget face, not inside


def test_budget_scale_zero_endowment():
    p = np.array([0.5, 0.5])
    x, b = proj.budget_scale(np.array([1.0, 1.0]), np.zeros(0), p, np.zeros(0),
                             np.zeros(2))
    assert np.allclose(ad.value_of(x), 0.0, atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(0.01, 5.0), min_size=2, max_size=2),
    st.lists(st.floats(0.0, 3.0), min_size=2, max_size=2),
    st.floats(0.05, 0.95),
    st.floats(-1.0, 1.0),
    st.floats(0.0, 2.0),
)
def test_budget_scale_post_property(raw_x, e, p1, raw_b, qv):
    p = np.array([p1, 1.0 - p1])
    q = np.array([qv])
    x, b = proj.budget_scale(np.asarray(raw_x), np.array([raw_b]), p, q,
                             np.asarray(e))
    cost = ad.value_of(x) @ p + ad.value_of(b) @ q
    assert cost <= np.asarray(e) @ p + 1e-12


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 10.0), st.floats(0.001, 1.0))
def test_smooth_min1_bounds(r, eps):
    v = ad.value_of(proj.smooth_min1(np.asarray(r), eps))
    assert v <= min(1.0, r) + 1e-12
    assert v >= 0.0


@settings(max_examples=60, deadline=None)
@given(st.floats(-5.0, 5.0), st.floats(0.001, 1.0))
def test_smooth_pos_dominates(z, eps):
    v = ad.value_of(proj.smooth_pos(np.asarray(z), eps))
    assert v >= max(0.0, z)
    assert v > 0.0


# ---------------------------------------------------------------------------
# architectures and jacobians


def test_affine_jacobian_is_feature_matrix(rng):
    arch = Architecture("affine", 3, 2)
    params = rng.normal(size=arch.n_params)
    x = rng.normal(size=(1, 3))

    def f(p):
        return ad.value_of(arch.forward(p, x))[0]

    jac = np.zeros((2, params.size))
    for r in range(2):
        th = ad.leaf(params)
        out = arch.forward(th, x)
        seed = np.zeros((1, 2))
        seed[0, r] = 1.0
        ad.backward(out, seed=seed)
        jac[r] = th.grad
    err = finite_diff_check(f, params, 1e-5, jac=jac)
    assert err <= 1e-9


def test_mlp_architecture_param_count_and_fd(rng):
    arch = Architecture("mlp", 4, 3, hidden=(8,))
    assert arch.n_params == (4 + 1) * 8 + (8 + 1) * 3
    params = rng.normal(size=arch.n_params) * 0.3
    x = rng.normal(size=(1, 4))

    def f(p):
        return ad.value_of(arch.forward(p, x))[0]

    jac = np.zeros((3, params.size))
    for r in range(3):
        th = ad.leaf(params)
        out = arch.forward(th, x)
        seed = np.zeros((1, 3))
        seed[0, r] = 1.0
        ad.backward(out, seed=seed)
        jac[r] = th.grad
    assert finite_diff_check(f, params, 1e-5, jac=jac) <= 1e-5


def test_mlp_input_gradient_matches_fd(rng):
    arch = Architecture("mlp", 5, 1, hidden=(7,))
    params = rng.normal(size=arch.n_params) * 0.5
    x0 = rng.normal(size=(1, 5))
    g = ad.value_of(arch.input_gradient(params, x0))

    def f(xflat):
        return ad.value_of(arch.forward(params, xflat.reshape(1, 5)))[0]

    err = finite_diff_check(f, x0.ravel(), 1e-5, jac=g)
    assert err <= 1e-6


def test_architecture_dim_mismatch_raises():
    arch = Architecture("affine", 3, 2)
    with pytest.raises(SpecificationError):
        arch.forward(np.zeros(5), np.zeros((1, 3)))
    with pytest.raises(SpecificationError):
        arch.forward(np.zeros(arch.n_params), np.zeros((1, 4)))


# ---------------------------------------------------------------------------
# finite_diff_check semantics


def test_finite_diff_check_linear_function():
    # a linear map has zero truncation error, so a wide step leaves only
    # negligible rounding noise
    A = np.array([[1.0, 2.0], [3.0, -1.0]])
    f = lambda x: A @ x
    assert finite_diff_check(f, np.array([0.3, -0.2]), 0.5) <= 1e-12


def test_finite_diff_check_softmax():
    f = lambda x: ad.softmax(x)
    assert finite_diff_check(f, np.array([0.1, -0.4, 0.2]), 1e-5) <= 1e-7


def test_finite_diff_check_flags_hard_clamp():
    f = lambda x: np.maximum(x, 0.0)
    err = finite_diff_check(f, np.array([1e-7, 0.5]), 1e-5)
    assert err > 1e-3


# ---------------------------------------------------------------------------
# generic scheme: evaluation, feasibility, dependent deviations


def _generic_scheme():
    blocks = (
        (ProjectionBlock("simplex", 3),),
        (ProjectionBlock("box", 2, low=0.0, high=2.0),
         ProjectionBlock("symmetric-box", 1, high=0.5)),
    )
    return GenericScheme(4, (3, 3), ProjectionSpec(blocks))


def test_generic_scheme_zero_theta_uniform(rng):
    scheme = _generic_scheme()
    params = PolicyParams(np.zeros(scheme.n_theta), scheme)
    acts = policy_eval(params, np.zeros(4))
    assert np.allclose(acts[0], np.ones(3) / 3)
    assert np.allclose(acts[1], [1.0, 1.0, 0.0])  # box midpoints, tanh(0)=0


def test_generic_dependent_eval_shapes(rng):
    scheme = _generic_scheme()
    adv = AdversaryParams(scheme.init_phi(rng), scheme)
    theta = PolicyParams(scheme.init_theta(rng), scheme)
    base = policy_eval(theta, rng.normal(size=4))
    devs = dependent_eval(adv, rng.normal(size=4), base)
    assert [a.shape for a in devs] == [(3,), (3,)]
    assert abs(devs[0].sum() - 1.0) < 1e-9


def test_grad_policy_matches_fd(rng):
    scheme = _generic_scheme()
    theta0 = scheme.init_theta(rng)
    params = PolicyParams(theta0, scheme)
    s = rng.normal(size=4)
    jac = grad_policy(params, s)

    def f(th):
        return np.concatenate(policy_eval(PolicyParams(th, scheme), s))

    assert finite_diff_check(f, theta0, 1e-5, jac=jac) <= 1e-5


# ---------------------------------------------------------------------------
# economy scheme feasibility-by-construction


def test_economy_profile_feasible_10k_probes(desk_linear_stoch):
    econ, spec, scheme = desk_linear_stoch
    rng = np.random.default_rng(77)
    B = 10_000
    states = spec.init_sampler(rng, B)
    theta = rng.uniform(-2.0, 2.0, scheme.n_theta)
    actions = [ad.value_of(a) for a in scheme.profile(theta, states)]
    vals = spec.constraint_fn(states, actions)
    worst = min(float(np.min(v)) for v in vals if v.size)
    assert worst >= -1e-9


def test_economy_deviations_feasible(desk_linear_stoch):
    econ, spec, scheme = desk_linear_stoch
    rng = np.random.default_rng(78)
    B = 1000
    states = spec.init_sampler(rng, B)
    theta = rng.uniform(-2.0, 2.0, scheme.n_theta)
    for i in range(spec.n_players):
        phi = rng.uniform(-2.0, 2.0, scheme.n_phi)
        actions = [ad.value_of(a)
                   for a in scheme.deviation_profile(theta, phi, i, states)]
        vals = spec.constraint_fn(states, actions)
        # the deviator's own constraints hold; for consumers the budget is
        # row 0 and the shared rows account for the deviating bundle
        worst = float(np.min(vals[i])) if vals[i].size else 0.0
        assert worst >= -1e-9, f"player {i} deviation violates its constraints"


def test_economy_reward_bounded(desk_linear_stoch):
    econ, spec, scheme = desk_linear_stoch
    rng = np.random.default_rng(79)
    B = 10_000
    states = spec.init_sampler(rng, B)
    theta = rng.uniform(-3.0, 3.0, scheme.n_theta)
    actions = [ad.value_of(a) for a in scheme.profile(theta, states)]
    r = spec.reward_fn(states, actions)
    assert np.all(np.abs(r) <= spec.reward_bound)


def test_economy_policy_eval_smoothness(desk_linear_det, rng):
    econ, spec, scheme = desk_linear_det
    theta0 = scheme.init_theta(rng)
    s = spec.init_sampler(rng, 1)

    idx = rng.choice(scheme.n_theta, 25, replace=False)

    def f(sub):
        th = theta0.copy()
        th[idx] = sub
        return np.concatenate(
            [ad.value_of(a)[0] for a in scheme.profile(th, s)]
        )

    jac_rows = []
    out_dim = f(theta0[idx]).size
    for r in range(out_dim):
        th = ad.leaf(theta0)
        acts = scheme.profile(th, s)
        flat = ad.concat([ad.reshape(a, (-1,)) for a in acts], axis=0)
        seed = np.zeros(out_dim)
        seed[r] = 1.0
        ad.backward(flat, seed=seed)
        jac_rows.append(th.grad[idx])
    assert finite_diff_check(f, theta0[idx].copy(), 1e-5,
                             jac=np.stack(jac_rows)) <= 1e-5
