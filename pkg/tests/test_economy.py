import numpy as np
import pytest

import pseudogames as pg
from pseudogames import autodiff as ad
from pseudogames.economy import (
    EconomyState,
    MarketAction,
    UtilityFamily,
    budget_membership,
    check_stochastic_concavity,
    classify_completeness,
    economy_from_dict,
    economy_to_dict,
    endowment_update,
    feasibility_residual,
    utility,
    utility_gradient,
    walras_residual,
)
from pseudogames.game import SpecificationError


# ---------------------------------------------------------------------------
# utilities


def test_linear_utility_hand_value():
    fam = UtilityFamily("linear")
    assert np.isclose(utility(np.array([0.3, 0.4]), np.array([1.0, 2.0]), fam), 1.1)


def test_cobb_douglas_at_ones():
    fam = UtilityFamily("cobb-douglas")
    tau = np.array([1.7, 4.2, 2.3])
    assert np.isclose(utility(np.ones(3), tau, fam), 1.0)


def test_leontief_at_types():
    fam = UtilityFamily("leontief", leontief_eps=0.05)
    tau = np.array([2.0, 3.0, 1.5])
    smooth = utility(tau.copy(), tau, fam)
    exact = utility(tau.copy(), tau, fam, smooth=False)
    assert np.isclose(exact, 1.0)
    assert abs(smooth - 1.0) <= fam.leontief_eps * np.log(3) + 1e-12
    tighter = UtilityFamily("leontief", leontief_eps=1e-4)
    assert abs(utility(tau.copy(), tau, tighter) - 1.0) < 1e-3


@pytest.mark.parametrize("kind", ["linear", "cobb-douglas", "leontief"])
def test_utility_concavity_chords(kind, rng):
    fam = UtilityFamily(kind)
    tau = rng.uniform(1, 5, 4)
    tol = 1e-9 if kind != "leontief" else 1e-9
    for _ in range(1000):
        x1 = rng.uniform(0.05, 2.0, 4)
        x2 = rng.uniform(0.05, 2.0, 4)
        lam = rng.uniform()
        mid = utility(lam * x1 + (1 - lam) * x2, tau, fam)
        chord = lam * utility(x1, tau, fam) + (1 - lam) * utility(x2, tau, fam)
        assert mid >= chord - tol


@pytest.mark.parametrize("kind", ["linear", "cobb-douglas", "leontief"])
def test_utility_gradient_matches_fd(kind, rng):
    from pseudogames.policies import finite_diff_check

    fam = UtilityFamily(kind)
    tau = rng.uniform(1, 5, 3)
    x0 = rng.uniform(0.2, 1.0, 3)
    g = ad.value_of(utility_gradient(x0, tau, fam))
    f = lambda x: np.atleast_1d(ad.value_of(utility(x, tau, fam)))
    assert finite_diff_check(f, x0, 1e-6, jac=g.reshape(1, -1)) < 1e-6


def test_utility_unknown_kind_rejected():
    with pytest.raises(SpecificationError):
        UtilityFamily("quadratic")


# ---------------------------------------------------------------------------
# market identities


def test_budget_membership_cases():
    p = np.array([0.6, 0.4])
    e = np.array([1.0, 2.0])
    ok, slack = budget_membership(e, np.zeros(0), p, np.zeros(0), e)
    assert ok and abs(slack) < 1e-12
    ok, slack = budget_membership(np.zeros(2), np.zeros(0), p, np.zeros(0), e)
    assert ok and np.isclose(slack, e @ p)
    ok, slack = budget_membership(2 * e, np.zeros(0), p, np.zeros(0), e)
    assert not ok and np.isclose(slack, -(e @ p))


def test_endowment_update_cases(rng):
    e = rng.uniform(0.1, 1.0, (3, 2))
    R = rng.uniform(0.5, 1.1, (1, 2))
    assert np.allclose(endowment_update(e, np.zeros((3, 1)), R), e)
    B = np.zeros((3, 1))
    B[1, 0] = 1.0
    out = endowment_update(e, B, R)
    assert np.allclose(out[1], e[1] + R[0])
    out_short = endowment_update(e, -B, R)
    assert np.allclose(out_short[1], e[1] - R[0])
    # linearity, exactly
    B1 = rng.normal(size=(3, 1))
    B2 = rng.normal(size=(3, 1))
    lam = 0.3
    lhs = endowment_update(e, lam * B1 + (1 - lam) * B2, R)
    rhs = lam * endowment_update(e, B1, R) + (1 - lam) * endowment_update(e, B2, R)
    assert np.allclose(lhs, rhs, atol=1e-14)
    with pytest.raises(SpecificationError):
        endowment_update(e, np.zeros((3, 2)), R)


def test_walras_residual_cases(rng):
    e = rng.uniform(0.1, 1.0, (2, 2))
    tau = rng.uniform(1, 5, (2, 2))
    s = EconomyState(0, e, tau)
    p = np.array([0.5, 0.5])
    a = MarketAction(e.copy(), np.zeros((2, 0)), p, np.zeros(0))
    assert abs(walras_residual(s, a)) < 1e-14
    a2 = MarketAction(e / 2.0, np.zeros((2, 0)), p, np.zeros(0))
    assert np.isclose(walras_residual(s, a2), -e.sum() / 4.0)
    # everyone spends exactly their budget and markets clear -> 0
    a3 = MarketAction(e[::-1].copy(), np.zeros((2, 0)), p, np.zeros(0))
    swapped_cost = (a3.consumptions * p).sum(axis=1)
    wealth = (e * p).sum(axis=1)
    if np.allclose(swapped_cost, wealth[::-1]):
        assert abs(walras_residual(s, a3)) < 1e-12


def test_feasibility_residual_signs():
    e = np.ones((2, 3)) * 0.5
    s = EconomyState(0, e, np.ones((2, 3)))
    a = MarketAction(e.copy(), np.zeros((2, 1)), np.ones(3) / 3, np.zeros(1))
    c, b = feasibility_residual(s, a)
    assert np.allclose(c, 0) and np.allclose(b, 0)
    a.consumptions[0, 0] += 1.1  # demands total supply + 0.1 of commodity 1
    c, _ = feasibility_residual(s, a)
    assert np.isclose(c[0], 1.1) and np.allclose(c[1:], 0)
    a.portfolios[:, 0] = 0.1
    _, b = feasibility_residual(s, a)
    assert np.isclose(b[0], 0.2)


# ---------------------------------------------------------------------------
# compiled game fidelity


def test_reduction_fidelity(desk_linear_stoch):
    econ, spec, scheme = desk_linear_stoch
    rng = np.random.default_rng(21)
    states = spec.init_sampler(rng, 1000)
    theta = rng.uniform(-2, 2, scheme.n_theta)
    actions = [ad.value_of(a) for a in scheme.profile(theta, states)]
    rewards = spec.reward_fn(states, actions)
    n, m, k = econ.n_consumers, econ.m_commodities, econ.k_assets
    for b in rng.choice(1000, 64, replace=False):
        st = EconomyState.unpack(states[b], n, m)
        act = MarketAction.from_profile(econ, [a[b] for a in actions])
        for i in range(n):
            direct = ad.value_of(utility(act.consumptions[i], st.types[i], econ.utility))
            assert abs(direct - rewards[b, i]) < 1e-12
        assert abs(walras_residual(st, act) - rewards[b, n]) < 1e-12
        cons = spec.constraint_fn(states[b:b + 1], [a[b:b + 1] for a in actions])
        for i in range(n):
            _, slack = budget_membership(
                act.consumptions[i], act.portfolios[i], act.prices,
                act.asset_prices, st.endowments[i],
            )
            assert abs(cons[i][0, 0] - slack) < 1e-12
            c_res, b_res = feasibility_residual(st, act)
            assert np.allclose(cons[i][0, 1:1 + m], -c_res, atol=1e-12)
            assert np.allclose(cons[i][0, 1 + m:], -b_res, atol=1e-12)


# ---------------------------------------------------------------------------
# generator and classification


def test_sample_random_economy_paper_ranges():
    cfg = pg.EconomyConfig(n_consumers=10, m_commodities=10, k_assets=1,
                           n_world_states=5, init_mode="resample")
    econ = pg.sample_random_economy(cfg, np.random.default_rng(0))
    assert econ.returns.shape == (5, 1, 10)
    assert econ.returns.min() >= 0.5 and econ.returns.max() <= 1.1
    spec = pg.build_pseudo_game(econ)
    states = spec.init_sampler(np.random.default_rng(1), 16)
    e = states[:, 1:1 + 100].reshape(16, 10, 10)
    assert np.allclose(e.sum(axis=1), 1.0, atol=1e-12)


def test_generated_economy_determinism():
    cfg = pg.EconomyConfig()
    e1 = pg.sample_random_economy(cfg, np.random.default_rng(42))
    e2 = pg.sample_random_economy(cfg, np.random.default_rng(42))
    assert np.array_equal(e1.returns, e2.returns)
    assert np.array_equal(e1.init_state.endowments, e2.init_state.endowments)


def test_classify_completeness_cases():
    base = pg.sample_random_economy(pg.EconomyConfig(), np.random.default_rng(0))
    import dataclasses
    zero = dataclasses.replace(base, returns=np.zeros_like(base.returns))
    assert classify_completeness(zero).label == "incomplete"
    assert classify_completeness(base).label == "financial-assets"  # k=1, rank 1
    contingent = dataclasses.replace(base, spot_market_cardinality=2)
    assert classify_completeness(contingent).label == "complete"
    assert classify_completeness(base).world_state_contingent is False


def test_check_stochastic_concavity(desk_linear_stoch):
    econ, spec, scheme = desk_linear_stoch
    rng = np.random.default_rng(5)
    rep = check_stochastic_concavity(econ, n_probes=50, rng=rng)
    # affine-in-portfolio transitions: violation <= 0 exactly, per sample
    assert rep.worst_violation <= 1e-12

    def convex_transition(bmat, r_sel, e_base):
        return e_base + np.matmul(
            np.broadcast_to(bmat * bmat, r_sel.shape[:1] + bmat.shape) / econ.b_max,
            r_sel,
        )

    rep_bad = check_stochastic_concavity(
        econ, n_probes=200, rng=rng, transition=convex_transition
    )
    assert rep_bad.worst_violation > 0


# ---------------------------------------------------------------------------
# serialization


def test_economy_json_roundtrip(desk_linear_det, tmp_path):
    econ, _, _ = desk_linear_det
    d = economy_to_dict(econ)
    back = economy_from_dict(d)
    assert np.array_equal(back.returns, econ.returns)
    assert back.utility == econ.utility
    assert back.economy_id == econ.economy_id
    assert np.array_equal(back.init_state.endowments, econ.init_state.endowments)
    path = tmp_path / "econ.json"
    pg.economy.save_economy(econ, path)
    loaded = pg.economy.load_economy(path)
    assert np.array_equal(loaded.returns, econ.returns)
