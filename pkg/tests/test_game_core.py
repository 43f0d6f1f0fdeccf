import numpy as np
import pytest

import pseudogames as pg
from pseudogames import autodiff as ad
from pseudogames.economy import EconomyState, MarketAction
from pseudogames.game import (
    History,
    SpecificationError,
    TransitionModel,
    UnsupportedModelError,
    constraint_values,
    is_feasible,
    reward,
    sample_initial,
    step,
)


def balanced_action(econ):
    """x = e, b = 0, uniform prices: the autarky profile."""
    s = EconomyState(0, econ.init_state.endowments, econ.init_state.types)
    m, k = econ.m_commodities, econ.k_assets
    a = MarketAction(
        consumptions=s.endowments.copy(),
        portfolios=np.zeros((econ.n_consumers, k)),
        prices=np.ones(m) / m,
        asset_prices=np.zeros(k),
    )
    return s, a


def test_zero_consumption_gives_zero_linear_reward(toy_single_step):
    econ, spec, scheme = toy_single_step
    s, a = balanced_action(econ)
    a.consumptions[:] = 0.0
    r = reward(spec, s.pack(), a.to_profile())
    assert np.allclose(r[:econ.n_consumers], 0.0)


def test_autarky_balances_auctioneer_reward(toy_single_step):
    econ, spec, scheme = toy_single_step
    s, a = balanced_action(econ)
    r = reward(spec, s.pack(), a.to_profile())
    assert abs(r[-1]) < 1e-12


def test_linear_reward_hand_value(toy_single_step):
    econ, spec, scheme = toy_single_step
    s, a = balanced_action(econ)
    a.consumptions[0] = [0.3, 0.4]
    tau = s.types[0]
    r = reward(spec, s.pack(), a.to_profile())
    assert np.isclose(r[0], 0.3 * tau[0] + 0.4 * tau[1])


def test_budget_constraint_binding_and_slack(toy_single_step):
    econ, spec, scheme = toy_single_step
    s, a = balanced_action(econ)
    vals = constraint_values(spec, s.pack(), a.to_profile())
    # budget slack with x = e: e.p - e.p = 0 (binding)
    assert abs(vals[0][0]) < 1e-12
    a.consumptions[:] = 0.0
    vals = constraint_values(spec, s.pack(), a.to_profile())
    assert vals[0][0] > 0  # e.p > 0 slack


def test_infeasible_bundle_detected(toy_single_step):
    econ, spec, scheme = toy_single_step
    s, a = balanced_action(econ)
    a.consumptions = 3.0 * s.endowments  # costs 3x the endowment value
    vals = constraint_values(spec, s.pack(), a.to_profile())
    assert vals[0][0] < 0
    assert not is_feasible(spec, s.pack(), a.to_profile())


def test_is_feasible_projected_output(desk_linear_det, rng):
    econ, spec, scheme = desk_linear_det
    theta = rng.uniform(-2, 2, scheme.n_theta)
    s = spec.init_sampler(rng, 1)
    acts = [ad.value_of(a)[0] for a in scheme.profile(theta, s)]
    assert is_feasible(spec, s[0], acts, tol=1e-9)


def test_is_feasible_empty_constraints():
    spec = pg.PseudoGameSpec(
        n_players=1, state_dim=1, action_dims=(1,),
        reward_fn=lambda s, a: ad.mul(a[0], 0.0),
        constraint_fn=lambda s, a: [np.zeros((ad.value_of(s).shape[0], 0))],
        transition=TransitionModel(
            "deterministic", lambda s, a, sh: s, lambda rng, size: np.zeros((size, 0)), 0
        ),
        discount=0.9,
        init_sampler=lambda rng, size: np.zeros((size, 1)),
        action_lows=(np.array([0.0]),),
        action_highs=(np.array([1.0]),),
        reward_bound=1.0,
    )
    assert is_feasible(spec, np.zeros(1), [np.array([0.5])])


def test_sample_initial_dirac_and_determinism(toy_single_step):
    econ, spec, scheme = toy_single_step
    s1 = sample_initial(spec, np.random.default_rng(5))
    s2 = sample_initial(spec, np.random.default_rng(9))
    assert np.array_equal(s1, s2)  # Dirac initial distribution
    assert np.array_equal(s1, econ.init_state.pack())


def test_sample_initial_column_sums(desk_linear_stoch):
    econ, spec, scheme = desk_linear_stoch
    # the underlying distribution: endowment columns normalized to sum 1
    rng = np.random.default_rng(3)
    states = spec.init_sampler(rng, 64)
    e = states[:, 1:1 + econ.n_consumers * econ.m_commodities].reshape(
        -1, econ.n_consumers, econ.m_commodities
    )
    assert np.allclose(e.sum(axis=1), 1.0, atol=1e-12)
    tau = states[:, 1 + econ.n_consumers * econ.m_commodities:]
    assert tau.min() >= 1.0 and tau.max() <= 5.0
    s_again = spec.init_sampler(np.random.default_rng(3), 64)
    assert np.array_equal(states, s_again)


def test_step_deterministic_reset(desk_linear_det, rng):
    econ, spec, scheme = desk_linear_det
    s, a = balanced_action(
        pg.sample_random_economy(
            pg.EconomyConfig(utility="linear", transition="deterministic",
                             init_mode="dirac"),
            np.random.default_rng(0),
        )
    )
    s0 = spec.init_sampler(rng, 1)[0]
    st = EconomyState.unpack(s0, econ.n_consumers, econ.m_commodities)
    act = MarketAction(
        consumptions=st.endowments.copy(),
        portfolios=np.zeros((econ.n_consumers, econ.k_assets)),
        prices=np.ones(econ.m_commodities) / econ.m_commodities,
        asset_prices=np.zeros(econ.k_assets),
    )
    nxt = step(spec, s0, act.to_profile(), rng)
    ns = EconomyState.unpack(nxt, econ.n_consumers, econ.m_commodities)
    assert ns.omega == 0
    assert np.allclose(ns.endowments, 0.01)  # b = 0: pure reset
    assert np.allclose(ns.types, st.types)   # types carry over


def test_step_portfolio_adds_return_row(desk_linear_det, rng):
    econ, spec, scheme = desk_linear_det
    s0 = spec.init_sampler(rng, 1)[0]
    st = EconomyState.unpack(s0, econ.n_consumers, econ.m_commodities)
    act = MarketAction(
        consumptions=st.endowments * 0.5,
        portfolios=np.zeros((econ.n_consumers, econ.k_assets)),
        prices=np.ones(econ.m_commodities) / econ.m_commodities,
        asset_prices=np.zeros(econ.k_assets),
    )
    act.portfolios[1, 0] = 1.0  # consumer 1 holds one unit of the asset
    nxt = step(spec, s0, act.to_profile(), rng)
    ns = EconomyState.unpack(nxt, econ.n_consumers, econ.m_commodities)
    expected = 0.01 + econ.returns[ns.omega][0]
    assert np.allclose(ns.endowments[1], expected)
    assert np.allclose(ns.endowments[0], 0.01)


def test_step_stochastic_ranges(desk_linear_stoch):
    econ, spec, scheme = desk_linear_stoch
    rng = np.random.default_rng(4)
    s0 = spec.init_sampler(rng, 1)[0]
    st = EconomyState.unpack(s0, econ.n_consumers, econ.m_commodities)
    act = MarketAction(
        consumptions=st.endowments * 0.0,
        portfolios=np.zeros((econ.n_consumers, econ.k_assets)),
        prices=np.ones(econ.m_commodities) / econ.m_commodities,
        asset_prices=np.zeros(econ.k_assets),
    )
    omegas = set()
    for _ in range(64):
        ns = EconomyState.unpack(
            step(spec, s0, act.to_profile(), rng), econ.n_consumers, econ.m_commodities
        )
        omegas.add(ns.omega)
        assert np.all(ns.endowments >= 0.012 - 1e-12)
        assert np.all(ns.endowments <= 0.102 + 1e-12)
    assert omegas == set(range(econ.n_world_states))
    # determinism under equal seeds
    a1 = step(spec, s0, act.to_profile(), np.random.default_rng(7))
    a2 = step(spec, s0, act.to_profile(), np.random.default_rng(7))
    assert np.array_equal(a1, a2)


def test_dimension_mismatch_raises(toy_single_step):
    econ, spec, scheme = toy_single_step
    s, a = balanced_action(econ)
    prof = a.to_profile()
    with pytest.raises(SpecificationError):
        reward(spec, s.pack(), prof[:-1])
    bad = [np.zeros(5)] + prof[1:]
    with pytest.raises(SpecificationError):
        reward(spec, s.pack(), bad)


def test_unsupported_transition_kind_rejected():
    with pytest.raises(UnsupportedModelError):
        TransitionModel("density", lambda s, a, sh: s,
                        lambda rng, size: np.zeros((size, 0)), 0)


def test_history_length_validation():
    with pytest.raises(SpecificationError):
        History(states=np.zeros((3, 2)), actions=[[np.zeros(1)]],
                rewards=np.zeros((2, 1)), discount_weights=np.ones(2))


def test_own_action_concavity_spot_check(desk_linear_det):
    """Constraint functions are concave in the own action along random
    segments inside a player's box (linear here, so equality holds)."""
    econ, spec, scheme = desk_linear_det
    rng = np.random.default_rng(11)
    s = spec.init_sampler(rng, 1)
    theta = rng.uniform(-1, 1, scheme.n_theta)
    base = [ad.value_of(a) for a in scheme.profile(theta, s)]
    i = 0
    lo, hi = spec.action_lows[i], spec.action_highs[i]
    for _ in range(1000):
        a1 = rng.uniform(lo, hi)[None, :]
        a2 = rng.uniform(lo, hi)[None, :]
        lam = rng.uniform()
        mid = lam * a1 + (1 - lam) * a2
        def g_of(ai):
            prof = list(base)
            prof[i] = ai
            return spec.constraint_fn(s, prof)[i][0]
        g_mid = g_of(mid)
        chord = lam * g_of(a1) + (1 - lam) * g_of(a2)
        assert np.all(g_mid >= chord - 1e-8)
