"""Markov exchange economies and their compilation to pseudo-games.

An infinite-horizon Markov exchange economy has ``n`` consumers trading ``m``
commodities and ``k`` short-lived assets across world states. Compiling it to
a pseudo-game adds an auctioneer player that prices commodities on the
simplex and assets in a box, rewarded by the value of excess demand; each
consumer's feasible set couples its budget constraint with the shared
aggregate-feasibility constraints.

States pack as ``[world_state, endowments.ravel(), types.ravel()]``.
Players 0..n-1 are consumers with actions ``[consumption, portfolio]``;
player n is the auctioneer with action ``[prices, asset_prices]``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from . import projections as proj
from .game import PseudoGameSpec, SpecificationError, TransitionModel
from .policies import INIT_SCALE, Architecture

log = logging.getLogger(__name__)

UTILITY_KINDS = ("linear", "cobb-douglas", "leontief")
RETURN_LOW, RETURN_HIGH = 0.5, 1.1
ENDOW_INIT_LOW, ENDOW_INIT_HIGH = 0.01, 0.1
TYPE_LOW, TYPE_HIGH = 1.0, 5.0
DET_RESET_ENDOWMENT = 0.01
STOCH_ENDOW_OFFSET = 0.002
TAU_FEATURE_SCALE = 5.0


@dataclass(frozen=True)
class UtilityFamily:
    """Consumer reward family; Leontief carries its softmin temperature."""

    kind: str
    leontief_eps: float = 0.05
    cd_floor: float = 1e-8

    def __post_init__(self):
        if self.kind not in UTILITY_KINDS:
            raise SpecificationError(f"unknown utility kind {self.kind!r}")
        if self.kind == "leontief" and self.leontief_eps <= 0:
            raise SpecificationError("leontief smoothing must be positive")


def utility(x, tau, fam: UtilityFamily, smooth: bool = True):
    """Type-dependent utility of a bundle; batched over leading axes.

    Cobb-Douglas exponents are normalized to sum one (the degree-one
    representation of the same preferences), which keeps the function
    concave for any positive types; raw exponents in [1, 5] would make the
    product convex. The smooth variant (softmin Leontief, floored
    Cobb-Douglas) is the one the compiled game uses as reward;
    ``smooth=False`` evaluates the exact Leontief min for reporting.
    """
    xv = ad.value_of(x)
    if np.any(xv < -1e-12):
        log.warning("utility() clamping %d negative bundle entries", int((xv < -1e-12).sum()))
    if fam.kind == "linear":
        return ad.sum_(ad.mul(tau, x), axis=-1)
    if fam.kind == "cobb-douglas":
        w = np.asarray(tau, dtype=np.float64)
        w = w / w.sum(axis=-1, keepdims=True)
        xc = ad.maximum_const(x, fam.cd_floor)
        return ad.exp(ad.sum_(ad.mul(w, ad.log(xc)), axis=-1))
    z = ad.div(x, tau)
    if not smooth:
        return np.min(ad.value_of(z), axis=-1)
    eps = fam.leontief_eps
    return ad.neg(ad.mul(eps, ad.logsumexp(ad.div(ad.neg(z), eps), axis=-1)))


def utility_gradient(x, tau, fam: UtilityFamily):
    """Closed-form bundle gradient of the (smooth) utility, tape-composable."""
    if fam.kind == "linear":
        return ad.mul(tau, ad.add(ad.mul(x, 0.0), 1.0))
    if fam.kind == "cobb-douglas":
        w = np.asarray(tau, dtype=np.float64)
        w = w / w.sum(axis=-1, keepdims=True)
        xc = ad.maximum_const(x, fam.cd_floor)
        u = ad.exp(ad.sum_(ad.mul(w, ad.log(xc)), axis=-1, keepdims=True))
        mask = (ad.value_of(x) > fam.cd_floor).astype(np.float64)
        return ad.mul(mask, ad.mul(u, ad.div(w, xc)))
    eps = fam.leontief_eps
    w = ad.softmax(ad.div(ad.neg(ad.div(x, tau)), eps), axis=-1)
    return ad.div(w, tau)


@dataclass
class EconomyState:
    """One spot market: world state index, endowment and type matrices."""

    omega: int
    endowments: np.ndarray  # (n, m)
    types: np.ndarray       # (n, m)

    def pack(self):
        return np.concatenate(
            [[float(self.omega)], self.endowments.ravel(), self.types.ravel()]
        )

    @classmethod
    def unpack(cls, vec, n, m):
        vec = np.asarray(vec, dtype=np.float64)
        return cls(
            omega=int(round(vec[0])),
            endowments=vec[1:1 + n * m].reshape(n, m).copy(),
            types=vec[1 + n * m:1 + 2 * n * m].reshape(n, m).copy(),
        )


@dataclass
class MarketAction:
    """A full action profile in economy coordinates."""

    consumptions: np.ndarray  # (n, m)
    portfolios: np.ndarray    # (n, k)
    prices: np.ndarray        # (m,)
    asset_prices: np.ndarray  # (k,)

    @classmethod
    def from_profile(cls, econ, actions):
        n, m, k = econ.n_consumers, econ.m_commodities, econ.k_assets
        X = np.stack([np.asarray(actions[i][:m]) for i in range(n)])
        B = np.stack([np.asarray(actions[i][m:m + k]) for i in range(n)])
        return cls(X, B, np.asarray(actions[n][:m]), np.asarray(actions[n][m:m + k]))

    def to_profile(self):
        acts = [
            np.concatenate([self.consumptions[i], self.portfolios[i]])
            for i in range(self.consumptions.shape[0])
        ]
        acts.append(np.concatenate([self.prices, self.asset_prices]))
        return acts


@dataclass(frozen=True)
class MarkovExchangeEconomy:
    """Economy primitives plus the compact spaces derived from them."""

    n_consumers: int
    m_commodities: int
    k_assets: int
    n_world_states: int
    returns: np.ndarray             # (W, k, m)
    utility: UtilityFamily
    discount: float
    transition_kind: str            # "deterministic" | "stochastic"
    init_mode: str = "resample"     # "resample" | "dirac"
    init_state: EconomyState | None = None
    spot_market_cardinality: int | None = None
    economy_id: str = "economy"

    def __post_init__(self):
        if self.n_world_states < 1:
            raise SpecificationError("need at least one world state")
        if np.asarray(self.returns).shape != (
            self.n_world_states, self.k_assets, self.m_commodities
        ):
            raise SpecificationError("returns must have shape (W, k, m)")
        if not np.all(np.isfinite(self.returns)):
            raise SpecificationError("return matrices must be finite")
        if self.transition_kind not in ("deterministic", "stochastic"):
            raise SpecificationError(f"unknown transition kind {self.transition_kind!r}")
        if self.init_mode == "dirac" and self.init_state is None:
            raise SpecificationError("dirac initial mode needs an initial state")

    # -- derived compact spaces -------------------------------------------
    @property
    def base_endow_low(self):
        return DET_RESET_ENDOWMENT if self.transition_kind == "deterministic" \
            else STOCH_ENDOW_OFFSET + ENDOW_INIT_LOW

    @property
    def return_max(self):
        return float(np.max(np.abs(self.returns))) if self.returns.size else 0.0

    @property
    def b_max(self):
        """Portfolio box half-width, sized so endowments stay positive even
        at the most extreme feasible short positions (interior budget sets)."""
        if self.k_assets == 0:
            return 0.0
        worst = (self.n_consumers + 2) * max(self.return_max, 1e-12) * self.k_assets
        return 0.9 * self.base_endow_low / worst

    @property
    def portfolio_pad(self):
        """Ambient portfolio box is [-pad, b_max]; the net-asset clearing
        shift can push below -b_max by at most (n+1)*b_max."""
        return (self.n_consumers + 2) * self.b_max

    @property
    def endow_entry_high(self):
        # init columns normalize to 1, so single entries are bounded by 1
        post = ENDOW_INIT_HIGH + STOCH_ENDOW_OFFSET \
            + self.n_consumers * self.b_max * self.return_max * self.k_assets
        return max(1.0, post)

    @property
    def supply_max(self):
        per_entry = ENDOW_INIT_HIGH + STOCH_ENDOW_OFFSET
        post = self.n_consumers * (per_entry + self.b_max * self.return_max * self.k_assets)
        return max(1.0, post)

    @property
    def demand_box_scale(self):
        """Raw consumption demands are sigmoid fractions of this multiple of
        the current aggregate supply, so saturating demand at any state is
        representable regardless of the state's scale."""
        return 1.2

    @property
    def x_max(self):
        return np.full(
            self.m_commodities,
            1.05 * self.demand_box_scale * self.n_consumers * self.supply_max,
        )

    @property
    def q_max(self):
        return self.n_consumers * self.m_commodities * self.endow_entry_high

    @property
    def state_dim(self):
        return 1 + 2 * self.n_consumers * self.m_commodities

    @property
    def n_players(self):
        return self.n_consumers + 1

    @property
    def action_dim(self):
        return self.m_commodities + self.k_assets

    def reward_bound(self):
        n, m = self.n_consumers, self.m_commodities
        xm = float(self.x_max[0])
        if self.utility.kind == "linear":
            cons = TYPE_HIGH * m * xm
        elif self.utility.kind == "cobb-douglas":
            cons = max(1.0, xm ** (TYPE_HIGH * m))
        else:
            cons = xm / TYPE_LOW
        auc = m * xm + n * m * self.endow_entry_high \
            + self.q_max * n * self.k_assets * max(self.b_max, self.portfolio_pad)
        return float(max(cons, auc)) + 1.0


# ---------------------------------------------------------------------------
# economy-level operations


def budget_membership(x, b, p, q, e, tol=1e-9):
    """Whether (x, b) is affordable at prices (p, q) with endowment e."""
    slack = float(np.dot(e, p) - np.dot(x, p) - np.dot(b, q))
    return slack >= -tol, slack


def endowment_update(e_base, B, R):
    """Next endowments ``e_base + B @ R``; deliberately unclipped, so short
    positions may produce debt if the caller allows them."""
    e_base, B, R = (np.asarray(a, dtype=np.float64) for a in (e_base, B, R))
    if B.shape[1] != R.shape[0] or e_base.shape != (B.shape[0], R.shape[1]):
        raise SpecificationError("endowment update shapes are inconsistent")
    return e_base + B @ R


def walras_residual(s: EconomyState, a: MarketAction):
    """p . (aggregate demand - aggregate supply) + q . net asset demand."""
    z = a.consumptions.sum(axis=0) - s.endowments.sum(axis=0)
    return float(np.dot(a.prices, z) + np.dot(a.asset_prices, a.portfolios.sum(axis=0)))


def feasibility_residual(s: EconomyState, a: MarketAction):
    """Positive entries measure violation of commodity / asset feasibility."""
    commodity = a.consumptions.sum(axis=0) - s.endowments.sum(axis=0)
    asset = a.portfolios.sum(axis=0)
    return commodity, asset


# ---------------------------------------------------------------------------
# parameterization scheme with the coupled feasibility pipeline


class EconomyScheme:
    """Policy heads plus the shared smooth projection pipeline.

    The auctioneer prices first (softmax simplex prices, scaled-sigmoid
    asset prices, from state features alone). Consumer heads then see the
    state features plus the prices and their own price-deflated types
    (tau_i / (price + floor), the bang-per-buck signal) before the box maps,
    the shared aggregate-demand scale, the per-consumer budget scale, and
    the exact net-asset clearing shift. Adversary heads see
    ``[features, a_-i]`` (plus bang-per-buck for consumers) and project onto
    the deviator's feasible set given the others' actions.
    """

    PRICE_FLOOR = 0.05

    def __init__(self, econ: MarkovExchangeEconomy, kind="affine", hidden=()):
        self.econ = econ
        self.kind = kind
        self.hidden = tuple(hidden)
        n, m, k, W = econ.n_consumers, econ.m_commodities, econ.k_assets, econ.n_world_states
        self.n_feat = 1 + W + 2 * n * m
        out = m + k
        self.bang_scale = TYPE_HIGH * m
        cons_feat = self.n_feat + 2 * m + k     # [f, p, q/q_max, bang]
        self.gen_archs = [
            Architecture(kind, cons_feat, out, self.hidden) for _ in range(n)
        ] + [Architecture(kind, self.n_feat, out, self.hidden)]
        dev_feat = self.n_feat + n * out
        self.dev_archs = [
            Architecture(kind, dev_feat + m, out, self.hidden) for _ in range(n)
        ] + [Architecture(kind, dev_feat, out, self.hidden)]
        self._gen_off = np.cumsum([0] + [a.n_params for a in self.gen_archs])
        self._dev_off = np.cumsum([0] + [a.n_params for a in self.dev_archs])
        self.n_theta = int(self._gen_off[-1])
        self.n_phi = int(self._dev_off[-1])

    def _bang(self, tau_i, p):
        return ad.div(tau_i, ad.mul(self.bang_scale, ad.add(p, self.PRICE_FLOOR)))

    def descriptor(self):
        return {
            "family": "economy",
            "kind": self.kind,
            "hidden": list(self.hidden),
            "n_consumers": self.econ.n_consumers,
            "m_commodities": self.econ.m_commodities,
            "k_assets": self.econ.k_assets,
            "n_world_states": self.econ.n_world_states,
        }

    def init_theta(self, rng):
        return rng.uniform(-INIT_SCALE, INIT_SCALE, self.n_theta)

    def init_phi(self, rng):
        return rng.uniform(-INIT_SCALE, INIT_SCALE, self.n_phi)

    # -- shared pieces ------------------------------------------------------
    def features(self, s):
        econ = self.econ
        nm = econ.n_consumers * econ.m_commodities
        vals = ad.value_of(s)
        B = vals.shape[0]
        omega = np.clip(vals[:, 0].astype(int), 0, econ.n_world_states - 1)
        onehot = np.eye(econ.n_world_states)[omega]
        tau_part = vals[:, 1 + nm:] / TAU_FEATURE_SCALE
        return ad.concat([np.ones((B, 1)), onehot, s[:, 1:1 + nm], tau_part], axis=1)

    def _head(self, params, offsets, archs, i, feats):
        sl = slice(int(offsets[i]), int(offsets[i + 1]))
        return archs[i].forward(params[sl], feats)

    def profile(self, theta, s):
        econ = self.econ
        n, m, k = econ.n_consumers, econ.m_commodities, econ.k_assets
        nm = n * m
        vals = ad.value_of(s)
        B = vals.shape[0]
        f = self.features(s)
        e = ad.reshape(s[:, 1:1 + nm], (B, n, m))

        raw_auc = self._head(theta, self._gen_off, self.gen_archs, n, f)
        p = ad.softmax(raw_auc[:, :m], axis=-1)
        sig_q = ad.sigmoid(raw_auc[:, m:])
        q = ad.mul(econ.q_max, sig_q)

        vals_tau = vals[:, 1 + nm:].reshape(B, n, m)
        supply = ad.sum_(e, axis=1)
        wealth = [
            ad.maximum_const(ad.dot_last(e[:, i, :], p), 0.0) for i in range(n)
        ]
        total_wealth = wealth[0]
        for i in range(1, n):
            total_wealth = ad.add(total_wealth, wealth[i])
        total_wealth = ad.maximum_const(total_wealth, 1e-12)

        # per-consumer demand box: c * n * (wealth share) * aggregate supply,
        # so both market scale and affordability are baked into the box
        xt, bt = [], []
        for i in range(n):
            fc = ad.concat([f, p, sig_q, self._bang(vals_tau[:, i, :], p)], axis=1)
            raw = self._head(theta, self._gen_off, self.gen_archs, i, fc)
            share = ad.reshape(ad.div(wealth[i], total_wealth), (B, 1))
            box = ad.mul(ad.mul(econ.demand_box_scale * n, share), supply)
            xt.append(ad.mul(box, ad.sigmoid(raw[:, :m])))
            bt.append(ad.mul(econ.b_max, ad.tanh(raw[:, m:])))

        total_x = xt[0]
        for i in range(1, n):
            total_x = ad.add(total_x, xt[i])
        beta = proj.aggregate_scale(total_x, supply)

        scaled_b = []
        consumers = []
        for i in range(n):
            xh = ad.mul(beta, xt[i])
            cost = ad.add(ad.dot_last(xh, p), ad.dot_last(bt[i], q))
            alpha = proj.smooth_min1(ad.div(wealth[i], proj.smooth_pos(cost)))
            alpha = ad.reshape(alpha, (B, 1))
            consumers.append(ad.mul(alpha, xh))
            scaled_b.append(ad.mul(alpha, bt[i]))

        if k:
            total_b = scaled_b[0]
            for i in range(1, n):
                total_b = ad.add(total_b, scaled_b[i])
            shift = ad.div(proj.excess_shift(total_b), float(n))
            actions = [
                ad.concat([consumers[i], ad.sub(scaled_b[i], shift)], axis=1)
                for i in range(n)
            ]
        else:
            actions = [ad.concat([consumers[i], scaled_b[i]], axis=1) for i in range(n)]
        actions.append(ad.concat([p, q], axis=1))
        return actions

    def deviation_action(self, phi, i, s, a_others):
        """rho_i(s, a_-i; phi): feasible given the fixed profile a_others."""
        econ = self.econ
        n, m, k = econ.n_consumers, econ.m_commodities, econ.k_assets
        nm = n * m
        vals = ad.value_of(s)
        B = vals.shape[0]
        f = self.features(s)
        rest = [a_others[j] for j in range(n + 1) if j != i]
        if i < n:
            tau_i = vals[:, 1 + nm:].reshape(B, n, m)[:, i, :]
            rest = rest + [self._bang(tau_i, a_others[n][:, :m])]
        feats = ad.concat([f] + rest, axis=1)
        raw = self._head(phi, self._dev_off, self.dev_archs, i, feats)

        if i == n:  # auctioneer: feasible set is its whole price space
            p = ad.softmax(raw[:, :m], axis=-1)
            q = ad.mul(econ.q_max, ad.sigmoid(raw[:, m:]))
            return ad.concat([p, q], axis=1)

        e = ad.reshape(s[:, 1:1 + nm], (B, n, m))
        p = a_others[n][:, :m]
        q = a_others[n][:, m:]
        bt = ad.mul(econ.b_max, ad.tanh(raw[:, m:]))

        others_x = None
        for l in range(n):
            if l == i:
                continue
            xl = a_others[l][:, :m]
            others_x = xl if others_x is None else ad.add(others_x, xl)
        supply = ad.sum_(e, axis=1)
        resid = ad.maximum_const(ad.sub(supply, others_x), 0.0)
        xt = ad.mul(ad.mul(econ.demand_box_scale, resid), ad.sigmoid(raw[:, :m]))
        beta = proj.smooth_min1(ad.div(resid, proj.smooth_pos(xt)))
        xh = ad.mul(beta, xt)

        wealth = ad.maximum_const(ad.dot_last(e[:, i, :], p), 0.0)
        cost = ad.add(ad.dot_last(xh, p), ad.dot_last(bt, q))
        alpha = ad.reshape(
            proj.smooth_min1(ad.div(wealth, proj.smooth_pos(cost))), (B, 1)
        )
        x_i = ad.mul(alpha, xh)
        bh = ad.mul(alpha, bt)

        if k:
            others_b = None
            for l in range(n):
                if l == i:
                    continue
                bl = a_others[l][:, m:]
                others_b = bl if others_b is None else ad.add(others_b, bl)
            cap = ad.neg(others_b)
            bh = ad.sub(bh, proj.excess_shift(ad.sub(bh, cap)))
        return ad.concat([x_i, bh], axis=1)

    def deviation_profile(self, theta, phi, i, s):
        base = self.profile(theta, s)
        out = list(base)
        out[i] = self.deviation_action(phi, i, s, base)
        return out


# ---------------------------------------------------------------------------
# compilation to a pseudo-game


def build_pseudo_game(econ: MarkovExchangeEconomy) -> PseudoGameSpec:
    """Compile the economy into its pseudo-game: n consumers plus one
    auctioneer pricing on the simplex, coupled through budget and
    aggregate-feasibility constraints, with the endowment-update transition."""
    n, m, k, W = econ.n_consumers, econ.m_commodities, econ.k_assets, econ.n_world_states
    nm = n * m
    returns = np.asarray(econ.returns, dtype=np.float64)

    def reward_fn(s, actions):
        vals = ad.value_of(s)
        B = vals.shape[0]
        tau = vals[:, 1 + nm:].reshape(B, n, m)
        e = ad.reshape(s[:, 1:1 + nm], (B, n, m))
        p = actions[n][:, :m]
        q = actions[n][:, m:]
        outs = []
        for i in range(n):
            outs.append(utility(actions[i][:, :m], tau[:, i, :], econ.utility))
        z = None
        tb = None
        for i in range(n):
            xi = actions[i][:, :m]
            z = xi if z is None else ad.add(z, xi)
            bi = actions[i][:, m:]
            tb = bi if tb is None else ad.add(tb, bi)
        z = ad.sub(z, ad.sum_(e, axis=1))
        outs.append(ad.add(ad.dot_last(p, z), ad.dot_last(q, tb)))
        return ad.stack(outs, axis=1)

    def constraint_fn(s, actions):
        vals = ad.value_of(s)
        B = vals.shape[0]
        e = ad.reshape(s[:, 1:1 + nm], (B, n, m))
        p = actions[n][:, :m]
        q = actions[n][:, m:]
        supply = ad.sum_(e, axis=1)
        total_x = None
        total_b = None
        for i in range(n):
            xi = actions[i][:, :m]
            bi = actions[i][:, m:]
            total_x = xi if total_x is None else ad.add(total_x, xi)
            total_b = bi if total_b is None else ad.add(total_b, bi)
        commodity = ad.sub(supply, total_x)          # >= 0 when feasible
        asset = ad.neg(total_b)                      # >= 0 when feasible
        per_player = []
        for i in range(n):
            wealth = ad.dot_last(e[:, i, :], p)
            cost = ad.add(
                ad.dot_last(actions[i][:, :m], p), ad.dot_last(actions[i][:, m:], q)
            )
            budget = ad.reshape(ad.sub(wealth, cost), (B, 1))
            per_player.append(ad.concat([budget, commodity, asset], axis=1))
        per_player.append(np.zeros((B, 0)))
        return per_player

    def next_state(s, actions, shock):
        vals = ad.value_of(s)
        B = vals.shape[0]
        shock = np.asarray(shock, dtype=np.float64)
        omega_next = shock[:, 0]
        e_base = shock[:, 1:].reshape(B, n, m)
        if k:
            bmat = ad.stack([actions[i][:, m:] for i in range(n)], axis=1)  # (B,n,k)
            r_sel = returns[omega_next.astype(int)]                          # (B,k,m)
            e_next = ad.add(e_base, ad.matmul(bmat, r_sel))
        else:
            e_next = e_base
        return ad.concat(
            [omega_next[:, None], ad.reshape(e_next, (B, nm)), s[:, 1 + nm:]], axis=1
        )

    if econ.transition_kind == "deterministic":
        def sample_shock(rng, size):
            out = np.zeros((size, 1 + nm))
            out[:, 1:] = DET_RESET_ENDOWMENT
            return out

        kind = "deterministic"
    else:
        def sample_shock(rng, size):
            out = np.empty((size, 1 + nm))
            out[:, 0] = rng.integers(0, W, size=size)
            out[:, 1:] = STOCH_ENDOW_OFFSET + rng.uniform(
                ENDOW_INIT_LOW, ENDOW_INIT_HIGH, size=(size, nm)
            )
            return out

        kind = "exogenous-shock"

    def init_sampler(rng, size):
        if econ.init_mode == "dirac":
            return np.tile(econ.init_state.pack(), (size, 1))
        e0 = rng.uniform(ENDOW_INIT_LOW, ENDOW_INIT_HIGH, size=(size, n, m))
        e0 = e0 / e0.sum(axis=1, keepdims=True)
        tau0 = rng.uniform(TYPE_LOW, TYPE_HIGH, size=(size, n, m))
        out = np.zeros((size, 1 + 2 * nm))
        out[:, 1:1 + nm] = e0.reshape(size, nm)
        out[:, 1 + nm:] = tau0.reshape(size, nm)
        return out

    dims = tuple([m + k] * n + [m + k])
    lows, highs = [], []
    for _ in range(n):
        lows.append(np.concatenate([np.zeros(m), -econ.portfolio_pad * np.ones(k)]))
        highs.append(np.concatenate([econ.x_max, econ.b_max * np.ones(k)]))
    lows.append(np.zeros(m + k))
    highs.append(np.concatenate([np.ones(m), econ.q_max * np.ones(k)]))

    return PseudoGameSpec(
        n_players=n + 1,
        state_dim=econ.state_dim,
        action_dims=dims,
        reward_fn=reward_fn,
        constraint_fn=constraint_fn,
        transition=TransitionModel(kind, next_state, sample_shock, 1 + nm),
        discount=econ.discount,
        init_sampler=init_sampler,
        action_lows=tuple(lows),
        action_highs=tuple(highs),
        reward_bound=econ.reward_bound(),
        structure=econ,
    )


# ---------------------------------------------------------------------------
# instance generation and classification


@dataclass(frozen=True)
class EconomyConfig:
    """Knobs for random economy generation."""

    n_consumers: int = 3
    m_commodities: int = 3
    k_assets: int = 1
    n_world_states: int = 2
    utility: str = "linear"
    transition: str = "deterministic"
    discount: float = 0.9
    horizon: int = 10
    leontief_eps: float = 0.05
    init_mode: str = "dirac"
    economy_id: str = "economy"


def sample_random_economy(cfg: EconomyConfig, rng: np.random.Generator):
    """Draw an economy instance: returns ~ Unif[0.5, 1.1]; initial endowments
    Unif[0.01, 0.1] normalized so each commodity's total is 1; types
    Unif[1, 5]."""
    W, k, m, n = cfg.n_world_states, cfg.k_assets, cfg.m_commodities, cfg.n_consumers
    returns = rng.uniform(RETURN_LOW, RETURN_HIGH, size=(W, k, m))
    init_state = None
    if cfg.init_mode == "dirac":
        e0 = rng.uniform(ENDOW_INIT_LOW, ENDOW_INIT_HIGH, size=(n, m))
        e0 = e0 / e0.sum(axis=0, keepdims=True)
        tau0 = rng.uniform(TYPE_LOW, TYPE_HIGH, size=(n, m))
        init_state = EconomyState(0, e0, tau0)
    econ = MarkovExchangeEconomy(
        n_consumers=n,
        m_commodities=m,
        k_assets=k,
        n_world_states=W,
        returns=returns,
        utility=UtilityFamily(cfg.utility, leontief_eps=cfg.leontief_eps),
        discount=cfg.discount,
        transition_kind=cfg.transition,
        init_mode=cfg.init_mode,
        init_state=init_state,
        economy_id=cfg.economy_id,
    )
    # interiority conditions of the generated family: positive returns and
    # endowments that stay strictly positive under any in-box portfolio
    if k:
        assert np.all(returns > 0)
        assert econ.base_endow_low - econ.portfolio_pad * econ.return_max * k > 0
    return econ


@dataclass(frozen=True)
class CompletenessReport:
    label: str
    financial_assets: bool
    world_state_contingent: bool
    min_rank: int
    max_rank: int


def classify_completeness(econ: MarkovExchangeEconomy) -> CompletenessReport:
    """Asset-market classification from return-matrix ranks and the
    world-state/spot-market cardinality comparison."""
    ranks = [
        int(np.linalg.matrix_rank(econ.returns[w])) if econ.returns[w].size else 0
        for w in range(econ.n_world_states)
    ]
    min_rank, max_rank = (min(ranks), max(ranks)) if ranks else (0, 0)
    wsc = (
        econ.spot_market_cardinality is not None
        and econ.n_world_states >= econ.spot_market_cardinality
    )
    financial = max_rank == 1 and all(r <= 1 for r in ranks)
    if wsc and min_rank >= 1:
        label = "complete"
    elif financial:
        label = "financial-assets"
    elif wsc:
        label = "world-state-contingent"
    else:
        label = "incomplete"
    return CompletenessReport(label, financial, wsc, min_rank, max_rank)


@dataclass
class ConcavityReport:
    worst_violation: float
    worst_stderr: float
    n_probes: int


def check_stochastic_concavity(econ, n_probes, rng, transition=None, n_shocks=16):
    """Monte-Carlo spot check of stochastic concavity of the transition in
    the portfolio profile.

    Samples concave test functions (minima of random affine forms on the
    next endowments), portfolio pairs and mixtures, and reports the worst
    estimated violation of the concavity inequality. Heuristic: a validator,
    not a proof. ``transition`` overrides the endowment map for adversarial
    tests; signature ``(B_profile, R_selected, e_base) -> e_next``.
    """
    if n_probes < 1:
        raise SpecificationError("need at least one probe")
    n, m, k, W = econ.n_consumers, econ.m_commodities, econ.k_assets, econ.n_world_states
    spec = build_pseudo_game(econ)
    worst = -np.inf
    worst_se = 0.0
    for _ in range(n_probes):
        lam = rng.uniform(0.2, 0.8)
        b1 = rng.uniform(-econ.b_max, econ.b_max, size=(n, k))
        b2 = rng.uniform(-econ.b_max, econ.b_max, size=(n, k))
        bm = lam * b1 + (1 - lam) * b2
        n_aff = 3
        C = rng.normal(size=(n_aff, n * m)) / (n * m)
        d = rng.normal(size=n_aff)
        shocks = spec.transition.sample_shock(rng, n_shocks)
        omega = shocks[:, 0].astype(int)
        e_base = shocks[:, 1:].reshape(n_shocks, n, m)
        r_sel = econ.returns[omega]

        def g_of(bmat):
            if transition is not None:
                e_next = transition(bmat, r_sel, e_base)
            else:
                e_next = e_base + np.matmul(np.broadcast_to(bmat, (n_shocks, n, k)), r_sel)
            vals = e_next.reshape(n_shocks, -1) @ C.T + d
            return vals.min(axis=1)

        g1, g2, gm = g_of(b1), g_of(b2), g_of(bm)
        per_sample = lam * g1 + (1 - lam) * g2 - gm
        viol = float(per_sample.mean())
        if viol > worst:
            worst = viol
            worst_se = float(per_sample.std(ddof=1) / math.sqrt(n_shocks)) if n_shocks > 1 else 0.0
    return ConcavityReport(worst, worst_se, n_probes)


# ---------------------------------------------------------------------------
# serialization


def economy_to_dict(econ: MarkovExchangeEconomy) -> dict:
    d = {
        "n_consumers": econ.n_consumers,
        "m_commodities": econ.m_commodities,
        "k_assets": econ.k_assets,
        "n_world_states": econ.n_world_states,
        "returns": np.asarray(econ.returns).tolist(),
        "utility": asdict(econ.utility),
        "discount": econ.discount,
        "transition_kind": econ.transition_kind,
        "init_mode": econ.init_mode,
        "spot_market_cardinality": econ.spot_market_cardinality,
        "economy_id": econ.economy_id,
    }
    if econ.init_state is not None:
        d["init_state"] = {
            "omega": econ.init_state.omega,
            "endowments": econ.init_state.endowments.tolist(),
            "types": econ.init_state.types.tolist(),
        }
    return d


def economy_from_dict(d: dict) -> MarkovExchangeEconomy:
    init_state = None
    if d.get("init_state") is not None:
        init_state = EconomyState(
            omega=int(d["init_state"]["omega"]),
            endowments=np.asarray(d["init_state"]["endowments"], dtype=np.float64),
            types=np.asarray(d["init_state"]["types"], dtype=np.float64),
        )
    return MarkovExchangeEconomy(
        n_consumers=int(d["n_consumers"]),
        m_commodities=int(d["m_commodities"]),
        k_assets=int(d["k_assets"]),
        n_world_states=int(d["n_world_states"]),
        returns=np.asarray(d["returns"], dtype=np.float64),
        utility=UtilityFamily(**d["utility"]),
        discount=float(d["discount"]),
        transition_kind=d["transition_kind"],
        init_mode=d.get("init_mode", "resample"),
        init_state=init_state,
        spot_market_cardinality=d.get("spot_market_cardinality"),
        economy_id=d.get("economy_id", "economy"),
    )


def save_economy(econ, path):
    with open(path, "w") as fh:
        json.dump(economy_to_dict(econ), fh, indent=1, sort_keys=True)


def load_economy(path) -> MarkovExchangeEconomy:
    with open(path) as fh:
        return economy_from_dict(json.load(fh))
