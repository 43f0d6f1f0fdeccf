"""Neural projection baseline and the three evaluation metrics.

The projection method characterizes equilibrium through a functional
equation: per-player KKT stationarity of the action-value maximization at
every state, plus Bellman consistency of the value functions. Both residuals
are approximated by Monte-Carlo over initial-distribution states and
minimized jointly over the policy parameters and per-player value heads.

The exact value functions make the Bellman residual identically zero by
definition, so the implementable metric bootstraps with learned value heads:
policies that carry no value net (the min-max solver's output, random
baselines) get heads fitted by regression on Monte-Carlo returns under a
fixed budget.

Lagrange multipliers use the least-squares stationarity fit
``max(0, (p . grad_x Q + q . grad_b Q) / (p.p + q.q))`` on the active budget
constraint and are treated as stop-gradients (envelope style) inside
training objectives.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .economy import MarkovExchangeEconomy, utility_gradient
from .game import SpecificationError
from .policies import Architecture, INIT_SCALE
from .rollout import RolloutConfig, SchemePolicy, draw_shock_pack, unroll_payoffs
from .solver import (
    AdversaryEvalConfig,
    Checkpoint,
    DivergenceError,
    TrainTrace,
    _guard,
    exploitability_estimate,
)

METRICS = ("fov", "bellman", "exploitability")


@dataclass(frozen=True)
class ValueHeads:
    """One scalar value head per player on the scheme's state features."""

    n_players: int
    n_feat: int
    hidden: tuple[int, ...] = (16,)

    @property
    def arch(self):
        return Architecture("mlp" if self.hidden else "affine",
                            self.n_feat, 1, self.hidden)

    @property
    def n_params(self):
        return self.n_players * self.arch.n_params

    def init(self, rng):
        return rng.uniform(-INIT_SCALE, INIT_SCALE, self.n_params)

    def _slice(self, psi, i):
        p = self.arch.n_params
        return psi[i * p:(i + 1) * p]

    def values(self, psi, feats):
        """(B, n_players) stacked value estimates."""
        cols = [
            self.arch.forward(self._slice(psi, i), feats)[:, 0]
            for i in range(self.n_players)
        ]
        return ad.stack(cols, axis=1)

    def feature_gradient(self, psi, feats, i):
        """(B, n_feat) gradient of player i's head in its inputs."""
        return self.arch.input_gradient(self._slice(psi, i), feats)


@dataclass
class LagrangeEstimate:
    """Per-consumer budget multipliers at a batch of states."""

    lambdas: np.ndarray        # (B, n_consumers)
    stationarity_residual: float


def lagrange_closed_form(p, q, grad_x_q, grad_b_q, budget_slack,
                         active_tol=1e-6):
    """Least-squares stationarity fit of the budget multiplier.

    For rows whose budget slack is within ``active_tol * max(1, wealth-scale)``
    of binding, ``lambda = max(0, (p.grad_x Q + q.grad_b Q) / (p.p + q.q))``;
    slack rows get zero (complementary slackness). ``active_tol=None`` treats
    the budget as always active, the right reading for strictly monotone
    utilities whose best responses always exhaust the budget.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    denom = (p * p).sum(axis=-1) + (q * q).sum(axis=-1)
    if np.any(denom <= 0):
        raise SpecificationError("degenerate prices: p and q cannot both vanish")
    num = (p * grad_x_q).sum(axis=-1) + (q * grad_b_q).sum(axis=-1)
    lam = np.maximum(0.0, num / denom)
    if active_tol is not None:
        lam = lam * (budget_slack <= active_tol)
    res_x = grad_x_q - lam[..., None] * p
    res_b = grad_b_q - lam[..., None] * q
    resid = float(np.sqrt((res_x ** 2).sum() + (res_b ** 2).sum()))
    return lam, resid


@dataclass(frozen=True)
class ResidualConfig:
    """Monte-Carlo protocol for the functional-equation residuals."""

    n_states: int = 128
    n_shocks: int = 4
    budget_active_tol: float | None = None  # None: monotone utilities, always active

    def __post_init__(self):
        if self.n_states < 1 or self.n_shocks < 1:
            raise SpecificationError("need at least one state and one shock")


def _residual_terms(spec, scheme, theta, psi, heads: ValueHeads, states, shocks,
                    res_cfg: ResidualConfig):
    """Shared forward pass: per-player stationarity residuals (integrated
    over states) and Bellman residuals. Tape-compatible in (theta, psi)."""
    econ: MarkovExchangeEconomy = spec.structure
    n, m, k = econ.n_consumers, econ.m_commodities, econ.k_assets
    nm = n * m
    B = ad.value_of(states).shape[0]
    vals = ad.value_of(states)
    tau = vals[:, 1 + nm:].reshape(B, n, m)
    gamma = spec.discount

    actions = scheme.profile(theta, states)
    rewards = spec.reward_fn(states, actions)
    feats = scheme.features(states)
    v_here = heads.values(psi, feats)                      # (B, n+1)

    # continuation values and the portfolio gradient of the continuation:
    # dQ_i/db_i = gamma * E_shock[ R_{w'} . dV_i/de'_i ], with the return
    # matrix and the value gradient coupled shock by shock
    v_next_sum = None
    gb_sum = [None] * n
    for j in range(res_cfg.n_shocks):
        s_next = spec.transition.next_state(states, actions, shocks[j])
        f_next = scheme.features(s_next)
        v_next = heads.values(psi, f_next)
        v_next_sum = v_next if v_next_sum is None else ad.add(v_next_sum, v_next)
        if k:
            omega_next = shocks[j][:, 0].astype(int)
            r_sel = econ.returns[omega_next]               # (B, k, m)
            for i in range(n):
                gf = heads.feature_gradient(psi, f_next, i)
                ge = gf[:, 1 + econ.n_world_states + i * m:
                        1 + econ.n_world_states + (i + 1) * m]  # d V_i / d e'_i
                prod = ad.reshape(
                    ad.matmul(r_sel, ad.reshape(ge, (B, m, 1))), (B, k)
                )
                gb_sum[i] = prod if gb_sum[i] is None else ad.add(gb_sum[i], prod)
    v_next_mean = ad.div(v_next_sum, float(res_cfg.n_shocks))

    p = actions[n][:, :m]
    q = actions[n][:, m:]
    p_val, q_val = ad.value_of(p), ad.value_of(q)
    e = ad.reshape(states[:, 1:1 + nm], (B, n, m))

    stationarity = []
    lambdas = np.zeros((B, n))
    for i in range(n):
        x_i = actions[i][:, :m]
        b_i = actions[i][:, m:]
        gx = utility_gradient(x_i, tau[:, i, :], econ.utility)   # (B, m)
        if k:
            gb = ad.mul(gamma / res_cfg.n_shocks, gb_sum[i])
        else:
            gb = ad.mul(x_i[:, :0], 1.0)  # (B, 0)
        wealth = ad.value_of(ad.dot_last(e[:, i, :], p))
        cost = ad.value_of(ad.dot_last(x_i, p)) + ad.value_of(ad.dot_last(b_i, q))
        slack = wealth - cost
        tol = res_cfg.budget_active_tol
        lam, _ = lagrange_closed_form(
            p_val, q_val, ad.value_of(gx), ad.value_of(gb), slack,
            active_tol=tol,
        )
        lambdas[:, i] = lam
        res_x = ad.sub(gx, ad.mul(lam[:, None], p))
        res_b = ad.sub(gb, ad.mul(lam[:, None], q))
        stationarity.append(ad.concat([res_x, res_b], axis=1))

    # auctioneer: no coupled constraints; residual is the market-clearing gap
    z = None
    tb = None
    for i in range(n):
        xi = actions[i][:, :m]
        bi = actions[i][:, m:]
        z = xi if z is None else ad.add(z, xi)
        tb = bi if tb is None else ad.add(tb, bi)
    z = ad.sub(z, ad.sum_(e, axis=1))
    stationarity.append(ad.concat([z, tb], axis=1))

    bellman = ad.sub(v_here, ad.add(rewards, ad.mul(gamma, v_next_mean)))
    return stationarity, bellman, lambdas


def first_order_violation(spec, scheme, theta, psi, heads, rng,
                          res_cfg: ResidualConfig = ResidualConfig()):
    """Total first-order violation: sum over players of the squared norm of
    the state-averaged KKT stationarity residual."""
    states = spec.init_sampler(rng, res_cfg.n_states)
    shocks = [spec.transition.sample_shock(rng, res_cfg.n_states)
              for _ in range(res_cfg.n_shocks)]
    stat, _, _ = _residual_terms(spec, scheme, theta, psi, heads, states,
                                 shocks, res_cfg)
    total = 0.0
    for res in stat:
        mean_res = ad.value_of(ad.mean_(res, axis=0))
        total += float((mean_res ** 2).sum())
    return total


def bellman_error(spec, scheme, theta, psi, heads, rng,
                  res_cfg: ResidualConfig = ResidualConfig()):
    """Average Bellman error: squared norm of the state-averaged residual
    ``V_i(s) - [r_i(s, pi(s)) + gamma E V_i(s')]``, summed over players."""
    states = spec.init_sampler(rng, res_cfg.n_states)
    shocks = [spec.transition.sample_shock(rng, res_cfg.n_states)
              for _ in range(res_cfg.n_shocks)]
    _, bell, _ = _residual_terms(spec, scheme, theta, psi, heads, states,
                                 shocks, res_cfg)
    mean_res = ad.value_of(ad.mean_(bell, axis=0))
    return float((mean_res ** 2).sum())


# ---------------------------------------------------------------------------
# value-head fitting (for policies that do not carry one)


@dataclass(frozen=True)
class ValueFitConfig:
    n_states: int = 64
    n_iters: int = 300
    lr: float = 0.05
    rollout: RolloutConfig = field(default_factory=lambda: RolloutConfig(horizon=10))
    ridge: float = 1e-4


def fit_value_heads(spec, scheme, theta, heads: ValueHeads, cfg: ValueFitConfig, rng):
    """Regress per-player value heads on Monte-Carlo discounted returns from
    initial-distribution states (fixed budget, deterministic given the rng)."""
    roll = replace(cfg.rollout, n_trajectories=cfg.n_states)
    pack = draw_shock_pack(spec, roll, rng)
    returns = ad.value_of(unroll_payoffs(spec, SchemePolicy(scheme, theta), pack))
    feats = ad.value_of(scheme.features(pack.s0))
    psi = heads.init(rng)
    for _ in range(cfg.n_iters):
        ps = ad.leaf(psi)
        pred = heads.values(ps, feats)
        err = ad.sub(pred, returns)
        loss = ad.add(ad.mean_(ad.square(err)), ad.mul(cfg.ridge, ad.mean_(ad.square(ps))))
        (g,) = ad.grad(loss, [ps])
        psi = psi - cfg.lr * g
    return psi


# ---------------------------------------------------------------------------
# NPM training


@dataclass(frozen=True)
class NpmConfig:
    eta: float = 1e-4
    n_iters: int = 2000
    residuals: ResidualConfig = field(default_factory=lambda: ResidualConfig(n_states=10))
    value_hidden: tuple[int, ...] = (16,)
    eval_every: int = 200
    eval: AdversaryEvalConfig = field(default_factory=AdversaryEvalConfig)

    def __post_init__(self):
        if self.eta <= 0 or self.n_iters < 1:
            raise SpecificationError("NPM needs a positive learning rate and iterations")


def train_npm(spec, scheme, cfg: NpmConfig, rng, theta0=None):
    """Joint gradient descent on first-order violation + Bellman error over
    (policy, value heads), with stop-gradient closed-form multipliers."""
    rng_train = rng.spawn(1)[0]
    rng_eval = rng.spawn(1)[0]
    heads = ValueHeads(spec.n_players, scheme.n_feat, cfg.value_hidden)
    theta = np.array(theta0 if theta0 is not None else scheme.init_theta(rng_train))
    psi = heads.init(rng_train)
    checkpoints = []
    eval_phi = None
    t0 = time.perf_counter()

    def loss_and_grads(th_arr, ps_arr, rng_local):
        states = spec.init_sampler(rng_local, cfg.residuals.n_states)
        shocks = [spec.transition.sample_shock(rng_local, cfg.residuals.n_states)
                  for _ in range(cfg.residuals.n_shocks)]
        th, ps = ad.leaf(th_arr), ad.leaf(ps_arr)
        stat, bell, _ = _residual_terms(spec, scheme, th, ps, heads, states,
                                        shocks, cfg.residuals)
        loss = None
        for res in stat:
            term = ad.sum_(ad.square(ad.mean_(res, axis=0)))
            loss = term if loss is None else ad.add(loss, term)
        loss = ad.add(loss, ad.sum_(ad.square(ad.mean_(bell, axis=0))))
        g_th, g_ps = ad.grad(loss, [th, ps])
        return float(ad.value_of(loss)), g_th, g_ps

    def record(it, loss):
        nonlocal eval_phi
        ex = exploitability_estimate(spec, scheme, theta, cfg.eval, rng_eval,
                                     phi0=eval_phi)
        eval_phi = ex.phi_star
        checkpoints.append(Checkpoint(
            iteration=it, theta=theta.copy(), exploitability=ex.value,
            exploit_std_err=ex.std_err, grad_norm_theta=float("nan"),
            grad_norm_phi=float("nan"), cumul_regret=loss,
            wall_ms=(time.perf_counter() - t0) * 1e3,
        ))

    for it in range(cfg.n_iters):
        loss, g_th, g_ps = loss_and_grads(theta, psi, rng_train)
        if it % cfg.eval_every == 0:
            record(it, loss)
        theta = theta - cfg.eta * g_th
        psi = psi - cfg.eta * g_ps
        _guard(theta, "policy parameters")
        _guard(psi, "value-head parameters")
    loss, _, _ = loss_and_grads(theta, psi, rng_train)
    record(cfg.n_iters, loss)
    return theta, psi, TrainTrace(checkpoints, theta, np.zeros(0))


# ---------------------------------------------------------------------------
# metric records and normalization


@dataclass
class MetricsRecord:
    """One evaluation point: raw metric values plus optional normalization."""

    method: str
    economy_id: str
    raw: dict
    std_err: dict
    normalized: dict | None = None


def normalized_metrics(record: MetricsRecord, baseline: list) -> MetricsRecord:
    """Divide each metric by the mean of the baseline records' raw values."""
    if not baseline:
        raise SpecificationError("normalization needs a non-empty baseline")
    normalized = {}
    for key in record.raw:
        vals = [b.raw[key] for b in baseline]
        mean = float(np.mean(vals))
        if mean <= 0:
            raise SpecificationError(f"degenerate baseline for metric {key!r}")
        normalized[key] = record.raw[key] / mean
    return MetricsRecord(record.method, record.economy_id, dict(record.raw),
                         dict(record.std_err), normalized)


@dataclass(frozen=True)
class EvalProtocol:
    """One shared protocol so metrics are comparable across methods."""

    adversary: AdversaryEvalConfig = field(default_factory=AdversaryEvalConfig)
    residuals: ResidualConfig = field(default_factory=ResidualConfig)
    value_fit: ValueFitConfig = field(default_factory=ValueFitConfig)
    value_hidden: tuple[int, ...] = (16,)


def evaluate_policy(spec, scheme, theta, protocol: EvalProtocol, rng,
                    method="gapnet", psi=None, backend=None) -> MetricsRecord:
    """All three metrics for one policy. ``psi`` supplies the method's own
    value heads (the projection baseline's output); otherwise heads are
    fitted by Monte-Carlo regression under the protocol's budget."""
    heads = ValueHeads(spec.n_players, scheme.n_feat, protocol.value_hidden)
    if psi is None:
        psi = fit_value_heads(spec, scheme, theta, heads, protocol.value_fit,
                              rng.spawn(1)[0])
    ex = exploitability_estimate(spec, scheme, theta, protocol.adversary,
                                 rng.spawn(1)[0], backend=backend)
    fov = first_order_violation(spec, scheme, theta, psi, heads,
                                rng.spawn(1)[0], protocol.residuals)
    bell = bellman_error(spec, scheme, theta, psi, heads, rng.spawn(1)[0],
                         protocol.residuals)
    econ = spec.structure
    economy_id = getattr(econ, "economy_id", "game")
    return MetricsRecord(
        method=method,
        economy_id=economy_id,
        raw={"fov": fov, "bellman": bell, "exploitability": ex.value},
        std_err={"fov": 0.0, "bellman": 0.0, "exploitability": ex.std_err},
    )


def random_baseline(spec, scheme, protocol: EvalProtocol, rng, n_policies=50,
                    backend=None):
    """The random-policy normalization baseline: sample policies from the
    initialization distribution and evaluate each under the same protocol."""
    records = []
    for _ in range(n_policies):
        theta = scheme.init_theta(rng)
        records.append(evaluate_policy(spec, scheme, theta, protocol, rng,
                                       method="random", backend=backend))
    return records
