"""Trajectory sampling and Monte-Carlo estimators.

Payoffs are estimated with the standard discounted return: in the default
fixed-horizon mode a length-T trajectory contributes ``sum_t gamma^t r_t``,
whose truncation bias ``gamma^T r_max / (1-gamma)`` is always reported; the
geometric-termination mode instead realizes the discount through a
Geometric(1-gamma) stopping time truncated at T, with unweighted rewards.

Gradients of the cumulative-regret objective are exact pathwise reverse-mode
derivatives of the sampled finite-horizon objective: shocks are drawn up
front (action-independent by the exogenous-shock factorization) and held
fixed, and the unrolled computation graph is differentiated end to end.
On-policy and deviation rollouts share shock streams (common random
numbers) to reduce gradient variance.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .economy import EconomyScheme, MarkovExchangeEconomy
from .game import (
    History,
    PseudoGameSpec,
    SpecificationError,
    UnsupportedModelError,
    is_feasible,
    reward,
)

BACKEND_ENV = "PSEUDOGAMES_BACKEND"


@dataclass(frozen=True)
class RolloutConfig:
    """Finite realization of the discounted history distribution."""

    horizon: int = 30
    n_trajectories: int = 1
    mode: str = "fixed-horizon"  # "fixed-horizon" | "geometric"

    def __post_init__(self):
        if self.horizon < 1 or self.n_trajectories < 1:
            raise SpecificationError("horizon and n_trajectories must be >= 1")
        if self.mode not in ("fixed-horizon", "geometric"):
            raise SpecificationError(f"unknown rollout mode {self.mode!r}")


@dataclass
class PayoffEstimate:
    values: np.ndarray        # (n_players,)
    std_err: np.ndarray       # (n_players,)
    n_samples: int
    truncation_bias: float


@dataclass
class GradientEstimate:
    g_theta: np.ndarray | None
    g_phi: np.ndarray | None
    value: float              # cumulative-regret estimate
    std_err: float
    payoff_on: np.ndarray     # (n_players,) on-policy payoff estimate
    backend: str


@dataclass
class ShockPack:
    """Pre-drawn randomness for a batch of rollouts (common random numbers)."""

    s0: np.ndarray        # (B, state_dim)
    shocks: np.ndarray    # (T, B, shock_dim)
    weights: np.ndarray   # (B, T) per-step reward weights


class SchemePolicy:
    """Profile policy pi(.; theta) as a batched state -> actions callable."""

    def __init__(self, scheme, theta):
        self.scheme = scheme
        self.theta = theta

    def __call__(self, s):
        return self.scheme.profile(self.theta, s)


class SchemeDeviation:
    """Unilateral deviation profile (rho_i(., pi_-i; phi), pi_-i(.; theta))."""

    def __init__(self, scheme, theta, phi, player):
        self.scheme = scheme
        self.theta = theta
        self.phi = phi
        self.player = player

    def __call__(self, s):
        return self.scheme.deviation_profile(self.theta, self.phi, self.player, s)


def draw_shock_pack(spec: PseudoGameSpec, cfg: RolloutConfig, rng) -> ShockPack:
    B, T = cfg.n_trajectories, cfg.horizon
    s0 = np.asarray(spec.init_sampler(rng, B), dtype=np.float64)
    shocks = np.stack([spec.transition.sample_shock(rng, B) for _ in range(T)])
    if cfg.mode == "fixed-horizon":
        weights = np.broadcast_to(spec.discount ** np.arange(T), (B, T)).copy()
    else:
        alive = rng.uniform(size=(B, T)) < spec.discount
        alive[:, 0] = True  # at least one step is always realized
        weights = np.minimum.accumulate(alive, axis=1).astype(np.float64)
    return ShockPack(s0, shocks, weights)


def unroll_payoffs(spec, policy, pack: ShockPack):
    """Weighted reward sums (B, n_players) along the unrolled trajectories.

    ``policy`` maps batched states to action profiles and may consume/return
    autodiff Vars, in which case the result carries the full pathwise graph.
    """
    s = pack.s0
    T = pack.weights.shape[1]
    total = None
    for t in range(T):
        actions = policy(s)
        r = spec.reward_fn(s, actions)
        wr = ad.mul(pack.weights[:, t:t + 1], r)
        total = wr if total is None else ad.add(total, wr)
        if t < T - 1:
            s = spec.transition.next_state(s, actions, pack.shocks[t])
    return total


def sample_history(spec, policy, cfg: RolloutConfig, rng) -> History:
    """Sample one trajectory, recording states, actions and rewards."""
    pack = draw_shock_pack(spec, RolloutConfig(cfg.horizon, 1, cfg.mode), rng)
    s = pack.s0
    states, acts, rewards = [s[0].copy()], [], []
    for t in range(cfg.horizon):
        actions = [ad.value_of(a) for a in policy(s)]
        acts.append([a[0].copy() for a in actions])
        rewards.append(ad.value_of(spec.reward_fn(s, actions))[0].copy())
        s = ad.value_of(spec.transition.next_state(s, actions, pack.shocks[t]))
        states.append(s[0].copy())
    return History(
        states=np.stack(states),
        actions=acts,
        rewards=np.stack(rewards),
        discount_weights=pack.weights[0].copy(),
    )


def sample_histories(spec, policy, cfg: RolloutConfig, rng) -> list[History]:
    return [sample_history(spec, policy, cfg, rng) for _ in range(cfg.n_trajectories)]


def payoff_estimate(spec: PseudoGameSpec, histories) -> PayoffEstimate:
    """Mean weighted discounted return per player, with standard errors and
    the truncation-bias bound ``gamma^T r_max / (1 - gamma)``."""
    if not histories:
        raise SpecificationError("payoff_estimate needs at least one history")
    per = np.stack([
        (h.discount_weights[:, None] * h.rewards).sum(axis=0) for h in histories
    ])
    n = per.shape[0]
    se = per.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(per.shape[1])
    T = min(h.horizon for h in histories)
    bias = spec.discount ** T * spec.reward_bound / (1.0 - spec.discount)
    return PayoffEstimate(per.mean(axis=0), se, n, float(bias))


def state_value_estimate(spec, policy, s, cfg: RolloutConfig, rng) -> PayoffEstimate:
    """Monte-Carlo estimate of the state-value vector at ``s`` (Dirac start)."""
    s = np.asarray(s, dtype=np.float64)
    B = cfg.n_trajectories
    pack = draw_shock_pack(spec, cfg, rng)
    pack = ShockPack(np.tile(s, (B, 1)), pack.shocks, pack.weights)
    per = ad.value_of(unroll_payoffs(spec, policy, pack))
    se = per.std(axis=0, ddof=1) / np.sqrt(B) if B > 1 else np.zeros(per.shape[1])
    bias = spec.discount ** cfg.horizon * spec.reward_bound / (1.0 - spec.discount)
    return PayoffEstimate(per.mean(axis=0), se, B, float(bias))


def q_value_estimate(spec, policy, s, a, cfg: RolloutConfig, rng) -> PayoffEstimate:
    """r(s, a) + gamma * E[V(s')] with sampled successors."""
    if not is_feasible(spec, s, a):
        raise SpecificationError("q_value_estimate requires a feasible action profile")
    r0 = reward(spec, s, a)
    B = cfg.n_trajectories
    sb = np.tile(np.asarray(s, dtype=np.float64), (B, 1))
    ab = [np.tile(np.asarray(ai, dtype=np.float64), (B, 1)) for ai in a]
    shock = spec.transition.sample_shock(rng, B)
    s_next = ad.value_of(spec.transition.next_state(sb, ab, shock))
    pack = draw_shock_pack(spec, cfg, rng)
    pack = ShockPack(s_next, pack.shocks, pack.weights)
    per = ad.value_of(unroll_payoffs(spec, policy, pack))
    vals = r0 + spec.discount * per.mean(axis=0)
    se = spec.discount * (per.std(axis=0, ddof=1) / np.sqrt(B) if B > 1 else np.zeros_like(r0))
    bias = spec.discount ** (cfg.horizon + 1) * spec.reward_bound / (1.0 - spec.discount)
    return PayoffEstimate(vals, se, B, float(bias))


def cumulative_regret_estimate(spec, histories_on, histories_dev):
    """Sum over players of deviation-payoff minus on-policy payoff.

    ``histories_dev[i]`` are sampled under player i's unilateral deviation;
    sample counts must match the on-policy batch so trajectories pair up
    under common random numbers.
    """
    B = len(histories_on)
    if any(len(hd) != B for hd in histories_dev):
        raise SpecificationError("deviation sample counts must match the on-policy batch")

    def returns(hs):
        return np.stack([
            (h.discount_weights[:, None] * h.rewards).sum(axis=0) for h in hs
        ])

    on = returns(histories_on)  # (B, n)
    per_sample = np.zeros(B)
    for i, hd in enumerate(histories_dev):
        per_sample += returns(hd)[:, i] - on[:, i]
    se = per_sample.std(ddof=1) / np.sqrt(B) if B > 1 else 0.0
    return float(per_sample.mean()), float(se)


# ---------------------------------------------------------------------------
# pathwise gradients


def backend_choice(spec, scheme, requested=None):
    """Resolve the rollout backend: the compiled kernel covers the
    economy/affine hot path, the tape covers everything."""
    from . import kernels

    req = requested or os.environ.get(BACKEND_ENV, "auto")
    if req not in ("auto", "compiled", "reference"):
        raise SpecificationError(f"unknown backend {req!r}")
    eligible = (
        kernels.HAVE_COMPILED
        and isinstance(spec.structure, MarkovExchangeEconomy)
        and isinstance(scheme, EconomyScheme)
        and scheme.kind == "affine"
    )
    if req == "reference":
        return "reference"
    if req == "compiled" and not eligible:
        raise SpecificationError(
            "compiled backend requested but unavailable for this game/scheme"
        )
    return "compiled" if eligible else "reference"


def regret_value(spec, scheme, theta, phi, pack: ShockPack):
    """Cumulative-regret estimate at fixed shocks (deterministic in
    (theta, phi) given the pack; the finite-difference oracle probes this)."""
    on = ad.value_of(unroll_payoffs(spec, SchemePolicy(scheme, theta), pack))
    per_sample = -on.sum(axis=1)
    for i in range(spec.n_players):
        dev = ad.value_of(
            unroll_payoffs(spec, SchemeDeviation(scheme, theta, phi, i), pack)
        )
        per_sample += dev[:, i]
    return float(per_sample.mean())


def gradient_estimate(spec, scheme, theta, phi, cfg: RolloutConfig, rng,
                      backend=None, need_g_theta=True, need_g_phi=True,
                      pack: ShockPack | None = None) -> GradientEstimate:
    """Pathwise gradient of the cumulative-regret estimate.

    Requires the exogenous-shock transition factorization; shocks are drawn
    once and shared by the on-policy and all deviation rollouts.
    """
    if spec.transition.kind not in ("deterministic", "exogenous-shock"):
        raise UnsupportedModelError(
            "pathwise gradients need an exogenous-shock transition"
        )
    if pack is None:
        pack = draw_shock_pack(spec, cfg, rng)
    chosen = backend_choice(spec, scheme, backend)
    if chosen == "compiled":
        from . import kernels

        return kernels.regret_grad(
            spec, scheme, theta, phi, pack,
            need_g_theta=need_g_theta, need_g_phi=need_g_phi,
        )
    th = ad.leaf(theta)
    ph = ad.leaf(phi)
    on = unroll_payoffs(spec, SchemePolicy(scheme, th), pack)
    on_vals = ad.value_of(on)
    B = on_vals.shape[0]
    per_sample = -on_vals.sum(axis=1)
    objective = ad.neg(ad.sum_(ad.mean_(on, axis=0)))
    for i in range(spec.n_players):
        dev = unroll_payoffs(spec, SchemeDeviation(scheme, th, ph, i), pack)
        per_sample = per_sample + ad.value_of(dev)[:, i]
        objective = ad.add(objective, ad.mean_(dev[:, i]))
    g_theta, g_phi = ad.grad(objective, [th, ph])
    se = per_sample.std(ddof=1) / np.sqrt(B) if B > 1 else 0.0
    return GradientEstimate(
        g_theta=g_theta if need_g_theta else None,
        g_phi=g_phi if need_g_phi else None,
        value=float(per_sample.mean()),
        std_err=float(se),
        payoff_on=on_vals.mean(axis=0),
        backend="reference",
    )


def visitation_histogram(spec, policy, cfg: RolloutConfig, binning, rng):
    """Discounted state-visitation weights per bin, averaged over
    trajectories; total mass is sum_{t<T} gamma^t in fixed-horizon mode."""
    pack = draw_shock_pack(spec, cfg, rng)
    s = pack.s0
    hist: dict = {}
    B = s.shape[0]
    for t in range(cfg.horizon):
        keys = binning(s)
        for b in range(B):
            w = pack.weights[b, t] / B
            hist[keys[b]] = hist.get(keys[b], 0.0) + w
        actions = [ad.value_of(a) for a in policy(s)]
        if t < cfg.horizon - 1:
            s = ad.value_of(spec.transition.next_state(s, actions, pack.shocks[t]))
    return hist


def dump_histories_csv(histories, path):
    """Debug dump: one row per (trajectory, step)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trajectory", "t", "state", "action", "reward"])
        for j, h in enumerate(histories):
            for t in range(h.horizon):
                w.writerow([
                    j, t,
                    " ".join(repr(v) for v in h.states[t]),
                    " | ".join(" ".join(repr(v) for v in a) for a in h.actions[t]),
                    " ".join(repr(v) for v in h.rewards[t]),
                ])
