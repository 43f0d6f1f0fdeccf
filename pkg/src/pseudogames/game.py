"""Markov pseudo-game model: states, constrained action profiles, rewards,
transitions, and sampled histories.

A pseudo-game differs from an ordinary stochastic game in that each player's
feasible action set at a state depends on the other players' simultaneous
actions, expressed here through explicit constraint functions ``g[i][d]``
whose nonnegativity characterizes joint feasibility.

All game callables are batched: states are ``(B, state_dim)`` arrays, player
actions ``(B, action_dims[i])``. They must accept either plain ndarrays or
autodiff ``Var`` inputs (see :mod:`pseudogames.autodiff`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

DEFAULT_FEASIBILITY_TOL = 1e-6
PROJECTED_FEASIBILITY_TOL = 1e-9


class SpecificationError(ValueError):
    """Raised when inputs do not match the game's declared dimensions."""


class UnsupportedModelError(ValueError):
    """Raised when an operation requires a transition model kind the
    implementation does not support (e.g. action-dependent densities)."""


@dataclass(frozen=True)
class TransitionModel:
    """Exogenous-shock factorization of ``p(s' | s, a)``.

    ``next_state(s, actions, shock)`` is deterministic and differentiable in
    the action profile; ``sample_shock(rng, size)`` draws action-independent
    shocks, so pathwise gradients through sampled trajectories are exact.
    For the ``deterministic`` kind the shock is a degenerate constant.
    """

    kind: str  # "deterministic" | "exogenous-shock"
    next_state: Callable
    sample_shock: Callable
    shock_dim: int

    def __post_init__(self):
        if self.kind not in ("deterministic", "exogenous-shock"):
            raise UnsupportedModelError(
                f"unsupported transition kind {self.kind!r}; only the "
                "exogenous-shock factorization (and its deterministic "
                "degenerate) is modeled"
            )


@dataclass(frozen=True)
class PseudoGameSpec:
    """The tuple defining an n-player Markov pseudo-game.

    ``reward_fn(s, actions) -> (B, n)`` and
    ``constraint_fn(s, actions) -> [ (B, n_constraints[i]) per player ]``
    follow the batched-callable convention above. ``init_sampler(rng, size)``
    draws initial states. Ambient action boxes keep every action space
    compact even when a player has no coupled constraints.
    """

    n_players: int
    state_dim: int
    action_dims: tuple[int, ...]
    reward_fn: Callable
    constraint_fn: Callable
    transition: TransitionModel
    discount: float
    init_sampler: Callable
    action_lows: tuple[np.ndarray, ...]
    action_highs: tuple[np.ndarray, ...]
    reward_bound: float
    structure: object | None = field(default=None, compare=False)

    def __post_init__(self):
        if not (0.0 < self.discount < 1.0):
            raise SpecificationError("discount must lie strictly inside (0, 1)")
        if len(self.action_dims) != self.n_players:
            raise SpecificationError("action_dims must have one entry per player")


@dataclass
class History:
    """A finite sampled trajectory.

    ``states`` has length T+1, ``actions`` and ``rewards`` length T.
    ``discount_weights`` records the weight applied to each step's reward by
    the sampling mode (``gamma**t`` for fixed-horizon weighting, survival
    indicators for geometric termination).
    """

    states: np.ndarray          # (T+1, state_dim)
    actions: list               # T entries, each a list of (action_dims[i],) arrays
    rewards: np.ndarray         # (T, n_players)
    discount_weights: np.ndarray  # (T,)

    def __post_init__(self):
        T = len(self.actions)
        if self.states.shape[0] != T + 1 or self.rewards.shape[0] != T:
            raise SpecificationError("inconsistent history lengths")

    @property
    def horizon(self):
        return len(self.actions)


def _as_batch(s):
    s = np.asarray(s, dtype=np.float64)
    return (s[None, :], True) if s.ndim == 1 else (s, False)


def _check_profile(spec: PseudoGameSpec, actions: Sequence[np.ndarray]):
    if len(actions) != spec.n_players:
        raise SpecificationError(
            f"profile has {len(actions)} players, spec declares {spec.n_players}"
        )
    for i, a in enumerate(actions):
        if np.shape(a)[-1] != spec.action_dims[i]:
            raise SpecificationError(
                f"player {i} action has dim {np.shape(a)[-1]}, "
                f"spec declares {spec.action_dims[i]}"
            )


def reward(spec: PseudoGameSpec, s, actions):
    """Per-player reward vector ``r(s, a)`` of length ``n_players``."""
    sb, squeeze = _as_batch(s)
    _check_profile(spec, actions)
    batched = [np.asarray(a, dtype=np.float64)[None, :] if np.ndim(a) == 1 else a
               for a in actions]
    out = np.asarray(spec.reward_fn(sb, batched), dtype=np.float64)
    if not np.all(np.isfinite(out)):
        raise SpecificationError("reward is not finite")
    return out[0] if squeeze else out


def constraint_values(spec: PseudoGameSpec, s, actions):
    """Evaluate every constraint function; the profile is jointly feasible
    iff all returned values are >= 0."""
    sb, squeeze = _as_batch(s)
    _check_profile(spec, actions)
    batched = [np.asarray(a, dtype=np.float64)[None, :] if np.ndim(a) == 1 else a
               for a in actions]
    vals = spec.constraint_fn(sb, batched)
    vals = [np.asarray(v, dtype=np.float64) for v in vals]
    return [v[0] for v in vals] if squeeze else vals


def is_feasible(spec: PseudoGameSpec, s, actions, tol: float = DEFAULT_FEASIBILITY_TOL):
    """True iff every constraint value is >= -tol."""
    if tol < 0:
        raise SpecificationError("tol must be nonnegative")
    vals = constraint_values(spec, s, actions)
    worst = min((float(np.min(v)) for v in vals if np.size(v)), default=0.0)
    return worst >= -tol


def sample_initial(spec: PseudoGameSpec, rng: np.random.Generator):
    """Draw one initial state from the game's initial-state distribution."""
    return np.asarray(spec.init_sampler(rng, 1), dtype=np.float64)[0]


def step(spec: PseudoGameSpec, s, actions, rng: np.random.Generator):
    """Sample the successor state: exogenous shock + deterministic map."""
    sb, squeeze = _as_batch(s)
    _check_profile(spec, actions)
    batched = [np.asarray(a, dtype=np.float64)[None, :] if np.ndim(a) == 1 else a
               for a in actions]
    shock = spec.transition.sample_shock(rng, sb.shape[0])
    out = np.asarray(spec.transition.next_state(sb, batched, shock), dtype=np.float64)
    return out[0] if squeeze else out
