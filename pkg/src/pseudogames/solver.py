"""Two-time-scale stochastic simultaneous gradient descent-ascent and
equilibrium-quality evaluation.

The trainer alternates nothing: both parameter vectors move simultaneously
using gradients evaluated at the same pre-update pair. Exploitability is
estimated by ascending a fresh (or warm-started) adversary for a fixed
number of steps and re-evaluating the best iterate on an independent batch,
which lower-bounds true exploitability up to Monte-Carlo error.
"""

from __future__ import annotations

import csv
import dataclasses
import time
from dataclasses import dataclass, field

import numpy as np

from .game import PseudoGameSpec, SpecificationError
from .rollout import RolloutConfig, gradient_estimate, visitation_histogram, SchemePolicy, SchemeDeviation

DIVERGENCE_THRESHOLD = 1e6


class DivergenceError(RuntimeError):
    """Parameters left the trust region the theory assumes compact."""


@dataclass(frozen=True)
class AdversaryEvalConfig:
    """Gradient-ascent protocol for estimating exploitability."""

    k_adv: int = 300
    eta: float = 1e-2
    rollout: RolloutConfig = field(default_factory=RolloutConfig)
    warm_start: bool = True

    def __post_init__(self):
        if self.k_adv < 1 or self.eta <= 0:
            raise SpecificationError("adversary evaluation needs k_adv >= 1, eta > 0")


@dataclass(frozen=True)
class TtsgdaConfig:
    eta_theta: float = 1e-3
    eta_phi: float | None = None   # defaults to the two-time-scale 10x regime
    n_iters: int = 1000
    rollout: RolloutConfig = field(default_factory=RolloutConfig)
    eval_every: int = 100
    eval: AdversaryEvalConfig = field(default_factory=AdversaryEvalConfig)
    backend: str | None = None

    def __post_init__(self):
        if self.eta_theta <= 0 or (self.eta_phi is not None and self.eta_phi <= 0):
            raise SpecificationError("learning rates must be positive")
        if self.n_iters < 1 or self.eval_every < 1:
            raise SpecificationError("n_iters and eval_every must be >= 1")

    @property
    def eta_phi_value(self):
        return 10.0 * self.eta_theta if self.eta_phi is None else self.eta_phi


@dataclass
class Checkpoint:
    iteration: int
    theta: np.ndarray
    exploitability: float
    exploit_std_err: float
    grad_norm_theta: float
    grad_norm_phi: float
    cumul_regret: float
    wall_ms: float


@dataclass
class TrainTrace:
    checkpoints: list
    final_theta: np.ndarray
    final_phi: np.ndarray

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "exploitability", "grad_norm_theta",
                        "grad_norm_phi", "cumul_regret", "wall_ms"])
            for c in self.checkpoints:
                w.writerow([c.iteration, repr(c.exploitability),
                            repr(c.grad_norm_theta), repr(c.grad_norm_phi),
                            repr(c.cumul_regret), repr(c.wall_ms)])


@dataclass
class ExploitabilityEstimate:
    value: float            # best adversary found, independently re-estimated
    std_err: float          # standard error of that re-estimate
    ascent_value: float     # best in-sample value seen during the ascent
    phi_star: np.ndarray


def _guard(vec, what):
    if not np.all(np.isfinite(vec)) or np.linalg.norm(vec) > DIVERGENCE_THRESHOLD:
        raise DivergenceError(
            f"{what} diverged (norm {np.linalg.norm(vec):.3e} exceeds "
            f"{DIVERGENCE_THRESHOLD:.0e}); lower the learning rates"
        )


def exploitability_estimate(spec, scheme, theta, eval_cfg: AdversaryEvalConfig,
                            rng, phi0=None, backend=None) -> ExploitabilityEstimate:
    """Adversarial lower-bound estimate of exploitability at ``theta``.

    Ascends the dependent-policy parameters on one fixed shock batch
    (common random numbers, so the ascent maximizes a deterministic
    sample-average objective rather than chasing per-step noise), then
    reports the best iterate found re-estimated on an independent larger
    batch. A warm start (``phi0``) shares the ascent budget with a fresh
    initialization so a stale adversary cannot poison the estimate.
    """
    from .rollout import draw_shock_pack
    import dataclasses as _dc

    pack = draw_shock_pack(spec, eval_cfg.rollout, rng)
    starts = [np.asarray(scheme.init_phi(rng), dtype=np.float64)]
    if phi0 is not None:
        starts.insert(0, np.asarray(phi0, dtype=np.float64))
    budget = max(1, eval_cfg.k_adv // len(starts))
    best_val, best_phi = -np.inf, starts[0].copy()
    for phi in starts:
        phi = phi.copy()
        for _ in range(budget):
            est = gradient_estimate(
                spec, scheme, theta, phi, eval_cfg.rollout, rng,
                backend=backend, need_g_theta=False, need_g_phi=True, pack=pack,
            )
            if est.value > best_val:
                best_val, best_phi = est.value, phi.copy()
            phi = phi + eval_cfg.eta * est.g_phi
            _guard(phi, "adversary parameters")
    wide = _dc.replace(eval_cfg.rollout,
                       n_trajectories=4 * eval_cfg.rollout.n_trajectories)
    final = gradient_estimate(
        spec, scheme, theta, best_phi, wide, rng,
        backend=backend, need_g_theta=False, need_g_phi=False,
    )
    return ExploitabilityEstimate(final.value, final.std_err, best_val, best_phi)


def state_exploitability_estimate(spec, scheme, theta, s, eval_cfg, rng,
                                  phi0=None, backend=None):
    """Exploitability with rollouts initialized at the Dirac distribution
    centered on ``s``."""
    s = np.asarray(s, dtype=np.float64)
    dirac = dataclasses.replace(
        spec, init_sampler=lambda _rng, size: np.tile(s, (size, 1))
    )
    return exploitability_estimate(dirac, scheme, theta, eval_cfg, rng,
                                   phi0=phi0, backend=backend)


def ttsgda(spec: PseudoGameSpec, scheme, cfg: TtsgdaConfig, rng) -> TrainTrace:
    """Simultaneous descent on theta / ascent on phi with the two-time-scale
    step sizes; records an exploitability checkpoint every ``eval_every``
    iterations and at the final iterate."""
    rng_train = rng.spawn(1)[0]
    rng_eval = rng.spawn(1)[0]
    theta = scheme.init_theta(rng_train)
    phi = scheme.init_phi(rng_train)
    eta_t, eta_p = cfg.eta_theta, cfg.eta_phi_value
    checkpoints = []
    eval_phi = None
    t0 = time.perf_counter()

    def record(it, est):
        nonlocal eval_phi
        ex = exploitability_estimate(
            spec, scheme, theta, cfg.eval, rng_eval,
            phi0=eval_phi if cfg.eval.warm_start else None, backend=cfg.backend,
        )
        eval_phi = ex.phi_star
        checkpoints.append(Checkpoint(
            iteration=it,
            theta=theta.copy(),
            exploitability=ex.value,
            exploit_std_err=ex.std_err,
            grad_norm_theta=float(np.linalg.norm(est.g_theta)),
            grad_norm_phi=float(np.linalg.norm(est.g_phi)),
            cumul_regret=est.value,
            wall_ms=(time.perf_counter() - t0) * 1e3,
        ))

    for it in range(cfg.n_iters):
        est = gradient_estimate(
            spec, scheme, theta, phi, cfg.rollout, rng_train, backend=cfg.backend
        )
        if it % cfg.eval_every == 0:
            record(it, est)
        # simultaneous: both updates use the same pre-update (theta, phi)
        theta = theta - eta_t * est.g_theta
        phi = phi + eta_p * est.g_phi
        _guard(theta, "policy parameters")
        _guard(phi, "adversary parameters")
    est = gradient_estimate(
        spec, scheme, theta, phi, cfg.rollout, rng_train, backend=cfg.backend
    )
    record(cfg.n_iters, est)
    return TrainTrace(checkpoints, theta, phi)


def best_iterate(trace: TrainTrace) -> Checkpoint:
    """Checkpoint with minimal exploitability estimate; ties break to the
    earliest iteration for reproducibility."""
    if not trace.checkpoints:
        raise SpecificationError("trace has no checkpoints")
    best = trace.checkpoints[0]
    for c in trace.checkpoints[1:]:
        if c.exploitability < best.exploitability:
            best = c
    return best


@dataclass
class MismatchReport:
    coefficient: float
    ratio_on: float
    ratio_dev: float
    infinite: bool


def mismatch_diagnostic(spec, scheme, theta, phi_star, cfg: RolloutConfig,
                        binning, rng, n_mu_samples=4096) -> MismatchReport:
    """Histogram estimate of the best-response mismatch coefficient.

    Visitation histograms (normalized to distributions) are compared bin by
    bin against the initial-state distribution; unvisited initial-state bins
    with visited mass report an infinite ratio. The combined coefficient
    carries the (1/(1-gamma))^2 factor.
    """
    mu_states = spec.init_sampler(rng, n_mu_samples)
    mu_hist: dict = {}
    for key in binning(mu_states):
        mu_hist[key] = mu_hist.get(key, 0.0) + 1.0 / n_mu_samples

    def ratio(policy):
        h = visitation_histogram(spec, policy, cfg, binning, rng)
        total = sum(h.values())
        worst, inf = 0.0, False
        for key, wgt in h.items():
            d = wgt / total
            if d <= 0:
                continue
            if mu_hist.get(key, 0.0) <= 0.0:
                inf = True
                continue
            worst = max(worst, d / mu_hist[key])
        return worst, inf

    r_on, inf_on = ratio(SchemePolicy(scheme, theta))
    r_dev, inf_dev = 0.0, False
    for i in range(spec.n_players):
        r, inf_i = ratio(SchemeDeviation(scheme, theta, phi_star, i))
        r_dev = max(r_dev, r)
        inf_dev = inf_dev or inf_i
    gamma_factor = (1.0 / (1.0 - spec.discount)) ** 2
    infinite = inf_on or inf_dev
    coeff = np.inf if infinite else gamma_factor * r_on * r_dev
    return MismatchReport(float(coeff), r_on, r_dev, infinite)
