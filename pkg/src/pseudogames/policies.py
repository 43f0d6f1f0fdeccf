"""Parameterized Markov policies and dependent adversary policies.

A *parameterization scheme* bundles the generator policy profile
``pi(s; theta)`` (one head per player on shared state features) with the
adversary's dependent policies ``rho_i(s, a_-i; phi)`` used for unilateral
deviations. Feasibility is enforced by construction through the smooth
projection maps in :mod:`pseudogames.projections`, and every map is twice
continuously differentiable in its parameters (smooth activations only, no
ReLU in policy trunks).

Schemes operate on batched states ``(B, state_dim)`` and accept ndarray or
autodiff ``Var`` parameters, so the same forward code serves evaluation and
pathwise gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import projections as proj
from .game import SpecificationError

INIT_SCALE = 0.05  # theta, phi ~ Unif[-INIT_SCALE, INIT_SCALE]


@dataclass(frozen=True)
class Architecture:
    """A smooth map from features to raw head outputs.

    ``affine`` is a single linear layer (callers include a constant feature
    for the bias); ``mlp`` applies tanh hidden layers then a linear head.
    Parameters are stored flat, weights laid out input-major ``(d_in, d_out)``.
    """

    kind: str                    # "affine" | "mlp"
    in_dim: int
    out_dim: int
    hidden: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in ("affine", "mlp"):
            raise SpecificationError(f"unknown architecture kind {self.kind!r}")
        if self.kind == "affine" and self.hidden:
            raise SpecificationError("affine architecture takes no hidden sizes")

    @property
    def n_params(self) -> int:
        if self.kind == "affine":
            return self.in_dim * self.out_dim
        n, d = 0, self.in_dim
        for h in self.hidden:
            n += (d + 1) * h
            d = h
        return n + (d + 1) * self.out_dim

    def forward(self, params, x):
        """params: flat (n_params,) Var/array; x: (B, in_dim) -> (B, out_dim)."""
        if ad.value_of(params).shape != (self.n_params,):
            raise SpecificationError("parameter vector length does not match architecture")
        if ad.value_of(x).shape[-1] != self.in_dim:
            raise SpecificationError("feature dimension does not match architecture")
        if self.kind == "affine":
            w = ad.reshape(params, (self.in_dim, self.out_dim))
            return ad.matmul(x, w)
        off, d, h = 0, self.in_dim, x
        for width in self.hidden:
            w = ad.reshape(params[off:off + d * width], (d, width))
            off += d * width
            b = params[off:off + width]
            off += width
            h = ad.tanh(ad.add(ad.matmul(h, w), b))
            d = width
        w = ad.reshape(params[off:off + d * self.out_dim], (d, self.out_dim))
        off += d * self.out_dim
        b = params[off:off + self.out_dim]
        return ad.add(ad.matmul(h, w), b)

    def input_gradient(self, params, x):
        """Gradient of a scalar-output head with respect to its inputs,
        expressed in tape ops so it stays differentiable in ``params`` and
        ``x``; shape (B, in_dim)."""
        if self.out_dim != 1:
            raise SpecificationError("input_gradient needs a scalar output head")
        if self.kind == "affine":
            w = ad.reshape(params, (self.in_dim,))
            B = ad.value_of(x).shape[0]
            return ad.mul(np.ones((B, 1)), ad.reshape(w, (1, self.in_dim)))
        off, d, h = 0, self.in_dim, x
        layers = []
        for width in self.hidden:
            w = ad.reshape(params[off:off + d * width], (d, width))
            off += d * width
            b = params[off:off + width]
            off += width
            t = ad.tanh(ad.add(ad.matmul(h, w), b))
            layers.append((w, t))
            h, d = t, width
        w_out = ad.reshape(params[off:off + d], (d, 1))
        # back-substitute through the tanh layers
        g = ad.reshape(w_out, (1, d))
        for w, t in reversed(layers):
            g = ad.matmul(ad.mul(g, ad.sub(1.0, ad.square(t))), ad.swap_last2(w))
        return g


@dataclass(frozen=True)
class ProjectionBlock:
    """One output block and the smooth map that keeps it feasible."""

    kind: str                    # "simplex" | "box" | "symmetric-box" | "none"
    size: int
    low: float = 0.0
    high: float = 1.0

    def apply(self, raw):
        if self.kind == "simplex":
            return proj.project_simplex(raw)
        if self.kind == "box":
            return proj.box_map(raw, self.low, self.high)
        if self.kind == "symmetric-box":
            return proj.symmetric_box_map(raw, self.high)
        if self.kind == "none":
            return raw
        raise SpecificationError(f"unknown projection kind {self.kind!r}")


@dataclass(frozen=True)
class ProjectionSpec:
    """Per-player partition of raw outputs into projection blocks."""

    blocks_per_player: tuple[tuple[ProjectionBlock, ...], ...]

    def apply_player(self, i, raw):
        blocks = self.blocks_per_player[i]
        off, parts = 0, []
        for blk in blocks:
            parts.append(blk.apply(raw[..., off:off + blk.size]))
            off += blk.size
        if ad.value_of(raw).shape[-1] != off:
            raise SpecificationError("projection blocks do not partition the raw output")
        return parts[0] if len(parts) == 1 else ad.concat(parts, axis=-1)


@dataclass
class PolicyParams:
    """Flat generator parameters plus their scheme descriptor."""

    theta: np.ndarray
    scheme: "object"

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.shape != (self.scheme.n_theta,):
            raise SpecificationError("theta length does not match the scheme")
        if not np.all(np.isfinite(self.theta)):
            raise SpecificationError("theta must be finite")


@dataclass
class AdversaryParams:
    """Flat dependent-policy parameters plus their scheme descriptor."""

    phi: np.ndarray
    scheme: "object"

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=np.float64)
        if self.phi.shape != (self.scheme.n_phi,):
            raise SpecificationError("phi length does not match the scheme")
        if not np.all(np.isfinite(self.phi)):
            raise SpecificationError("phi must be finite")


class GenericScheme:
    """Per-player heads on shared features with decoupled projection blocks.

    Suits games whose feasible sets factor per player (boxes, simplices);
    economies use the coupled scheme in :mod:`pseudogames.economy`.
    Generator features are ``[1, s]``; adversary features ``[1, s, a_-i]``.
    """

    def __init__(self, state_dim, action_dims, projection: ProjectionSpec,
                 kind="affine", hidden=()):
        self.state_dim = state_dim
        self.action_dims = tuple(action_dims)
        self.n_players = len(action_dims)
        self.projection = projection
        self.kind = kind
        feat = 1 + state_dim
        total_a = sum(action_dims)
        self.gen_archs = [
            Architecture(kind, feat, a, tuple(hidden)) for a in action_dims
        ]
        self.dev_archs = [
            Architecture(kind, feat + total_a - a, a, tuple(hidden))
            for a in action_dims
        ]
        self._gen_offsets = np.cumsum([0] + [a.n_params for a in self.gen_archs])
        self._dev_offsets = np.cumsum([0] + [a.n_params for a in self.dev_archs])
        self.n_theta = int(self._gen_offsets[-1])
        self.n_phi = int(self._dev_offsets[-1])

    def descriptor(self):
        return {
            "family": "generic",
            "kind": self.kind,
            "state_dim": self.state_dim,
            "action_dims": list(self.action_dims),
            "blocks": [
                [(b.kind, b.size, b.low, b.high) for b in pb]
                for pb in self.projection.blocks_per_player
            ],
        }

    def init_theta(self, rng):
        return rng.uniform(-INIT_SCALE, INIT_SCALE, self.n_theta)

    def init_phi(self, rng):
        return rng.uniform(-INIT_SCALE, INIT_SCALE, self.n_phi)

    def _features(self, s):
        B = ad.value_of(s).shape[0]
        return ad.concat([np.ones((B, 1)), s], axis=1)

    def profile(self, theta, s):
        f = self._features(s)
        out = []
        for i, arch in enumerate(self.gen_archs):
            sl = slice(int(self._gen_offsets[i]), int(self._gen_offsets[i + 1]))
            raw = arch.forward(theta[sl], f)
            out.append(self.projection.apply_player(i, raw))
        return out

    def deviation_action(self, phi, i, s, a_others):
        """rho_i(s, a_-i; phi): player i's feasible deviation given the rest."""
        f = self._features(s)
        rest = [a for j, a in enumerate(a_others) if j != i]
        feats = ad.concat([f] + rest, axis=1)
        sl = slice(int(self._dev_offsets[i]), int(self._dev_offsets[i + 1]))
        raw = self.dev_archs[i].forward(phi[sl], feats)
        return self.projection.apply_player(i, raw)

    def deviation_profile(self, theta, phi, i, s):
        base = self.profile(theta, s)
        out = list(base)
        out[i] = self.deviation_action(phi, i, s, base)
        return out


def policy_eval(params: PolicyParams, s):
    """Evaluate the feasible-by-construction profile ``pi(s; theta)``."""
    sb = np.asarray(s, dtype=np.float64)
    squeeze = sb.ndim == 1
    if squeeze:
        sb = sb[None, :]
    out = [ad.value_of(a) for a in params.scheme.profile(params.theta, sb)]
    return [a[0] for a in out] if squeeze else out


def dependent_eval(params: AdversaryParams, s, a_others):
    """Evaluate every player's dependent deviation against a fixed profile."""
    sb = np.asarray(s, dtype=np.float64)
    squeeze = sb.ndim == 1
    if squeeze:
        sb = sb[None, :]
        a_others = [np.asarray(a, dtype=np.float64)[None, :] for a in a_others]
    out = [
        ad.value_of(params.scheme.deviation_action(params.phi, i, sb, a_others))
        for i in range(len(a_others))
    ]
    return [a[0] for a in out] if squeeze else out


def grad_policy(params: PolicyParams, s):
    """Exact reverse-mode Jacobian of the flattened projected profile
    with respect to theta, shape (total_action_dim, n_theta)."""
    sb = np.asarray(s, dtype=np.float64)[None, :]

    def flat_profile(theta_arr):
        th = ad.leaf(theta_arr)
        acts = params.scheme.profile(th, sb)
        return th, ad.concat([ad.reshape(a, (-1,)) for a in acts], axis=0)

    _, probe = flat_profile(params.theta)
    out_dim = ad.value_of(probe).shape[0]
    jac = np.zeros((out_dim, params.theta.size))
    for r in range(out_dim):
        th, out = flat_profile(params.theta)
        seed = np.zeros(out_dim)
        seed[r] = 1.0
        ad.backward(out, seed=seed)
        if th.grad is not None:
            jac[r] = th.grad
    return jac


def jacobian_fd(f, x, h):
    """Central-difference Jacobian of ``f`` at ``x`` with step ``h``."""
    x = np.asarray(x, dtype=np.float64)
    f0 = np.atleast_1d(np.asarray(f(x), dtype=np.float64))
    J = np.zeros((f0.size, x.size))
    for j in range(x.size):
        dx = np.zeros_like(x)
        dx[j] = h
        fp = np.atleast_1d(np.asarray(f(x + dx), dtype=np.float64))
        fm = np.atleast_1d(np.asarray(f(x - dx), dtype=np.float64))
        J[:, j] = (fp - fm).ravel() / (2.0 * h)
    return J


def finite_diff_check(f, x, h, jac=None):
    """Max relative error between a central-difference Jacobian and a
    reference.

    With ``jac`` given (array or callable), compares against it; otherwise
    compares the step-``h`` estimate against the step-``h/2`` estimate, which
    flags non-smooth points near ``x``. Errors are measured relative to
    ``max(1, |J|_max)``.
    """
    if h <= 0:
        raise SpecificationError("finite-difference step must be positive")
    J_h = jacobian_fd(f, x, h)
    if jac is None:
        J_ref = jacobian_fd(f, x, h / 2.0)
    elif callable(jac):
        J_ref = np.asarray(jac(x), dtype=np.float64).reshape(J_h.shape)
    else:
        J_ref = np.asarray(jac, dtype=np.float64).reshape(J_h.shape)
    scale = max(1.0, float(np.max(np.abs(J_ref))) if J_ref.size else 1.0)
    return float(np.max(np.abs(J_h - J_ref))) / scale if J_h.size else 0.0
