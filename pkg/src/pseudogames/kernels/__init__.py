"""Backend selection for the hot rollout kernels.

The compiled Cython extension fuses the forward unroll and reverse sweep of
the cumulative-regret objective for the exchange-economy game with affine
policy heads — the inner loop that dominates training time. When the
extension is missing (no compiler at install time) the package falls back to
the tape-based NumPy path in :mod:`pseudogames.rollout` transparently.
"""

from __future__ import annotations

import numpy as np

try:
    from . import _core  # type: ignore[attr-defined]

    HAVE_COMPILED = True
except ImportError:  # pragma: no cover - depends on build environment
    _core = None
    HAVE_COMPILED = False


def backend_name():
    return "compiled" if HAVE_COMPILED else "reference"


def _descriptor(econ, scheme):
    """Flatten economy + scheme constants into the kernel's argument block."""
    from .. import projections as proj

    return dict(
        n=econ.n_consumers,
        m=econ.m_commodities,
        k=econ.k_assets,
        n_world=econ.n_world_states,
        returns=np.ascontiguousarray(econ.returns, dtype=np.float64),
        utility_kind={"linear": 0, "cobb-douglas": 1, "leontief": 2}[econ.utility.kind],
        leontief_eps=econ.utility.leontief_eps,
        cd_floor=econ.utility.cd_floor,
        box_scale=econ.demand_box_scale,
        bang_scale=scheme.bang_scale,
        p_floor=scheme.PRICE_FLOOR,
        b_max=econ.b_max,
        q_max=econ.q_max,
        tau_scale=5.0,
        eps_sm=proj.EPS_SMOOTH,
        eps_pos=proj.EPS_POS,
        n_feat=scheme.n_feat,
    )


def regret_grad(spec, scheme, theta, phi, pack, need_g_theta=True, need_g_phi=True):
    """Fused cumulative-regret value + pathwise gradients on the compiled path."""
    from ..rollout import GradientEstimate

    econ = spec.structure
    d = _descriptor(econ, scheme)
    T, B, _ = pack.shocks.shape
    per_sample, g_theta, g_phi, payoff_on = _core.regret_grad(
        d["n"], d["m"], d["k"], d["n_world"], d["n_feat"],
        d["returns"], d["utility_kind"], d["leontief_eps"], d["cd_floor"],
        d["box_scale"], d["b_max"], d["q_max"], d["tau_scale"],
        d["bang_scale"], d["p_floor"],
        d["eps_sm"], d["eps_pos"],
        np.ascontiguousarray(theta, dtype=np.float64),
        np.ascontiguousarray(phi, dtype=np.float64),
        np.ascontiguousarray(pack.s0, dtype=np.float64),
        np.ascontiguousarray(pack.shocks, dtype=np.float64),
        np.ascontiguousarray(pack.weights, dtype=np.float64),
        1 if need_g_theta else 0,
        1 if need_g_phi else 0,
    )
    se = per_sample.std(ddof=1) / np.sqrt(B) if B > 1 else 0.0
    return GradientEstimate(
        g_theta=g_theta if need_g_theta else None,
        g_phi=g_phi if need_g_phi else None,
        value=float(per_sample.mean()),
        std_err=float(se),
        payoff_on=payoff_on,
        backend="compiled",
    )
