"""Smooth feasibility-preserving output maps.

Every map here is built from softplus/sigmoid/softmax so that policy outputs
are twice continuously differentiable in the parameters while satisfying
their constraints *exactly* (not just asymptotically):

* ``smooth_pos(z)``    >= max(0, z), strictly positive;
* ``smooth_min1(r)``   <= min(1, r) for r >= 0, positive for r > 0;
* scaling a bundle by ``smooth_min1(budget / smooth_pos(cost))`` therefore
  never exceeds the budget, and shifting by ``smooth_pos`` of an excess
  never leaves the excess positive.

All functions accept ndarrays or autodiff ``Var`` inputs.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad

EPS_SMOOTH = 0.005  # kink temperature of the soft min-with-1
EPS_POS = 1e-3      # kink temperature of the positive-part surrogates


def smooth_pos(z, eps=EPS_POS):
    """Smooth positive part: eps*softplus(z/eps) >= max(0, z), > 0.

    Floored at a denormal-scale constant so it stays a safe denominator even
    where the softplus underflows; the floor binds only where the gradient
    already vanishes.
    """
    return ad.maximum_const(ad.mul(eps, ad.softplus(ad.div(z, eps))), eps * 1e-15)


def smooth_min1(r, eps=EPS_SMOOTH):
    """Smooth min(1, r) from below for r >= 0.

    Equals r / (1 + eps*softplus((r-1)/eps)); the denominator dominates
    max(1, r), so the result never exceeds min(1, r) and is positive for
    r > 0. Away from the kink at r = 1 it matches min(1, r) to within
    floating-point noise.
    """
    denom = ad.add(1.0, ad.mul(eps, ad.softplus(ad.div(ad.sub(r, 1.0), eps))))
    return ad.div(r, denom)


def project_simplex(v):
    """Map raw scores onto the interior of the unit simplex.

    Implemented as a softmax so the map stays smooth in ``v``; output entries
    are positive and sum to one.
    """
    return ad.softmax(v, axis=-1)


def box_map(raw, low, high):
    """Map raw scores smoothly into the box [low, high]."""
    return ad.add(low, ad.mul(high - low, ad.sigmoid(raw)))


def symmetric_box_map(raw, half_width):
    """Map raw scores smoothly into [-half_width, half_width]."""
    return ad.mul(half_width, ad.tanh(raw))


def budget_scale(raw_x, raw_b, p, q, e, eps_sm=EPS_SMOOTH, eps_cost=EPS_POS):
    """Scale a raw (consumption, portfolio) pair into the budget set.

    Returns ``(x, b)`` with ``x.p + b.q <= e.p`` exactly (up to float
    rounding), by jointly scaling the pair toward the origin with the smooth
    factor ``smooth_min1(wealth / smooth_pos(cost))``. Already-affordable
    bundles pass through essentially unchanged; a zero endowment scales the
    bundle to zero cost.

    The wealth is clamped at zero (exact, not smooth): generated economies
    keep endowment values strictly positive, so on-path smoothness is
    unaffected, while hand-built debt states still produce a valid output.
    """
    wealth = ad.maximum_const(ad.dot_last(e, p), 0.0)
    cost = ad.add(ad.dot_last(raw_x, p), ad.dot_last(raw_b, q))
    alpha = smooth_min1(ad.div(wealth, smooth_pos(cost, eps_cost)), eps_sm)
    alpha_x = alpha[..., None] if np.ndim(ad.value_of(alpha)) else alpha
    return ad.mul(alpha_x, raw_x), ad.mul(alpha_x, raw_b)


def aggregate_scale(bundles_sum, supply, eps_sm=EPS_SMOOTH, eps_pos=EPS_POS):
    """Per-commodity factor capping an aggregate demand at an aggregate supply.

    Returns beta with ``beta * bundles_sum <= supply`` exactly; bundles_sum
    must be entrywise nonnegative.
    """
    return smooth_min1(
        ad.div(supply, smooth_pos(bundles_sum, eps_pos)), eps_sm
    )


def excess_shift(total, eps_pos=EPS_POS):
    """Smooth upper bound of the positive part of ``total``.

    Subtracting the returned shift from ``total`` makes it exactly
    nonpositive, since the smooth positive part dominates max(0, total).
    """
    return smooth_pos(total, eps_pos)
