"""Vectorized adaptive panel quadrature (Gauss-Kronrod 7/15).

Integrands here are smooth but highly oscillatory products of Bessel
functions, so the integrator works on arrays of panels at once: every
refinement round evaluates all pending panels in a single vectorized
call, which keeps per-integral cost in the sub-millisecond range even
when thousands of panels are needed.
"""

from __future__ import annotations

import numpy as np

# Kronrod-15 abscissae on [-1, 1] (symmetric; only the non-negative half
# is stored) and the matching Kronrod / embedded Gauss-7 weights.
_XK = np.array([
    0.991455371120813, 0.949107912342759, 0.864864423359769,
    0.741531185599394, 0.586087235467691, 0.405845151377397,
    0.207784955007898, 0.0,
])
_WK = np.array([
    0.022935322010529, 0.063092092629979, 0.104790010322250,
    0.140653259715525, 0.169004726639267, 0.190350578064785,
    0.204432940075298, 0.209482141084728,
])
_WG = np.array([
    0.129484966168870, 0.279705391489277,
    0.381830050505119, 0.417959183673469,
])

# Full 15-point node/weight tables, ordered left to right.
_NODES = np.concatenate([-_XK[:-1], _XK[::-1]])
_KW = np.concatenate([_WK[:-1], _WK[::-1]])
_GW = np.zeros_like(_KW)
_GW[1:-1:2] = np.concatenate([_WG[:-1], _WG[::-1]])


class QuadratureError(RuntimeError):
    """Adaptive refinement ran out of budget before reaching tolerance."""

    def __init__(self, message: str, value: float, error_estimate: float):
        super().__init__(message)
        self.value = value
        self.error_estimate = error_estimate


def _panel_estimates(f, lo, hi):
    """Kronrod and Gauss estimates for each panel [lo[i], hi[i]]."""
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    # points shape: (n_panels, 15)
    pts = mid[:, None] + half[:, None] * _NODES[None, :]
    vals = f(pts.ravel()).reshape(pts.shape)
    k = half * (vals @ _KW)
    g = half * (vals @ _GW)
    return k, np.abs(k - g)


def adaptive_quad(f, a, b, rel_tol=1e-10, abs_tol=0.0, initial_panels=16,
                  max_panels=200_000):
    """Integrate ``f`` over [a, b] with panel-wise GK7/15 refinement.

    ``f`` must accept a 1-D ndarray and return values of the same shape.
    Returns ``(value, error_estimate)`` or raises :class:`QuadratureError`
    when the panel budget is exhausted first.
    """
    if not b > a:
        raise ValueError(f"empty integration range [{a}, {b}]")
    edges = np.linspace(a, b, initial_panels + 1)
    lo, hi = edges[:-1], edges[1:]
    vals, errs = _panel_estimates(f, lo, hi)

    while True:
        total = vals.sum()
        err_total = errs.sum()
        tol = max(abs_tol, rel_tol * abs(total))
        if err_total <= tol:
            return total, err_total
        if lo.size >= max_panels:
            raise QuadratureError(
                f"quadrature did not converge with {lo.size} panels "
                f"(error estimate {err_total:.3e}, tolerance {tol:.3e})",
                value=total, error_estimate=err_total)
        # Split every panel whose error exceeds its share of the budget;
        # always split at least the single worst panel.
        share = tol / max(lo.size, 1)
        split = errs > 0.25 * share
        if not split.any():
            split[np.argmax(errs)] = True
        keep = ~split
        mid = 0.5 * (lo[split] + hi[split])
        new_lo = np.concatenate([lo[keep], lo[split], mid])
        new_hi = np.concatenate([hi[keep], mid, hi[split]])
        new_vals, new_errs = _panel_estimates(f, new_lo[lo[keep].size:],
                                              new_hi[lo[keep].size:])
        vals = np.concatenate([vals[keep], new_vals])
        errs = np.concatenate([errs[keep], new_errs])
        lo, hi = new_lo, new_hi
