"""Planar-loop inductance calculations and the 3x3 button grid geometry.

Coils are planar multi-turn circular loops in parallel planes. Mutual
inductance between two loops is evaluated with the Bessel-integral
formulation

    M = mu0 * pi * n_i * n_q * a_i * a_q *
        integral_0^inf J0(s*p) * J1(s*a_i) * J1(s*a_q) * exp(-s*|dz|) ds

where ``p`` is the lateral offset between coil axes and ``dz`` the axial
separation. Self-inductance uses the same kernel with the loop paired
against a copy of itself displaced axially by the wire radius (standard
filament regularization; the bare integral diverges logarithmically).

All lengths are metres, inductances Henries.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.constants import mu_0
from scipy.special import j0, j1

from ._quadrature import QuadratureError, adaptive_quad

__all__ = [
    "CoilGeometry", "ButtonGrid", "Inductance", "QuadratureError",
    "mutual_inductance", "self_inductance", "coupling_factor",
    "button_positions", "load_coil_config", "export_button_grid_csv",
    "READER_COIL", "CARD_COIL", "BUTTON_COIL", "READER_OFFSET_M",
]

# Truncation rule: keep integrating until exp(-s * dz_eff) falls below
# this level, with dz_eff floored at the wire radius so in-plane pairs
# still get a finite upper limit.
_TRUNCATION_LEVEL = 1e-12
# Beyond this centre separation (in units of a_i + a_q) the integrand is
# numerically intractable (billions of J0 oscillations) and the dipole
# asymptote is accurate to far better than the quadrature tolerance.
_DIPOLE_CUTOVER = 50.0


@dataclass(frozen=True)
class CoilGeometry:
    """Planar multi-turn circular loop.

    ``wire_radius_m`` doubles as the filament-regularization offset used
    by :func:`self_inductance`.
    """

    radius_m: float
    turns: int
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    wire_radius_m: float = 0.5e-3

    def __post_init__(self):
        if not self.radius_m > 0:
            raise ValueError(f"radius_m must be positive, got {self.radius_m}")
        if int(self.turns) != self.turns or self.turns < 1:
            raise ValueError(f"turns must be a positive integer, got {self.turns}")
        if not 0 < self.wire_radius_m < self.radius_m:
            raise ValueError(
                f"wire_radius_m must be in (0, radius_m), got {self.wire_radius_m}")
        if len(self.center) != 3:
            raise ValueError("center must be a 3-vector (x, y, z)")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    def displaced(self, dx=0.0, dy=0.0, dz=0.0) -> "CoilGeometry":
        x, y, z = self.center
        return CoilGeometry(self.radius_m, self.turns,
                            (x + dx, y + dy, z + dz), self.wire_radius_m)


@dataclass(frozen=True)
class Inductance:
    """Inductance in Henries. Mutual values may carry either sign."""

    value: float

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(f"inductance must be finite, got {self.value}")


# Button grid: 3x3, row-major from the top-left corner of the card face,
# offsets from the geometric card centre. Button 4 is the centre.
_GRID_X_M = (-27.5e-3, 0.0, 27.5e-3)
_GRID_Y_M = (18.0e-3, 0.0, -18.0e-3)
_GRID_POSITIONS = tuple((x, y) for y in _GRID_Y_M for x in _GRID_X_M)


@dataclass(frozen=True)
class ButtonGrid:
    """Nine press positions on a standard ID-1 card face."""

    card_width_m: float = 85.6e-3
    card_height_m: float = 55.0e-3
    positions: tuple = field(default=_GRID_POSITIONS)

    def __post_init__(self):
        if len(self.positions) != 9:
            raise ValueError("button grid requires exactly 9 positions")


def button_positions(grid: ButtonGrid | None = None) -> list[tuple[float, float]]:
    """(x, y) offsets of buttons 0..8 from the card centre, row-major."""
    grid = grid or ButtonGrid()
    return list(grid.positions)


def _pair_geometry(ci: CoilGeometry, cq: CoilGeometry) -> tuple[float, float]:
    """Lateral offset p and axial separation |dz| between coil centres."""
    dx = ci.center[0] - cq.center[0]
    dy = ci.center[1] - cq.center[1]
    dz = abs(ci.center[2] - cq.center[2])
    return math.hypot(dx, dy), dz


def _dipole_mutual(ci, cq, p, dz) -> float:
    """Far-field magnetic dipole asymptote for well-separated loops."""
    r2 = p * p + dz * dz
    r = math.sqrt(r2)
    cos2 = (dz * dz) / r2
    areas = ci.radius_m ** 2 * cq.radius_m ** 2 * ci.turns * cq.turns
    return mu_0 * math.pi * areas * (3.0 * cos2 - 1.0) / (4.0 * r ** 3)


def _bessel_mutual(ci, cq, p, dz, rel_tol) -> float:
    a_i, a_q = ci.radius_m, cq.radius_m
    dz_eff = max(dz, min(ci.wire_radius_m, cq.wire_radius_m))
    s_max = -math.log(_TRUNCATION_LEVEL) / dz_eff

    if p == 0.0:
        def integrand(s):
            return j1(s * a_i) * j1(s * a_q) * np.exp(-s * dz)
    else:
        def integrand(s):
            return j0(s * p) * j1(s * a_i) * j1(s * a_q) * np.exp(-s * dz)

    # Size initial panels to the fastest oscillation of the Bessel product
    # so the first error estimates are already meaningful.
    period = 2.0 * math.pi / (a_i + a_q + p)
    n0 = int(np.clip(2.0 * s_max / period, 16, 4096))
    value, _err = adaptive_quad(integrand, 0.0, s_max, rel_tol=rel_tol,
                                abs_tol=1e-16, initial_panels=n0)
    return mu_0 * math.pi * ci.turns * cq.turns * a_i * a_q * value


def mutual_inductance(ci: CoilGeometry, cq: CoilGeometry,
                      rel_tol: float = 1e-9) -> Inductance:
    """Mutual inductance between two parallel planar loops.

    Raises ``ValueError`` for coplanar pairs whose filament circles touch
    or intersect (the integral diverges there; use :func:`self_inductance`
    for a coil against itself) and :class:`QuadratureError` when the
    refinement budget is exhausted.
    """
    p, dz = _pair_geometry(ci, cq)
    if dz == 0.0:
        lo = abs(ci.radius_m - cq.radius_m)
        hi = ci.radius_m + cq.radius_m
        if lo <= p <= hi:
            raise ValueError(
                "coplanar filaments touch or intersect (p within "
                f"[{lo:.4g}, {hi:.4g}] m at dz = 0); for a coil against "
                "itself use self_inductance, which applies the wire-radius "
                "regularization")
    if p * p + dz * dz > (_DIPOLE_CUTOVER * (ci.radius_m + cq.radius_m)) ** 2:
        return Inductance(_dipole_mutual(ci, cq, p, dz))
    return Inductance(_bessel_mutual(ci, cq, p, dz, rel_tol))


def self_inductance(c: CoilGeometry, rel_tol: float = 1e-9) -> Inductance:
    """Self-inductance via the filament pair displaced by the wire radius."""
    twin = c.displaced(dz=c.wire_radius_m)
    value = _bessel_mutual(c, twin, 0.0, c.wire_radius_m, rel_tol)
    return Inductance(value)


def coupling_factor(m: Inductance, l1: Inductance, lp: Inductance) -> float:
    """k = M / sqrt(L1 * Lp)."""
    if l1.value <= 0 or lp.value <= 0:
        raise ValueError("self-inductances must be positive for a coupling factor")
    return m.value / math.sqrt(l1.value * lp.value)


# Table-scale default geometries: reader loop, card antenna loop and the
# small press coil, with the reader axis offset toward button 0.
READER_COIL = CoilGeometry(radius_m=0.0415, turns=3)
CARD_COIL = CoilGeometry(radius_m=0.0308, turns=3)
BUTTON_COIL = CoilGeometry(radius_m=0.0102, turns=2)
READER_OFFSET_M = (-30.28e-3, 12.47e-3)


def load_coil_config(path) -> dict[str, CoilGeometry]:
    """Read named coil geometries from a JSON config file.

    Expected shape: ``{"reader": {"radius_m": ..., "turns": ...,
    "center_m": [x, y, z], "wire_radius_m": ...}, ...}``. Lengths are
    metres; ``center_m`` and ``wire_radius_m`` are optional.
    """
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    coils = {}
    for name, spec in raw.items():
        unknown = set(spec) - {"radius_m", "turns", "center_m", "wire_radius_m"}
        if unknown:
            raise ValueError(f"unknown keys for coil {name!r}: {sorted(unknown)}")
        coils[name] = CoilGeometry(
            radius_m=float(spec["radius_m"]),
            turns=int(spec["turns"]),
            center=tuple(spec.get("center_m", (0.0, 0.0, 0.0))),
            wire_radius_m=float(spec.get("wire_radius_m", 0.5e-3)),
        )
    return coils


def export_button_grid_csv(path, grid: ButtonGrid | None = None):
    """Write the button grid as CSV rows of (index, x_mm, y_mm)."""
    grid = grid or ButtonGrid()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "x_mm", "y_mm"])
        for idx, (x, y) in enumerate(grid.positions):
            writer.writerow([idx, f"{x * 1e3:.3f}", f"{y * 1e3:.3f}"])
