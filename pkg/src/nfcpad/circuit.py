"""Reader-card-button coupled circuit: impedances, solves and sweeps.

The three magnetically coupled loops satisfy v = Z i with

    Z = [[Z1,       jw*M12,   jw*M1p],
         [jw*M12,   Z2,       jw*M2p],
         [jw*M1p,   jw*M2p,   Zp  ]]

and drive v = (v1, 0, 0): only the reader is excited, card and button
are passive. The card's load-modulation switch state ``u`` selects the
card capacitance (u = 1 disconnects the antenna trim capacitor, detuning
the tank and strengthening the reflected response).

Component values default to the bench parameter table (nanohenry-scale
inductances). Those inductances are circuit inputs, not values the coil
quadrature reproduces for the same radii; mutual inductances are therefore
formed as k_geometry * sqrt(Li * Lq) so the coupling factors stay physical
(|k| < 1, passive input impedance) at any inductance scale.
"""

from __future__ import annotations

import cmath
import csv
import json
import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from . import coil
from .coil import (BUTTON_COIL, CARD_COIL, READER_COIL, READER_OFFSET_M,
                   ButtonGrid, CoilGeometry, Inductance)

__all__ = [
    "ReaderCircuit", "CardCircuit", "ButtonCircuit", "CoupledSystem",
    "SingularSystemError", "tune_resonance", "reader_impedance",
    "card_impedance", "button_impedance", "build_system", "solve_system",
    "reflected_impedance", "input_impedance", "reflection_sweep",
    "reader_current_per_button", "CouplingSet", "bench_couplings",
    "table_reader", "table_card", "table_button", "sweep_to_csv",
    "sweep_to_plotdata", "F_CARRIER_HZ", "ACTIVATION_BAND_HZ",
]

F_CARRIER_HZ = 13.56e6
OMEGA_CARRIER = 2.0 * math.pi * F_CARRIER_HZ
ACTIVATION_BAND_HZ = (13.06e6, 14.06e6)

_COND_LIMIT = 1e12
_RESIDUAL_LIMIT = 1e-10


class SingularSystemError(RuntimeError):
    """Coupled impedance matrix is singular or hopelessly ill-conditioned."""


def tune_resonance(inductance_h: float, f_c: float = F_CARRIER_HZ) -> float:
    """Series/parallel resonance capacitance C = 1 / ((2 pi f_c)^2 L)."""
    if inductance_h <= 0 or f_c <= 0:
        raise ValueError("inductance and frequency must be positive")
    w = 2.0 * math.pi * f_c
    return 1.0 / (w * w * inductance_h)


@dataclass(frozen=True)
class ReaderCircuit:
    """Series-resonant reader loop with drive v1 and reference impedance Z0."""

    R1: float = 1.0
    L1: float = 13.8e-9
    C1: float = tune_resonance(13.8e-9)
    v1: float = 1.0
    Z0: float = 0.1

    def __post_init__(self):
        for name in ("R1", "L1", "C1", "v1", "Z0"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def tuned(self, f_c: float = F_CARRIER_HZ) -> "ReaderCircuit":
        return replace(self, C1=tune_resonance(self.L1, f_c))


@dataclass(frozen=True)
class CardCircuit:
    """Card antenna with parallel tank (C2' + C_P) and chip load R_L.

    ``u`` is the load-modulation state: u = 0 keeps the trim capacitor
    C2' connected (tuned tank, high load impedance, weak reflection),
    u = 1 disconnects it (C2 = C_P only, stronger reflection).
    """

    R2: float = 0.35
    L2: float = 15.2e-9
    C2_prime: float = 0.12 * tune_resonance(15.2e-9)
    C_P: float = 0.88 * tune_resonance(15.2e-9)
    R_L: float = 20.0
    u: int = 0

    def __post_init__(self):
        for name in ("R2", "L2", "C2_prime", "C_P", "R_L"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.u not in (0, 1):
            raise ValueError("u must be 0 or 1")

    @property
    def C2(self) -> float:
        """Effective tank capacitance for the current switch state."""
        return self.C_P if self.u else self.C2_prime + self.C_P

    def with_state(self, u: int) -> "CardCircuit":
        return replace(self, u=u)


@dataclass(frozen=True)
class ButtonCircuit:
    """Passive series RLC press coil."""

    Rp: float = 1.5
    Lp: float = 1.31e-9
    Cp: float = tune_resonance(1.31e-9)

    def __post_init__(self):
        for name in ("Rp", "Lp", "Cp"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def table_reader() -> ReaderCircuit:
    return ReaderCircuit()


def table_card(u: int = 0) -> CardCircuit:
    return CardCircuit(u=u)


def table_button() -> ButtonCircuit:
    return ButtonCircuit()


def reader_impedance(r: ReaderCircuit, omega: float) -> complex:
    """Z1 = R1 + jwL1 + 1/(jwC1)."""
    if omega <= 0:
        raise ValueError("omega must be positive")
    return r.R1 + 1j * omega * r.L1 + 1.0 / (1j * omega * r.C1)


def card_impedance(c: CardCircuit, omega: float) -> complex:
    """Z2 = R2 + jwL2 + (1/(jwC2) || R_L) with C2 set by the switch state."""
    if omega <= 0:
        raise ValueError("omega must be positive")
    zc = 1.0 / (1j * omega * c.C2)
    z_load = zc * c.R_L / (zc + c.R_L)
    return c.R2 + 1j * omega * c.L2 + z_load


def button_impedance(b: ButtonCircuit, omega: float) -> complex:
    """Zp = Rp + jwLp + 1/(jwCp)."""
    if omega <= 0:
        raise ValueError("omega must be positive")
    return b.Rp + 1j * omega * b.Lp + 1.0 / (1j * omega * b.Cp)


@dataclass(frozen=True)
class CoupledSystem:
    """Assembled 3x3 impedance matrix and drive for one operating point."""

    Z: np.ndarray
    v: np.ndarray
    M12: float
    M1p: float
    M2p: float
    omega: float

    def __post_init__(self):
        if self.Z.shape != (3, 3):
            raise ValueError("Z must be 3x3")
        if not np.array_equal(self.Z, self.Z.T):
            raise ValueError("impedance matrix must be symmetric (reciprocity)")


def build_system(reader: ReaderCircuit, card: CardCircuit,
                 button: ButtonCircuit | None, m12: float, m1p: float,
                 m2p: float, omega: float) -> CoupledSystem:
    """Assemble the coupled system; a missing button is a decoupled one."""
    if button is None:
        button = table_button()
        m1p = m2p = 0.0
    jw = 1j * omega
    Z = np.array([
        [reader_impedance(reader, omega), jw * m12, jw * m1p],
        [jw * m12, card_impedance(card, omega), jw * m2p],
        [jw * m1p, jw * m2p, button_impedance(button, omega)],
    ])
    v = np.array([reader.v1, 0.0, 0.0], dtype=complex)
    return CoupledSystem(Z=Z, v=v, M12=m12, M1p=m1p, M2p=m2p, omega=omega)


def solve_system(sys: CoupledSystem) -> tuple[complex, complex, complex]:
    """Currents (i1, i2, ip) from the direct complex solve of v = Z i."""
    cond = np.linalg.cond(sys.Z)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise SingularSystemError(
            f"impedance matrix condition estimate {cond:.3e} exceeds "
            f"{_COND_LIMIT:.0e}")
    i = np.linalg.solve(sys.Z, sys.v)
    residual = np.linalg.norm(sys.v - sys.Z @ i) / np.linalg.norm(sys.v)
    if residual > _RESIDUAL_LIMIT:
        raise SingularSystemError(
            f"solve residual {residual:.3e} exceeds {_RESIDUAL_LIMIT:.0e}")
    return i[0], i[1], i[2]


def reflected_impedance(omega: float, m12: float, m1p: float,
                        z2: complex, zp: complex) -> complex:
    """Two-branch reflected impedance w^2 M12^2 / Z2 + w^2 M1p^2 / Zp.

    This is the decoupled-branch diagnostic (it ignores the card-button
    coupling); the full 3x3 solve is the ground truth.
    """
    if z2 == 0 or zp == 0:
        raise ValueError("branch impedances must be nonzero")
    w2 = omega * omega
    return w2 * m12 * m12 / z2 + w2 * m1p * m1p / zp


def input_impedance(sys: CoupledSystem) -> complex:
    """Reader-port input impedance v1 / i1 from the full solve."""
    i1, _, _ = solve_system(sys)
    return sys.v[0] / i1


@dataclass(frozen=True)
class CouplingSet:
    """Mutual inductances for one bench layout: card plus nine buttons."""

    m12: float
    buttons: tuple  # nine (m1p, m2p) pairs
    k12: float
    k1p: tuple
    k2p: tuple

    def for_button(self, idx: int | None) -> tuple[float, float, float]:
        if idx is None:
            return self.m12, 0.0, 0.0
        m1p, m2p = self.buttons[idx]
        return self.m12, m1p, m2p


@lru_cache(maxsize=8)
def _geometry_factors(dz_card: float, standoff: float,
                      reader_offset: tuple[float, float]) -> tuple:
    """Quadrature coupling factors for the default coil trio."""
    ox, oy = reader_offset
    reader = READER_COIL.displaced(dx=ox, dy=oy)
    card = CARD_COIL.displaced(dz=dz_card)
    l1 = coil.self_inductance(reader)
    l2 = coil.self_inductance(card)
    lp = coil.self_inductance(BUTTON_COIL)
    k12 = coil.coupling_factor(coil.mutual_inductance(reader, card), l1, l2)
    k1p, k2p = [], []
    for bx, by in coil.button_positions(ButtonGrid()):
        btn = BUTTON_COIL.displaced(dx=bx, dy=by, dz=dz_card + standoff)
        k1p.append(coil.coupling_factor(coil.mutual_inductance(reader, btn), l1, lp))
        k2p.append(coil.coupling_factor(coil.mutual_inductance(card, btn), l2, lp))
    return k12, tuple(k1p), tuple(k2p), l1.value, l2.value, lp.value


def bench_couplings(reader: ReaderCircuit | None = None,
                    card: CardCircuit | None = None,
                    button: ButtonCircuit | None = None,
                    dz_card: float = 5e-3, standoff: float = 1e-3,
                    reader_offset: tuple[float, float] = READER_OFFSET_M,
                    ) -> CouplingSet:
    """Coupling set for the default layout at the circuits' L scale.

    Coupling factors come from the loop quadrature; mutuals are rescaled
    to M = k * sqrt(Li * Lq) of the circuit inductances, which preserves
    positive-semidefiniteness of the inductance matrix (a congruence by a
    positive diagonal) and hence passivity of the input impedance.
    """
    reader = reader or table_reader()
    card = card or table_card()
    button = button or table_button()
    k12, k1p, k2p, _, _, _ = _geometry_factors(dz_card, standoff,
                                               tuple(reader_offset))
    m12 = k12 * math.sqrt(reader.L1 * card.L2)
    buttons = tuple(
        (k1p[b] * math.sqrt(reader.L1 * button.Lp),
         k2p[b] * math.sqrt(card.L2 * button.Lp))
        for b in range(9))
    return CouplingSet(m12=m12, buttons=buttons, k12=k12, k1p=k1p, k2p=k2p)


def reflection_sweep(reader: ReaderCircuit, card: CardCircuit,
                     button: ButtonCircuit | None, couplings: CouplingSet,
                     f_lo: float, f_hi: float, n_points: int,
                     button_idx: int | None) -> list[tuple[float, complex]]:
    """S11(f) at the reader port over [f_lo, f_hi].

    S11 = (Z_in - Z0) / (Z_in + Z0) with Z_in from the full three-coil
    solve (or the card-only system when ``button_idx`` is None).
    """
    if not f_lo < f_hi:
        raise ValueError("f_lo must be below f_hi")
    if n_points < 2:
        raise ValueError("n_points must be at least 2")
    m12, m1p, m2p = couplings.for_button(button_idx)
    out = []
    for f in np.linspace(f_lo, f_hi, n_points):
        omega = 2.0 * math.pi * f
        sys = build_system(reader, card, button, m12, m1p, m2p, omega)
        zin = input_impedance(sys)
        s11 = (zin - reader.Z0) / (zin + reader.Z0)
        out.append((float(f), s11))
    return out


def reader_current_per_button(reader: ReaderCircuit, card: CardCircuit,
                              button: ButtonCircuit, couplings: CouplingSet,
                              f_grid) -> dict:
    """|i1|(f) for the card-only baseline and each of the nine buttons."""
    f_grid = np.asarray(f_grid, dtype=float)
    curves = {}
    for idx in [None] + list(range(9)):
        m12, m1p, m2p = couplings.for_button(idx)
        mags = []
        for f in f_grid:
            sys = build_system(reader, card, button if idx is not None else None,
                               m12, m1p, m2p, 2.0 * math.pi * f)
            i1, _, _ = solve_system(sys)
            mags.append(abs(i1))
        curves["card_only" if idx is None else f"button_{idx}"] = np.array(mags)
    return curves


def sweep_to_csv(path, sweeps: dict[int | None, list[tuple[float, complex]]]):
    """Write S11 sweeps as CSV rows (f_Hz, re_S11, im_S11, button_idx)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["f_Hz", "re_S11", "im_S11", "button_idx"])
        for idx, rows in sweeps.items():
            tag = -1 if idx is None else idx
            for f, s11 in rows:
                writer.writerow([f"{f:.1f}", f"{s11.real:.9e}",
                                 f"{s11.imag:.9e}", tag])


def sweep_to_plotdata(sweeps: dict, title: str, ylabel: str) -> dict:
    """Plot-data JSON payload consumed by the CLI plot emitter."""
    series = []
    for idx, rows in sweeps.items():
        label = "card only" if idx is None else f"button {idx}"
        series.append({
            "label": label,
            "x": [f for f, _ in rows],
            "y": [abs(v) for _, v in rows],
        })
    return {"kind": "lines", "title": title, "xlabel": "frequency (Hz)",
            "ylabel": ylabel, "series": series}


def save_plotdata(path, payload: dict):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)


def two_coil_card_current(reader: ReaderCircuit, card: CardCircuit,
                          m12: float, omega: float) -> tuple[complex, complex]:
    """Closed-form two-coil currents for the decoupled-button reduction.

    From the Kirchhoff system with v2 = 0: i2 = -jw M12 i1 / Z2 and
    i1 = v1 / (Z1 + w^2 M12^2 / Z2). (The sign of i2 follows the matrix
    sign convention; reflected impedance is invariant to it.)
    """
    z1 = reader_impedance(reader, omega)
    z2 = card_impedance(card, omega)
    i1 = reader.v1 / (z1 + omega * omega * m12 * m12 / z2)
    i2 = -1j * omega * m12 * i1 / z2
    return i1, i2
