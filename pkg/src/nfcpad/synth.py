"""Reader-side baseband synthesis of button-press responses.

A press is synthesized from the coupled-circuit model in three steps:

1. Geometry: the card (with its per-card parameter perturbations and
   per-orientation pose offsets) and the pressed button coil (with
   per-press placement jitter) are positioned, and the three mutual
   inductances are evaluated from the loop quadrature. This channel path
   runs at the quadrature-consistent inductance scale of the default coil
   geometries, so couplings need no rescaling and stay passive.
2. Amplitudes: the 3x3 system is solved at the carrier for both card
   load-modulation states. The reader port current of the resting state
   gives the standing response, the state difference gives the modulated
   component, and the card switching function from the codec
   interpolates between the states.
3. Shaping: the receive antenna's pickup of all three coil currents is
   evaluated across the band and normalized at the carrier; that
   response is the reader front end H(f), a loaded second-order
   resonance whose width and pull vary with the pressed position, which
   is what makes presses distinguishable after normalization.

The receive side is bistatic: a second loop, laterally offset from the
transmit loop, picks up jw * (M_r1 i1 + M_r2 i2 + M_rp ip). Its direct
transmit feedthrough is the standing CW line, and the receive capture is
mixed down with a small LO offset so that line stays clear of DC (and of
the drift-removal high-pass).

Traces persist as interleaved float32 IQ with a JSON sidecar.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from . import circuit, coil, iso15693
from .circuit import ButtonCircuit, CardCircuit, ReaderCircuit, tune_resonance
from .coil import BUTTON_COIL, CARD_COIL, READER_COIL, READER_OFFSET_M, ButtonGrid
from .iso15693 import UplinkModeSpec

__all__ = [
    "BasebandTrace", "TraceMeta", "ChannelModel", "CardVariation",
    "SynthConfig", "PressSynthesizer", "TriggerError", "add_awgn",
    "preprocess", "correlation_trigger", "extract_first_bits",
    "segment_length", "write_trace", "read_trace",
]

DEFAULT_SAMPLE_RATE = 2e6
DEFAULT_PAYLOAD_BITS = (0, 0, 0, 0, 0, 0, 0, 0, 0)


class TriggerError(RuntimeError):
    """Correlation trigger found no synchronization point."""

    def __init__(self, message: str, peak: float):
        super().__init__(message)
        self.peak = peak


@dataclass(frozen=True)
class TraceMeta:
    card_id: str = "card"
    button_idx: int | None = None
    orientation_idx: int = 0
    press_idx: int = 0
    snr_db: float | None = None
    seed: int = 0


@dataclass(frozen=True)
class BasebandTrace:
    """Complex IQ samples at a fixed rate plus acquisition metadata."""

    samples: np.ndarray
    sample_rate: float = DEFAULT_SAMPLE_RATE
    meta: TraceMeta = field(default_factory=TraceMeta)

    def __post_init__(self):
        if len(self.samples) == 0:
            raise ValueError("trace must not be empty")
        if self.sample_rate <= 2.0 * iso15693.F_SUBCARRIER_HZ:
            raise ValueError("sample rate must exceed twice the subcarrier")

    def with_samples(self, samples: np.ndarray) -> "BasebandTrace":
        return replace(self, samples=samples)


@dataclass(frozen=True)
class ChannelModel:
    """Eq-style channel summary for one press configuration."""

    center_hz: float
    loaded_q: float
    coupling_k: float
    a_cw: float
    a_card: float

    def __post_init__(self):
        if self.loaded_q <= 0:
            raise ValueError("loaded Q must be positive")
        if not 0.0 <= self.coupling_k <= 1.0:
            raise ValueError("coupling factor must lie in [0, 1]")
        if self.a_cw < 0 or self.a_card < 0:
            raise ValueError("amplitudes must be non-negative")


@dataclass(frozen=True)
class CardVariation:
    """Per-card hardware spread and placement jitter, seed-deterministic.

    Fractional bounds apply to the card inductance, resistance and tank
    capacitance (uniform in +-bound). Pose offsets are drawn once per
    orientation; the press coil position jitters per press.
    """

    card_id: str = "card0"
    seed: int = 0
    l2_frac: float = 0.02
    r2_frac: float = 0.02
    c2_frac: float = 0.02
    press_jitter_m: float = 1.0e-3
    orientation_lateral_m: float = 2.0e-3
    orientation_axial_m: float = 0.3e-3
    n_orientations: int = 5

    def _rng(self, *key: int) -> np.random.Generator:
        return np.random.default_rng(
            np.random.SeedSequence(entropy=self.seed, spawn_key=key))

    def electrical(self) -> tuple[float, float, float]:
        """(dL2, dR2, dC2) fractional perturbations for this card."""
        r = self._rng(0)
        return tuple(r.uniform(-f, f) for f in
                     (self.l2_frac, self.r2_frac, self.c2_frac))

    def orientation_offset(self, orientation_idx: int) -> tuple[float, float, float]:
        if not 0 <= orientation_idx < self.n_orientations:
            raise ValueError(
                f"orientation_idx must be in 0..{self.n_orientations - 1}")
        if orientation_idx == 0:
            return (0.0, 0.0, 0.0)  # reference pose
        r = self._rng(1, orientation_idx)
        return (r.uniform(-self.orientation_lateral_m, self.orientation_lateral_m),
                r.uniform(-self.orientation_lateral_m, self.orientation_lateral_m),
                r.uniform(-self.orientation_axial_m, self.orientation_axial_m))

    def press_jitter(self, button_idx: int, orientation_idx: int,
                     press_idx: int) -> tuple[float, float]:
        r = self._rng(2, button_idx, orientation_idx, press_idx)
        return (r.uniform(-self.press_jitter_m, self.press_jitter_m),
                r.uniform(-self.press_jitter_m, self.press_jitter_m))

    def noise_seed(self, button_idx: int, orientation_idx: int,
                   press_idx: int) -> np.random.SeedSequence:
        return np.random.SeedSequence(entropy=self.seed,
                                      spawn_key=(3, button_idx,
                                                 orientation_idx, press_idx))


@dataclass(frozen=True)
class SynthConfig:
    """Layout and electrical defaults for the synthesis channel."""

    sample_rate: float = DEFAULT_SAMPLE_RATE
    f_c: float = circuit.F_CARRIER_HZ
    dz_card_m: float = 5.0e-3
    button_standoff_m: float = 0.8e-3
    reader_offset_m: tuple = READER_OFFSET_M
    r1_ohm: float = 1.0
    r2_ohm: float = 0.35
    rp_ohm: float = 1.5
    r_load_ohm: float = 1000.0
    trim_fraction: float = 0.5    # share of the tank capacitance switched off at u=1
    rx_offset_m: tuple = (14e-3, -18e-3)  # receive loop centre offset
    rx_dz_m: float = -3e-3        # receive loop axial offset (stacked antennas)
    rx_radius_m: float = 26e-3    # small pickup loop sharpens position weighting
    rx_turns: int = 3
    feedthrough_cancel: float = 0.7  # active carrier suppression at the receiver
    if_offset_hz: float = 150e3   # receiver LO offset; keeps the carrier off DC
    guard_samples: int = 360
    tail_samples: int = 120
    payload_bits: tuple = DEFAULT_PAYLOAD_BITS
    mode: UplinkModeSpec = field(default_factory=UplinkModeSpec)


@lru_cache(maxsize=4)
def _base_inductances(_key: int = 0) -> tuple[float, float, float]:
    l1 = coil.self_inductance(READER_COIL).value
    l2 = coil.self_inductance(CARD_COIL).value
    lp = coil.self_inductance(BUTTON_COIL).value
    return l1, l2, lp


class _MutualProfile:
    """Cubic-spline cache of M(p) for a coil pair at fixed axial gap."""

    def __init__(self, ci: coil.CoilGeometry, cq_template: coil.CoilGeometry,
                 dz: float, p_max: float, n_nodes: int = 72):
        grid = np.linspace(0.0, p_max, n_nodes)
        vals = [coil.mutual_inductance(
            ci, cq_template.displaced(dx=p, dz=dz)).value for p in grid]
        self._spline = CubicSpline(grid, vals)
        self.p_max = p_max

    def __call__(self, p: float) -> float:
        if p > self.p_max:
            raise ValueError(f"lateral offset {p} beyond profile range")
        return float(self._spline(p))


class PressSynthesizer:
    """Generates button-press baseband traces for one layout config."""

    def __init__(self, config: SynthConfig | None = None,
                 grid: ButtonGrid | None = None):
        self.config = config or SynthConfig()
        self.grid = grid or ButtonGrid()
        l1, l2, lp = _base_inductances()
        self.l1, self.l2, self.lp = l1, l2, lp
        cfg = self.config
        c2_total = tune_resonance(l2, cfg.f_c)
        self._reader = ReaderCircuit(R1=cfg.r1_ohm, L1=l1,
                                     C1=tune_resonance(l1, cfg.f_c))
        self._card_nominal = CardCircuit(
            R2=cfg.r2_ohm, L2=l2,
            C2_prime=cfg.trim_fraction * c2_total,
            C_P=(1.0 - cfg.trim_fraction) * c2_total,
            R_L=cfg.r_load_ohm)
        self._button = ButtonCircuit(Rp=cfg.rp_ohm, Lp=lp,
                                     Cp=tune_resonance(lp, cfg.f_c))
        self._rx_coil = coil.CoilGeometry(cfg.rx_radius_m, cfg.rx_turns)
        self._profiles: dict = {}
        self._m12_cache: dict = {}

    # -- geometry ---------------------------------------------------------

    def _card_circuit(self, card: CardVariation) -> CardCircuit:
        dl2, dr2, dc2 = card.electrical()
        base = self._card_nominal
        return CardCircuit(R2=base.R2 * (1.0 + dr2),
                           L2=base.L2 * (1.0 + dl2),
                           C2_prime=base.C2_prime * (1.0 + dc2),
                           C_P=base.C_P * (1.0 + dc2),
                           R_L=base.R_L)

    def _profile(self, kind: str, dz: float) -> _MutualProfile:
        key = (kind, round(dz, 9))
        if key not in self._profiles:
            if kind == "reader_button":
                self._profiles[key] = _MutualProfile(
                    READER_COIL.displaced(), BUTTON_COIL, dz, p_max=0.12)
            elif kind == "rx_button":
                self._profiles[key] = _MutualProfile(
                    self._rx_coil, BUTTON_COIL, dz, p_max=0.12)
            elif kind == "card_button":
                self._profiles[key] = _MutualProfile(
                    CARD_COIL.displaced(), BUTTON_COIL, dz, p_max=0.08)
            else:
                raise KeyError(kind)
        return self._profiles[key]

    def _fixed_mutuals(self) -> float:
        """Transmit-to-receive feedthrough M_r1 (layout constant)."""
        if not hasattr(self, "_mr1"):
            cfg = self.config
            ox, oy = cfg.reader_offset_m
            rx_coil = self._rx_coil.displaced(dx=cfg.rx_offset_m[0],
                                              dy=cfg.rx_offset_m[1],
                                              dz=cfg.rx_dz_m)
            self._mr1 = coil.mutual_inductance(
                READER_COIL.displaced(dx=ox, dy=oy), rx_coil).value
        return self._mr1

    def _couplings(self, button_idx: int | None, card: CardVariation,
                   orientation_idx: int, press_idx: int,
                   position_m: tuple | None = None) -> dict:
        """All six mutual inductances for one press placement."""
        cfg = self.config
        ox, oy = cfg.reader_offset_m
        rx, ry = cfg.rx_offset_m
        cx, cy, cz = card.orientation_offset(orientation_idx)
        card_z = cfg.dz_card_m + cz

        key = (card.card_id, orientation_idx)
        if key not in self._m12_cache:
            p12 = math.hypot(cx - ox, cy - oy)
            pr2 = math.hypot(cx - rx, cy - ry)
            self._m12_cache[key] = (
                coil.mutual_inductance(
                    READER_COIL, CARD_COIL.displaced(dx=p12, dz=card_z)).value,
                coil.mutual_inductance(
                    self._rx_coil,
                    CARD_COIL.displaced(dx=pr2, dz=card_z - cfg.rx_dz_m)).value,
            )
        m12, mr2 = self._m12_cache[key]
        out = {"m12": m12, "mr1": self._fixed_mutuals(), "mr2": mr2,
               "m1p": 0.0, "m2p": 0.0, "mrp": 0.0, "k1p": 0.0}

        if button_idx is None and position_m is None:
            return out

        if position_m is not None:
            bx, by = position_m
        else:
            bx, by = self.grid.positions[button_idx]
        # index 9 is the jitter stream for off-grid placements
        jx, jy = card.press_jitter(9 if button_idx is None else button_idx,
                                   orientation_idx, press_idx)
        # button rides on the card face: card pose offsets apply to it too
        wx, wy = bx + cx + jx, by + cy + jy
        bz = card_z + cfg.button_standoff_m

        out["m1p"] = self._profile("reader_button", bz)(
            math.hypot(wx - ox, wy - oy))
        out["mrp"] = self._profile("rx_button", bz - cfg.rx_dz_m)(
            math.hypot(wx - rx, wy - ry))
        out["m2p"] = self._profile("card_button", cfg.button_standoff_m)(
            math.hypot(wx - cx, wy - cy))
        out["k1p"] = out["m1p"] / math.sqrt(self.l1 * self.lp)
        return out

    # -- circuit response -------------------------------------------------

    def _rx_transfer(self, card_circ: CardCircuit, mut: dict):
        """Vectorized receive-port voltage V_rx(omega) per unit drive.

        The passive card/button block is eliminated in closed form, the
        three branch currents are recovered, and the receive loop sums
        them with its pickup mutuals: V_rx = jw (M_r1 i1 + M_r2 i2 +
        M_rp ip).
        """
        reader, button = self._reader, self._button
        m12, m1p, m2p = mut["m12"], mut["m1p"], mut["m2p"]
        mr1, mr2, mrp = mut["mr1"], mut["mr2"], mut["mrp"]

        def v_rx(omega):
            omega = np.asarray(omega, dtype=float)
            z1 = reader.R1 + 1j * omega * reader.L1 + 1.0 / (1j * omega * reader.C1)
            zc = 1.0 / (1j * omega * card_circ.C2)
            z2 = (card_circ.R2 + 1j * omega * card_circ.L2
                  + zc * card_circ.R_L / (zc + card_circ.R_L))
            zp = button.Rp + 1j * omega * button.Lp + 1.0 / (1j * omega * button.Cp)
            det = z2 * zp + (omega * m2p) ** 2
            q11, q22 = zp / det, z2 / det
            q12 = -1j * omega * m2p / det
            b1, b2 = 1j * omega * m12, 1j * omega * m1p
            zin = z1 - (b1 * b1 * q11 + 2.0 * b1 * b2 * q12 + b2 * b2 * q22)
            i1 = reader.v1 / zin
            i2 = -(q11 * b1 + q12 * b2) * i1
            ip = -(q12 * b1 + q22 * b2) * i1
            return 1j * omega * (mr1 * i1 + mr2 * i2 + mrp * ip)

        return v_rx

    def _press_state(self, button_idx, card, orientation_idx, press_idx,
                     position_m=None, card_present=True):
        cfg = self.config
        mut = self._couplings(button_idx, card, orientation_idx, press_idx,
                              position_m)
        if not card_present:
            mut = {**mut, "m12": 0.0, "mr2": 0.0, "m2p": 0.0}
        card_circ = self._card_circuit(card)
        w_c = 2.0 * math.pi * cfg.f_c

        responses = []
        rx_rest = None
        for u in (0, 1):
            rx_u = self._rx_transfer(card_circ.with_state(u), mut)
            if u == 0:
                rx_rest = rx_u
            responses.append(complex(rx_u(np.array([w_c]))[0]))
        a_rest, a_mod = responses[0], responses[1] - responses[0]
        k1p = mut["k1p"]
        gain = 1.0 + abs(k1p) if (button_idx is not None or position_m is not None) else 1.0
        return mut, k1p, rx_rest, a_rest, a_mod, gain, w_c

    def channel_model(self, button_idx, card: CardVariation,
                      orientation_idx: int = 0, press_idx: int = 0,
                      position_m=None) -> ChannelModel:
        (_mut, k1p, rx, a_rest, a_mod, gain,
         w_c) = self._press_state(button_idx, card, orientation_idx,
                                  press_idx, position_m)
        # loaded Q from the half-power width of the receive response
        f_c = self.config.f_c
        probe = np.linspace(0.6 * f_c, 1.4 * f_c, 4001)
        mag = np.abs(rx(2.0 * math.pi * probe))
        peak = np.argmax(mag)
        above = mag >= mag[peak] / math.sqrt(2.0)
        lo = probe[:peak + 1][np.argmax(above[:peak + 1])]
        hi = probe[peak:][len(above[peak:]) - 1 - np.argmax(above[peak:][::-1])]
        loaded_q = probe[peak] / max(hi - lo, probe[1] - probe[0])
        standing = (1.0 - self.config.feedthrough_cancel) * a_rest
        a_cw = abs(gain * (standing + 0.5 * a_mod))
        return ChannelModel(center_hz=float(probe[peak]), loaded_q=float(loaded_q),
                            coupling_k=min(abs(k1p), 1.0),
                            a_cw=a_cw, a_card=0.5 * abs(a_mod) * gain)

    # -- synthesis --------------------------------------------------------

    def switching_function(self, payload_bits=None) -> np.ndarray:
        cfg = self.config
        bits = cfg.payload_bits if payload_bits is None else tuple(payload_bits)
        return iso15693.encode_response(bits, cfg.mode, cfg.sample_rate)

    def response_start(self) -> int:
        """Sample index where the response SOF begins."""
        return self.config.guard_samples

    def sof_samples(self) -> int:
        return iso15693.response_sof_samples(self.config.mode,
                                             self.config.sample_rate)

    def synthesize_press(self, button_idx: int | None, card: CardVariation,
                         orientation_idx: int = 0, payload_bits=None,
                         press_idx: int = 0, snr_db: float | None = None,
                         position_m: tuple | None = None,
                         card_present: bool = True) -> BasebandTrace:
        """One complex baseband capture of a press response.

        ``button_idx`` None synthesizes the card-only response;
        ``position_m`` overrides the grid position for off-grid presses;
        ``card_present`` False leaves only the transmit feedthrough (an
        empty field). ``snr_db`` None keeps the trace noise-free.
        """
        if button_idx is not None and not 0 <= button_idx <= 8:
            raise ValueError("button_idx must be in 0..8 or None")
        cfg = self.config
        (_mut, _k1p, rx, a_rest, a_mod, gain,
         w_c) = self._press_state(button_idx, card, orientation_idx,
                                  press_idx, position_m, card_present)

        m = self.switching_function(payload_bits)
        n = cfg.guard_samples + len(m) + cfg.tail_samples
        mod = np.zeros(n, dtype=complex)
        mod[cfg.guard_samples:cfg.guard_samples + len(m)] = m
        # the receiver's adaptive canceller nulls most of the standing
        # carrier (feedthrough plus resting reflection); the modulated
        # component passes through untouched
        standing = (1.0 - cfg.feedthrough_cancel) * a_rest
        x = gain * (standing + a_mod * mod)

        # front-end shaping: receive response normalized at the carrier
        freqs = np.fft.fftfreq(n, 1.0 / cfg.sample_rate)
        h_band = rx(w_c + 2.0 * math.pi * freqs) / complex(rx(np.array([w_c]))[0])
        shaped = np.fft.ifft(np.fft.fft(x) * h_band)
        # receiver LO offset: the carrier lands at +if_offset in the capture
        if cfg.if_offset_hz:
            shaped = shaped * np.exp(2j * np.pi * cfg.if_offset_hz
                                     * np.arange(n) / cfg.sample_rate)

        meta = TraceMeta(card_id=card.card_id,
                         button_idx=button_idx,
                         orientation_idx=orientation_idx,
                         press_idx=press_idx, snr_db=snr_db, seed=card.seed)
        trace = BasebandTrace(samples=shaped, sample_rate=cfg.sample_rate,
                              meta=meta)
        if snr_db is not None and not math.isinf(snr_db):
            rng = np.random.default_rng(
                card.noise_seed(9 if button_idx is None else button_idx,
                                orientation_idx, press_idx))
            trace = add_awgn(trace, snr_db, rng=rng)
        return trace


def add_awgn(trace: BasebandTrace, snr_db: float,
             rng: np.random.Generator | None = None,
             seed: int | None = None) -> BasebandTrace:
    """Complex white Gaussian noise at the requested SNR (inf = identity)."""
    if math.isinf(snr_db) and snr_db > 0:
        return trace
    if not math.isfinite(snr_db):
        raise ValueError(f"snr_db must be finite or +inf, got {snr_db}")
    if rng is None:
        rng = np.random.default_rng(seed)
    x = trace.samples
    p_sig = float(np.mean(np.abs(x) ** 2))
    p_noise = p_sig / (10.0 ** (snr_db / 10.0))
    sigma = math.sqrt(p_noise / 2.0)
    noise = sigma * (rng.standard_normal(len(x))
                     + 1j * rng.standard_normal(len(x)))
    meta = replace(trace.meta, snr_db=snr_db)
    return BasebandTrace(samples=x + noise, sample_rate=trace.sample_rate,
                         meta=meta)


def preprocess(trace: BasebandTrace, window_periods: float = 50.0) -> BasebandTrace:
    """Remove the slow baseline and normalize to unit RMS.

    The baseline is the low-band content below the reciprocal of a
    ``window_periods``-subcarrier-period averaging window, removed as an
    exact spectral projection. A sliding-average kernel of that length
    would target the same band but is not a projection (reapplying it
    keeps changing the trace through its sidelobes); the projection keeps
    the drift-removal semantics and makes preprocessing idempotent to
    floating-point accuracy.
    """
    x = trace.samples
    if not np.any(x):
        raise ValueError("all-zero trace cannot be normalized")
    window_s = window_periods / iso15693.F_SUBCARRIER_HZ
    f_cut = 1.0 / window_s
    freqs = np.fft.fftfreq(len(x), 1.0 / trace.sample_rate)
    spec = np.fft.fft(x)
    spec[np.abs(freqs) <= f_cut] = 0.0
    y = np.fft.ifft(spec)
    rms = math.sqrt(float(np.mean(np.abs(y) ** 2)))
    if rms == 0.0:
        raise ValueError("trace is constant; nothing left after drift removal")
    return trace.with_samples(y / rms)


def correlation_trigger(trace: BasebandTrace, reference: np.ndarray,
                        threshold: float = 0.5) -> tuple[int, float]:
    """Index and value of the peak normalized cross-correlation.

    The correlation magnitude is normalized per lag, so the peak lies in
    [0, 1]; peaks below ``threshold`` raise :class:`TriggerError` (the
    unsynchronized-trace replacement path).
    """
    x = trace.samples
    ref = np.asarray(reference)
    m = len(ref)
    if m >= len(x):
        raise ValueError("reference must be shorter than the trace")
    n_lags = len(x) - m + 1
    corr = np.correlate(x, ref, mode="valid")
    power = np.cumsum(np.abs(x) ** 2)
    seg = power[m - 1:] - np.concatenate([[0.0], power[:-m]])[:n_lags]
    denom = np.sqrt(np.maximum(seg, 1e-300)) * np.linalg.norm(ref)
    score = np.abs(corr) / denom
    k = int(np.argmax(score))
    peak = float(score[k])
    if peak < threshold:
        raise TriggerError(
            f"no synchronization: peak {peak:.3f} below {threshold}", peak)
    return k, peak


def segment_length(n_bits: int = 8, sample_rate: float = DEFAULT_SAMPLE_RATE,
                   mode: UplinkModeSpec | None = None) -> int:
    mode = mode or UplinkModeSpec()
    return int(round(n_bits * sample_rate / mode.data_rate_bps))


def extract_first_bits(trace: BasebandTrace, start: int, n_bits: int = 8,
                       mode: UplinkModeSpec | None = None) -> BasebandTrace:
    """Fixed-length segment of the first ``n_bits`` response bits."""
    length = segment_length(n_bits, trace.sample_rate, mode)
    if start < 0 or start + length > len(trace.samples):
        raise ValueError(
            f"segment [{start}, {start + length}) outside trace of "
            f"{len(trace.samples)} samples")
    return trace.with_samples(trace.samples[start:start + length].copy())


# -- trace files -----------------------------------------------------------

def write_trace(path, trace: BasebandTrace):
    """Interleaved float32 IQ plus a JSON sidecar next to it."""
    path = Path(path)
    iq = np.empty(2 * len(trace.samples), dtype="<f4")
    iq[0::2] = trace.samples.real
    iq[1::2] = trace.samples.imag
    iq.tofile(path)
    meta = trace.meta
    sidecar = {
        "sample_rate": trace.sample_rate,
        "card_id": meta.card_id,
        "button_idx": meta.button_idx,
        "orientation_idx": meta.orientation_idx,
        "press_idx": meta.press_idx,
        "snr_db": meta.snr_db,
        "seed": meta.seed,
    }
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(sidecar), encoding="utf-8")


def read_trace(path) -> BasebandTrace:
    path = Path(path)
    iq = np.fromfile(path, dtype="<f4")
    samples = iq[0::2].astype(float) + 1j * iq[1::2].astype(float)
    sidecar = json.loads(
        path.with_suffix(path.suffix + ".json").read_text(encoding="utf-8"))
    meta = TraceMeta(card_id=sidecar["card_id"],
                     button_idx=sidecar["button_idx"],
                     orientation_idx=sidecar["orientation_idx"],
                     press_idx=sidecar["press_idx"],
                     snr_db=sidecar["snr_db"], seed=sidecar["seed"])
    return BasebandTrace(samples=samples, sample_rate=sidecar["sample_rate"],
                         meta=meta)
