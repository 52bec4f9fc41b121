"""Dataset generation and the calibrate/evaluate protocol.

The synthetic dataset mirrors the collection shape: per card, 9 buttons
x 5 orientations x 100 presses (4,500 traces per card; 72,000 for the
default 16 cards). Cards split into source cards (whose data may carry
labels into calibration) and target cards (evaluation only). 10 % of
each source card's presses are tagged ``calibration``, the rest
``source-train``; target presses are ``target-eval``.

Label hygiene is enforced mechanically: every label access goes through
:class:`DatasetReader`, which checks the entry's role against the
reader's capability set and appends the access to an audit log. The
calibration path opens a reader without target access, so a regression
that leaked evaluation labels would raise, not silently succeed.

Rate definitions used in reports (per press: predicted class c, true
label y, accept flag a):

* AR    = 100 * P(a = 1 and c = y)                 (accepted and correct)
* FRR_b = 100 * P(not (c = b and a = 1) | y = b)   (genuine presses of b
  not accepted as b)
* FAR_b = 100 * P(c = b and a = 1 | y != b)        (cross-button impostor
  trials for b that were accepted as b)

Overall FRR pools genuine presses over all buttons, so AR + FRR = 100
exactly; overall FAR pools the per-button impostor trials (each press is
an impostor trial for the eight buttons it does not belong to).

Noise sweeps follow the acquisition protocol: traces are synchronized
once at their stored collection SNR, then AWGN is injected into the raw
aligned capture before drift removal and normalization, and the full
calibrate/evaluate chain reruns on the degraded data.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import features, recognition, synth
from .features import SpectralExtractor
from .recognition import ClassStats, ThresholdTable
from .synth import (BasebandTrace, CardVariation, PressSynthesizer,
                    SynthConfig, correlation_trigger, extract_first_bits,
                    preprocess, read_trace, segment_length, write_trace)

__all__ = [
    "DatasetConfig", "DatasetManifest", "DatasetEntry", "DatasetReader",
    "LabelAccessError", "EvalReport", "PressPipeline", "generate_dataset",
    "load_manifest", "calibrate", "evaluate", "sweep_alpha", "sweep_snr",
    "DEFAULT_ALPHA", "report_to_json",
]

DEFAULT_ALPHA = 0.025
ROLE_SOURCE = "source-train"
ROLE_CALIBRATION = "calibration"
ROLE_TARGET = "target-eval"


class LabelAccessError(PermissionError):
    """A label was requested for a role the reader may not expose."""


@dataclass(frozen=True)
class DatasetConfig:
    n_cards: int = 16
    n_source_cards: int = 4
    n_orientations: int = 5
    n_presses: int = 100
    calibration_fraction: float = 0.10
    snr_db: float | None = 30.0
    master_seed: int = 20250
    l2_frac: float = 0.02
    r2_frac: float = 0.02
    c2_frac: float = 0.02
    press_jitter_m: float = 1.0e-3
    orientation_lateral_m: float = 2.0e-3
    orientation_axial_m: float = 0.3e-3
    synth: SynthConfig = field(default_factory=SynthConfig)

    def __post_init__(self):
        if not 1 <= self.n_source_cards < self.n_cards:
            raise ValueError("need at least one source and one target card")
        if not 0.0 < self.calibration_fraction < 1.0:
            raise ValueError("calibration_fraction must be in (0, 1)")

    def card(self, idx: int) -> CardVariation:
        seed = int(np.random.SeedSequence(
            entropy=self.master_seed, spawn_key=(idx,)).generate_state(1)[0])
        return CardVariation(
            card_id=f"card{idx:02d}", seed=seed,
            l2_frac=self.l2_frac, r2_frac=self.r2_frac, c2_frac=self.c2_frac,
            press_jitter_m=self.press_jitter_m,
            orientation_lateral_m=self.orientation_lateral_m,
            orientation_axial_m=self.orientation_axial_m,
            n_orientations=self.n_orientations)

    def roles_for_card(self, idx: int) -> str:
        return ROLE_SOURCE if idx < self.n_source_cards else ROLE_TARGET


@dataclass(frozen=True)
class DatasetEntry:
    card_idx: int
    card_id: str
    button_idx: int
    orientation_idx: int
    press_idx: int
    role: str
    path: str
    snr_db: float | None


@dataclass(frozen=True)
class DatasetManifest:
    root: str
    config: DatasetConfig
    entries: tuple

    @property
    def n_entries(self) -> int:
        return len(self.entries)

    def by_role(self, *roles: str) -> list[DatasetEntry]:
        want = set(roles)
        return [e for e in self.entries if e.role in want]


def _calibration_presses(cfg: DatasetConfig) -> int:
    return max(1, round(cfg.calibration_fraction * cfg.n_presses))


def generate_dataset(out_dir, config: DatasetConfig | None = None,
                     progress=None) -> DatasetManifest:
    """Synthesize the dataset to disk and return its manifest.

    Deterministic for a fixed config: card seeds derive from the master
    seed, per-press jitter and noise streams from each card's seed.
    """
    cfg = config or DatasetConfig()
    root = Path(out_dir)
    (root / "traces").mkdir(parents=True, exist_ok=True)
    synthesizer = PressSynthesizer(cfg.synth)
    n_cal = _calibration_presses(cfg)

    entries = []
    t0 = time.time()
    for card_idx in range(cfg.n_cards):
        card = cfg.card(card_idx)
        card_dir = root / "traces" / card.card_id
        card_dir.mkdir(exist_ok=True)
        base_role = cfg.roles_for_card(card_idx)
        for button in range(9):
            for orient in range(cfg.n_orientations):
                for press in range(cfg.n_presses):
                    trace = synthesizer.synthesize_press(
                        button, card, orient, press_idx=press,
                        snr_db=cfg.snr_db)
                    rel = (f"traces/{card.card_id}/"
                           f"b{button}_o{orient}_p{press:03d}.iq")
                    write_trace(root / rel, trace)
                    if base_role == ROLE_SOURCE and press < n_cal:
                        role = ROLE_CALIBRATION
                    else:
                        role = base_role
                    entries.append(DatasetEntry(
                        card_idx=card_idx, card_id=card.card_id,
                        button_idx=button, orientation_idx=orient,
                        press_idx=press, role=role, path=rel,
                        snr_db=cfg.snr_db))
        if progress:
            progress(f"card {card_idx + 1}/{cfg.n_cards} done "
                     f"({time.time() - t0:.0f} s elapsed)")

    manifest = DatasetManifest(root=str(root), config=cfg,
                               entries=tuple(entries))
    _write_manifest(root / "manifest.jsonl", manifest)
    return manifest


def _write_manifest(path: Path, manifest: DatasetManifest):
    cfg = dataclasses.asdict(manifest.config)
    cfg["synth"]["mode"] = dataclasses.asdict(manifest.config.synth.mode)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"kind": "header", "config": cfg}) + "\n")
        for e in manifest.entries:
            fh.write(json.dumps({"kind": "entry",
                                 **dataclasses.asdict(e)}) + "\n")


def load_manifest(root) -> DatasetManifest:
    root = Path(root)
    entries = []
    config = None
    with open(root / "manifest.jsonl", encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            if rec["kind"] == "header":
                raw = rec["config"]
                synth_raw = raw.pop("synth")
                mode_raw = synth_raw.pop("mode")
                from .iso15693 import UplinkModeSpec
                synth_cfg = SynthConfig(
                    **{**synth_raw,
                       "reader_offset_m": tuple(synth_raw["reader_offset_m"]),
                       "rx_offset_m": tuple(synth_raw["rx_offset_m"]),
                       "payload_bits": tuple(synth_raw["payload_bits"]),
                       "mode": UplinkModeSpec(**mode_raw)})
                config = DatasetConfig(**raw, synth=synth_cfg)
            else:
                rec.pop("kind")
                entries.append(DatasetEntry(**rec))
    if config is None:
        raise ValueError("manifest has no header record")
    return DatasetManifest(root=str(root), config=config,
                           entries=tuple(entries))


class DatasetReader:
    """Role-gated access to traces and labels, with an audit log."""

    def __init__(self, manifest: DatasetManifest,
                 label_roles=frozenset({ROLE_SOURCE, ROLE_CALIBRATION}),
                 audit_log: list | None = None):
        self.manifest = manifest
        self.label_roles = frozenset(label_roles)
        self.audit_log = audit_log if audit_log is not None else []

    def load_trace(self, entry: DatasetEntry) -> BasebandTrace:
        return read_trace(Path(self.manifest.root) / entry.path)

    def label(self, entry: DatasetEntry) -> int:
        if entry.role not in self.label_roles:
            raise LabelAccessError(
                f"label access denied for role {entry.role!r} "
                f"(reader allows {sorted(self.label_roles)})")
        self.audit_log.append((entry.role, entry.card_id, entry.button_idx,
                               entry.orientation_idx, entry.press_idx))
        return entry.button_idx


class PressPipeline:
    """Trace-to-embedding chain shared by calibration and evaluation.

    Preprocess, locate the response with the correlation trigger
    constrained to a window around the known reply position (the command
    timing is known, as in the acquisition protocol), extract the first
    8 bits, and extract spectral features.
    """

    def __init__(self, synth_config: SynthConfig | None = None,
                 n_bits: int = 8, search_slack: int = 40):
        self.synth_config = synth_config or SynthConfig()
        self.synthesizer = PressSynthesizer(self.synth_config)
        self.n_bits = n_bits
        self.search_slack = search_slack
        self.extractor = SpectralExtractor(
            sample_rate=self.synth_config.sample_rate, n_bits=n_bits,
            if_offset_hz=self.synth_config.if_offset_hz)
        nominal = CardVariation(card_id="reference", seed=0, l2_frac=0.0,
                                r2_frac=0.0, c2_frac=0.0,
                                press_jitter_m=0.0,
                                orientation_lateral_m=0.0,
                                orientation_axial_m=0.0)
        ref_trace = preprocess(self.synthesizer.synthesize_press(4, nominal, 0))
        start = self.synthesizer.response_start()
        ref_len = (self.synthesizer.sof_samples()
                   + segment_length(2, self.synth_config.sample_rate))
        self.reference = ref_trace.samples[start:start + ref_len]
        self.nominal_start = start

    def locate(self, trace: BasebandTrace) -> int:
        """Response start via the window-constrained correlation trigger."""
        pp = preprocess(trace)
        slack = self.search_slack
        lo = max(0, self.nominal_start - slack)
        span = pp.samples[lo:self.nominal_start + slack + len(self.reference)]
        windowed = trace.with_samples(span)
        idx, _peak = correlation_trigger(windowed, self.reference,
                                         threshold=0.0)
        return lo + idx

    def segment(self, trace: BasebandTrace,
                extra_snr_db: float | None = None,
                noise_rng=None) -> BasebandTrace:
        """Synchronize, optionally degrade, preprocess and slice a trace.

        Synchronization always runs on the stored capture (alignment
        happens at collection time); injected noise hits the raw aligned
        samples before drift removal and normalization.
        """
        start = self.locate(trace) + self.synthesizer.sof_samples()
        if extra_snr_db is not None:
            trace = synth.add_awgn(trace, extra_snr_db, rng=noise_rng)
        return extract_first_bits(preprocess(trace), start, self.n_bits)

    def embed(self, trace: BasebandTrace, extra_snr_db: float | None = None,
              noise_rng=None) -> np.ndarray:
        return self.extractor(
            self.segment(trace, extra_snr_db, noise_rng)).values

    def embed_entries(self, reader: DatasetReader, entries,
                      extra_snr_db: float | None = None,
                      noise_seed: int = 0) -> np.ndarray:
        out = np.empty((len(entries), features.EMBEDDING_DIM))
        for k, entry in enumerate(entries):
            trace = reader.load_trace(entry)
            rng = None
            if extra_snr_db is not None:
                rng = np.random.default_rng(np.random.SeedSequence(
                    entropy=noise_seed,
                    spawn_key=(entry.card_idx, entry.button_idx,
                               entry.orientation_idx, entry.press_idx)))
            out[k] = self.embed(trace, extra_snr_db, rng)
        return out


def calibrate(manifest: DatasetManifest, pipeline: PressPipeline | None = None,
              alpha: float = DEFAULT_ALPHA, audit_log: list | None = None,
              embeddings=None) -> tuple[ClassStats, dict]:
    """Fit class statistics and all three threshold tables at ``alpha``.

    Only calibration-role entries are consumed; the reader has no target
    capability, so this cannot read evaluation labels even by accident.
    """
    pipeline = pipeline or PressPipeline(manifest.config.synth)
    reader = DatasetReader(manifest,
                           label_roles=frozenset({ROLE_CALIBRATION}),
                           audit_log=audit_log)
    entries = manifest.by_role(ROLE_CALIBRATION)
    if not entries:
        raise ValueError("manifest has no calibration entries")
    labels = np.array([reader.label(e) for e in entries])
    if embeddings is None:
        embeddings = pipeline.embed_entries(reader, entries)
    stats = recognition.fit(embeddings, labels)
    tables = {m: recognition.build_thresholds(stats, embeddings, labels,
                                              alpha, method=m)
              for m in recognition.METHODS}
    return stats, tables


@dataclass(frozen=True)
class EvalReport:
    method: str
    alpha: float
    snr_db: float | None
    n_samples: int
    ar_pct: float
    far_pct: float
    frr_pct: float
    per_button_far_pct: tuple
    per_button_frr_pct: tuple

    def __post_init__(self):
        for v in (self.ar_pct, self.far_pct, self.frr_pct):
            if not 0.0 <= v <= 100.0:
                raise ValueError("rates must lie in [0, 100]")


def _rates(y: np.ndarray, pred: np.ndarray, accepted: np.ndarray,
           classes) -> tuple:
    accepted_as_true = accepted & (pred == y)
    ar = 100.0 * float(np.mean(accepted_as_true))
    far_b, frr_b = [], []
    far_num = far_den = 0
    for b in classes:
        genuine = y == b
        impostor = ~genuine
        frr_b.append(100.0 * float(np.mean(~accepted_as_true[genuine]))
                     if genuine.any() else 0.0)
        hits = accepted & (pred == b) & impostor
        far_b.append(100.0 * float(hits.sum() / impostor.sum())
                     if impostor.any() else 0.0)
        far_num += int(hits.sum())
        far_den += int(impostor.sum())
    far = 100.0 * far_num / far_den if far_den else 0.0
    frr = 100.0 - ar  # every genuine press is either accepted-correct or a rejection
    return ar, far, frr, tuple(far_b), tuple(frr_b)


def evaluate(method: str, stats: ClassStats, table: ThresholdTable,
             embeddings: np.ndarray, labels: np.ndarray,
             snr_db: float | None = None) -> EvalReport:
    """Score an evaluation set and aggregate AR/FAR/FRR."""
    if len(embeddings) == 0:
        raise ValueError("evaluation set is empty")
    scores = recognition.class_scores(embeddings, stats, method)
    kbest = np.argmin(scores, axis=1)
    dist = scores[np.arange(len(scores)), kbest]
    thr = table.thresholds[kbest]
    accepted = dist <= thr
    pred = np.array([stats.classes[k] for k in kbest])
    y = np.asarray(labels)
    ar, far, frr, far_b, frr_b = _rates(y, pred, accepted, stats.classes)
    return EvalReport(method=method, alpha=table.alpha, snr_db=snr_db,
                      n_samples=len(y), ar_pct=ar, far_pct=far, frr_pct=frr,
                      per_button_far_pct=far_b, per_button_frr_pct=frr_b)


def eval_embeddings(manifest: DatasetManifest, pipeline: PressPipeline,
                    audit_log: list | None = None,
                    extra_snr_db: float | None = None,
                    noise_seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Embeddings and labels of the target-eval split (labels audited)."""
    reader = DatasetReader(
        manifest,
        label_roles=frozenset({ROLE_SOURCE, ROLE_CALIBRATION, ROLE_TARGET}),
        audit_log=audit_log)
    entries = manifest.by_role(ROLE_TARGET)
    Z = pipeline.embed_entries(reader, entries, extra_snr_db=extra_snr_db,
                               noise_seed=noise_seed)
    y = np.array([reader.label(e) for e in entries])
    return Z, y


def sweep_alpha(stats: ClassStats, tables: dict, embeddings: np.ndarray,
                labels: np.ndarray, alphas,
                methods=("mahalanobis",)) -> list[EvalReport]:
    """One evaluation per alpha on fixed calibration artifacts."""
    reports = []
    for alpha in alphas:
        for m in methods:
            reports.append(evaluate(m, stats, tables[m].at_alpha(alpha),
                                    embeddings, labels))
    return reports


def sweep_snr(manifest: DatasetManifest, snr_list, methods=recognition.METHODS,
              seeds=(0, 1, 2), alpha: float = DEFAULT_ALPHA,
              pipeline: PressPipeline | None = None, progress=None) -> list[EvalReport]:
    """Noise-robustness sweep: AWGN into raw traces, full rerun per SNR.

    For every (snr, seed) the calibration embeddings are recomputed from
    noise-injected raw traces (pre-normalization), statistics and
    thresholds refit, and every method evaluated on the equally degraded
    target split. Reports for the same (method, snr) across seeds carry
    the per-seed results; averaging is up to the caller.
    """
    pipeline = pipeline or PressPipeline(manifest.config.synth)
    cal_reader = DatasetReader(manifest,
                               label_roles=frozenset({ROLE_CALIBRATION}))
    cal_entries = manifest.by_role(ROLE_CALIBRATION)
    cal_labels = np.array([cal_reader.label(e) for e in cal_entries])
    reports = []
    for snr_db in snr_list:
        for seed in seeds:
            Zc = pipeline.embed_entries(cal_reader, cal_entries,
                                        extra_snr_db=snr_db,
                                        noise_seed=seed)
            stats = recognition.fit(Zc, cal_labels)
            Ze, ye = eval_embeddings(manifest, pipeline, extra_snr_db=snr_db,
                                     noise_seed=seed + 7919)
            for m in methods:
                table = recognition.build_thresholds(stats, Zc, cal_labels,
                                                     alpha, method=m)
                reports.append(evaluate(m, stats, table, Ze, ye,
                                        snr_db=snr_db))
            if progress:
                progress(f"snr {snr_db} dB seed {seed} done")
    return reports


def report_to_json(report: EvalReport) -> dict:
    return dataclasses.asdict(report)


def decisions_to_csv(path, stats: ClassStats, table: ThresholdTable,
                     embeddings: np.ndarray, labels, method: str):
    """Raw per-decision log (the source of truth for every report rate)."""
    import csv as _csv
    scores = recognition.class_scores(embeddings, stats, method)
    kbest = np.argmin(scores, axis=1)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["sample_id", "true_class", "predicted", "distance",
                         "threshold", "accepted"])
        for i, k in enumerate(kbest):
            d = scores[i, k]
            t = table.thresholds[k]
            writer.writerow([i, int(labels[i]), int(stats.classes[k]),
                             f"{d:.9e}", f"{t:.9e}", int(d <= t)])
