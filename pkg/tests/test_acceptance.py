"""Acceptance suite: one test per release criterion, tolerances pinned.

Run with ``pytest tests/test_acceptance.py -s`` to see one PASS line per
criterion. The end-to-end and noise-sweep criteria synthesize their
datasets on the fly (the default-shape dataset is ~3 GB and takes a few
minutes); their stated runtime budgets are asserted.
"""

import math
import time

import numpy as np
import pytest
from scipy.constants import mu_0

from nfcpad import circuit, coil, harness, iso15693, recognition, synth
from oracles import crc16_bit_serial, gauss_jordan_inverse, neumann_mutual


def _report(name: str):
    print(f"PASS: {name}", flush=True)


# -- criterion: coil quadrature vs independent oracles -----------------------

def test_coil_oracle_criterion():
    t0 = time.time()
    rng = np.random.default_rng(2024)
    checked = 0
    for trial in range(6):
        a1, a2 = rng.uniform(0.01, 0.05, 2)
        dz = rng.uniform(0.003, 0.03)
        p = rng.uniform(0.0, 0.04) if trial % 2 else 0.0
        ci = coil.CoilGeometry(a1, int(rng.integers(1, 4)))
        cq = coil.CoilGeometry(a2, int(rng.integers(1, 4)), (p, 0.0, dz))
        m = coil.mutual_inductance(ci, cq).value
        oracle = neumann_mutual(ci, cq)
        assert abs(m - oracle) / abs(oracle) < 1e-3
        checked += 1
    assert checked >= 5

    a = 0.0415
    far = coil.mutual_inductance(
        coil.CoilGeometry(a, 1), coil.CoilGeometry(a, 1, (0, 0, 1.0))).value
    dipole = mu_0 * math.pi * a ** 4 / 2.0
    assert abs(far - dipole) / dipole < 0.01
    elapsed = time.time() - t0
    assert elapsed < 30
    _report(f"coil quadrature vs Neumann oracle on {checked} geometries "
            f"(<1e-3) and far-field dipole limit (<1%) in {elapsed:.1f}s")


# -- criterion: circuit solves ------------------------------------------------

def test_circuit_correctness_criterion():
    t0 = time.time()
    reader = circuit.table_reader()
    card = circuit.table_card()
    button = circuit.table_button()
    cs = circuit.bench_couplings(reader, card, button)
    rng = np.random.default_rng(5)
    for _ in range(25):
        w = 2 * math.pi * rng.uniform(12e6, 15e6)
        u = int(rng.integers(0, 2))
        m12, m1p, m2p = cs.for_button(int(rng.integers(0, 9)))
        sys3 = circuit.build_system(reader, card.with_state(u), button,
                                    m12, m1p, m2p, w)
        assert np.array_equal(sys3.Z, sys3.Z.T)
        i = np.array(circuit.solve_system(sys3))
        resid = np.linalg.norm(sys3.v - sys3.Z @ i) / np.linalg.norm(sys3.v)
        assert resid < 1e-10

    w_c = circuit.OMEGA_CARRIER
    sys2 = circuit.build_system(reader, card, button, cs.m12, 0.0, 0.0, w_c)
    i1, i2, _ = circuit.solve_system(sys2)
    i1_ref, i2_ref = circuit.two_coil_card_current(reader, card, cs.m12, w_c)
    assert abs(i1 - i1_ref) / abs(i1_ref) < 1e-12
    assert abs(i2 - i2_ref) / abs(i2_ref) < 1e-12
    _report(f"3x3 solve residual <1e-10, two-coil reduction <1e-12, "
            f"exact reciprocity in {time.time() - t0:.1f}s")


# -- criterion: current/reflection sweep analogs ------------------------------

def test_sweep_reproduction_criterion():
    t0 = time.time()
    reader = circuit.table_reader()
    card = circuit.table_card()
    button = circuit.table_button()
    cs = circuit.bench_couplings(reader, card, button)
    f_lo, f_hi = circuit.ACTIVATION_BAND_HZ
    f_grid = np.linspace(f_lo, f_hi, 81)

    curves = circuit.reader_current_per_button(reader, card, button, cs,
                                               f_grid)
    base = curves["card_only"]
    devs = [np.max(np.abs(curves[f"button_{b}"] - base)) for b in range(9)]
    assert all(d > 0 for d in devs)
    assert len(set(np.round(devs, 15))) == 9  # distinct deviations

    sweeps = {b: circuit.reflection_sweep(reader, card, button, cs,
                                          f_lo, f_hi, 81, b)
              for b in range(9)}
    for rows in sweeps.values():
        assert all(abs(s) <= 1.0 + 1e-12 for _, s in rows)
    for a in range(9):
        for b in range(a + 1, 9):
            assert max(abs(s1 - s2) for (_, s1), (_, s2)
                       in zip(sweeps[a], sweeps[b])) > 1e-9

    probe = np.linspace(12.5e6, 14.8e6, 231)
    for b in range(9):
        _, _, m2p = cs.for_button(b)
        mags = []
        for f in probe:
            w = 2 * math.pi * f
            z2 = circuit.card_impedance(card, w)
            zp = circuit.button_impedance(button, w)
            mags.append(abs(z2 + w * w * m2p * m2p / zp))
        f_res = probe[int(np.argmin(mags))]
        assert f_lo < f_res < f_hi
    elapsed = time.time() - t0
    assert elapsed < 60
    _report(f"nine distinct current deviations, nine distinct passive "
            f"reflection sweeps, card resonance in-band in {elapsed:.1f}s")


# -- criterion: codec ---------------------------------------------------------

def test_codec_criterion():
    t0 = time.time()
    rng = np.random.default_rng(99)
    for _ in range(1000):
        payload = bytes(rng.integers(0, 256, rng.integers(1, 12)).tolist())
        assert iso15693.crc16(payload) == crc16_bit_serial(payload)

    for _ in range(50):
        flags = int(rng.integers(0, 256)) & ~0x10
        n_mask = int(rng.integers(0, 4))
        req = iso15693.InventoryRequest(
            flags=flags, mask_len=8 * n_mask,
            mask=bytes(rng.integers(0, 256, n_mask).tolist()))
        assert iso15693.decode_inventory(iso15693.encode_inventory(req)) == req

    for _ in range(25):
        bits = tuple(rng.integers(0, 2, 2 * int(rng.integers(1, 25))))
        assert iso15693.ppm_1of4_demodulate(
            iso15693.ppm_1of4_modulate(bits)) == bits

    # reference-frame cross-check: the published example value for this
    # payload is 0xB4C3, which no byte order of the standard polynomial
    # reproduces; the codec keeps the standard profile (oracle: 0x528F).
    assert iso15693.crc16(bytes([0x02, 0x21, 0x08, 0x00])) == 0x528F
    assert iso15693.crc16(bytes([0x02, 0x21, 0x08, 0x00])) != 0xB4C3
    assert iso15693.crc16(bytes([0x02, 0x21, 0x08])) == 0xC5D7
    _report(f"CRC matches bit-serial oracle on 1000 payloads, frame and "
            f"PPM round-trips hold, reference frame cross-checked "
            f"(documented mismatch) in {time.time() - t0:.1f}s")


# -- criterion: synthesized signal contract -----------------------------------

def test_signal_contract_criterion():
    t0 = time.time()
    syn = synth.PressSynthesizer()
    nominal = synth.CardVariation(card_id="n", seed=0, l2_frac=0, r2_frac=0,
                                  c2_frac=0, press_jitter_m=0,
                                  orientation_lateral_m=0,
                                  orientation_axial_m=0)
    trace = syn.synthesize_press(4, nominal, 0)
    x = trace.samples
    spec = np.abs(np.fft.fft(x)) ** 2
    freqs = np.fft.fftfreq(len(x), 1 / trace.sample_rate)
    ifo = syn.config.if_offset_hz
    floor = np.median(spec)
    # carrier line and the two subcarrier sidebands at +-423.75 kHz
    for target in (ifo, ifo + iso15693.F_SUBCARRIER_HZ,
                   ifo - iso15693.F_SUBCARRIER_HZ):
        sel = np.abs(freqs - target) < 10e3
        assert spec[sel].max() > 1e3 * floor

    pp_a = synth.preprocess(trace)
    pp_b = synth.preprocess(trace.with_samples(trace.samples * 12.5))
    assert np.max(np.abs(pp_a.samples - pp_b.samples)) < 1e-9

    ref_trace = synth.preprocess(syn.synthesize_press(4, nominal, 0))
    start = syn.response_start()
    reference = ref_trace.samples[start:start + syn.sof_samples()
                                  + synth.segment_length(2)]
    worst = 0
    for trial in range(1000):
        card = synth.CardVariation(card_id=f"t{trial}", seed=50_000 + trial,
                                   l2_frac=0, r2_frac=0, c2_frac=0,
                                   press_jitter_m=0,
                                   orientation_lateral_m=0,
                                   orientation_axial_m=0)
        noisy = syn.synthesize_press(4, card, 0, snr_db=10.0)
        pp = synth.preprocess(noisy)
        idx, _ = synth.correlation_trigger(pp, reference, threshold=0.0)
        worst = max(worst, abs(idx - start))
    assert worst <= 2
    elapsed = time.time() - t0
    assert elapsed < 120
    _report(f"carrier and +-423.75 kHz sideband peaks present, preprocess "
            f"scale-invariant <1e-9, trigger within +-{worst} samples over "
            f"1000 trials at 10 dB in {elapsed:.1f}s")


# -- criterion: recognition mathematics ---------------------------------------

def test_recognition_math_criterion():
    t0 = time.time()
    rng = np.random.default_rng(31)

    # Cholesky-form vs explicit-inverse distances
    for d in (4, 8, 16):
        A = rng.standard_normal((3 * d, d))
        S = A.T @ A / (3 * d) + 0.05 * np.eye(d)
        stats = recognition.ClassStats(
            classes=(0, 1), means=rng.standard_normal((2, d)),
            pooled_cov=S, chol=np.linalg.cholesky(S),
            n_per_class=np.array([d, d]), total=2 * d, diag_var=np.diag(S))
        S_inv = gauss_jordan_inverse(S).real
        for _ in range(20):
            z = rng.standard_normal(d)
            diff = z - stats.means[0]
            explicit = float(diff @ S_inv @ diff)
            assert abs(recognition.mahalanobis_sq(z, 0, stats)
                       - explicit) / explicit < 1e-8

    # identity-covariance reduction is exact
    stats_i = recognition.ClassStats(
        classes=(0, 1), means=np.zeros((2, 6)), pooled_cov=np.eye(6),
        chol=np.eye(6), n_per_class=np.array([5, 5]), total=10,
        diag_var=np.ones(6))
    for _ in range(20):
        z = rng.standard_normal(6)
        assert recognition.mahalanobis_sq(z, 0, stats_i) == pytest.approx(
            float(z @ z), rel=1e-14)

    # impostor acceptance bound on the calibration set, per class
    means = rng.standard_normal((9, 16)) * 3.0
    y = np.repeat(np.arange(9), 120)
    Z = means[y] + rng.standard_normal((len(y), 16))
    stats = recognition.fit(Z, y)
    for alpha in (0.025, 0.05, 0.10):
        table = recognition.build_thresholds(stats, Z, y, alpha)
        scores = recognition.class_scores(Z, stats)
        for k, c in enumerate(stats.classes):
            imp = scores[y != c, k]
            frac = float(np.mean(imp <= table.thresholds[k]))
            assert alpha - 1.0 / len(imp) <= frac <= alpha

    # FAR / FRR monotone over the risk grid on a fixed evaluation set
    Ze = means[y] + rng.standard_normal((len(y), 16))
    tables = {"mahalanobis": recognition.build_thresholds(stats, Z, y, 0.01)}
    reports = harness.sweep_alpha(stats, tables, Ze, y,
                                  [0.01, 0.02, 0.04, 0.06, 0.08, 0.10])
    fars = [r.far_pct for r in reports]
    frrs = [r.frr_pct for r in reports]
    assert all(a <= b + 1e-12 for a, b in zip(fars, fars[1:]))
    assert all(a >= b - 1e-12 for a, b in zip(frrs, frrs[1:]))
    elapsed = time.time() - t0
    assert elapsed < 60
    _report(f"whitened = explicit-inverse distances <1e-8, exact identity "
            f"reduction, per-class impostor bound, monotone FAR/FRR in "
            f"{elapsed:.1f}s")


# -- criterion: end-to-end synthetic run --------------------------------------

@pytest.fixture(scope="module")
def default_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("default_dataset")
    t0 = time.time()
    manifest = harness.generate_dataset(root, harness.DatasetConfig())
    return manifest, time.time() - t0


def test_end_to_end_criterion(default_dataset):
    manifest, gen_seconds = default_dataset
    t0 = time.time()
    assert manifest.n_entries == 72_000
    eval_entries = manifest.by_role(harness.ROLE_TARGET)
    assert len(eval_entries) == 54_000

    pipe = harness.PressPipeline(manifest.config.synth)
    audit = []
    stats, tables = harness.calibrate(manifest, pipe,
                                      alpha=harness.DEFAULT_ALPHA,
                                      audit_log=audit)
    assert {rec[0] for rec in audit} == {harness.ROLE_CALIBRATION}
    Ze, ye = harness.eval_embeddings(manifest, pipe)
    report = harness.evaluate("mahalanobis", stats, tables["mahalanobis"],
                              Ze, ye)
    elapsed = gen_seconds + (time.time() - t0)
    assert report.n_samples == 54_000
    assert report.ar_pct >= 95.0
    assert report.far_pct <= 5.0
    assert report.frr_pct <= 5.0
    assert elapsed < 600
    _report(f"end-to-end default run: AR={report.ar_pct:.2f}% "
            f"FAR={report.far_pct:.3f}% FRR={report.frr_pct:.2f}% on "
            f"54,000 unseen-card presses (alpha=0.025) in {elapsed:.0f}s")


# -- criterion: noise-robustness trend ----------------------------------------

def test_snr_trend_criterion(tmp_path_factory):
    t0 = time.time()
    root = tmp_path_factory.mktemp("snr_sweep")
    cfg = harness.DatasetConfig(n_cards=8, n_source_cards=4,
                                n_orientations=4, n_presses=40,
                                snr_db=30.0, master_seed=20250,
                                orientation_lateral_m=0.7e-3,
                                orientation_axial_m=0.15e-3)
    manifest = harness.generate_dataset(root, cfg)
    pipe = harness.PressPipeline(cfg.synth)
    grid = [0.0, 5.0, 10.0, 15.0, 20.0, 30.0]
    reports = harness.sweep_snr(manifest, grid,
                                methods=("mahalanobis", "euclidean"),
                                seeds=(0, 1, 2), pipeline=pipe)
    mean_ar = {}
    for r in reports:
        mean_ar.setdefault((r.method, r.snr_db), []).append(r.ar_pct)
    margins = {}
    for snr in grid:
        am = float(np.mean(mean_ar[("mahalanobis", snr)]))
        ae = float(np.mean(mean_ar[("euclidean", snr)]))
        assert am >= ae, f"ordering violated at {snr} dB: {am} < {ae}"
        margins[snr] = am - ae
    assert all(margins[0.0] > margins[s] for s in grid[1:])
    elapsed = time.time() - t0
    assert elapsed < 900
    _report("noise trend: whitened-distance AR >= centroid-distance AR at "
            + ", ".join(f"{s:.0f}dB (+{margins[s]:.2f})" for s in grid)
            + f"; largest margin at the noisiest point, 3 seeds, "
              f"{elapsed:.0f}s")


# -- criterion: cost scaling ---------------------------------------------------

def test_complexity_criterion():
    t0 = time.time()
    report = recognition.complexity_report(dims=(16, 32, 64, 128))
    entries = {e["d"]: e for e in report["entries"]}
    for d_small, d_big in ((16, 32), (32, 64), (64, 128)):
        decide_ratio = (entries[d_big]["decide_madds_per_sample"]
                        / entries[d_small]["decide_madds_per_sample"])
        fit_ratio = (entries[d_big]["fit_madds"]
                     / entries[d_small]["fit_madds"])
        assert 3.0 <= decide_ratio <= 6.0
        assert 5.0 <= fit_ratio <= 12.0
    r9 = recognition.complexity_report(dims=(64,), n_classes=9)
    r18 = recognition.complexity_report(dims=(64,), n_classes=18)
    class_ratio = (r18["entries"][0]["decide_madds_per_sample"]
                   / r9["entries"][0]["decide_madds_per_sample"])
    assert 1.5 <= class_ratio <= 2.5
    elapsed = time.time() - t0
    assert elapsed < 300
    _report(f"per-sample scoring scales ~d^2 (doubling ratios in [3,6]), "
            f"factorization ~d^3 (in [5,12]), class count linear in "
            f"{elapsed:.1f}s")
