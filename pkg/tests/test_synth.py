import math

import numpy as np
import pytest

from nfcpad import iso15693, synth
from nfcpad.synth import CardVariation, PressSynthesizer, SynthConfig


@pytest.fixture(scope="module")
def syn():
    return PressSynthesizer()


@pytest.fixture(scope="module")
def nominal():
    return CardVariation(card_id="nominal", seed=0, l2_frac=0.0, r2_frac=0.0,
                         c2_frac=0.0, press_jitter_m=0.0,
                         orientation_lateral_m=0.0, orientation_axial_m=0.0)


@pytest.fixture(scope="module")
def reference(syn, nominal):
    trace = synth.preprocess(syn.synthesize_press(4, nominal, 0))
    start = syn.response_start()
    length = syn.sof_samples() + synth.segment_length(2)
    return trace.samples[start:start + length]


class TestSynthesis:
    def test_no_card_no_button_is_pure_cw(self, syn, nominal):
        trace = syn.synthesize_press(None, nominal, 0, card_present=False)
        x = trace.samples
        # constant envelope: the only content is the carrier tone
        env = np.abs(x)
        assert env.std() / env.mean() < 1e-12
        # sideband power (Hann-windowed to suppress rectangle leakage)
        w = np.hanning(len(x))
        spec = np.abs(np.fft.fft(x * w)) ** 2
        freqs = np.fft.fftfreq(len(x), 1 / trace.sample_rate)
        fs = iso15693.F_SUBCARRIER_HZ
        sideband_sel = (np.abs(np.abs(freqs - syn.config.if_offset_hz) - fs)
                        < 20e3)
        assert spec[sideband_sel].sum() / spec.sum() < 1e-12

    def test_spectral_peaks_at_carrier_and_sidebands(self, syn, nominal):
        trace = syn.synthesize_press(4, nominal, 0)
        x = trace.samples
        spec = np.abs(np.fft.fft(x)) ** 2
        freqs = np.fft.fftfreq(len(x), 1 / trace.sample_rate)
        ifo = syn.config.if_offset_hz
        fs = iso15693.F_SUBCARRIER_HZ
        for target in (ifo, ifo + fs, ifo - fs):
            sel = np.abs(freqs - target) < 15e3
            peak = freqs[sel][np.argmax(spec[sel])]
            floor = np.median(spec)
            assert spec[sel].max() > 1e3 * floor
            assert abs(peak - target) < 1.5e3

    def test_spectral_power_concentration(self, syn, nominal):
        """Nearly all noise-free power sits at the carrier and the two
        subcarrier sidebands (each taken with its modulation skirt)."""
        trace = syn.synthesize_press(4, nominal, 0)
        x = trace.samples
        spec = np.abs(np.fft.fft(x)) ** 2
        freqs = np.fft.fftfreq(len(x), 1 / trace.sample_rate)
        ifo = syn.config.if_offset_hz
        fs = iso15693.F_SUBCARRIER_HZ
        keep = np.zeros(len(x), dtype=bool)
        for target in (ifo, ifo + fs, ifo - fs):
            keep |= np.abs(freqs - target) < fs / 4
        assert spec[keep].sum() / spec.sum() > 0.99

    def test_buttons_differ_but_bits_identical(self, syn, nominal, reference):
        pp4 = synth.preprocess(syn.synthesize_press(4, nominal, 0))
        pp1 = synth.preprocess(syn.synthesize_press(1, nominal, 0))
        rms = math.sqrt(np.mean(np.abs(pp4.samples) ** 2))
        assert np.max(np.abs(pp4.samples - pp1.samples)) > 1e-9 * rms
        bits = []
        ifo = syn.config.if_offset_hz
        for pp in (pp4, pp1):
            idx, _ = synth.correlation_trigger(pp, reference)
            span = pp.samples[idx:]
            # decode expects a carrier-centred baseband window
            t = np.arange(len(span)) / pp.sample_rate
            centred = span * np.exp(-2j * np.pi * ifo * t)
            decoded, _ = iso15693.decode_response(centred, n_bits=8)
            bits.append(decoded)
        assert bits[0] == bits[1] == (0,) * 8

    def test_determinism_bit_identical(self, syn):
        card = CardVariation(card_id="c", seed=77)
        a = syn.synthesize_press(3, card, 1, press_idx=5, snr_db=20.0)
        b = syn.synthesize_press(3, card, 1, press_idx=5, snr_db=20.0)
        assert np.array_equal(a.samples, b.samples)

    def test_channel_model_contract(self, syn, nominal):
        ch = syn.channel_model(4, nominal, 0)
        assert ch.loaded_q > 0
        assert 0.0 <= ch.coupling_k <= 1.0
        assert ch.a_cw >= 0 and ch.a_card >= 0
        no_button = syn.channel_model(None, nominal, 0)
        assert no_button.coupling_k == 0.0
        # the press coil perturbs the modulated amplitude
        assert no_button.a_card != pytest.approx(ch.a_card, rel=1e-6)

    def test_off_grid_positions_supported(self, syn, nominal):
        tr = syn.synthesize_press(None, nominal, 0, position_m=(0.014, 0.009))
        assert len(tr.samples) > 0

    def test_invalid_button_rejected(self, syn, nominal):
        with pytest.raises(ValueError):
            syn.synthesize_press(9, nominal, 0)


class TestAwgn:
    def test_infinite_snr_is_identity(self, syn, nominal):
        tr = syn.synthesize_press(4, nominal, 0)
        assert synth.add_awgn(tr, math.inf) is tr

    def test_achieved_snr_within_tolerance(self):
        rng = np.random.default_rng(5)
        x = np.exp(1j * rng.uniform(0, 2 * np.pi, 1_000_000))
        tr = synth.BasebandTrace(samples=x)
        for snr in (0.0, 10.0):
            noisy = synth.add_awgn(tr, snr, seed=1)
            p_noise = np.mean(np.abs(noisy.samples - x) ** 2)
            achieved = 10 * math.log10(np.mean(np.abs(x) ** 2) / p_noise)
            assert abs(achieved - snr) < 0.2

    def test_zero_db_noise_power(self):
        rng = np.random.default_rng(6)
        x = np.exp(1j * rng.uniform(0, 2 * np.pi, 500_000))
        tr = synth.BasebandTrace(samples=x)
        noisy = synth.add_awgn(tr, 0.0, seed=2)
        p_sig = np.mean(np.abs(x) ** 2)
        p_noise = np.mean(np.abs(noisy.samples - x) ** 2)
        assert abs(p_noise / p_sig - 1.0) < 0.01


class TestPreprocess:
    def test_constant_offset_removed(self):
        tr = synth.BasebandTrace(samples=np.full(4000, 2.0 + 1j)
                                 + 0.01j * np.sin(np.arange(4000)))
        out = synth.preprocess(tr)
        assert abs(out.samples.mean()) < 1e-9

    def test_unit_rms(self, syn, nominal):
        out = synth.preprocess(syn.synthesize_press(0, nominal, 0))
        rms = math.sqrt(np.mean(np.abs(out.samples) ** 2))
        assert rms == pytest.approx(1.0, abs=1e-9)

    def test_scale_invariance(self, syn, nominal):
        tr = syn.synthesize_press(0, nominal, 0)
        a = synth.preprocess(tr)
        b = synth.preprocess(tr.with_samples(10.0 * tr.samples))
        assert np.max(np.abs(a.samples - b.samples)) < 1e-9

    def test_idempotence(self, syn, nominal):
        once = synth.preprocess(syn.synthesize_press(0, nominal, 0))
        twice = synth.preprocess(once)
        assert np.max(np.abs(once.samples - twice.samples)) < 1e-6

    def test_all_zero_rejected(self):
        tr = synth.BasebandTrace(samples=np.zeros(100, dtype=complex))
        with pytest.raises(ValueError):
            synth.preprocess(tr)


class TestTrigger:
    def test_embedded_reference_found_exactly(self):
        rng = np.random.default_rng(8)
        ref = np.exp(1j * rng.uniform(0, 2 * np.pi, 300))
        x = 1e-6 * (rng.standard_normal(3000)
                    + 1j * rng.standard_normal(3000))
        k_true = 1234
        x[k_true:k_true + 300] += ref
        tr = synth.BasebandTrace(samples=x)
        idx, peak = synth.correlation_trigger(tr, ref)
        assert idx == k_true
        assert peak > 0.999

    def test_accuracy_at_10db_within_two_samples(self, syn, nominal,
                                                 reference):
        misses = 0
        for trial in range(1000):
            card = CardVariation(card_id=f"t{trial}", seed=9000 + trial,
                                 l2_frac=0.0, r2_frac=0.0, c2_frac=0.0,
                                 press_jitter_m=0.0,
                                 orientation_lateral_m=0.0,
                                 orientation_axial_m=0.0)
            tr = syn.synthesize_press(4, card, 0, snr_db=10.0)
            pp = synth.preprocess(tr)
            idx, _ = synth.correlation_trigger(pp, reference, threshold=0.0)
            if abs(idx - syn.response_start()) > 2:
                misses += 1
        assert misses == 0

    def test_pure_noise_raises(self, reference):
        rng = np.random.default_rng(10)
        tr = synth.BasebandTrace(
            samples=rng.standard_normal(6000) + 1j * rng.standard_normal(6000))
        with pytest.raises(synth.TriggerError):
            synth.correlation_trigger(tr, reference, threshold=0.5)


class TestExtract:
    def test_default_segment_length(self):
        assert synth.segment_length(8) == round(8 * 2_000_000 / 6620)

    def test_slice_equality(self, syn, nominal):
        pp = synth.preprocess(syn.synthesize_press(4, nominal, 0))
        start = syn.response_start() + syn.sof_samples()
        seg = synth.extract_first_bits(pp, start)
        n = synth.segment_length(8)
        assert np.array_equal(seg.samples, pp.samples[start:start + n])

    def test_out_of_range_rejected(self, syn, nominal):
        pp = synth.preprocess(syn.synthesize_press(4, nominal, 0))
        with pytest.raises(ValueError):
            synth.extract_first_bits(pp, len(pp.samples) - 10)

    def test_repeat_press_correlation(self, syn, reference):
        card = CardVariation(card_id="rep", seed=55)
        segs = []
        for press in (0, 1):
            pp = synth.preprocess(syn.synthesize_press(6, card, 0,
                                                       press_idx=press))
            idx, _ = synth.correlation_trigger(pp, reference, threshold=0.0)
            segs.append(synth.extract_first_bits(
                pp, idx + syn.sof_samples()).samples)
        corr = abs(np.vdot(segs[0], segs[1])) / (
            np.linalg.norm(segs[0]) * np.linalg.norm(segs[1]))
        assert corr > 0.99


class TestTraceIO:
    def test_round_trip(self, tmp_path, syn):
        card = CardVariation(card_id="io", seed=4)
        tr = syn.synthesize_press(2, card, 1, press_idx=3, snr_db=25.0)
        path = tmp_path / "press.iq"
        synth.write_trace(path, tr)
        back = synth.read_trace(path)
        assert back.meta == tr.meta
        assert back.sample_rate == tr.sample_rate
        # float32 quantization only
        assert np.max(np.abs(back.samples - tr.samples)) < 1e-6
