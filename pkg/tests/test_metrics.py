import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rawbench.audio import AudioClip
from rawbench.metrics import (
    MCD_FRAME_SECONDS,
    MCD_LOG_FLOOR,
    MCD_N_CEPSTRA,
    MCD_N_MELS,
    PerceptualReport,
    RobustnessReport,
    bitwise_accuracy,
    compute_capacity,
    mel_cepstral_distance,
    message_accuracy,
    mos_lqo,
    si_snr,
    tpr_at_zero_fpr,
)
from rawbench.watermark import Message

from conftest import noisy_mix, tone


def si_snr_oracle(ref, est):
    # Straight-line restatement, kept independent of the implementation.
    dot = sum(float(a) * float(b) for a, b in zip(est, ref))
    ref_pow = sum(float(a) * float(a) for a in ref)
    target = [dot / ref_pow * float(a) for a in ref]
    p_t = sum(v * v for v in target)
    p_n = sum((float(e) - v) ** 2 for e, v in zip(est, target))
    if p_n == 0.0:
        return 100.0
    return min(max(10.0 * math.log10(p_t / p_n), -100.0), 100.0)


class TestSiSnr:
    def test_identical_clamps(self, carrier):
        assert si_snr(carrier, carrier) == 100.0

    @pytest.mark.parametrize("a", [0.1, -3.0, 7.0])
    def test_pure_rescaling_clamps(self, carrier, a):
        assert si_snr(carrier, carrier.with_samples(a * carrier.samples)) == 100.0

    def test_orthogonal_noise_at_tenth_power_is_10db(self, carrier):
        rng = np.random.default_rng(11)
        x = carrier.samples
        raw = rng.standard_normal(len(x))
        ortho = raw - (raw @ x) / (x @ x) * x  # Gram-Schmidt
        noise = ortho * np.sqrt((x @ x) / 10.0 / (ortho @ ortho))
        est = carrier.with_samples(x + noise)
        assert si_snr(carrier, est) == pytest.approx(10.0, abs=1e-6)

    def test_matches_straight_line_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            n = int(rng.integers(64, 256))
            ref = rng.standard_normal(n)
            est = ref + 0.1 * rng.standard_normal(n)
            got = si_snr(AudioClip(ref, 8000), AudioClip(est, 8000))
            assert got == pytest.approx(si_snr_oracle(ref, est), abs=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(min_value=0.01, max_value=100.0), st.booleans())
    def test_scale_invariance_property(self, a, negate):
        ref = noisy_mix(21)
        scale = -a if negate else a
        rng = np.random.default_rng(13)
        est = ref.with_samples(ref.samples + 0.05 * rng.standard_normal(len(ref)))
        scaled = est.with_samples(scale * est.samples)
        assert si_snr(ref, scaled) == pytest.approx(si_snr(ref, est), abs=1e-9)

    def test_zero_reference_rejected(self):
        zero = AudioClip(np.zeros(128), 8000)
        with pytest.raises(ValueError, match="zero reference"):
            si_snr(zero, AudioClip(np.ones(128), 8000))

    def test_length_mismatch(self, carrier):
        with pytest.raises(ValueError, match="length mismatch"):
            si_snr(carrier, AudioClip(carrier.samples[:-1], carrier.sample_rate))


def mcd_single_frame_oracle(x, y, rate):
    """Brute-force single-frame distance: explicit filterbank, DFT power,
    and DCT-II cosine sums."""
    frame = int(round(MCD_FRAME_SECONDS * rate))
    n_fft = 1 << (frame - 1).bit_length()

    def cepstra(sig):
        win = [0.5 - 0.5 * math.cos(2 * math.pi * i / frame) for i in range(frame)]
        windowed = [float(s) * w for s, w in zip(sig, win)]
        power = []
        for k in range(n_fft // 2 + 1):
            re = sum(v * math.cos(-2 * math.pi * k * i / n_fft) for i, v in enumerate(windowed))
            im = sum(v * math.sin(-2 * math.pi * k * i / n_fft) for i, v in enumerate(windowed))
            power.append(re * re + im * im)
        mel = lambda f: 2595.0 * math.log10(1.0 + f / 700.0)
        imel = lambda m: 700.0 * (10.0 ** (m / 2595.0) - 1.0)
        grid = [mel(0.0) + j * (mel(rate / 2.0) - mel(0.0)) / (MCD_N_MELS + 1)
                for j in range(MCD_N_MELS + 2)]
        edges = [imel(m) for m in grid]
        bin_freqs = [k * rate / n_fft for k in range(n_fft // 2 + 1)]
        logmel = []
        for b in range(MCD_N_MELS):
            left, center, right = edges[b], edges[b + 1], edges[b + 2]
            acc = 0.0
            for f, p in zip(bin_freqs, power):
                rise = (f - left) / max(center - left, 1e-12)
                fall = (right - f) / max(right - center, 1e-12)
                w = max(min(rise, fall), 0.0)
                acc += w * p
            logmel.append(math.log(max(acc, MCD_LOG_FLOOR)))
        # Orthonormal DCT-II.
        coeffs = []
        n = MCD_N_MELS
        for d in range(1, MCD_N_CEPSTRA + 1):
            c = sum(v * math.cos(math.pi * d * (2 * m + 1) / (2 * n))
                    for m, v in enumerate(logmel))
            coeffs.append(c * math.sqrt(2.0 / n))
        return coeffs

    cx, cy = cepstra(x), cepstra(y)
    return (10.0 / math.log(10.0)) * math.sqrt(2.0 * sum((a - b) ** 2 for a, b in zip(cx, cy)))


class TestMcd:
    def test_identity(self, carrier):
        assert mel_cepstral_distance(carrier, carrier) == 0.0

    def test_symmetry(self, carrier):
        rng = np.random.default_rng(2)
        other = carrier.with_samples(carrier.samples + 0.01 * rng.standard_normal(len(carrier)))
        d1 = mel_cepstral_distance(carrier, other)
        d2 = mel_cepstral_distance(other, carrier)
        assert d1 == pytest.approx(d2, abs=1e-12)
        assert d1 > 0

    def test_single_frame_matches_brute_force_oracle(self):
        rate = 16000
        frame = int(round(MCD_FRAME_SECONDS * rate))
        rng = np.random.default_rng(8)
        x = 0.3 * np.sin(2 * np.pi * 440 * np.arange(frame) / rate)
        y = x + 0.02 * rng.standard_normal(frame)
        got = mel_cepstral_distance(AudioClip(x, rate), AudioClip(y, rate))
        expected = mcd_single_frame_oracle(x, y, rate)
        assert got == pytest.approx(expected, abs=1e-6)

    def test_too_short(self):
        with pytest.raises(ValueError, match="shorter"):
            mel_cepstral_distance(AudioClip(np.zeros(64), 16000), AudioClip(np.zeros(64), 16000))


class TestBitMetrics:
    def test_identical_messages(self):
        m = Message.random(16, 1)
        assert bitwise_accuracy(m, m) == 1.0
        assert message_accuracy(m, m) == 1

    def test_one_flip_of_16(self):
        m = Message(tuple([0] * 16))
        flipped = Message(tuple([1] + [0] * 15))
        assert bitwise_accuracy(m, flipped) == pytest.approx(15 / 16)
        assert message_accuracy(m, flipped) == 0

    def test_all_flipped(self):
        m = Message(tuple([0] * 8))
        inv = Message(tuple([1] * 8))
        assert bitwise_accuracy(m, inv) == 0.0

    def test_mean_aggregation(self):
        assert np.mean([1, 1, 0]) == pytest.approx(2 / 3, abs=1e-3)

    def test_exhaustive_8bit_against_popcount(self):
        rng = np.random.default_rng(4)
        partners = [int(rng.integers(0, 256)) for _ in range(16)]
        for a in range(256):
            bits_a = Message(tuple((a >> i) & 1 for i in range(8)))
            for b in partners:
                bits_b = Message(tuple((b >> i) & 1 for i in range(8)))
                matching = 8 - bin(a ^ b).count("1")
                assert bitwise_accuracy(bits_a, bits_b) == pytest.approx(matching / 8)
                assert message_accuracy(bits_a, bits_b) == int(a == b)

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length mismatch"):
            bitwise_accuracy([0, 1], [0, 1, 0])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(0, 1), min_size=1, max_size=32), st.data())
    def test_message_acc_is_floor_of_bitwise(self, bits, data):
        other = data.draw(st.lists(st.integers(0, 1), min_size=len(bits), max_size=len(bits)))
        acc = bitwise_accuracy(bits, other)
        msg = message_accuracy(bits, other)
        assert msg == (1 if acc == 1.0 else 0)


class TestTprAtZeroFpr:
    def test_disjoint(self):
        assert tpr_at_zero_fpr([0.9, 0.8], [0.1, 0.2]) == 1.0

    def test_identical_distributions(self):
        assert tpr_at_zero_fpr([0.3, 0.5], [0.3, 0.5]) == 0.0

    def test_partial(self):
        assert tpr_at_zero_fpr([0.9, 0.3], [0.5]) == 0.5

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="nonempty"):
            tpr_at_zero_fpr([], [0.5])

    @settings(max_examples=40, deadline=None)
    @given(
        # Quantized scores keep the float transform strictly monotone.
        st.lists(st.floats(-5, 5).map(lambda v: round(v, 3)), min_size=1, max_size=20),
        st.lists(st.floats(-5, 5).map(lambda v: round(v, 3)), min_size=1, max_size=20),
        st.floats(min_value=0.1, max_value=4.0),
        st.floats(min_value=-3.0, max_value=3.0),
    )
    def test_monotone_transform_invariance(self, pos, neg, a, b):
        base = tpr_at_zero_fpr(pos, neg)
        warped = tpr_at_zero_fpr(
            [a * math.exp(0.3 * p) + b for p in pos],
            [a * math.exp(0.3 * n) + b for n in neg],
        )
        assert warped == base


class TestCapacity:
    def test_16_bits_over_3s(self):
        assert compute_capacity(16, 3.0) == pytest.approx(5.33, abs=0.005)

    def test_30_bits_over_6s(self):
        assert compute_capacity(30, 6.0) == pytest.approx(5.00, abs=1e-12)

    def test_zero_bits(self):
        assert compute_capacity(0, 4.0) == 0.0

    def test_zero_seconds_rejected(self):
        with pytest.raises(ValueError):
            compute_capacity(16, 0.0)


class TestReports:
    def test_perceptual_report_validation(self):
        PerceptualReport(si_snr_db=30.0, mcd=0.5)
        with pytest.raises(ValueError):
            PerceptualReport(si_snr_db=30.0, mcd=-0.1)

    def test_robustness_report_consistency(self):
        RobustnessReport(bitwise_acc=1.0, message_acc=1)
        RobustnessReport(bitwise_acc=0.5, message_acc=0)
        with pytest.raises(ValueError):
            RobustnessReport(bitwise_acc=0.9, message_acc=1)

    def test_mos_without_adapter_warns_and_omits(self, caplog, carrier):
        import logging

        with caplog.at_level(logging.WARNING):
            value = mos_lqo(carrier, carrier, adapter=None)
        assert value is None
        assert any("adapter" in rec.message for rec in caplog.records)
