import logging
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rawbench.audio import (
    AudioClip,
    hz_to_mel,
    istft,
    load_wav,
    measure_snr,
    mel_filterbank,
    mel_to_hz,
    resample,
    save_wav,
    stft,
    wav_info,
)
from rawbench.errors import AudioIOError
from rawbench.metrics import si_snr

from conftest import tone


def write_raw_wav(path, payload: bytes, *, tag=1, channels=1, rate=16000, bits=16):
    byte_rate = rate * channels * bits // 8
    fmt = struct.pack("<HHIIHH", tag, channels, rate, byte_rate, channels * bits // 8, bits)
    body = b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    path.write_bytes(b"RIFF" + struct.pack("<I", 4 + len(body)) + b"WAVE" + body)


class TestLoadWav:
    def test_stereo_mixdown_is_channel_mean(self, tmp_path):
        left = np.array([1000, -2000, 30000], dtype="<i2")
        right = np.array([3000, 2000, -30000], dtype="<i2")
        interleaved = np.empty(6, dtype="<i2")
        interleaved[0::2] = left
        interleaved[1::2] = right
        p = tmp_path / "stereo.wav"
        write_raw_wav(p, interleaved.tobytes(), channels=2)
        clip = load_wav(p)
        assert clip.source_bit_depth == 16
        expected = (left.astype(float) + right.astype(float)) / 2 / 32768.0
        np.testing.assert_allclose(clip.samples, expected, rtol=0, atol=0)

    def test_pcm16_scaling_convention(self, tmp_path):
        p = tmp_path / "scale.wav"
        write_raw_wav(p, np.array([32767, -32768, 16384], dtype="<i2").tobytes())
        clip = load_wav(p)
        np.testing.assert_array_equal(clip.samples, [32767 / 32768, -1.0, 0.5])

    def test_truncated_header_is_unsupported_encoding(self, tmp_path):
        p = tmp_path / "bad.wav"
        p.write_bytes(b"RIFF\x10\x00\x00\x00WAVEfmt ")
        with pytest.raises(AudioIOError, match="unsupported encoding"):
            load_wav(p)

    def test_non_riff_is_unsupported_encoding(self, tmp_path):
        p = tmp_path / "bad.wav"
        p.write_bytes(b"\x00" * 64)
        with pytest.raises(AudioIOError, match="unsupported encoding"):
            load_wav(p)

    def test_compressed_format_tag_rejected(self, tmp_path):
        p = tmp_path / "adpcm.wav"
        write_raw_wav(p, b"\x00" * 32, tag=2)
        with pytest.raises(AudioIOError, match="unsupported encoding"):
            load_wav(p)

    def test_zero_length_audio(self, tmp_path):
        p = tmp_path / "empty.wav"
        write_raw_wav(p, b"")
        with pytest.raises(AudioIOError, match="zero-length"):
            load_wav(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(AudioIOError, match="no such file"):
            load_wav(tmp_path / "nope.wav")

    def test_wav_info_probe(self, tmp_path):
        p = tmp_path / "probe.wav"
        write_raw_wav(p, np.zeros(100, dtype="<i2").tobytes(), rate=8000)
        assert wav_info(p) == (100, 8000, 1)


class TestSaveWav:
    def test_float32_roundtrip_bitexact(self, tmp_path, carrier):
        p = tmp_path / "f32.wav"
        save_wav(carrier, p, 32)
        loaded = load_wav(p)
        save_wav(loaded, p, 32)
        again = load_wav(p)
        np.testing.assert_array_equal(loaded.samples, again.samples)

    @pytest.mark.parametrize("depth,step", [(16, 2.0**-15), (24, 2.0**-23)])
    def test_integer_roundtrip_within_quantization(self, tmp_path, carrier, depth, step):
        p = tmp_path / "q.wav"
        save_wav(carrier, p, depth)
        loaded = load_wav(p)
        assert loaded.source_bit_depth == depth
        assert np.max(np.abs(loaded.samples - carrier.samples)) <= step

    def test_out_of_range_hard_clips_with_warning(self, tmp_path, caplog):
        clip = tone(amp=1.0).with_samples(2.5 * tone(amp=1.0).samples)
        p = tmp_path / "hot.wav"
        with caplog.at_level(logging.WARNING):
            save_wav(clip, p, 16)
        assert any("clip" in rec.message for rec in caplog.records)
        loaded = load_wav(p)
        lim = 1.0 - 2.0**-15
        assert loaded.samples.max() == pytest.approx(lim, abs=0)
        assert loaded.samples.min() == pytest.approx(-lim, abs=0)

    def test_bad_depth_rejected(self, tmp_path, carrier):
        with pytest.raises(ValueError):
            save_wav(carrier, tmp_path / "x.wav", 12)


class TestResample:
    def test_same_rate_identity(self, carrier):
        assert resample(carrier, carrier.sample_rate) is carrier

    def test_length_arithmetic(self):
        clip = tone(seconds=1.0, rate=44100)
        out = resample(clip, 16000)
        assert abs(len(out) - 16000) <= 1
        assert out.sample_rate == 16000

    def test_sine_quality_against_analytic_target(self):
        # 1 kHz sine resampled 44.1k -> 16k, compared on the interior 90%
        # against the analytically generated 16 kHz sine.
        src = tone(1000.0, seconds=1.0, rate=44100)
        out = resample(src, 16000)
        ref = tone(1000.0, seconds=len(out) / 16000, rate=16000)
        lo, hi = int(0.05 * len(out)), int(0.95 * len(out))
        quality = si_snr(
            AudioClip(ref.samples[lo:hi], 16000), AudioClip(out.samples[lo:hi], 16000)
        )
        assert quality >= 40.0

    def test_bad_rate(self, carrier):
        with pytest.raises(ValueError):
            resample(carrier, 0)


class TestMeasureSnr:
    def test_identical_clamps_to_100(self, carrier):
        assert measure_snr(carrier, carrier) == 100.0

    def test_equal_power_noise_is_0db(self, carrier):
        degraded = carrier.with_samples(2.0 * carrier.samples)
        assert measure_snr(carrier, degraded) == pytest.approx(0.0, abs=1e-12)

    def test_hundredth_power_noise_is_20db(self, carrier):
        degraded = carrier.with_samples(carrier.samples * 1.1)
        assert measure_snr(carrier, degraded) == pytest.approx(20.0, abs=1e-9)

    def test_length_mismatch(self, carrier):
        short = AudioClip(carrier.samples[:-10], carrier.sample_rate)
        with pytest.raises(ValueError, match="length mismatch"):
            measure_snr(carrier, short)

    def test_oracle_formula(self, carrier):
        rng = np.random.default_rng(3)
        noise = 0.01 * rng.standard_normal(len(carrier))
        degraded = carrier.with_samples(carrier.samples + noise)
        expected = 10.0 * np.log10(np.sum(carrier.samples**2) / np.sum(noise**2))
        assert measure_snr(carrier, degraded) == pytest.approx(expected, abs=1e-12)


class TestStft:
    def test_zeros_give_zero_coefficients(self):
        clip = AudioClip(np.zeros(4096), 16000)
        spec = stft(clip, 1024, 256)
        assert np.all(spec.frames == 0)

    def test_bin_center_sine_energy_concentration(self):
        # Hann leakage puts the energy in the 3-bin main lobe around the
        # center bin; side lobes carry under 5%.
        rate, frame = 16000, 1024
        k = 64
        freq = k * rate / frame
        clip = tone(freq, seconds=0.5, rate=rate)
        spec = stft(clip, frame, frame)
        energy = np.abs(spec.frames[2]) ** 2
        lobe = energy[k - 1 : k + 2].sum()
        assert int(np.argmax(energy)) == k
        assert lobe / energy.sum() > 0.95

    def test_cola_reconstruction_interior(self, carrier):
        spec = stft(carrier, 1024, 256)
        rec = istft(spec)
        n = min(len(rec), len(carrier))
        err = np.abs(rec.samples[1024 : n - 1024] - carrier.samples[1024 : n - 1024])
        assert err.max() < 1e-6

    def test_parseval(self, carrier):
        frame, hop = 1024, 256
        spec = stft(carrier, frame, hop)
        # rfft keeps positive frequencies only: double the interior bins.
        mags = np.abs(spec.frames) ** 2
        spectral = mags[:, 0].sum() + 2 * mags[:, 1:-1].sum() + mags[:, -1].sum()
        window = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(frame) / frame)
        n_frames = spec.frames.shape[0]
        time_energy = sum(
            np.sum((carrier.samples[m * hop : m * hop + frame] * window) ** 2)
            for m in range(n_frames)
        )
        assert spectral == pytest.approx(frame * time_energy, rel=1e-4)

    def test_clip_shorter_than_frame(self):
        with pytest.raises(ValueError, match="shorter"):
            stft(AudioClip(np.zeros(100), 16000), 1024, 256)

    def test_non_power_of_two_rejected(self, carrier):
        with pytest.raises(ValueError, match="power of two"):
            stft(carrier, 1000, 250)


class TestMelFilterbank:
    def test_single_triangle_spans_band(self):
        fb = mel_filterbank(1024, 1, 16000, 1000.0, 4000.0)
        freqs = np.arange(513) * 16000 / 1024
        nonzero = fb[0] > 0
        assert freqs[nonzero].min() > 1000.0
        assert freqs[nonzero].max() < 4000.0
        assert nonzero.any()

    def test_row_sums_positive_40mels(self):
        fb = mel_filterbank(512, 40, 16000, 0.0, 8000.0)
        assert fb.shape == (40, 257)
        assert np.all(fb.sum(axis=1) > 0)

    def test_centers_match_mel_formula(self):
        # Oracle: uniform grid on m = 2595*log10(1 + f/700), inverted.
        fft_size, n_mels, rate = 2048, 20, 16000
        fb = mel_filterbank(fft_size, n_mels, rate, 100.0, 7000.0)
        m_lo = 2595.0 * np.log10(1 + 100.0 / 700.0)
        m_hi = 2595.0 * np.log10(1 + 7000.0 / 700.0)
        grid = np.linspace(m_lo, m_hi, n_mels + 2)
        expected_centers = 700.0 * (10.0 ** (grid[1:-1] / 2595.0) - 1.0)
        bin_width = rate / fft_size
        peak_freqs = np.argmax(fb, axis=1) * bin_width
        assert np.all(np.abs(peak_freqs - expected_centers) <= bin_width)

    def test_mel_inverse_pair(self):
        f = np.array([100.0, 1000.0, 7999.0])
        np.testing.assert_allclose(mel_to_hz(hz_to_mel(f)), f, rtol=1e-12)

    def test_invalid_edges(self):
        with pytest.raises(ValueError, match="invalid band edges"):
            mel_filterbank(512, 10, 16000, 5000.0, 4000.0)
        with pytest.raises(ValueError, match="invalid band edges"):
            mel_filterbank(512, 10, 16000, 0.0, 9000.0)


class TestAudioClip:
    def test_rejects_nan(self):
        with pytest.raises(ValueError, match="NaN"):
            AudioClip(np.array([0.0, np.nan]), 16000)

    def test_rejects_bad_rate(self):
        with pytest.raises(ValueError):
            AudioClip(np.zeros(4), 0)

    def test_rejects_stereo_array(self):
        with pytest.raises(ValueError, match="mono"):
            AudioClip(np.zeros((2, 100)), 16000)

    def test_samples_read_only(self, carrier):
        with pytest.raises(ValueError):
            carrier.samples[0] = 1.0

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.floats(min_value=-0.999, max_value=0.999),
                    min_size=8, max_size=64))
    def test_save_load_roundtrip_bound(self, tmp_path_factory, values):
        clip = AudioClip(np.array(values, dtype=np.float64), 8000)
        p = tmp_path_factory.mktemp("wav") / "t.wav"
        save_wav(clip, p, 16)
        assert np.max(np.abs(load_wav(p).samples - clip.samples)) <= 2.0**-15
