"""Mono audio container, WAV file I/O, resampling, and spectral helpers.

All processing is done in 64-bit floats at a nominal full scale of +/-1.0;
integer PCM is only touched at the file boundary.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from math import gcd
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .errors import AudioIOError

log = logging.getLogger(__name__)

# Reports must stay finite, so identical signals measure at this ceiling.
SNR_CLAMP_DB = 100.0

_WAVE_FORMAT_PCM = 1
_WAVE_FORMAT_IEEE_FLOAT = 3
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True)
class AudioClip:
    """Immutable mono sample buffer plus its sample rate.

    ``samples`` is stored as a read-only float64 array. ``source_bit_depth``
    records the bits/sample of the file the audio came from, when known.
    """

    samples: np.ndarray
    sample_rate: int
    source_bit_depth: int | None = None

    def __post_init__(self):
        arr = np.array(self.samples, dtype=np.float64, copy=True)
        if arr.ndim != 1:
            raise ValueError(f"clip must be mono 1-D, got shape {arr.shape}")
        if not isinstance(self.sample_rate, (int, np.integer)) or self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be a positive integer, got {self.sample_rate!r}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("samples contain NaN or Inf")
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def with_samples(self, samples) -> "AudioClip":
        """New clip with the same rate/origin but different samples."""
        return AudioClip(samples, self.sample_rate, self.source_bit_depth)


@dataclass(frozen=True)
class Spectrogram:
    """Complex STFT frames, time-major: ``frames[m, k]`` is frame m, bin k."""

    frames: np.ndarray
    frame_length: int
    hop: int
    sample_rate: int

    def __post_init__(self):
        if not (self.frame_length >= self.hop > 0):
            raise ValueError("need frame_length >= hop > 0")
        n_bins = self.frame_length // 2 + 1
        if self.frames.ndim != 2 or self.frames.shape[1] != n_bins:
            raise ValueError(f"expected {n_bins} frequency bins, got shape {self.frames.shape}")


def _parse_wav_bytes(raw: bytes, origin: str) -> tuple[np.ndarray, int, int]:
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise AudioIOError(f"unsupported encoding: {origin} is not a RIFF/WAVE file")
    fmt = None
    payload = None
    off = 12
    while off + 8 <= len(raw):
        cid = raw[off : off + 4]
        size = int.from_bytes(raw[off + 4 : off + 8], "little")
        body = raw[off + 8 : off + 8 + size]
        if len(body) < size:
            raise AudioIOError(f"unsupported encoding: truncated {cid!r} chunk in {origin}")
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data":
            payload = body
        off += 8 + size + (size & 1)
    if fmt is None or payload is None or len(fmt) < 16:
        raise AudioIOError(f"unsupported encoding: missing fmt/data chunk in {origin}")

    tag, channels, rate, _byte_rate, _block_align, bits = struct.unpack("<HHIIHH", fmt[:16])
    if tag == _WAVE_FORMAT_EXTENSIBLE:
        if len(fmt) < 26:
            raise AudioIOError(f"unsupported encoding: malformed extensible fmt in {origin}")
        tag = int.from_bytes(fmt[24:26], "little")
    if channels < 1:
        raise AudioIOError(f"unsupported encoding: zero channels in {origin}")

    bytes_per = bits // 8
    n_frames = len(payload) // (bytes_per * channels) if bytes_per else 0
    payload = payload[: n_frames * bytes_per * channels]
    if n_frames == 0:
        raise AudioIOError(f"zero-length audio in {origin}")

    if tag == _WAVE_FORMAT_PCM and bits == 16:
        x = np.frombuffer(payload, dtype="<i2").astype(np.float64) / 32768.0
    elif tag == _WAVE_FORMAT_PCM and bits == 24:
        b = np.frombuffer(payload, dtype=np.uint8).reshape(-1, 3).astype(np.int64)
        v = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        v -= (v >= 1 << 23) * (1 << 24)
        x = v.astype(np.float64) / float(1 << 23)
    elif tag == _WAVE_FORMAT_PCM and bits == 32:
        x = np.frombuffer(payload, dtype="<i4").astype(np.float64) / float(1 << 31)
    elif tag == _WAVE_FORMAT_PCM and bits == 8:
        x = (np.frombuffer(payload, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    elif tag == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        x = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    elif tag == _WAVE_FORMAT_IEEE_FLOAT and bits == 64:
        x = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    else:
        raise AudioIOError(
            f"unsupported encoding: format tag {tag}, {bits} bits/sample in {origin}"
        )

    if channels > 1:
        x = x.reshape(-1, channels).mean(axis=1)
    if not np.all(np.isfinite(x)):
        raise AudioIOError(f"non-finite samples in {origin}")
    return x, int(rate), int(bits)


def load_wav(path) -> AudioClip:
    """Load a RIFF WAV file as a mono float clip.

    PCM samples are scaled by 2**(bits-1) (so 16-bit 32767 becomes
    32767/32768); multichannel audio is mixed down as the unweighted
    channel mean.
    """
    p = Path(path)
    if not p.is_file():
        raise AudioIOError(f"no such file: {p}")
    x, rate, bits = _parse_wav_bytes(p.read_bytes(), str(p))
    return AudioClip(x, rate, source_bit_depth=bits)


def wav_info(path) -> tuple[int, int, int]:
    """Header-only probe: (n_samples_per_channel, sample_rate, channels)."""
    p = Path(path)
    if not p.is_file():
        raise AudioIOError(f"no such file: {p}")
    with open(p, "rb") as fh:
        head = fh.read(12)
        if len(head) < 12 or head[:4] != b"RIFF" or head[8:12] != b"WAVE":
            raise AudioIOError(f"unsupported encoding: {p} is not a RIFF/WAVE file")
        fmt = None
        data_size = None
        while True:
            hdr = fh.read(8)
            if len(hdr) < 8:
                break
            cid, size = hdr[:4], int.from_bytes(hdr[4:], "little")
            if cid == b"fmt ":
                fmt = fh.read(size)
            elif cid == b"data":
                data_size = size
                fh.seek(size + (size & 1), 1)
            else:
                fh.seek(size + (size & 1), 1)
            if size & 1 and cid == b"fmt ":
                fh.seek(1, 1)
    if fmt is None or data_size is None or len(fmt) < 16:
        raise AudioIOError(f"unsupported encoding: missing fmt/data chunk in {p}")
    _tag, channels, rate, _br, _ba, bits = struct.unpack("<HHIIHH", fmt[:16])
    if channels < 1 or bits < 8:
        raise AudioIOError(f"unsupported encoding in {p}")
    return data_size // (channels * (bits // 8)), int(rate), int(channels)


def save_wav(clip: AudioClip, path, bit_depth: int = 16) -> None:
    """Write a clip as 16/24-bit PCM or 32-bit IEEE-float WAV.

    For integer depths, samples beyond +/-(1 - 2**-(depth-1)) are
    hard-clipped symmetrically and a warning is logged; float output is
    written as-is.
    """
    if bit_depth not in (16, 24, 32):
        raise ValueError(f"bit_depth must be 16, 24, or 32 (32 = IEEE float), got {bit_depth}")
    x = clip.samples
    if bit_depth == 32:
        tag, bits = _WAVE_FORMAT_IEEE_FLOAT, 32
        data = x.astype("<f4").tobytes()
    else:
        tag, bits = _WAVE_FORMAT_PCM, bit_depth
        scale = 1 << (bit_depth - 1)
        q = np.rint(x * scale)
        lim = scale - 1
        n_clipped = int(np.count_nonzero((q > lim) | (q < -lim)))
        if n_clipped:
            log.warning(
                "save_wav: hard-clipped %d sample(s) to +/-(1 - 2**-%d) writing %s",
                n_clipped, bit_depth - 1, path,
            )
        q = np.clip(q, -lim, lim)
        if bit_depth == 16:
            data = q.astype("<i2").tobytes()
        else:
            v = q.astype(np.int64) & 0xFFFFFF
            b = np.empty((len(v), 3), dtype=np.uint8)
            b[:, 0] = v & 0xFF
            b[:, 1] = (v >> 8) & 0xFF
            b[:, 2] = (v >> 16) & 0xFF
            data = b.tobytes()

    byte_rate = clip.sample_rate * (bits // 8)
    fmt = struct.pack("<HHIIHH", tag, 1, clip.sample_rate, byte_rate, bits // 8, bits)
    chunks = [(b"fmt ", fmt)]
    if tag == _WAVE_FORMAT_IEEE_FLOAT:
        chunks.append((b"fact", struct.pack("<I", len(clip))))
    chunks.append((b"data", data))

    body = b"".join(
        cid + struct.pack("<I", len(payload)) + payload + (b"\x00" if len(payload) & 1 else b"")
        for cid, payload in chunks
    )
    with open(path, "wb") as fh:
        fh.write(b"RIFF" + struct.pack("<I", 4 + len(body)) + b"WAVE" + body)


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Band-limited polyphase resampling.

    Uses scipy's polyphase resampler with a Kaiser-windowed sinc, beta
    10.0 (about 100 dB stopband), 10 taps per phase after up/down
    reduction. Same-rate calls return the input clip unchanged. Output
    length is ceil(len * target / source).
    """
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == clip.sample_rate:
        return clip
    g = gcd(int(target_rate), clip.sample_rate)
    up, down = int(target_rate) // g, clip.sample_rate // g
    y = sps.resample_poly(clip.samples, up, down, window=("kaiser", 10.0))
    return AudioClip(y, int(target_rate), clip.source_bit_depth)


def measure_snr(reference: AudioClip, degraded: AudioClip) -> float:
    """Plain SNR in dB: 10*log10(P_ref / P_(degraded - ref)), clamped to +/-100."""
    if len(reference) != len(degraded):
        raise ValueError(f"length mismatch: {len(reference)} vs {len(degraded)}")
    if reference.sample_rate != degraded.sample_rate:
        raise ValueError("sample rate mismatch")
    r = reference.samples
    residual = degraded.samples - r
    p_res = float(np.dot(residual, residual))
    if p_res == 0.0:
        return SNR_CLAMP_DB
    p_ref = float(np.dot(r, r))
    if p_ref == 0.0:
        return -SNR_CLAMP_DB
    return float(np.clip(10.0 * np.log10(p_ref / p_res), -SNR_CLAMP_DB, SNR_CLAMP_DB))


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window (overlap-add friendly at hop = n/2, n/4, ...)."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft(clip: AudioClip, frame_length: int, hop: int, window: str = "hann") -> Spectrogram:
    """Overlapping windowed real-input DFT, no padding: frame m covers
    samples [m*hop, m*hop + frame_length)."""
    if window != "hann":
        raise ValueError(f"only the hann window is supported, got {window!r}")
    if frame_length & (frame_length - 1) or frame_length <= 0:
        raise ValueError(f"frame_length must be a power of two, got {frame_length}")
    if not (frame_length >= hop > 0):
        raise ValueError("need frame_length >= hop > 0")
    n = len(clip)
    if n < frame_length:
        raise ValueError(f"clip of {n} samples is shorter than one {frame_length}-sample frame")
    n_frames = 1 + (n - frame_length) // hop
    idx = np.arange(frame_length)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = clip.samples[idx] * hann_window(frame_length)[None, :]
    return Spectrogram(np.fft.rfft(frames, axis=1), frame_length, hop, clip.sample_rate)


def istft(spec: Spectrogram) -> AudioClip:
    """Synthesis-windowed overlap-add inverse of :func:`stft`.

    Each inverse frame is re-windowed and the sum is normalized by the
    accumulated squared window, so interior samples reconstruct exactly for
    COLA-compliant hops; edge samples with partial coverage are
    normalized by their actual coverage.
    """
    w = hann_window(spec.frame_length)
    frames = np.fft.irfft(spec.frames, n=spec.frame_length, axis=1) * w[None, :]
    n_frames = frames.shape[0]
    n = spec.frame_length + (n_frames - 1) * spec.hop
    y = np.zeros(n)
    den = np.zeros(n)
    w2 = w * w
    for m in range(n_frames):
        start = m * spec.hop
        y[start : start + spec.frame_length] += frames[m]
        den[start : start + spec.frame_length] += w2
    good = den > 1e-12
    y[good] /= den[good]
    return AudioClip(y, spec.sample_rate)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(
    fft_size: int, n_mels: int, sample_rate: int, f_min: float = 0.0, f_max: float | None = None
) -> np.ndarray:
    """Triangular mel filters, peak 1.0, as an (n_mels, fft_size//2+1) matrix.

    Band edges are uniform on the mel scale between f_min and f_max; each
    triangle spans its two neighbours' centers.
    """
    if f_max is None:
        f_max = sample_rate / 2.0
    if not (0.0 <= f_min < f_max <= sample_rate / 2.0):
        raise ValueError(f"invalid band edges: f_min={f_min}, f_max={f_max}, rate={sample_rate}")
    if n_mels < 1:
        raise ValueError("n_mels must be >= 1")
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    bin_freqs = np.arange(fft_size // 2 + 1) * (sample_rate / fft_size)
    weights = np.zeros((n_mels, len(bin_freqs)))
    for i in range(n_mels):
        left, center, right = edges[i], edges[i + 1], edges[i + 2]
        rise = (bin_freqs - left) / max(center - left, 1e-12)
        fall = (right - bin_freqs) / max(right - center, 1e-12)
        weights[i] = np.clip(np.minimum(rise, fall), 0.0, None)
    if np.any(weights.sum(axis=1) <= 0.0):
        raise ValueError(
            f"empty mel filter row: fft_size={fft_size} too small for n_mels={n_mels}"
        )
    return weights
