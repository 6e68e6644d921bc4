"""Perceptual and robustness metrics.

Perceptual: scale-invariant SNR, mel cepstral distance, and an optional
MOS-LQO bridge that defers to an external adapter process. Robustness:
bitwise accuracy, full-message accuracy, detection TPR at zero false
positives, and payload capacity.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass

import numpy as np
from scipy.fft import dct

from .audio import AudioClip, mel_filterbank

log = logging.getLogger(__name__)

SI_SNR_CLAMP_DB = 100.0

# Mel cepstral distance configuration (fixed; same-length inputs need no
# time alignment): 25 ms frames, 10 ms hop, 40 mel bands, cepstra 1..13.
MCD_FRAME_SECONDS = 0.025
MCD_HOP_SECONDS = 0.010
MCD_N_MELS = 40
MCD_N_CEPSTRA = 13
MCD_LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class PerceptualReport:
    """Imperceptibility metrics for one (clean, watermarked) pair."""

    si_snr_db: float
    mcd: float
    mos_lqo: float | None = None

    def __post_init__(self):
        if self.mcd < 0.0:
            raise ValueError("mcd must be nonnegative")
        if self.si_snr_db > SI_SNR_CLAMP_DB:
            raise ValueError("si_snr_db exceeds clamp")


@dataclass(frozen=True)
class RobustnessReport:
    """Detection outcome for one record: bit fraction and all-bits indicator."""

    bitwise_acc: float
    message_acc: int

    def __post_init__(self):
        if not 0.0 <= self.bitwise_acc <= 1.0:
            raise ValueError("bitwise_acc must lie in [0, 1]")
        if self.message_acc not in (0, 1):
            raise ValueError("message_acc must be 0 or 1")
        if self.message_acc == 1 and self.bitwise_acc != 1.0:
            raise ValueError("message_acc = 1 requires bitwise_acc = 1")


def si_snr(reference: AudioClip, estimate: AudioClip) -> float:
    """Scale-invariant SNR in dB, clamped to [-100, 100].

    Projects the estimate onto the reference and compares projection power
    to residual power, so any nonzero rescaling of the estimate leaves the
    value unchanged.
    """
    if len(reference) != len(estimate):
        raise ValueError(f"length mismatch: {len(reference)} vs {len(estimate)}")
    if reference.sample_rate != estimate.sample_rate:
        raise ValueError("sample rate mismatch")
    ref = reference.samples
    est = estimate.samples
    ref_power = float(np.dot(ref, ref))
    if ref_power == 0.0:
        raise ValueError("zero reference signal")
    target = (float(np.dot(est, ref)) / ref_power) * ref
    noise = est - target
    p_target = float(np.dot(target, target))
    p_noise = float(np.dot(noise, noise))
    if p_noise == 0.0:
        return SI_SNR_CLAMP_DB
    if p_target == 0.0:
        return -SI_SNR_CLAMP_DB
    return float(np.clip(10.0 * np.log10(p_target / p_noise), -SI_SNR_CLAMP_DB, SI_SNR_CLAMP_DB))


@functools.lru_cache(maxsize=16)
def _mcd_filterbank(n_fft: int, sample_rate: int) -> np.ndarray:
    return mel_filterbank(n_fft, MCD_N_MELS, sample_rate, 0.0, sample_rate / 2.0)


def _mel_log_cepstra(x: np.ndarray, sample_rate: int) -> np.ndarray:
    frame = int(round(MCD_FRAME_SECONDS * sample_rate))
    hop = int(round(MCD_HOP_SECONDS * sample_rate))
    if len(x) < frame:
        raise ValueError(f"clip of {len(x)} samples is shorter than one {frame}-sample frame")
    n_fft = 1 << (frame - 1).bit_length()
    n_frames = 1 + (len(x) - frame) // hop
    idx = np.arange(frame)[None, :] + hop * np.arange(n_frames)[:, None]
    win = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(frame) / frame)
    spectra = np.abs(np.fft.rfft(x[idx] * win[None, :], n=n_fft, axis=1)) ** 2
    fb = _mcd_filterbank(n_fft, sample_rate)
    logmel = np.log(np.maximum(spectra @ fb.T, MCD_LOG_FLOOR))
    cepstra = dct(logmel, type=2, norm="ortho", axis=1)
    return cepstra[:, 1 : MCD_N_CEPSTRA + 1]


def mel_cepstral_distance(reference: AudioClip, estimate: AudioClip) -> float:
    """Frame-averaged mel cepstral distance between two same-length clips.

    Per frame: (10/ln 10) * sqrt(2 * sum_d (c_d - c'_d)^2) over cepstral
    coefficients 1..13 (c0 excluded), averaged over frames.
    """
    if len(reference) != len(estimate):
        raise ValueError(f"length mismatch: {len(reference)} vs {len(estimate)}")
    if reference.sample_rate != estimate.sample_rate:
        raise ValueError("sample rate mismatch")
    c_ref = _mel_log_cepstra(reference.samples, reference.sample_rate)
    c_est = _mel_log_cepstra(estimate.samples, estimate.sample_rate)
    diff = c_ref - c_est
    per_frame = (10.0 / np.log(10.0)) * np.sqrt(2.0 * np.sum(diff * diff, axis=1))
    return float(per_frame.mean())


def mos_lqo(reference: AudioClip, estimate: AudioClip, adapter=None) -> float | None:
    """Objective quality score in [1, 5] from an external adapter process.

    The adapter speaks the plugin wire protocol (see :mod:`rawbench.watermark`);
    the value it returns is passed through untouched. With no adapter
    configured the metric is omitted (returns None) with a warning.
    """
    if adapter is None:
        log.warning("mos_lqo: no adapter configured, omitting metric")
        return None
    from .watermark import request_quality_score

    return request_quality_score(adapter, reference, estimate)


def bitwise_accuracy(original, detected) -> float:
    """Fraction of matching bits between two equal-length messages."""
    a = _as_bits(original)
    b = _as_bits(detected)
    if len(a) != len(b):
        raise ValueError(f"message length mismatch: {len(a)} vs {len(b)}")
    return float(np.mean(a == b))


def message_accuracy(original, detected) -> int:
    """1 iff every bit matches, else 0."""
    return int(bitwise_accuracy(original, detected) == 1.0)


def _as_bits(message) -> np.ndarray:
    bits = np.asarray(getattr(message, "bits", message), dtype=np.int64)
    if bits.ndim != 1 or not np.all((bits == 0) | (bits == 1)):
        raise ValueError("message must be a flat sequence of 0/1 bits")
    return bits


def tpr_at_zero_fpr(positive_scores, negative_scores) -> float:
    """Fraction of positive scores strictly above the largest negative score.

    This is the detection rate at the threshold where no negative is
    accepted; invariant under any strictly monotone rescoring applied to
    both lists.
    """
    pos = np.asarray(positive_scores, dtype=np.float64)
    neg = np.asarray(negative_scores, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("score lists must be nonempty")
    return float(np.mean(pos > neg.max()))


def compute_capacity(message_bits: int, unit_seconds: float) -> float:
    """Payload bits per second of carrier audio."""
    if unit_seconds <= 0:
        raise ValueError("unit_seconds must be positive")
    return message_bits / unit_seconds
