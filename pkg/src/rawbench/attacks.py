"""The 20-distortion attack pipeline with loose/strict parameter regimes.

Every attack is a pure function of (clip, parameters, seed): applying the
same spec twice yields bit-identical output. Attacks preserve the input
length and sample rate, except time stretching where the length change is
the distortion itself.
"""

from __future__ import annotations

import enum
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .audio import AudioClip, Spectrogram, istft, load_wav, resample, save_wav, stft
from .errors import AttackError
from .watermark import PluginWatermarker, spawn_plugin


class AttackId(str, enum.Enum):
    GN = "GN"  # gaussian noise
    BN = "BN"  # background noise from a corpus clip
    RV = "RV"  # reverb via impulse response
    DC = "DC"  # dynamic range compression
    DE = "DE"  # dynamic range expansion
    LM = "LM"  # limiter
    LP = "LP"  # lowpass
    HP = "HP"  # highpass
    EQ = "EQ"  # random multiband equalization
    TS = "TS"  # time stretch (pitch preserving)
    TJ = "TJ"  # time jittering
    PI = "PI"  # polarity inversion
    GA = "GA"  # gain adjustment
    QN = "QN"  # requantization
    PS = "PS"  # phase (time) shift
    EN = "EN"  # neural codec at 24 kHz (plugin)
    DA = "DA"  # neural codec at 44.1 kHz (plugin)
    MP = "MP"  # MP3 transcode
    OG = "OG"  # Ogg Vorbis transcode
    AA = "AA"  # AAC transcode

    def __str__(self) -> str:
        return self.value


ATTACK_ORDER = [
    AttackId.GN, AttackId.BN, AttackId.RV, AttackId.DC, AttackId.DE, AttackId.LM,
    AttackId.LP, AttackId.HP, AttackId.EQ, AttackId.TS, AttackId.TJ, AttackId.PI,
    AttackId.GA, AttackId.QN, AttackId.PS, AttackId.EN, AttackId.DA, AttackId.MP,
    AttackId.OG, AttackId.AA,
]


class Regime(enum.Enum):
    LOOSE = "loose"
    STRICT = "strict"


@dataclass(frozen=True)
class Fixed:
    """Pin an attack to one parameter value (must lie in the full range)."""

    value: float


def parse_regime(raw):
    if isinstance(raw, (Regime, Fixed)):
        return raw
    if isinstance(raw, str):
        try:
            return Regime(raw.lower())
        except ValueError:
            pass
    if isinstance(raw, dict) and "fixed" in raw:
        return Fixed(raw["fixed"])
    if isinstance(raw, (int, float)):
        return Fixed(float(raw))
    raise ValueError(f"cannot interpret regime {raw!r}")


def regime_label(regime) -> str:
    return "fixed" if isinstance(regime, Fixed) else regime.value


@dataclass(frozen=True)
class AttackDef:
    """Parameter space of one attack: full range plus loose/strict sub-ranges.

    ``loose``/``strict`` are interval unions for continuous parameters and
    value tuples for discrete ones. Loose always sits on the less audible
    side of the split.
    """

    category: str
    param_name: str | None
    kind: str  # "intervals" | "discrete" | "none"
    loose: tuple = ()
    strict: tuple = ()

    @property
    def full_intervals(self) -> tuple:
        return tuple(sorted(self.loose + self.strict))

    @property
    def values(self) -> tuple:
        return tuple(sorted(self.loose + self.strict))


ATTACKS: dict[AttackId, AttackDef] = {
    # Mixing: lower SNR = more audible.
    AttackId.GN: AttackDef("mixing", "snr_db", "intervals",
                           loose=((40.0, 60.0),), strict=((20.0, 40.0),)),
    AttackId.BN: AttackDef("mixing", "snr_db", "intervals",
                           loose=((35.0, 60.0),), strict=((20.0, 35.0),)),
    AttackId.RV: AttackDef("mixing", "snr_db", "intervals",
                           loose=((6.0, 12.0),), strict=((0.0, 6.0),)),
    # Dynamics: lower (more negative) threshold bites harder.
    AttackId.DC: AttackDef("dynamics", "threshold_db", "intervals",
                           loose=((-18.0, -6.0),), strict=((-36.0, -18.0),)),
    AttackId.DE: AttackDef("dynamics", "threshold_db", "intervals",
                           loose=((-12.0, -6.0),), strict=((-16.0, -12.0),)),
    AttackId.LM: AttackDef("dynamics", "threshold_db", "intervals",
                           loose=((-18.0, -6.0),), strict=((-36.0, -18.0),)),
    # Filtering: lowpass hurts at low cutoffs, highpass at high cutoffs.
    AttackId.LP: AttackDef("filtering", "cutoff_hz", "intervals",
                           loose=((6000.0, 8000.0),), strict=((3500.0, 6000.0),)),
    AttackId.HP: AttackDef("filtering", "cutoff_hz", "intervals",
                           loose=((10.0, 250.0),), strict=((250.0, 500.0),)),
    AttackId.EQ: AttackDef("filtering", "max_gain_db", "intervals",
                           loose=((-0.375, 0.375),),
                           strict=((-0.75, -0.375), (0.375, 0.75))),
    # Low level: center-symmetric attacks are loose inside the neutral band.
    AttackId.TS: AttackDef("low_level", "rate", "intervals",
                           loose=((0.95, 1.05),),
                           strict=((0.75, 0.95), (1.05, 1.25))),
    AttackId.TJ: AttackDef("low_level", "scale", "intervals",
                           loose=((0.10, 0.20),), strict=((0.20, 0.50),)),
    AttackId.PI: AttackDef("low_level", None, "none"),
    AttackId.GA: AttackDef("low_level", "rate", "intervals",
                           loose=((0.50, 1.50),),
                           strict=((0.20, 0.50), (1.50, 5.0))),
    AttackId.QN: AttackDef("low_level", "bits", "discrete",
                           loose=(12, 13, 14, 15, 16), strict=(8, 9, 10, 11)),
    AttackId.PS: AttackDef("low_level", "seconds", "intervals",
                           loose=((-0.05, 0.05),),
                           strict=((-0.10, -0.05), (0.05, 0.10))),
    # Neural compression: fewer codebooks = harsher.
    AttackId.EN: AttackDef("neural_compression", "n_codebooks", "discrete",
                           loose=(32,), strict=(16,)),
    AttackId.DA: AttackDef("neural_compression", "n_codebooks", "discrete",
                           loose=(9,), strict=(7, 8)),
    # Conventional compression: lowest bitrate = harshest.
    AttackId.MP: AttackDef("conventional_compression", "bitrate_kbps", "discrete",
                           loose=(128, 256), strict=(64,)),
    AttackId.OG: AttackDef("conventional_compression", "bitrate_kbps", "discrete",
                           loose=(64, 128, 256), strict=(48,)),
    AttackId.AA: AttackDef("conventional_compression", "bitrate_kbps", "discrete",
                           loose=(128, 256), strict=(64,)),
}

NATIVE_ATTACKS = [a for a in ATTACK_ORDER
                  if a not in (AttackId.EN, AttackId.DA, AttackId.MP, AttackId.OG, AttackId.AA)]


def _in_intervals(value: float, intervals) -> bool:
    return any(lo <= value <= hi for lo, hi in intervals)


def regime_contains(attack: AttackId, regime, value) -> bool:
    """True when a parameter value lies in the given regime's sub-range."""
    d = ATTACKS[attack]
    if d.kind == "none":
        return value is None
    if isinstance(regime, Fixed):
        return value == regime.value
    sub = d.loose if regime is Regime.LOOSE else d.strict
    if d.kind == "discrete":
        return value in sub
    return _in_intervals(float(value), sub)


def sample_parameter(attack: AttackId, regime, seed: int):
    """Draw an attack parameter for a regime, deterministically under seed.

    Continuous parameters are uniform over the regime's interval union
    (measure-weighted across disjoint pieces); discrete parameters are
    uniform over the regime's value list. Parameterless attacks return None.
    """
    d = ATTACKS[attack]
    if d.kind == "none":
        if isinstance(regime, Fixed):
            raise AttackError(f"{attack} takes no parameter, cannot fix one")
        return None
    if isinstance(regime, Fixed):
        v = regime.value
        if d.kind == "discrete":
            iv = int(v)
            if iv != v or iv not in d.values:
                raise AttackError(f"fixed value {v!r} not in {attack} values {d.values}")
            return iv
        if not _in_intervals(float(v), d.full_intervals):
            raise AttackError(f"fixed value {v!r} outside {attack} range {d.full_intervals}")
        return float(v)

    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, 0x5EED]))
    sub = d.loose if regime is Regime.LOOSE else d.strict
    if d.kind == "discrete":
        return sub[int(rng.integers(len(sub)))]
    lengths = np.array([hi - lo for lo, hi in sub])
    u = rng.uniform(0.0, lengths.sum())
    for (lo, hi), span in zip(sub, lengths):
        if u <= span:
            return float(lo + u)
        u -= span
    return float(sub[-1][1])


@dataclass(frozen=True)
class AttackSpec:
    """One concrete attack instance: id, sampled parameter, regime, seed,
    and any file resources the attack consumes."""

    attack: AttackId
    parameter: float | int | None
    regime: str
    seed: int
    noise_path: str | None = None
    ir_path: str | None = None


def make_spec(attack: AttackId, regime, seed: int,
              noise_path: str | None = None, ir_path: str | None = None) -> AttackSpec:
    return AttackSpec(
        attack=attack,
        parameter=sample_parameter(attack, regime, seed),
        regime=regime_label(regime),
        seed=int(seed),
        noise_path=noise_path,
        ir_path=ir_path,
    )


# --- mixing ---------------------------------------------------------------

def add_noise(clip: AudioClip, noise_source, snr_db: float, seed: int = 0) -> AudioClip:
    """Mix in gaussian or corpus noise scaled to an exact SNR.

    Only the noise is scaled, never the carrier. Corpus clips shorter than
    the carrier are looped; longer ones are cropped at a seeded offset.
    """
    x = clip.samples
    p_x = float(np.mean(x * x))
    if p_x == 0.0:
        raise AttackError("zero-power carrier: SNR is undefined")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, 0x0153]))
    if isinstance(noise_source, str):
        if noise_source != "gaussian":
            raise AttackError(f"unknown noise source {noise_source!r}")
        n = rng.standard_normal(len(x))
    elif isinstance(noise_source, AudioClip):
        src = noise_source
        if src.sample_rate != clip.sample_rate:
            src = resample(src, clip.sample_rate)
        s = src.samples
        if len(s) == 0:
            raise AttackError("empty noise clip")
        if len(s) < len(x):
            s = np.tile(s, -(-len(x) // len(s)))
        if len(s) > len(x):
            off = int(rng.integers(0, len(s) - len(x) + 1))
            s = s[off : off + len(x)]
        n = s
    else:
        raise AttackError(f"unsupported noise source {type(noise_source).__name__}")
    p_n = float(np.mean(n * n))
    if p_n == 0.0:
        raise AttackError("zero-power noise source")
    scale = np.sqrt(p_x / (p_n * 10.0 ** (snr_db / 10.0)))
    return clip.with_samples(x + scale * n)


def convolve_reverb(clip: AudioClip, impulse_response: AudioClip, wet_snr_db: float) -> AudioClip:
    """Mix the dry signal with its IR convolution at an exact dry/wet power ratio."""
    ir = impulse_response
    if ir.sample_rate != clip.sample_rate:
        ir = resample(ir, clip.sample_rate)
    h = ir.samples
    if len(h) == 0 or not np.any(h):
        raise AttackError("empty impulse response")
    x = clip.samples
    wet = sps.fftconvolve(x, h)[: len(x)]
    p_dry = float(np.mean(x * x))
    p_wet = float(np.mean(wet * wet))
    if p_wet == 0.0 or p_dry == 0.0:
        raise AttackError("zero-power dry or wet signal, cannot set dry/wet ratio")
    scale = np.sqrt(p_dry / (p_wet * 10.0 ** (wet_snr_db / 10.0)))
    return clip.with_samples(x + scale * wet)


# --- dynamics ---------------------------------------------------------------

DYN_ATTACK_S = 0.005
DYN_RELEASE_S = 0.050
DYN_RMS_WINDOW_S = 0.010
DYN_RANGES = {"compress": (-36.0, -6.0), "expand": (-16.0, -6.0), "limit": (-36.0, -6.0)}


def _sliding_rms(x: np.ndarray, window: int) -> np.ndarray:
    power = np.concatenate([[0.0], np.cumsum(x * x)])
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(idx - window, 0)
    return np.sqrt((power[idx] - power[lo]) / (idx - lo))


def _smooth_env(level: np.ndarray, fs: int) -> np.ndarray:
    a_att = 1.0 - np.exp(-1.0 / (DYN_ATTACK_S * fs))
    a_rel = 1.0 - np.exp(-1.0 / (DYN_RELEASE_S * fs))
    env = np.empty_like(level)
    e = 0.0
    for i, lv in enumerate(level):
        a = a_att if lv > e else a_rel
        e += a * (lv - e)
        env[i] = e
    return env


def apply_dynamics(clip: AudioClip, kind: str, threshold_db: float) -> AudioClip:
    """Feed-forward dynamics processor: 4:1 compressor above threshold,
    1:2 downward expander below threshold, or hard-ratio limiter.

    The detector is a 10 ms sliding RMS scaled by sqrt(2) so a full-scale
    sine reads 0 dBFS, smoothed with 5 ms attack / 50 ms release. No
    make-up gain is applied.
    """
    if kind not in DYN_RANGES:
        raise AttackError(f"unknown dynamics kind {kind!r}")
    lo, hi = DYN_RANGES[kind]
    if not lo <= threshold_db <= hi:
        raise AttackError(f"{kind} threshold {threshold_db} dB outside [{lo}, {hi}]")
    x = clip.samples
    fs = clip.sample_rate
    level = _sliding_rms(x, max(1, round(DYN_RMS_WINDOW_S * fs))) * np.sqrt(2.0)
    env_db = 20.0 * np.log10(np.maximum(_smooth_env(level, fs), 1e-12))
    if kind == "compress":
        gain_db = np.where(env_db > threshold_db, (threshold_db - env_db) * (1.0 - 1.0 / 4.0), 0.0)
    elif kind == "limit":
        gain_db = np.where(env_db > threshold_db, threshold_db - env_db, 0.0)
    else:
        gain_db = np.where(env_db < threshold_db, env_db - threshold_db, 0.0)
    return clip.with_samples(x * 10.0 ** (gain_db / 20.0))


# --- filtering --------------------------------------------------------------

# Order-4 Butterworth run forward-backward gives an 8th-order magnitude
# response. The design cutoff is pre-warped (in the bilinear tan domain, so
# it stays exact near Nyquist) by (sqrt(2)-1)**(1/8) to put the -3 dB point
# of the double pass at the requested frequency.
_BUTTER_PREWARP = (np.sqrt(2.0) - 1.0) ** (1.0 / 8.0)


def apply_filter(clip: AudioClip, kind: str, cutoff_hz: float) -> AudioClip:
    """Zero-phase 8th-order-magnitude Butterworth lowpass or highpass."""
    if kind not in ("lowpass", "highpass"):
        raise AttackError(f"unknown filter kind {kind!r}")
    fs = clip.sample_rate
    nyquist = fs / 2.0
    if cutoff_hz >= nyquist:
        raise AttackError(f"cutoff {cutoff_hz} Hz >= Nyquist {nyquist} Hz")
    if cutoff_hz <= 0:
        raise AttackError("cutoff must be positive")
    t = np.tan(np.pi * cutoff_hz / fs)
    warped = t / _BUTTER_PREWARP if kind == "lowpass" else t * _BUTTER_PREWARP
    wc = min(fs / np.pi * np.arctan(warped), 0.99 * nyquist)
    sos = sps.butter(4, wc, btype="low" if kind == "lowpass" else "high",
                     fs=fs, output="sos")
    return clip.with_samples(sps.sosfiltfilt(sos, clip.samples))


EQ_BAND_CENTERS_HZ = (31.25, 62.5, 125.0, 250.0, 500.0, 1000.0, 2000.0, 4000.0, 8000.0, 16000.0)
EQ_FRAME = 2048
EQ_HOP = EQ_FRAME // 4


def equalize(clip: AudioClip, max_gain_db: float, seed: int = 0) -> AudioClip:
    """Random 10-octave-band gain curve applied by short-time spectral weighting.

    Per-band gains are drawn uniform in [-|g|, +|g|] and interpolated
    linearly in log-frequency across bins, so the spectral deviation stays
    within |g| plus a small analysis ripple.
    """
    if abs(max_gain_db) > 0.75 + 1e-12:
        raise AttackError(f"max gain {max_gain_db} dB outside [-0.75, 0.75]")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, 0x0E9]))
    gains_db = rng.uniform(-abs(max_gain_db), abs(max_gain_db), size=len(EQ_BAND_CENTERS_HZ))

    n = len(clip)
    pad = EQ_FRAME
    padded = AudioClip(np.concatenate([np.zeros(pad), clip.samples, np.zeros(pad)]),
                       clip.sample_rate)
    spec = stft(padded, EQ_FRAME, EQ_HOP)
    bin_freqs = np.arange(EQ_FRAME // 2 + 1) * (clip.sample_rate / EQ_FRAME)
    curve_db = np.interp(
        np.log(np.maximum(bin_freqs, 1.0)),
        np.log(np.array(EQ_BAND_CENTERS_HZ)),
        gains_db,
    )
    weighted = spec.frames * (10.0 ** (curve_db / 20.0))[None, :]
    y = istft(Spectrogram(weighted, spec.frame_length, spec.hop, spec.sample_rate)).samples
    return clip.with_samples(y[pad : pad + n])


# --- low level --------------------------------------------------------------

PV_FRAME = 2048
PV_HOP = PV_FRAME // 4


def time_stretch(clip: AudioClip, rate: float) -> AudioClip:
    """Pitch-preserving phase-vocoder time stretch: output duration is
    round(len/rate); rate 1.0 returns the input unchanged."""
    if not 0.75 <= rate <= 1.25:
        raise AttackError(f"stretch rate {rate} outside [0.75, 1.25]")
    if rate == 1.0:
        return clip
    n = len(clip)
    target = int(round(n / rate))
    if n < PV_FRAME:
        raise AttackError(f"clip of {n} samples too short to stretch (needs {PV_FRAME})")

    half = PV_FRAME // 2
    padded = AudioClip(np.concatenate([np.zeros(half), clip.samples, np.zeros(half + PV_FRAME)]),
                       clip.sample_rate)
    spec = stft(padded, PV_FRAME, PV_HOP)
    frames = spec.frames
    mags = np.abs(frames)
    phases = np.angle(frames)

    steps = np.arange(0, frames.shape[0] - 1, rate)
    base = steps.astype(int)
    frac = (steps - base)[:, None]
    mag = (1.0 - frac) * mags[base] + frac * mags[base + 1]

    # Per-hop phase advance: nominal bin rotation plus the wrapped deviation
    # observed between consecutive analysis frames.
    bin_advance = 2.0 * np.pi * PV_HOP * np.arange(frames.shape[1]) / PV_FRAME
    dphi = phases[base + 1] - phases[base] - bin_advance[None, :]
    dphi -= 2.0 * np.pi * np.round(dphi / (2.0 * np.pi))
    increments = bin_advance[None, :] + dphi
    acc = np.empty_like(increments)
    acc[0] = phases[0]
    acc[1:] = phases[0][None, :] + np.cumsum(increments[:-1], axis=0)

    out_frames = mag * np.exp(1j * acc)
    y = istft(Spectrogram(out_frames, spec.frame_length, spec.hop, spec.sample_rate)).samples
    y = y[half : half + target]
    if len(y) < target:
        y = np.concatenate([y, np.zeros(target - len(y))])
    return clip.with_samples(y)


TJ_SEGMENT_S = 0.050


def time_jitter(clip: AudioClip, scale: float, seed: int = 0) -> AudioClip:
    """Segment-wise micro-resampling: 50 ms segments are each linearly
    resampled by a seeded ratio in [1 - scale/10, 1 + scale/10], then the
    result is refit (trim or zero-pad) to the input length.

    scale 0 is accepted as the degenerate identity for testing; sampled
    regimes only produce values in [0.10, 0.50].
    """
    if not 0.0 <= scale <= 0.5 + 1e-12:
        raise AttackError(f"jitter scale {scale} outside [0, 0.5]")
    fs = clip.sample_rate
    seg = max(1, round(TJ_SEGMENT_S * fs))
    x = clip.samples
    if len(x) < seg:
        raise AttackError(f"clip of {len(x)} samples shorter than one {seg}-sample segment")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, 0x71]))
    pieces = []
    for start in range(0, len(x), seg):
        chunk = x[start : start + seg]
        ratio = rng.uniform(1.0 - scale * 0.1, 1.0 + scale * 0.1)
        m = max(1, int(round(len(chunk) * ratio)))
        if m == len(chunk):
            pieces.append(chunk)
        else:
            pos = np.linspace(0.0, len(chunk) - 1.0, m)
            pieces.append(np.interp(pos, np.arange(len(chunk)), chunk))
    y = np.concatenate(pieces)
    if len(y) >= len(x):
        y = y[: len(x)]
    else:
        y = np.concatenate([y, np.zeros(len(x) - len(y))])
    return clip.with_samples(y)


def polarity_invert(clip: AudioClip) -> AudioClip:
    return clip.with_samples(-clip.samples)


def adjust_gain(clip: AudioClip, rate: float) -> AudioClip:
    """Scale by a linear factor; the float domain never clips."""
    if not 0.20 <= rate <= 5.0:
        raise AttackError(f"gain rate {rate} outside [0.20, 5]")
    return clip.with_samples(rate * clip.samples)


def quantize(clip: AudioClip, bits: int) -> AudioClip:
    """Requantize to the signed 2**bits-level PCM grid over +/-1 and back to
    float. Audio loaded from files of the same depth is already on the grid
    and passes through unchanged."""
    if bits not in range(8, 17):
        raise AttackError(f"bits must be in 8..16, got {bits}")
    scale = float(1 << (bits - 1))
    q = np.clip(np.rint(clip.samples * scale), -scale, scale - 1.0)
    return clip.with_samples(q / scale)


def phase_shift(clip: AudioClip, seconds: float) -> AudioClip:
    """Integer-sample shift: positive delays (zero-filled head), negative
    advances (zero-filled tail); length preserved."""
    if abs(seconds) > 0.10 + 1e-12:
        raise AttackError(f"shift {seconds} s outside [-0.10, 0.10]")
    shift = int(round(seconds * clip.sample_rate))
    n = len(clip)
    if abs(shift) >= n:
        raise AttackError(f"shift of {shift} samples >= clip length {n}")
    if shift == 0:
        return clip
    x = clip.samples
    if shift > 0:
        y = np.concatenate([np.zeros(shift), x[: n - shift]])
    else:
        y = np.concatenate([x[-shift:], np.zeros(-shift)])
    return clip.with_samples(y)


# --- codecs -----------------------------------------------------------------

CODEC_NAMES = {AttackId.MP: "mp3", AttackId.OG: "ogg", AttackId.AA: "aac"}

DEFAULT_ENCODERS = {
    "mp3": {
        "extension": ".mp3",
        "encode": ["lame", "--quiet", "-b", "{kbps}", "{input}", "{output}"],
        "decode": ["lame", "--quiet", "--decode", "{input}", "{output}"],
    },
    "ogg": {
        "extension": ".ogg",
        "encode": ["oggenc", "--quiet", "-b", "{kbps}", "-o", "{output}", "{input}"],
        "decode": ["oggdec", "--quiet", "-o", "{output}", "{input}"],
    },
    "aac": {
        "extension": ".m4a",
        "encode": ["ffmpeg", "-y", "-loglevel", "error", "-i", "{input}",
                   "-c:a", "aac", "-b:a", "{kbps}k", "{output}"],
        "decode": ["ffmpeg", "-y", "-loglevel", "error", "-i", "{input}", "{output}"],
    },
}


def _run_codec_step(template, kbps: int, src: str, dst: str):
    argv = [t.format(kbps=kbps, input=src, output=dst) for t in template]
    try:
        proc = subprocess.run(argv, capture_output=True, text=True)
    except FileNotFoundError as exc:
        raise AttackError(f"encoder missing: {argv[0]}") from exc
    if proc.returncode != 0:
        tail = (proc.stderr or proc.stdout or "").strip().splitlines()[-3:]
        raise AttackError(f"{argv[0]} exited {proc.returncode}: {' | '.join(tail)}")
    if not Path(dst).is_file():
        raise AttackError(f"{argv[0]} produced no output file")
    return argv


def align_to_reference(reference: np.ndarray, signal: np.ndarray, max_lag: int) -> np.ndarray:
    """Shift a decoded signal so it best cross-correlates with the reference
    (codec delay compensation), then trim/pad to the reference length."""
    n = len(reference)
    corr = sps.fftconvolve(signal, reference[::-1])
    center = len(reference) - 1
    lo = max(center - max_lag, 0)
    hi = min(center + max_lag + 1, len(corr))
    lag = int(np.argmax(corr[lo:hi])) + lo - center
    if lag > 0:
        shifted = signal[lag:]
    else:
        shifted = np.concatenate([np.zeros(-lag), signal])
    if len(shifted) < n:
        shifted = np.concatenate([shifted, np.zeros(n - len(shifted))])
    return shifted[:n]


def transcode(clip: AudioClip, codec: str, bitrate_kbps: int, encoders: dict | None = None) -> AudioClip:
    """Encode/decode through an external codec tool, then realign (delay
    compensated by cross-correlation) and trim to the input length."""
    if codec not in DEFAULT_ENCODERS:
        raise AttackError(f"unknown codec {codec!r}")
    template = encoders or DEFAULT_ENCODERS[codec]
    with tempfile.TemporaryDirectory(prefix="rawbench-codec-") as d:
        src = str(Path(d) / "in.wav")
        enc = str(Path(d) / ("enc" + template.get("extension", ".bin")))
        dec = str(Path(d) / "dec.wav")
        save_wav(clip, src, 16)
        _run_codec_step(template["encode"], int(bitrate_kbps), src, enc)
        _run_codec_step(template["decode"], int(bitrate_kbps), enc, dec)
        decoded = load_wav(dec)
    if decoded.sample_rate != clip.sample_rate:
        decoded = resample(decoded, clip.sample_rate)
    max_lag = min(len(clip) - 1, int(round(0.25 * clip.sample_rate)))
    aligned = align_to_reference(clip.samples, decoded.samples, max_lag)
    return clip.with_samples(aligned)


def neural_codec(clip: AudioClip, plugin: PluginWatermarker, n_codebooks: int) -> AudioClip:
    """Round-trip through a neural codec plugin at its native rate, then
    resample back, realign, and trim to the input length."""
    work = resample(clip, plugin.native_rate)
    out = plugin.request_attack(work, {"n_codebooks": int(n_codebooks)})
    if out.sample_rate != clip.sample_rate:
        out = resample(out, clip.sample_rate)
    max_lag = min(len(clip) - 1, int(round(0.25 * clip.sample_rate)))
    aligned = align_to_reference(clip.samples, out.samples, max_lag)
    return clip.with_samples(aligned)


# --- dispatch ---------------------------------------------------------------

class AttackContext:
    """Runtime resources for attack application: loaded noise/IR clips,
    encoder command templates, and lazily spawned codec plugin handles."""

    def __init__(self, encoders: dict | None = None, codec_plugins: dict | None = None):
        self.encoders = encoders or {}
        self.codec_plugin_commands = codec_plugins or {}
        self._clips: dict[str, AudioClip] = {}
        self._plugins: dict[str, PluginWatermarker] = {}

    def load_resource(self, path: str) -> AudioClip:
        if path not in self._clips:
            self._clips[path] = load_wav(path)
        return self._clips[path]

    def encoder_for(self, codec: str) -> dict | None:
        return self.encoders.get(codec)

    def plugin_for(self, code: str) -> PluginWatermarker:
        if code not in self._plugins:
            command = self.codec_plugin_commands.get(code)
            if not command:
                raise AttackError(f"missing resource: no plugin configured for {code}")
            self._plugins[code] = spawn_plugin(command)
        return self._plugins[code]

    def close(self):
        for plugin in self._plugins.values():
            plugin.close()
        self._plugins.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def apply_attack(clip: AudioClip, spec: AttackSpec, ctx: AttackContext | None = None) -> AudioClip:
    """Apply one attack spec. Output keeps the input rate and, except for
    time stretch, the exact input length."""
    ctx = ctx if ctx is not None else AttackContext()
    a = spec.attack
    p = spec.parameter

    if a is AttackId.GN:
        out = add_noise(clip, "gaussian", p, seed=spec.seed)
    elif a is AttackId.BN:
        if not spec.noise_path:
            raise AttackError("missing resource: BN needs a noise clip path")
        out = add_noise(clip, ctx.load_resource(spec.noise_path), p, seed=spec.seed)
    elif a is AttackId.RV:
        if not spec.ir_path:
            raise AttackError("missing resource: RV needs an impulse response path")
        out = convolve_reverb(clip, ctx.load_resource(spec.ir_path), p)
    elif a is AttackId.DC:
        out = apply_dynamics(clip, "compress", p)
    elif a is AttackId.DE:
        out = apply_dynamics(clip, "expand", p)
    elif a is AttackId.LM:
        out = apply_dynamics(clip, "limit", p)
    elif a is AttackId.LP:
        out = apply_filter(clip, "lowpass", p)
    elif a is AttackId.HP:
        out = apply_filter(clip, "highpass", p)
    elif a is AttackId.EQ:
        out = equalize(clip, p, seed=spec.seed)
    elif a is AttackId.TS:
        out = time_stretch(clip, p)
    elif a is AttackId.TJ:
        out = time_jitter(clip, p, seed=spec.seed)
    elif a is AttackId.PI:
        out = polarity_invert(clip)
    elif a is AttackId.GA:
        out = adjust_gain(clip, p)
    elif a is AttackId.QN:
        out = quantize(clip, int(p))
    elif a is AttackId.PS:
        out = phase_shift(clip, p)
    elif a in CODEC_NAMES:
        name = CODEC_NAMES[a]
        out = transcode(clip, name, int(p), encoders=ctx.encoder_for(name))
    elif a in (AttackId.EN, AttackId.DA):
        out = neural_codec(clip, ctx.plugin_for(a.value), int(p))
    else:  # pragma: no cover - enum is closed
        raise AttackError(f"unhandled attack {a}")

    if a is not AttackId.TS and len(out) != len(clip):
        fitted = out.samples[: len(clip)]
        if len(fitted) < len(clip):
            fitted = np.concatenate([fitted, np.zeros(len(clip) - len(fitted))])
        out = clip.with_samples(fitted)
    return out
