"""Watermarker abstraction: a built-in spread-spectrum reference model and a
subprocess plugin protocol for external models.

Wire protocol (newline-delimited JSON over the child's stdin/stdout, UTF-8,
one object per line; audio crosses the boundary as 16-bit PCM WAV files
referenced by path; the child exits when its stdin closes):

    {"op": "info"}
        -> {"name": ..., "message_length": ..., "native_rate": ...}
    {"op": "embed", "input": "<wav>", "output": "<wav>", "bits": [0, 1, ...]}
        -> {"ok": true}
    {"op": "detect", "input": "<wav>"}
        -> {"bits": [...], "scores": [...], "presence": ...}
    {"op": "attack", "input": "<wav>", "output": "<wav>", "params": {...}}
        -> {"ok": true}                      # codec adapters
    {"op": "attack", "input": "<degraded>", "params":
            {"metric": "mos_lqo", "reference": "<wav>"}}
        -> {"ok": true, "value": 4.5}        # quality adapters

Any reply of {"ok": false, "error": "..."} aborts the current record.
"""

from __future__ import annotations

import functools
import json
import logging
import queue
import shlex
import subprocess
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .audio import AudioClip, load_wav, resample, save_wav
from .errors import CapacityError, PluginError, ProtocolError

log = logging.getLogger(__name__)

DEFAULT_MESSAGE_LENGTH = 16
INFO_TIMEOUT_S = 30.0
REQUEST_TIMEOUT_S = 300.0
WIRE_BIT_DEPTH = 16

# Reference watermarker tuning.
MIN_CHIPS_PER_BIT = 128
PILOT_GAIN = 0.5
CHIP_BAND_HZ = (1000.0, 4000.0)


@dataclass(frozen=True)
class Message:
    """Fixed-length bit vector payload."""

    bits: tuple[int, ...]

    def __post_init__(self):
        if len(self.bits) < 1:
            raise ValueError("message must have at least one bit")
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError("message bits must be 0 or 1")
        object.__setattr__(self, "bits", tuple(int(b) for b in self.bits))

    @property
    def length(self) -> int:
        return len(self.bits)

    @classmethod
    def random(cls, length: int, seed: int) -> "Message":
        rng = np.random.default_rng(seed)
        return cls(tuple(int(b) for b in rng.integers(0, 2, size=length)))

    def __str__(self) -> str:
        return "".join(str(b) for b in self.bits)


@dataclass(frozen=True)
class DetectionResult:
    """Decoded bits plus optional per-bit soft scores and a presence score."""

    bits: Message
    bit_scores: tuple[float, ...] | None = None
    presence_score: float | None = None


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(x * x))) if len(x) else 0.0


@functools.lru_cache(maxsize=64)
def _pn_carriers(key_seed: int, message_length: int, n: int, rate: int):
    """Deterministic band-limited pseudo-noise carriers, cached because all
    clips of one length share them. Returned arrays are read-only."""
    hi = min(CHIP_BAND_HZ[1], 0.45 * rate)
    sos = sps.butter(4, [CHIP_BAND_HZ[0], hi], btype="bandpass", fs=rate, output="sos")
    pilot_rng = np.random.default_rng(np.random.SeedSequence([key_seed, 0x9E37]))
    data_rng = np.random.default_rng(np.random.SeedSequence([key_seed, 0x79B9]))
    pilot = sps.sosfiltfilt(sos, pilot_rng.standard_normal(n))
    pilot /= max(_rms(pilot), 1e-12)
    chips = n // message_length
    data = sps.sosfiltfilt(sos, data_rng.standard_normal(chips * message_length))
    data = data.reshape(message_length, chips)
    data /= np.maximum(np.sqrt(np.mean(data * data, axis=1, keepdims=True)), 1e-12)
    pilot.flags.writeable = False
    data.flags.writeable = False
    return pilot, data, chips


class SpreadSpectrumWatermarker:
    """Pilot-referenced binary-phase spread-spectrum reference watermarker.

    Each payload bit flips the sign of a band-limited (1-4 kHz) pseudo-noise
    chip sequence occupying an equal share of the carrier; a bit-independent
    pilot sequence spans the whole clip at reduced gain. At embed time the
    carrier's projection onto each chip sequence is subtracted, so on clean
    audio every matched-filter correlation has the exact sign of its bit.
    Detection decides each bit from the sign of its normalized correlation
    relative to the pilot's polarity, which makes the decoder insensitive to
    polarity inversion and rescaling; |correlation| is the per-bit soft
    score and the pilot correlation the presence score.

    Deliberately synchronization-free: attacks that shift or rescale time
    (phase shift, jitter, stretching) are expected to break it.
    """

    mode = "builtin"

    def __init__(
        self,
        message_length: int = DEFAULT_MESSAGE_LENGTH,
        native_rate: int = 16000,
        strength: float = 0.03,
        key_seed: int = 2024,
    ):
        if message_length < 1:
            raise ValueError("message_length must be >= 1")
        if native_rate <= CHIP_BAND_HZ[0] / 0.45:
            raise ValueError(f"native_rate {native_rate} too low for the chip band")
        if not 0.0 < strength < 1.0:
            raise ValueError("strength must lie in (0, 1)")
        self.name = f"builtin-ss{message_length}"
        self.message_length = int(message_length)
        self.native_rate = int(native_rate)
        self.strength = float(strength)
        self.key_seed = int(key_seed)

    def _carriers(self, n: int, rate: int) -> tuple[np.ndarray, np.ndarray, int]:
        """Unit-RMS pilot over n samples and unit-RMS per-bit chip segments."""
        return _pn_carriers(self.key_seed, self.message_length, n, rate)

    def embed(self, clip: AudioClip, message: Message) -> AudioClip:
        if message.length != self.message_length:
            raise ValueError(
                f"message has {message.length} bits, watermarker expects {self.message_length}"
            )
        x = clip.samples
        n = len(x)
        chips = n // self.message_length
        if chips < MIN_CHIPS_PER_BIT:
            raise CapacityError(
                f"insufficient capacity: {n} samples cannot carry {self.message_length} bits "
                f"at >= {MIN_CHIPS_PER_BIT} chips/bit"
            )
        pilot, data, chips = self._carriers(n, clip.sample_rate)
        amp = self.strength * max(_rms(x), 1e-6)

        w = (PILOT_GAIN * amp - np.dot(x, pilot) / n) * pilot
        signs = 2.0 * np.asarray(message.bits, dtype=np.float64) - 1.0
        for i in range(self.message_length):
            seg = slice(i * chips, (i + 1) * chips)
            p = data[i]
            w[seg] += (amp * signs[i] - np.dot(x[seg], p) / chips) * p
        return clip.with_samples(x + w)

    def detect(self, clip: AudioClip) -> DetectionResult:
        y = clip.samples
        n = len(y)
        chips = n // self.message_length
        if chips < 1:
            raise CapacityError(
                f"insufficient capacity: {n} samples cannot hold {self.message_length} bits"
            )
        pilot, data, chips = self._carriers(n, clip.sample_rate)
        y_norm = float(np.linalg.norm(y))
        pilot_corr = float(np.dot(y, pilot)) / max(y_norm * np.sqrt(n), 1e-12)
        polarity = 1.0 if pilot_corr >= 0.0 else -1.0

        bits = []
        scores = []
        for i in range(self.message_length):
            seg = y[i * chips : (i + 1) * chips]
            denom = max(float(np.linalg.norm(seg)) * np.sqrt(chips), 1e-12)
            c = float(np.dot(seg, data[i])) / denom
            bits.append(1 if polarity * c > 0.0 else 0)
            scores.append(min(abs(c), 1.0))
        return DetectionResult(
            bits=Message(tuple(bits)),
            bit_scores=tuple(scores),
            presence_score=min(abs(pilot_corr), 1.0),
        )

    def close(self) -> None:
        pass


class PluginProcess:
    """One long-lived plugin subprocess and its request/response loop.

    A background thread drains the child's stdout so requests can time out
    without blocking; any timeout kills the child (the conversation is
    unrecoverable once desynchronized).
    """

    def __init__(self, command):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        if not argv:
            raise PluginError("empty plugin command")
        self.argv = argv
        try:
            self.proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise PluginError(f"failed to spawn plugin {argv[0]!r}: {exc}") from exc
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._drain, daemon=True)
        self._reader.start()

    def _drain(self):
        try:
            for line in self.proc.stdout:
                self._lines.put(line)
        except ValueError:
            pass
        self._lines.put(None)

    def request(self, payload: dict, timeout: float = REQUEST_TIMEOUT_S) -> dict:
        if self.proc.poll() is not None:
            raise PluginError(f"plugin {self.argv[0]!r} exited with code {self.proc.returncode}")
        try:
            self.proc.stdin.write(json.dumps(payload) + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise PluginError(f"plugin {self.argv[0]!r} closed its stdin pipe") from exc
        try:
            line = self._lines.get(timeout=timeout)
        except queue.Empty:
            self.kill()
            raise PluginError(f"plugin {self.argv[0]!r} timed out after {timeout}s")
        if line is None:
            raise PluginError(f"plugin {self.argv[0]!r} closed the connection mid-request")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"plugin {self.argv[0]!r} sent invalid JSON: {line!r}") from exc
        if not isinstance(reply, dict):
            raise ProtocolError(f"plugin {self.argv[0]!r} sent a non-object reply: {reply!r}")
        if reply.get("ok") is False:
            raise PluginError(f"plugin {self.argv[0]!r} reported: {reply.get('error', 'error')}")
        return reply

    def kill(self):
        if self.proc.poll() is None:
            self.proc.kill()
            self.proc.wait()

    def close(self):
        if self.proc.poll() is None:
            try:
                self.proc.stdin.close()
            except OSError:
                pass
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.kill()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class PluginWatermarker:
    """Watermarker handle backed by a plugin subprocess."""

    mode = "plugin"

    def __init__(self, command, temp_dir=None):
        self.process = PluginProcess(command)
        try:
            info = self.process.request({"op": "info"}, timeout=INFO_TIMEOUT_S)
        except PluginError:
            self.process.kill()
            raise
        try:
            self.name = str(info["name"])
            self.message_length = int(info["message_length"])
            self.native_rate = int(info["native_rate"])
        except (KeyError, TypeError, ValueError) as exc:
            self.process.kill()
            raise ProtocolError(f"malformed info reply: {info!r}") from exc
        if self.message_length < 0 or self.native_rate <= 0:
            self.process.kill()
            raise ProtocolError(f"info reply out of range: {info!r}")
        self.temp_dir = temp_dir

    def _exchange_dir(self):
        return tempfile.TemporaryDirectory(prefix="rawbench-wire-", dir=self.temp_dir)

    def embed(self, clip: AudioClip, message: Message) -> AudioClip:
        if self.message_length < 1:
            raise PluginError(f"plugin {self.name!r} declares no message payload")
        if message.length != self.message_length:
            raise ValueError(
                f"message has {message.length} bits, plugin expects {self.message_length}"
            )
        with self._exchange_dir() as d:
            src = str(Path(d) / "in.wav")
            dst = str(Path(d) / "out.wav")
            save_wav(clip, src, WIRE_BIT_DEPTH)
            self.process.request(
                {"op": "embed", "input": src, "output": dst, "bits": list(message.bits)}
            )
            if not Path(dst).is_file():
                raise PluginError(f"plugin {self.name!r} wrote no embed output")
            return load_wav(dst)

    def detect(self, clip: AudioClip) -> DetectionResult:
        with self._exchange_dir() as d:
            src = str(Path(d) / "in.wav")
            save_wav(clip, src, WIRE_BIT_DEPTH)
            reply = self.process.request({"op": "detect", "input": src})
        try:
            bits = Message(tuple(int(b) for b in reply["bits"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed detect reply: {reply!r}") from exc
        if self.message_length >= 1 and bits.length != self.message_length:
            raise ProtocolError(
                f"plugin {self.name!r} returned {bits.length} bits, declared {self.message_length}"
            )
        scores = reply.get("scores")
        if scores is not None:
            scores = tuple(float(s) for s in scores)
        presence = reply.get("presence")
        if presence is not None:
            presence = float(presence)
        return DetectionResult(bits=bits, bit_scores=scores, presence_score=presence)

    def request_attack(self, clip: AudioClip, params: dict) -> AudioClip:
        """Round-trip audio through the plugin's attack op at the clip's rate."""
        with self._exchange_dir() as d:
            src = str(Path(d) / "in.wav")
            dst = str(Path(d) / "out.wav")
            save_wav(clip, src, WIRE_BIT_DEPTH)
            self.process.request({"op": "attack", "input": src, "output": dst, "params": params})
            if not Path(dst).is_file():
                raise PluginError(f"plugin {self.name!r} wrote no attack output")
            return load_wav(dst)

    def close(self):
        self.process.close()


def spawn_plugin(command, temp_dir=None) -> PluginWatermarker:
    """Start a plugin subprocess and validate its info reply."""
    return PluginWatermarker(command, temp_dir=temp_dir)


def _fit_length(x: np.ndarray, n: int) -> np.ndarray:
    if len(x) == n:
        return x
    if len(x) > n:
        return x[:n]
    return np.concatenate([x, np.zeros(n - len(x))])


def embed(handle, clip: AudioClip, message: Message) -> AudioClip:
    """Embed through any handle; the caller-visible clip keeps its rate and
    exact length.

    Rate conversion is internal and applied to the watermark difference
    only: the model sees the clip at its native rate, and the difference it
    adds is resampled back and mixed into the untouched original, so
    carrier content above the model's Nyquist survives embedding.
    """
    if message.length != handle.message_length:
        raise ValueError(
            f"message has {message.length} bits, watermarker expects {handle.message_length}"
        )
    work = resample(clip, handle.native_rate)
    marked = handle.embed(work, message)
    delta = _fit_length(marked.samples, len(work)) - work.samples
    if work.sample_rate != clip.sample_rate:
        delta = resample(AudioClip(delta, work.sample_rate), clip.sample_rate).samples
    return clip.with_samples(clip.samples + _fit_length(delta, len(clip)))


def detect(handle, clip: AudioClip) -> DetectionResult:
    """Detect through any handle. Low confidence is data, never an error."""
    if len(clip) == 0:
        raise ValueError("cannot detect on an empty clip")
    work = resample(clip, handle.native_rate)
    return handle.detect(work)


def request_quality_score(adapter: PluginWatermarker, reference: AudioClip, estimate: AudioClip) -> float:
    """Fetch a MOS-LQO value from a quality adapter plugin, passed through untouched."""
    with adapter._exchange_dir() as d:
        ref_path = str(Path(d) / "ref.wav")
        est_path = str(Path(d) / "est.wav")
        save_wav(reference, ref_path, WIRE_BIT_DEPTH)
        save_wav(estimate, est_path, WIRE_BIT_DEPTH)
        reply = adapter.process.request(
            {
                "op": "attack",
                "input": est_path,
                "params": {"metric": "mos_lqo", "reference": ref_path},
            }
        )
    try:
        return float(reply["value"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"malformed quality reply: {reply!r}") from exc


def run_conformance_check(command, rate: int = 16000, seed: int = 7) -> dict:
    """Exercise a plugin end to end and raise on any protocol violation.

    Covers: info fields, embed round trip (output exists, duration
    preserved), detect reply shape on watermarked and never-watermarked
    audio, and clean shutdown. Returns a small summary dict.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(2 * rate) / rate
    tone = 0.4 * np.sin(2 * np.pi * 440.0 * t) + 0.01 * rng.standard_normal(len(t))
    clip = AudioClip(tone, rate)

    handle = spawn_plugin(command)
    try:
        message = Message.random(max(handle.message_length, 1), seed)
        marked = embed(handle, clip, message)
        if len(marked) != len(clip) or marked.sample_rate != clip.sample_rate:
            raise ProtocolError("embed changed the caller-visible duration or rate")
        res_marked = detect(handle, marked)
        res_clean = detect(handle, clip)
        if res_marked.bits.length != handle.message_length:
            raise ProtocolError("detect returned a wrong-length message")
        if res_clean.bits.length != handle.message_length:
            raise ProtocolError("detect on clean audio returned a wrong-length message")
        return {
            "name": handle.name,
            "message_length": handle.message_length,
            "native_rate": handle.native_rate,
            "embed_length_ok": True,
            "detect_ok": True,
        }
    finally:
        handle.close()
