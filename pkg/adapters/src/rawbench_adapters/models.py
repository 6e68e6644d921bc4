"""Watermarker adapters.

Each adapter declares its wire identity up front and loads its backend
lazily on the first info request; a missing package, checkpoint, or device
surfaces as a protocol-level error reply rather than a crash. ``dummy`` is
a dependency-free watermarker used for protocol conformance testing.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np


def bits_to_bytes(bits) -> list[int]:
    """Pack a bit list (MSB first per byte) into byte values."""
    if len(bits) % 8:
        raise ValueError(f"bit count {len(bits)} is not a whole number of bytes")
    out = []
    for i in range(0, len(bits), 8):
        value = 0
        for b in bits[i : i + 8]:
            value = (value << 1) | (int(b) & 1)
        out.append(value)
    return out


def bytes_to_bits(values, n_bits: int) -> list[int]:
    bits = []
    for v in values:
        bits.extend((int(v) >> (7 - k)) & 1 for k in range(8))
    if len(bits) < n_bits:
        raise ValueError(f"{len(values)} bytes cannot hold {n_bits} bits")
    return bits[:n_bits]


def _package_version(name: str) -> str:
    from importlib.metadata import PackageNotFoundError, version

    try:
        return version(name)
    except PackageNotFoundError:
        return "unknown"


def _file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class BaseAdapter:
    name = "base"
    message_length = 0
    native_rate = 16000

    def __init__(self, device: str = "cpu", checkpoint: str | None = None):
        self.device = device
        self.checkpoint = checkpoint
        self._loaded = False
        self.provenance: dict = {}

    def info(self) -> dict:
        self.ensure_loaded()
        out = {
            "name": self.name,
            "message_length": self.message_length,
            "native_rate": self.native_rate,
        }
        if self.provenance:
            out["provenance"] = self.provenance
        return out

    def ensure_loaded(self):
        if not self._loaded:
            self.load()
            self._loaded = True

    def load(self):
        pass

    def embed(self, x: np.ndarray, rate: int, bits: list[int]) -> np.ndarray:
        raise NotImplementedError(f"{self.name} does not embed")

    def detect(self, x: np.ndarray, rate: int):
        raise NotImplementedError(f"{self.name} does not detect")

    def attack(self, x: np.ndarray, rate: int, params: dict) -> np.ndarray:
        raise NotImplementedError(f"{self.name} is not an attack adapter")

    def quality(self, ref: np.ndarray, ref_rate: int, deg: np.ndarray, deg_rate: int) -> float:
        raise NotImplementedError(f"{self.name} is not a quality adapter")


class DummyWatermarker(BaseAdapter):
    """Segment-mean watermarker for protocol tests: each bit forces its
    segment's mean to +delta or -delta. The offset sits far above the
    16-bit wire quantization step, so clean round trips decode exactly."""

    name = "dummy"
    message_length = 16
    native_rate = 16000
    delta = 2e-3

    def load(self):
        self.provenance = {"backend": "builtin"}

    def _segments(self, n: int):
        seg = n // self.message_length
        if seg < 1:
            raise ValueError(f"clip of {n} samples too short for {self.message_length} bits")
        return [(i * seg, (i + 1) * seg) for i in range(self.message_length)]

    def embed(self, x, rate, bits):
        if len(bits) != self.message_length:
            raise ValueError(f"expected {self.message_length} bits, got {len(bits)}")
        out = x.copy()
        for (lo, hi), bit in zip(self._segments(len(x)), bits):
            target = self.delta if bit else -self.delta
            out[lo:hi] += target - float(np.mean(x[lo:hi]))
        return out

    def detect(self, x, rate):
        bits = []
        scores = []
        for lo, hi in self._segments(len(x)):
            mean = float(np.mean(x[lo:hi]))
            bits.append(1 if mean > 0 else 0)
            scores.append(min(abs(mean) / self.delta, 1.0))
        return bits, scores, float(np.mean(scores))

    def attack(self, x, rate, params):
        return x


class AudioSealAdapter(BaseAdapter):
    name = "audioseal"
    message_length = 16
    native_rate = 16000

    def load(self):
        import torch  # noqa: F401
        from audioseal import AudioSeal

        self.generator = AudioSeal.load_generator("audioseal_wm_16bits")
        self.detector = AudioSeal.load_detector("audioseal_detector_16bits")
        self.provenance = {
            "package": "audioseal",
            "version": _package_version("audioseal"),
            "weights": "audioseal_wm_16bits / audioseal_detector_16bits",
        }

    def _tensor(self, x):
        import torch

        return torch.from_numpy(np.ascontiguousarray(x)).float().reshape(1, 1, -1)

    def embed(self, x, rate, bits):
        import torch

        wav = self._tensor(x)
        message = torch.tensor([bits], dtype=torch.int32)
        with torch.no_grad():
            delta = self.generator.get_watermark(wav, sample_rate=rate, message=message)
        return (wav + delta)[0, 0].numpy()

    def detect(self, x, rate):
        import torch

        with torch.no_grad():
            score, message = self.detector.detect_watermark(self._tensor(x), sample_rate=rate)
        bits = [int(round(float(b))) for b in message[0]]
        return bits, None, float(score)


class SilentCipherAdapter(BaseAdapter):
    # The public 16 kHz model carries five byte values = 40 integer bits;
    # the fractional headline capacity figure is an effective rate, noted
    # in the provenance metadata.
    name = "silentcipher"
    message_length = 40
    native_rate = 16000

    def load(self):
        import silentcipher

        self.model = silentcipher.get_model(model_type="16k", device=self.device)
        self.provenance = {
            "package": "silentcipher",
            "version": _package_version("silentcipher"),
            "note": "true payload is 40 bits (5 bytes); headline capacity is fractional",
        }

    def embed(self, x, rate, bits):
        payload = bits_to_bytes(bits)
        encoded, _sdr = self.model.encode_wav(x.astype(np.float32), rate, payload)
        return np.asarray(encoded, dtype=np.float64)

    def detect(self, x, rate):
        result = self.model.decode_wav(x.astype(np.float32), rate, phase_shift_decoding=False)
        messages = result.get("messages") or []
        confidences = result.get("confidences") or []
        if not messages:
            return [0] * self.message_length, None, 0.0
        bits = bytes_to_bits(messages[0], self.message_length)
        presence = float(confidences[0]) if confidences else None
        return bits, None, presence


class TimbreAdapter(BaseAdapter):
    """Shim for the spectral 22.05 kHz model distributed as a research
    checkout rather than a package. Requires an importable ``timbre``
    module exposing load(checkpoint), embed(model, x, rate, bits), and
    extract(model, x, rate) -> (bits, presence)."""

    name = "timbre"
    message_length = 30
    native_rate = 22050

    def load(self):
        import timbre

        self.backend = timbre
        self.model = timbre.load(self.checkpoint)
        self.provenance = {"backend": "timbre", "checkpoint": self.checkpoint or ""}
        if self.checkpoint and Path(self.checkpoint).is_file():
            self.provenance["checkpoint_sha256"] = _file_digest(self.checkpoint)

    def embed(self, x, rate, bits):
        return np.asarray(self.backend.embed(self.model, x, rate, bits), dtype=np.float64)

    def detect(self, x, rate):
        bits, presence = self.backend.extract(self.model, x, rate)
        return [int(b) for b in bits], None, presence


class WavMarkAdapter(BaseAdapter):
    name = "wavmark"
    message_length = 16
    native_rate = 16000

    def load(self):
        import torch
        import wavmark

        self.model = wavmark.load_model().to(self.device)
        self._wavmark = wavmark
        self._torch = torch
        self.provenance = {"package": "wavmark", "version": _package_version("wavmark")}

    def embed(self, x, rate, bits):
        payload = np.asarray(bits, dtype=np.int32)
        marked, _info = self._wavmark.encode_watermark(
            self.model, x.astype(np.float32), payload, show_progress=False
        )
        return np.asarray(marked, dtype=np.float64)

    def detect(self, x, rate):
        payload, _info = self._wavmark.decode_watermark(
            self.model, x.astype(np.float32), show_progress=False
        )
        if payload is None:
            return [0] * self.message_length, None, 0.0
        return [int(b) for b in payload[: self.message_length]], None, 1.0
