"""Neural codec attack adapters: lossy encode/decode round trips with a
configurable residual-VQ depth (``n_codebooks`` in attack params)."""

from __future__ import annotations

import numpy as np

from .models import BaseAdapter, _package_version

# At 24 kHz the codec emits 75 frames/s of 10-bit codes, so each codebook
# contributes 0.75 kbps of bandwidth.
KBPS_PER_CODEBOOK_24K = 0.75


def codebooks_to_bandwidth(n_codebooks: int) -> float:
    if n_codebooks < 1:
        raise ValueError("n_codebooks must be >= 1")
    return n_codebooks * KBPS_PER_CODEBOOK_24K


class EncodecAdapter(BaseAdapter):
    name = "encodec"
    message_length = 0
    native_rate = 24000

    def load(self):
        import torch  # noqa: F401
        from encodec import EncodecModel

        self.model = EncodecModel.encodec_model_24khz()
        self.provenance = {"package": "encodec", "version": _package_version("encodec")}

    def attack(self, x, rate, params):
        import torch

        n_codebooks = int(params["n_codebooks"])
        self.model.set_target_bandwidth(codebooks_to_bandwidth(n_codebooks))
        wav = torch.from_numpy(np.ascontiguousarray(x)).float().reshape(1, 1, -1)
        with torch.no_grad():
            frames = self.model.encode(wav)
            decoded = self.model.decode(frames)
        out = decoded[0, 0].numpy().astype(np.float64)
        return out[: len(x)]


class DacAdapter(BaseAdapter):
    name = "dac"
    message_length = 0
    native_rate = 44100

    def load(self):
        import dac
        import torch  # noqa: F401

        path = self.checkpoint or dac.utils.download(model_type="44khz")
        self.model = dac.DAC.load(path)
        self.model.eval()
        self.provenance = {
            "package": "descript-audio-codec",
            "version": _package_version("descript-audio-codec"),
            "weights": str(path),
        }

    def attack(self, x, rate, params):
        import torch

        n_quantizers = int(params["n_codebooks"])
        wav = torch.from_numpy(np.ascontiguousarray(x)).float().reshape(1, 1, -1)
        with torch.no_grad():
            wav = self.model.preprocess(wav, rate)
            z, _codes, _latents, _, _ = self.model.encode(wav, n_quantizers=n_quantizers)
            decoded = self.model.decode(z)
        out = decoded[0, 0].numpy().astype(np.float64)
        return out[: len(x)]
