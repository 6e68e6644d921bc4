"""Objective quality bridge: shells out to an installed visqol binary and
passes its MOS-LQO value through unchanged."""

from __future__ import annotations

import re
import shutil
import subprocess
import tempfile
from pathlib import Path

import numpy as np

from .models import BaseAdapter

MOS_PATTERN = re.compile(r"MOS-LQO:\s*([0-9.]+)")


class VisqolAdapter(BaseAdapter):
    name = "visqol"
    message_length = 0
    native_rate = 48000  # audio mode; speech mode runs at 16 kHz

    def __init__(self, device="cpu", checkpoint=None, binary="visqol", speech_mode=False):
        super().__init__(device=device, checkpoint=checkpoint)
        self.binary = binary
        self.speech_mode = speech_mode

    def load(self):
        resolved = shutil.which(self.binary)
        if resolved is None:
            raise RuntimeError(f"visqol binary {self.binary!r} not found on PATH")
        self.binary = resolved
        self.provenance = {"binary": resolved, "mode": "speech" if self.speech_mode else "audio"}
        if self.speech_mode:
            self.native_rate = 16000

    def _prepare(self, x: np.ndarray, rate: int, path: Path):
        from scipy.signal import resample_poly

        from .wire import write_wav

        target = self.native_rate
        if rate != target:
            from math import gcd

            g = gcd(rate, target)
            x = resample_poly(x, target // g, rate // g)
        write_wav(path, x, target)

    def quality(self, ref, ref_rate, deg, deg_rate) -> float:
        self.ensure_loaded()
        with tempfile.TemporaryDirectory(prefix="visqol-") as d:
            ref_path = Path(d) / "ref.wav"
            deg_path = Path(d) / "deg.wav"
            self._prepare(ref, ref_rate, ref_path)
            self._prepare(deg, deg_rate, deg_path)
            argv = [self.binary, "--reference_file", str(ref_path),
                    "--degraded_file", str(deg_path)]
            if self.speech_mode:
                argv.append("--use_speech_mode")
            proc = subprocess.run(argv, capture_output=True, text=True)
        if proc.returncode != 0:
            raise RuntimeError(f"visqol exited {proc.returncode}: {proc.stderr.strip()[:200]}")
        match = MOS_PATTERN.search(proc.stdout)
        if not match:
            raise RuntimeError(f"no MOS-LQO value in visqol output: {proc.stdout[:200]!r}")
        return float(match.group(1))
