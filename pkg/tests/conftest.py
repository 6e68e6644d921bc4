import sys
from pathlib import Path

import numpy as np
import pytest

from rawbench.audio import AudioClip

REPO_ROOT = Path(__file__).resolve().parent.parent
SCRIPTS = REPO_ROOT / "scripts"

ECHO_PLUGIN = [sys.executable, str(SCRIPTS / "echo_plugin.py")]
STUB_CODEC = str(SCRIPTS / "stub_codec.py")


def stub_encoder_template():
    return {
        "extension": ".stub",
        "encode": [sys.executable, STUB_CODEC, "encode", "--kbps", "{kbps}",
                   "{input}", "{output}"],
        "decode": [sys.executable, STUB_CODEC, "decode", "{input}", "{output}"],
    }


def tone(freq=1000.0, seconds=1.0, rate=16000, amp=0.5, phase=0.0):
    t = np.arange(int(seconds * rate)) / rate
    return AudioClip(amp * np.sin(2.0 * np.pi * freq * t + phase), rate)


def noisy_mix(seed, seconds=4.0, rate=16000):
    """Tonal mixture plus low noise, peak 0.5; the standard test carrier."""
    rng = np.random.default_rng(seed)
    n = int(seconds * rate)
    t = np.arange(n) / rate
    x = np.zeros(n)
    for _ in range(int(rng.integers(2, 5))):
        x += rng.uniform(0.1, 0.3) * np.sin(
            2.0 * np.pi * rng.uniform(150.0, 0.28 * rate) * t + rng.uniform(0.0, 2 * np.pi)
        )
    x += 0.01 * rng.standard_normal(n)
    return AudioClip(0.5 * x / np.max(np.abs(x)), rate)


@pytest.fixture
def carrier():
    return noisy_mix(7)
