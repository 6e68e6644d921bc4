import json
import subprocess
import sys

import numpy as np
import pytest

from rawbench_adapters.wire import write_wav


class WireClient:
    """Tiny JSON-lines client for driving an adapter subprocess in tests."""

    def __init__(self, argv):
        self.proc = subprocess.Popen(
            argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL, text=True, bufsize=1,
        )

    def request(self, payload, timeout=60):
        self.proc.stdin.write(json.dumps(payload) + "\n")
        self.proc.stdin.flush()
        line = self.proc.stdout.readline()
        if not line:
            raise RuntimeError("adapter closed the connection")
        return json.loads(line)

    def close(self):
        if self.proc.poll() is None:
            self.proc.stdin.close()
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()


@pytest.fixture
def dummy_client():
    client = WireClient([sys.executable, "-m", "rawbench_adapters", "--model", "dummy"])
    yield client
    client.close()


@pytest.fixture
def tone_wav(tmp_path):
    rate = 16000
    t = np.arange(2 * rate) / rate
    x = 0.4 * np.sin(2 * np.pi * 440.0 * t)
    path = tmp_path / "tone.wav"
    write_wav(path, x, rate)
    return path, x, rate
