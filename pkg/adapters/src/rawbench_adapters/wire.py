"""Wire-level plumbing: 16-bit WAV exchange files and the JSON-lines serve
loop. Self-contained on purpose - adapters talk to the harness only through
the protocol, never through its Python API.

Protocol (one JSON object per line on stdin/stdout, UTF-8):
    {"op": "info"}                                   -> model descriptor
    {"op": "embed", "input", "output", "bits"}       -> {"ok": true}
    {"op": "detect", "input"}                        -> {"bits", "scores", "presence"}
    {"op": "attack", "input", "output", "params"}    -> {"ok": true}
    {"op": "attack", "input", "params": {"metric": "mos_lqo", "reference"}}
                                                     -> {"ok": true, "value": x}
Errors are replies of {"ok": false, "error": "..."}; the process keeps
serving until stdin closes.
"""

from __future__ import annotations

import json
import struct
import sys

import numpy as np


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read a mono/stereo PCM16 or float32 WAV as mono float64 in [-1, 1]."""
    raw = open(path, "rb").read()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise ValueError(f"{path} is not a RIFF/WAVE file")
    fmt = data = None
    off = 12
    while off + 8 <= len(raw):
        cid = raw[off : off + 4]
        size = int.from_bytes(raw[off + 4 : off + 8], "little")
        if cid == b"fmt ":
            fmt = raw[off + 8 : off + 8 + size]
        elif cid == b"data":
            data = raw[off + 8 : off + 8 + size]
        off += 8 + size + (size & 1)
    if fmt is None or data is None:
        raise ValueError(f"{path}: missing fmt/data chunk")
    tag, channels, rate, _, _, bits = struct.unpack("<HHIIHH", fmt[:16])
    if tag == 0xFFFE:
        tag = int.from_bytes(fmt[24:26], "little")
    if tag == 1 and bits == 16:
        x = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    elif tag == 3 and bits == 32:
        x = np.frombuffer(data, dtype="<f4").astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported format (tag {tag}, {bits} bits)")
    if channels > 1:
        x = x[: len(x) - len(x) % channels].reshape(-1, channels).mean(axis=1)
    return x, int(rate)


def write_wav(path, samples: np.ndarray, rate: int) -> None:
    """Write mono float samples as 16-bit PCM (the protocol's wire depth)."""
    q = np.clip(np.rint(np.asarray(samples, dtype=np.float64) * 32768.0), -32767, 32767)
    data = q.astype("<i2").tobytes()
    fmt = struct.pack("<HHIIHH", 1, 1, rate, rate * 2, 2, 16)
    body = b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(data)) + data
    if len(data) & 1:
        body += b"\x00"
    with open(path, "wb") as fh:
        fh.write(b"RIFF" + struct.pack("<I", 4 + len(body)) + b"WAVE" + body)


def serve(adapter, stdin=None, stdout=None) -> int:
    """Run the request loop until stdin closes.

    The adapter object provides ``info()`` plus whichever of ``embed(x,
    rate, bits)``, ``detect(x, rate)``, ``attack(x, rate, params)``, and
    ``quality(reference, degraded, rate)`` it supports; anything it raises
    becomes an {"ok": false} reply and the loop continues.
    """
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            reply = _dispatch(adapter, json.loads(line))
        except Exception as exc:  # any failure is a structured reply
            reply = {"ok": False, "error": f"{type(exc).__name__}: {exc}"}
        stdout.write(json.dumps(reply) + "\n")
        stdout.flush()
    return 0


def _dispatch(adapter, request: dict) -> dict:
    op = request.get("op")
    if op == "info":
        return adapter.info()
    if op == "embed":
        x, rate = read_wav(request["input"])
        bits = [int(b) for b in request["bits"]]
        marked = adapter.embed(x, rate, bits)
        write_wav(request["output"], marked, rate)
        return {"ok": True}
    if op == "detect":
        x, rate = read_wav(request["input"])
        bits, scores, presence = adapter.detect(x, rate)
        return {
            "bits": [int(b) for b in bits],
            "scores": None if scores is None else [float(s) for s in scores],
            "presence": None if presence is None else float(presence),
        }
    if op == "attack":
        params = request.get("params") or {}
        if params.get("metric") == "mos_lqo":
            ref, ref_rate = read_wav(params["reference"])
            deg, deg_rate = read_wav(request["input"])
            value = adapter.quality(ref, ref_rate, deg, deg_rate)
            return {"ok": True, "value": float(value)}
        x, rate = read_wav(request["input"])
        out = adapter.attack(x, rate, params)
        write_wav(request["output"], out, rate)
        return {"ok": True}
    return {"ok": False, "error": f"unknown op {op!r}"}
