#!/usr/bin/env python3
"""Fake lossy codec CLI for exercising the transcode plumbing without real
encoders. Encoding lowpasses and requantizes with bitrate-dependent
severity and prepends a fixed delay (so alignment compensation is
observable); decoding strips the container marker.

Usage:
  stub_codec.py encode --kbps N input.wav output.stub
  stub_codec.py decode input.stub output.wav
"""

import argparse
import struct
import sys

import numpy as np

DELAY_SAMPLES = 100
MARKER = b"STUBCODEC1"


def read_wav(path):
    raw = open(path, "rb").read()
    assert raw[:4] == b"RIFF" and raw[8:12] == b"WAVE", "not a wav"
    off = 12
    fmt = data = None
    while off + 8 <= len(raw):
        cid = raw[off:off + 4]
        size = int.from_bytes(raw[off + 4:off + 8], "little")
        body = raw[off + 8:off + 8 + size]
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data":
            data = body
        off += 8 + size + (size & 1)
    tag, channels, rate, _, _, bits = struct.unpack("<HHIIHH", fmt[:16])
    assert tag == 1 and bits == 16 and channels == 1, "stub codec only handles mono 16-bit PCM"
    x = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    return x, rate


def write_wav(path, x, rate):
    q = np.clip(np.rint(x * 32768.0), -32767, 32767).astype("<i2")
    data = q.tobytes()
    fmt = struct.pack("<HHIIHH", 1, 1, rate, rate * 2, 2, 16)
    body = b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(data)) + data + (b"\x00" if len(data) & 1 else b"")
    with open(path, "wb") as fh:
        fh.write(b"RIFF" + struct.pack("<I", 4 + len(body)) + b"WAVE" + body)


def degrade(x, rate, kbps):
    cutoff = min(0.45 * rate, kbps * 62.5)
    spectrum = np.fft.rfft(x)
    spectrum[np.fft.rfftfreq(len(x), 1.0 / rate) > cutoff] = 0.0
    y = np.fft.irfft(spectrum, n=len(x))
    bits = int(np.clip(6 + kbps // 24, 6, 16))
    scale = float(1 << (bits - 1))
    y = np.clip(np.rint(y * scale), -scale, scale - 1) / scale
    return np.concatenate([np.zeros(DELAY_SAMPLES), y])


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("mode", choices=["encode", "decode"])
    parser.add_argument("--kbps", type=int, default=128)
    parser.add_argument("input")
    parser.add_argument("output")
    args = parser.parse_args()

    if args.mode == "encode":
        x, rate = read_wav(args.input)
        y = degrade(x, rate, args.kbps)
        with open(args.output, "wb") as fh:
            fh.write(MARKER + struct.pack("<I", rate))
            fh.write(y.astype("<f8").tobytes())
    else:
        raw = open(args.input, "rb").read()
        if raw[: len(MARKER)] != MARKER:
            print("not a stub-codec file", file=sys.stderr)
            return 3
        rate = struct.unpack("<I", raw[len(MARKER):len(MARKER) + 4])[0]
        y = np.frombuffer(raw[len(MARKER) + 4:], dtype="<f8")
        write_wav(args.output, y, rate)
    return 0


if __name__ == "__main__":
    sys.exit(main())
