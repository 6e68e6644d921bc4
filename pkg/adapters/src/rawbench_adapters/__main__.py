"""Adapter entry point: serve one model over the plugin wire protocol.

    python -m rawbench_adapters --model audioseal [--device cpu]
    python -m rawbench_adapters --model dac --checkpoint /path/weights.pth
    python -m rawbench_adapters --model visqol [--visqol-bin PATH] [--speech]
"""

from __future__ import annotations

import argparse
import sys

from .codecs import DacAdapter, EncodecAdapter
from .models import (
    AudioSealAdapter,
    DummyWatermarker,
    SilentCipherAdapter,
    TimbreAdapter,
    WavMarkAdapter,
)
from .quality import VisqolAdapter
from .wire import serve

ADAPTERS = {
    "dummy": DummyWatermarker,
    "audioseal": AudioSealAdapter,
    "silentcipher": SilentCipherAdapter,
    "timbre": TimbreAdapter,
    "wavmark": WavMarkAdapter,
    "encodec": EncodecAdapter,
    "dac": DacAdapter,
    "visqol": VisqolAdapter,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="rawbench-adapter")
    parser.add_argument("--model", required=True, choices=sorted(ADAPTERS))
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--checkpoint", default=None)
    parser.add_argument("--visqol-bin", default="visqol")
    parser.add_argument("--speech", action="store_true",
                        help="visqol speech mode (16 kHz) instead of audio mode")
    args = parser.parse_args(argv)

    if args.model == "visqol":
        adapter = VisqolAdapter(binary=args.visqol_bin, speech_mode=args.speech)
    else:
        adapter = ADAPTERS[args.model](device=args.device, checkpoint=args.checkpoint)
    return serve(adapter)


if __name__ == "__main__":
    sys.exit(main())
