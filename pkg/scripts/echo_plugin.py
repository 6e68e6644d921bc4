#!/usr/bin/env python3
"""Minimal plugin for protocol testing: embeds by copying audio unchanged,
detects a fixed all-zero message, and answers attack requests by copying
input to output. Stdlib only, so it doubles as a template for adapter
authors.

Failure-injection flags (for exercising error paths):
  --garbage        reply with non-JSON to every request
  --die-on-embed   exit abruptly when the first embed request arrives
  --mos VALUE      answer quality requests with a fixed value
"""

import argparse
import json
import shutil
import sys

INFO = {"name": "echo", "message_length": 16, "native_rate": 16000}


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--garbage", action="store_true")
    parser.add_argument("--die-on-embed", action="store_true")
    parser.add_argument("--mos", type=float, default=4.5)
    args = parser.parse_args()

    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        if args.garbage:
            sys.stdout.write("this is not json\n")
            sys.stdout.flush()
            continue
        try:
            req = json.loads(line)
        except json.JSONDecodeError:
            reply = {"ok": False, "error": "bad request"}
            sys.stdout.write(json.dumps(reply) + "\n")
            sys.stdout.flush()
            continue

        op = req.get("op")
        if op == "info":
            reply = INFO
        elif op == "embed":
            if args.die_on_embed:
                return 13
            shutil.copyfile(req["input"], req["output"])
            reply = {"ok": True}
        elif op == "detect":
            reply = {
                "bits": [0] * INFO["message_length"],
                "scores": [0.5] * INFO["message_length"],
                "presence": 0.0,
            }
        elif op == "attack":
            params = req.get("params") or {}
            if params.get("metric") == "mos_lqo":
                reply = {"ok": True, "value": args.mos}
            else:
                shutil.copyfile(req["input"], req["output"])
                reply = {"ok": True}
        else:
            reply = {"ok": False, "error": f"unknown op {op!r}"}
        sys.stdout.write(json.dumps(reply) + "\n")
        sys.stdout.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
