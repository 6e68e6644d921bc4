"""Command-line interface: rawbench plan | run | report | selftest.

Exit codes: 0 when every cell finished ok, 2 when any cell failed, 1 on
setup errors (bad manifest, config, or arguments).
"""

from __future__ import annotations

import argparse
import json
import shlex
import sys
from pathlib import Path

from .errors import RawbenchError
from .harness import (
    RunConfig,
    WatermarkerConfig,
    aggregate,
    emit_report,
    execute_run,
    load_config,
    load_manifest,
    plan_run,
    read_records,
)
from .selftest import run_selftest


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--manifest", required=True, help="dataset manifest JSON")
    p.add_argument("--config", help="run configuration JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--workers", type=int, help="worker pool size")
    p.add_argument("--watermarker",
                   help="builtin or plugin:<command line> (overrides the config list)")


def _build_config(args) -> RunConfig:
    config = load_config(args.config) if args.config else load_config({})
    if args.seed is not None:
        config.master_seed = args.seed
    if args.workers is not None:
        config.workers = args.workers
    if args.watermarker:
        selector = args.watermarker
        if selector == "builtin":
            config.watermarkers = [WatermarkerConfig(kind="builtin")]
        elif selector.startswith("plugin:"):
            config.watermarkers = [
                WatermarkerConfig(kind="plugin",
                                  command=shlex.split(selector[len("plugin:"):]))
            ]
        else:
            raise RawbenchError(
                f"--watermarker must be builtin or plugin:<argv>, got {selector!r}"
            )
    return config


def _cmd_plan(args) -> int:
    manifest = load_manifest(args.manifest)
    config = _build_config(args)
    plan = plan_run(manifest, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    plan_path = out / "plan.jsonl"
    with open(plan_path, "w", encoding="utf-8") as fh:
        for cell in plan:
            entry = {
                "cell_id": cell.cell_id,
                "clip_id": cell.clip_id,
                "domain": cell.domain,
                "watermarker": cell.watermarker,
                "attack": cell.spec.attack.value if cell.spec else "clean",
                "regime": cell.spec.regime if cell.spec else None,
                "parameter": cell.spec.parameter if cell.spec else None,
                "seed": cell.spec.seed if cell.spec else None,
            }
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    n_clean = sum(1 for c in plan if c.spec is None)
    print(f"planned {len(plan)} cells ({n_clean} clean) -> {plan_path}")
    return 0


def _cmd_run(args) -> int:
    manifest = load_manifest(args.manifest)
    config = _build_config(args)
    plan = plan_run(manifest, config)
    records = execute_run(plan, config, args.out)
    tables = aggregate(records)
    written = emit_report(tables, args.out)
    n_failed = sum(1 for r in records if r["status"] != "ok")
    print(f"{len(records)} records, {n_failed} failed; reports: {', '.join(written)}")
    return 2 if n_failed else 0


def _cmd_report(args) -> int:
    records = read_records(Path(args.out) / "records.jsonl")
    if not records:
        raise RawbenchError(f"no records found under {args.out}")
    tables = aggregate(records)
    written = emit_report(tables, args.out)
    print("wrote " + ", ".join(written))
    n_failed = sum(1 for r in records if r["status"] != "ok")
    return 2 if n_failed else 0


def _cmd_selftest(args) -> int:
    return run_selftest(
        args.out,
        seed=args.seed if args.seed is not None else 0,
        workers=args.workers if args.workers is not None else 1,
        n_clips=args.clips,
        real_dir=args.real_dir,
    )


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="rawbench",
        description="Audio watermarking robustness and imperceptibility benchmark",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_plan = sub.add_parser("plan", help="expand and persist the work grid")
    _add_common(p_plan)
    p_plan.set_defaults(func=_cmd_plan)

    p_run = sub.add_parser("run", help="execute a run (resumes if interrupted)")
    _add_common(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_report = sub.add_parser("report", help="rebuild reports from a record file")
    p_report.add_argument("--out", required=True, help="run directory holding records.jsonl")
    p_report.set_defaults(func=_cmd_report)

    p_self = sub.add_parser("selftest", help="synthetic end-to-end check of the toolkit")
    p_self.add_argument("--out", required=True)
    p_self.add_argument("--seed", type=int)
    p_self.add_argument("--workers", type=int)
    p_self.add_argument("--clips", type=int, default=50)
    p_self.add_argument("--real-dir", help="directory of real WAV clips to include (up to 10)")
    p_self.set_defaults(func=_cmd_selftest)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (RawbenchError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
