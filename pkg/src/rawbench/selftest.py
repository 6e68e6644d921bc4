"""Self-contained end-to-end check: synthesizes a small dataset, runs the
builtin watermarker through every native attack in both regimes, and prints
one verdict line per expectation.

Everything is generated from fixed seeds, so two selftest runs into
different directories produce byte-identical record files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .attacks import AttackId, NATIVE_ATTACKS, Regime
from .audio import AudioClip, save_wav
from .harness import (
    DOMAINS,
    RunConfig,
    WatermarkerConfig,
    aggregate,
    emit_report,
    execute_run,
    load_manifest,
    plan_run,
)

DATA_SEED = 0xA0D10
DEFAULT_CLIPS = 50
CLIP_SECONDS = 6.0
CLIP_RATE = 22050


def synth_clip(seed: int, seconds: float = CLIP_SECONDS, rate: int = CLIP_RATE) -> AudioClip:
    """A deterministic tonal test signal: a few sinusoids over a full-band
    noise floor, peak-normalized to 0.5. The floor keeps every analysis
    band of the perceptual metrics above digital silence."""
    rng = np.random.default_rng(np.random.SeedSequence([DATA_SEED, seed]))
    n = int(seconds * rate)
    t = np.arange(n) / rate
    x = np.zeros(n)
    for _ in range(int(rng.integers(2, 5))):
        freq = rng.uniform(150.0, 6500.0)
        amp = rng.uniform(0.1, 0.3)
        x += amp * np.sin(2.0 * np.pi * freq * t + rng.uniform(0.0, 2.0 * np.pi))
    x += 0.01 * rng.standard_normal(n)
    return AudioClip(0.5 * x / np.max(np.abs(x)), rate)


def build_dataset(data_dir, n_clips: int = DEFAULT_CLIPS, real_dir=None) -> Path:
    """Write synthetic clips, a noise corpus, impulse responses, and the
    manifest; returns the manifest path.

    When real_dir is given, up to ten WAV files from it are appended to the
    manifest as extra entries.
    """
    data = Path(data_dir)
    data.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(n_clips):
        name = f"clip_{i:03d}.wav"
        save_wav(synth_clip(i), data / name, 16)
        entries.append({"path": name, "domain": DOMAINS[i % 3], "collection": "synthetic"})

    rng = np.random.default_rng(np.random.SeedSequence([DATA_SEED, 0xBEEF]))
    noise_paths = []
    for i in range(2):
        name = f"noise_{i}.wav"
        burst = rng.standard_normal(int(8.0 * CLIP_RATE))
        burst *= 0.5 / np.max(np.abs(burst))
        save_wav(AudioClip(burst, CLIP_RATE), data / name, 16)
        noise_paths.append(name)

    ir_len = int(0.25 * CLIP_RATE)
    decay = np.exp(-np.arange(ir_len) / (0.05 * CLIP_RATE))
    ir = 0.3 * decay * rng.standard_normal(ir_len)
    ir[0] = 0.99
    ir = np.clip(ir, -0.99, 0.99)
    save_wav(AudioClip(ir, CLIP_RATE), data / "ir_0.wav", 16)

    if real_dir is not None:
        real = sorted(Path(real_dir).glob("*.wav"))[:10]
        for j, p in enumerate(real):
            entries.append({"path": str(p.resolve()), "domain": DOMAINS[j % 3],
                            "collection": "real"})

    manifest = {
        "entries": entries,
        "resources": {"noise": noise_paths, "impulse_responses": ["ir_0.wav"]},
    }
    manifest_path = data / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return manifest_path


def selftest_config(seed: int = 0, workers: int = 1) -> RunConfig:
    return RunConfig(
        watermarkers=[WatermarkerConfig(kind="builtin")],
        attacks=[(a, r) for a in NATIVE_ATTACKS for r in (Regime.LOOSE, Regime.STRICT)],
        segment_seconds=CLIP_SECONDS,
        master_seed=seed,
        workers=workers,
    )


def _mean_for(records, attack: AttackId, regime: str) -> float | None:
    vals = [r["bitwise_acc"] for r in records
            if r["attack"] == attack.value and r["regime"] == regime and r["status"] == "ok"]
    return float(np.mean(vals)) if vals else None


def run_selftest(out_dir, seed: int = 0, workers: int = 1,
                 n_clips: int = DEFAULT_CLIPS, real_dir=None, echo=print) -> int:
    """Build data, run, report, and print verdicts. Returns the process
    exit code (0 all ok, 2 when any cell failed)."""
    out = Path(out_dir)
    manifest_path = build_dataset(out / "data", n_clips=n_clips, real_dir=real_dir)
    manifest = load_manifest(manifest_path)
    config = selftest_config(seed=seed, workers=workers)
    plan = plan_run(manifest, config)
    echo(f"selftest: {len(plan)} cells over {len(manifest.entries)} clips")
    records = execute_run(plan, config, out)
    tables = aggregate(records)
    emit_report(tables, out)

    verdicts = []

    clean = [r for r in records if r["attack"] == "clean"]
    clean_bit = float(np.mean([r["bitwise_acc"] for r in clean if r["status"] == "ok"]))
    clean_msg = float(np.mean([r["message_acc"] for r in clean if r["status"] == "ok"]))
    verdicts.append(("clean bitwise accuracy = 1.0", clean_bit == 1.0, f"{clean_bit:.4f}"))
    verdicts.append(("clean message accuracy = 1.0", clean_msg == 1.0, f"{clean_msg:.4f}"))

    gn_loose = _mean_for(records, AttackId.GN, "loose")
    gn_strict = _mean_for(records, AttackId.GN, "strict")
    mono = gn_loose is not None and gn_strict is not None and gn_loose >= gn_strict - 0.02
    verdicts.append(("gaussian-noise loose mean >= strict mean - 0.02", mono,
                     f"loose={gn_loose:.4f} strict={gn_strict:.4f}"))

    ts_cells = [r for r in records if r["attack"] == "TS" and r["regime"] == "strict"]
    ts_ok = bool(ts_cells) and all(r["status"] == "ok" for r in ts_cells)
    ts_mean = _mean_for(records, AttackId.TS, "strict")
    verdicts.append(("strict time-stretch cells all ok (degradation is data)",
                     ts_ok, f"mean bitwise={ts_mean:.4f}"))

    for attack in NATIVE_ATTACKS:
        loose = _mean_for(records, attack, "loose")
        strict = _mean_for(records, attack, "strict")
        if loose is not None and strict is not None:
            echo(f"[info] {attack.value}: bitwise loose={loose:.3f} strict={strict:.3f}")

    n_failed = sum(1 for r in records if r["status"] != "ok")
    verdicts.append(("all cells completed with status ok", n_failed == 0,
                     f"{len(records) - n_failed}/{len(records)} ok"))

    all_ok = True
    for label, good, detail in verdicts:
        echo(f"[{'pass' if good else 'FAIL'}] {label} ({detail})")
        all_ok = all_ok and good

    if n_failed:
        return 2
    return 0 if all_ok else 2
