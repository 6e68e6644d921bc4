"""Acceptance suite: one test per release criterion, each printing a
pass/fail line. Runs with the builtin watermarker only — no external
models, encoders, or weights."""

import math
import os
import signal
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from rawbench.attacks import (
    ATTACK_ORDER,
    AttackId,
    Regime,
    add_noise,
    adjust_gain,
    apply_attack,
    convolve_reverb,
    equalize,
    make_spec,
    phase_shift,
    polarity_invert,
    quantize,
    regime_contains,
    sample_parameter,
    time_stretch,
)
from rawbench.audio import AudioClip, measure_snr
from rawbench.metrics import bitwise_accuracy, mel_cepstral_distance, message_accuracy, si_snr
from rawbench.selftest import run_selftest
from rawbench.watermark import Message

from conftest import noisy_mix
from test_harness import write_dataset
from test_metrics import mcd_single_frame_oracle, si_snr_oracle


def verdict(name, ok, detail=""):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f"  ({detail})" if detail else ""))
    assert ok, f"{name}: {detail}"


@pytest.fixture(scope="module")
def selftest_runs(tmp_path_factory):
    """Two full selftest runs with the same seed, shared by the e2e,
    determinism, and report-shape criteria."""
    root = tmp_path_factory.mktemp("selftest")
    results = []
    for tag in ("a", "b"):
        t0 = time.time()
        code = run_selftest(root / tag, seed=42, workers=2, n_clips=50,
                            real_dir=os.environ.get("RAWBENCH_REAL_DIR"),
                            echo=lambda *_: None)
        results.append({"dir": root / tag, "code": code, "seconds": time.time() - t0})
    return results


class TestAttackConformance:
    def test_noise_and_reverb_conformance(self, carrier):
        t0 = time.time()
        rng = np.random.default_rng(1)
        corpus = AudioClip(0.3 * rng.standard_normal(6 * 16000), 16000)
        worst_gn = worst_bn = 0.0
        for i in range(10):
            regime = Regime.LOOSE if i % 2 else Regime.STRICT
            snr_gn = sample_parameter(AttackId.GN, regime, 100 + i)
            out = add_noise(carrier, "gaussian", snr_gn, seed=i)
            worst_gn = max(worst_gn, abs(measure_snr(carrier, out) - snr_gn))
            snr_bn = sample_parameter(AttackId.BN, regime, 200 + i)
            out = add_noise(carrier, corpus, snr_bn, seed=i)
            worst_bn = max(worst_bn, abs(measure_snr(carrier, out) - snr_bn))

        ir = AudioClip(
            np.concatenate([[1.0], 0.4 * np.exp(-np.arange(3199) / 500.0)
                            * rng.standard_normal(3199)]), 16000)
        worst_rv = 0.0
        for i in range(10):
            regime = Regime.LOOSE if i % 2 else Regime.STRICT
            req = sample_parameter(AttackId.RV, regime, 300 + i)
            out = convolve_reverb(carrier, ir, req)
            wet = out.samples - carrier.samples
            got = 10 * np.log10(np.mean(carrier.samples**2) / np.mean(wet**2))
            worst_rv = max(worst_rv, abs(got - req))

        elapsed = time.time() - t0
        verdict(
            "attack conformance: GN/BN SNR and RV dry/wet within 0.1 dB of request",
            worst_gn <= 0.1 and worst_bn <= 0.1 and worst_rv <= 0.1 and elapsed < 60.0,
            f"max |error| GN={worst_gn:.2e} BN={worst_bn:.2e} RV={worst_rv:.2e} dB, "
            f"{elapsed:.1f}s",
        )


class TestExactAttackAlgebra:
    def test_algebra(self, carrier):
        pi_ok = np.array_equal(
            polarity_invert(polarity_invert(carrier)).samples, carrier.samples
        )
        ga_err = float(np.max(np.abs(
            adjust_gain(adjust_gain(carrier, 2.5), 1 / 2.5).samples - carrier.samples
        )))
        q1 = quantize(carrier, 9)
        qn_ok = np.array_equal(quantize(q1, 9).samples, q1.samples)
        shift = round(0.06 * carrier.sample_rate)
        back = phase_shift(phase_shift(carrier, 0.06), -0.06)
        interior = slice(shift, len(carrier) - shift)
        ps_ok = np.array_equal(back.samples[interior], carrier.samples[interior])
        ts = time_stretch(carrier, 0.8)
        ts_err = abs(len(ts) - round(len(carrier) / 0.8))
        eq_err = float(np.max(np.abs(equalize(carrier, 0.0, seed=1).samples - carrier.samples)))
        verdict(
            "exact-attack algebra: PI involution, GA group, QN idempotent, "
            "PS interior inverse, TS length, EQ(0) identity",
            pi_ok and ga_err < 1e-12 and qn_ok and ps_ok and ts_err <= 512 and eq_err < 1e-6,
            f"GA err={ga_err:.1e}, TS off-by={ts_err}, EQ err={eq_err:.1e}",
        )


class TestRegimeSemantics:
    def test_thousand_draws_per_attack(self):
        violations = 0
        checked = 0
        for attack in ATTACK_ORDER:
            if attack is AttackId.PI:
                ok = (sample_parameter(attack, Regime.LOOSE, 0) is None
                      and sample_parameter(attack, Regime.STRICT, 0) is None)
                violations += 0 if ok else 1
                continue
            for regime in (Regime.LOOSE, Regime.STRICT):
                for seed in range(1000):
                    value = sample_parameter(attack, regime, seed)
                    checked += 1
                    if not regime_contains(attack, regime, value):
                        violations += 1
        verdict(
            "regime semantics: 1000 draws per attack land in their sub-range, "
            "PI parameterless",
            violations == 0,
            f"{checked} draws checked, {violations} violations",
        )


class TestMetricOracles:
    def test_si_snr_oracle_and_scale_invariance(self):
        rng = np.random.default_rng(17)
        worst = 0.0
        for _ in range(100):
            n = int(rng.integers(100, 400))
            ref = rng.standard_normal(n)
            est = ref + rng.uniform(0.01, 0.5) * rng.standard_normal(n)
            got = si_snr(AudioClip(ref, 8000), AudioClip(est, 8000))
            worst = max(worst, abs(got - si_snr_oracle(ref, est)))
            base = got
            for a in (0.1, 1.0, 7.0):
                scaled = si_snr(AudioClip(ref, 8000), AudioClip(a * est, 8000))
                worst = max(worst, abs(scaled - base))
        verdict(
            "metric oracle: si_snr matches straight-line implementation and is "
            "scale invariant for a in {0.1, 1, 7}",
            worst <= 1e-9,
            f"max deviation {worst:.2e} dB over 100 pairs",
        )

    def test_mcd_brute_force_oracle(self):
        rate = 16000
        frame = 400
        rng = np.random.default_rng(23)
        worst = 0.0
        for i in range(5):
            x = 0.4 * np.sin(2 * np.pi * rng.uniform(200, 3000) * np.arange(frame) / rate)
            y = x + rng.uniform(0.005, 0.05) * rng.standard_normal(frame)
            got = mel_cepstral_distance(AudioClip(x, rate), AudioClip(y, rate))
            worst = max(worst, abs(got - mcd_single_frame_oracle(x, y, rate)))
        verdict(
            "metric oracle: single-frame MCD matches brute-force computation",
            worst <= 1e-6,
            f"max deviation {worst:.2e}",
        )

    def test_bit_metrics_exhaustive(self):
        rng = np.random.default_rng(29)
        partners = [int(rng.integers(256)) for _ in range(12)]
        bad = 0
        for a in range(256):
            ma = Message(tuple((a >> i) & 1 for i in range(8)))
            for b in partners:
                mb = Message(tuple((b >> i) & 1 for i in range(8)))
                expect_bits = (8 - bin(a ^ b).count("1")) / 8
                if bitwise_accuracy(ma, mb) != expect_bits:
                    bad += 1
                if message_accuracy(ma, mb) != int(a == b):
                    bad += 1
        verdict(
            "metric oracle: bitwise/message accuracy match exhaustive 8-bit comparison",
            bad == 0,
            f"{256 * len(partners)} pairs",
        )


class TestEndToEndSelfTest:
    def test_builtin_selftest(self, selftest_runs):
        run = selftest_runs[0]
        records = _read_records(run["dir"])
        clean = [r for r in records if r["attack"] == "clean" and r["status"] == "ok"]
        clean_bit = float(np.mean([r["bitwise_acc"] for r in clean]))
        clean_msg = float(np.mean([r["message_acc"] for r in clean]))
        gn_loose = _mean(records, "GN", "loose")
        gn_strict = _mean(records, "GN", "strict")
        ts_cells = [r for r in records if r["attack"] == "TS" and r["regime"] == "strict"]
        ts_all_ok = bool(ts_cells) and all(r["status"] == "ok" for r in ts_cells)
        ts_mean = float(np.mean([r["bitwise_acc"] for r in ts_cells]))
        ok = (
            clean_bit == 1.0
            and clean_msg == 1.0
            and gn_loose >= gn_strict - 0.02
            and ts_all_ok
            and ts_mean < 0.95  # degradation is reported, not hidden
            and run["code"] == 0
            and run["seconds"] < 300.0
        )
        verdict(
            "end-to-end self-test: clean accuracy 1.0, noise-regime monotonicity, "
            "strict time-stretch degrades without failures",
            ok,
            f"clean {clean_bit:.3f}/{clean_msg:.3f}, GN {gn_loose:.3f}/{gn_strict:.3f}, "
            f"TS strict mean {ts_mean:.3f}, {run['seconds']:.0f}s",
        )


class TestDeterminism:
    def test_two_selftests_byte_identical(self, selftest_runs):
        a = (selftest_runs[0]["dir"] / "records.jsonl").read_bytes()
        b = (selftest_runs[1]["dir"] / "records.jsonl").read_bytes()
        verdict(
            "determinism: two same-seed self-test runs produce byte-identical records",
            a == b,
            f"{len(a)} bytes each",
        )


class TestReportShape:
    def test_grid_and_domain_columns(self, selftest_runs):
        out = selftest_runs[0]["dir"]
        grid_header = (out / "attack_grid.csv").read_text().splitlines()[0].split(",")
        domain_header = (out / "domains.csv").read_text().splitlines()[0].split(",")
        expected = ["GN", "BN", "RV", "DC", "DE", "LM", "LP", "HP", "EQ", "TS",
                    "TJ", "PI", "GA", "QN", "PS", "EN", "DA", "MP", "OG", "AA"]
        ok = (grid_header[3:-1] == expected
              and domain_header[2:5] == ["environmental", "music", "speech"])
        verdict(
            "report shape: attack grid has the 20 codes in order, domain table "
            "has the three domain columns",
            ok,
            f"grid={grid_header[3:6]}..., domains={domain_header[2:5]}",
        )


class TestResumability:
    def test_killed_run_resumes_to_identical_records(self, tmp_path):
        manifest_path = write_dataset(tmp_path / "d", n_clips=3)
        config_path = tmp_path / "config.json"
        config_path.write_text(
            '{"segment_seconds": 3.0, "master_seed": 9, '
            '"attacks": [["GN","loose"],["GN","strict"],["EQ","strict"],'
            '["PI","strict"],["QN","loose"],["TS","strict"]]}'
        )
        argv = [sys.executable, "-m", "rawbench.cli", "run",
                "--manifest", str(manifest_path), "--config", str(config_path)]

        ref_dir = tmp_path / "ref"
        subprocess.run([*argv, "--out", str(ref_dir)], check=True, capture_output=True)
        reference = (ref_dir / "records.jsonl").read_bytes()

        kill_dir = tmp_path / "killed"
        proc = subprocess.Popen([*argv, "--out", str(kill_dir)],
                                stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
        records_path = kill_dir / "records.jsonl"
        deadline = time.time() + 60
        while time.time() < deadline:
            if records_path.is_file() and records_path.stat().st_size > 200:
                break
            time.sleep(0.02)
        os.kill(proc.pid, signal.SIGKILL)
        proc.wait()
        interrupted = len(records_path.read_bytes()) if records_path.is_file() else 0
        assert interrupted > 0, "run was killed before writing any record"
        assert interrupted < len(reference), "run finished before it could be killed"

        subprocess.run([*argv, "--out", str(kill_dir)], check=True, capture_output=True)
        resumed = records_path.read_bytes()
        verdict(
            "resumability: a killed run resumes to the identical final record set",
            resumed == reference,
            f"killed at {interrupted} bytes, resumed to {len(resumed)} bytes",
        )


def _read_records(out_dir):
    import json

    lines = (Path(out_dir) / "records.jsonl").read_text().splitlines()
    return [json.loads(line) for line in lines if line.strip()]


def _mean(records, attack, regime):
    vals = [r["bitwise_acc"] for r in records
            if r["attack"] == attack and r["regime"] == regime and r["status"] == "ok"]
    return float(np.mean(vals))
