"""Run orchestration: manifest ingestion, deterministic planning, crash-safe
execution, aggregation, and report emission.

A run is a grid of work cells (clips x watermarkers x attack/regime pairs,
plus one clean cell per clip/watermarker). Every cell's randomness derives
from the master seed and the cell's identity, records are appended to a
JSONL file in plan order as they complete, and finished cells are skipped
on restart, so two runs with the same inputs produce byte-identical record
files and an interrupted run resumes to the same final state.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attacks import (
    ATTACK_ORDER,
    AttackContext,
    AttackId,
    AttackSpec,
    Fixed,
    NATIVE_ATTACKS,
    Regime,
    apply_attack,
    make_spec,
    parse_regime,
)
from .audio import AudioClip, load_wav, wav_info
from .errors import (
    AttackError,
    AudioIOError,
    CapacityError,
    ConfigError,
    ManifestError,
    PluginError,
)
from .metrics import (
    PerceptualReport,
    RobustnessReport,
    bitwise_accuracy,
    mel_cepstral_distance,
    message_accuracy,
    si_snr,
)
from .watermark import (
    DEFAULT_MESSAGE_LENGTH,
    MIN_CHIPS_PER_BIT,
    Message,
    SpreadSpectrumWatermarker,
    detect,
    embed,
    request_quality_score,
    spawn_plugin,
)

log = logging.getLogger(__name__)

DOMAINS = ("environmental", "music", "speech")
RECORDS_FILENAME = "records.jsonl"
CLEAN_LABEL = "clean"


# --- manifest ---------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    path: str
    domain: str
    collection: str = ""


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]
    noise_paths: tuple[str, ...] = ()
    ir_paths: tuple[str, ...] = ()


def load_manifest(path) -> DatasetManifest:
    """Parse and validate a manifest JSON file.

    Relative audio paths are resolved against the manifest's directory;
    every referenced file must exist and parse as WAV, and domains are
    restricted to environmental/music/speech.
    """
    p = Path(path)
    if not p.is_file():
        raise ManifestError(f"manifest not found: {p}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest {p} is not valid JSON: {exc}") from exc
    base = p.parent

    def resolve(rel: str) -> str:
        q = Path(rel)
        return str(q if q.is_absolute() else base / q)

    entries = []
    for i, item in enumerate(raw.get("entries", [])):
        try:
            clip_path = resolve(item["path"])
            domain = item["domain"]
        except (KeyError, TypeError) as exc:
            raise ManifestError(f"manifest entry {i} malformed: {item!r}") from exc
        if domain not in DOMAINS:
            raise ManifestError(f"unknown domain {domain!r} for {clip_path}")
        if not Path(clip_path).is_file():
            raise ManifestError(f"missing audio file: {clip_path}")
        try:
            wav_info(clip_path)
        except AudioIOError as exc:
            raise ManifestError(f"cannot probe {clip_path}: {exc}") from exc
        entries.append(ManifestEntry(clip_path, domain, str(item.get("collection", ""))))
    if not entries:
        raise ManifestError(f"manifest {p} lists no entries")

    resources = raw.get("resources", {})
    noise = tuple(resolve(q) for q in resources.get("noise", []))
    irs = tuple(resolve(q) for q in resources.get("impulse_responses", []))
    for q in (*noise, *irs):
        if not Path(q).is_file():
            raise ManifestError(f"missing resource file: {q}")
    return DatasetManifest(tuple(entries), noise, irs)


# --- configuration ----------------------------------------------------------

@dataclass
class WatermarkerConfig:
    kind: str = "builtin"  # "builtin" | "plugin"
    command: str | list | None = None
    message_length: int = DEFAULT_MESSAGE_LENGTH
    native_rate: int = 16000
    strength: float = 0.03
    key_seed: int = 2024

    def build(self):
        if self.kind == "builtin":
            return SpreadSpectrumWatermarker(
                message_length=self.message_length,
                native_rate=self.native_rate,
                strength=self.strength,
                key_seed=self.key_seed,
            )
        if self.kind == "plugin":
            if not self.command:
                raise ConfigError("plugin watermarker needs a command")
            return spawn_plugin(self.command)
        raise ConfigError(f"unknown watermarker kind {self.kind!r}")


@dataclass
class RunConfig:
    watermarkers: list[WatermarkerConfig] = field(default_factory=lambda: [WatermarkerConfig()])
    attacks: list[tuple[AttackId, object]] = field(default_factory=list)
    segment_seconds: float = 10.0
    master_seed: int = 0
    workers: int = 1
    encoders: dict = field(default_factory=dict)
    codec_plugins: dict = field(default_factory=dict)
    mos_adapter: str | list | None = None

    def __post_init__(self):
        if self.segment_seconds <= 0:
            raise ConfigError("segment_seconds must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not self.watermarkers:
            raise ConfigError("at least one watermarker is required")
        for wmc in self.watermarkers:
            if wmc.kind == "builtin":
                capacity_needed = wmc.message_length * MIN_CHIPS_PER_BIT
                if self.segment_seconds * wmc.native_rate < capacity_needed:
                    raise ConfigError(
                        f"segment of {self.segment_seconds}s at {wmc.native_rate} Hz cannot "
                        f"carry {wmc.message_length} bits (needs {capacity_needed} samples)"
                    )


def attack_list(selector) -> list[tuple[AttackId, object]]:
    """Expand an attack selector: "native"/"all" shorthands or explicit
    [attack, regime] pairs."""
    if selector in (None, "native"):
        ids = NATIVE_ATTACKS
    elif selector == "all":
        ids = ATTACK_ORDER
    else:
        pairs = []
        for item in selector:
            code, regime = item
            pairs.append((AttackId(str(code)), parse_regime(regime)))
        return pairs
    return [(a, r) for a in ids for r in (Regime.LOOSE, Regime.STRICT)]


def load_config(path_or_dict) -> RunConfig:
    if isinstance(path_or_dict, (str, Path)):
        p = Path(path_or_dict)
        if not p.is_file():
            raise ConfigError(f"config not found: {p}")
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {p} is not valid JSON: {exc}") from exc
    else:
        raw = dict(path_or_dict)

    wms = []
    for item in raw.get("watermarkers", [{"kind": "builtin"}]):
        known = {k: item[k] for k in
                 ("kind", "command", "message_length", "native_rate", "strength", "key_seed")
                 if k in item}
        wms.append(WatermarkerConfig(**known))
    try:
        attacks = attack_list(raw.get("attacks"))
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"bad attacks selector: {exc}") from exc
    return RunConfig(
        watermarkers=wms,
        attacks=attacks,
        segment_seconds=float(raw.get("segment_seconds", 10.0)),
        master_seed=int(raw.get("master_seed", 0)),
        workers=int(raw.get("workers", 1)),
        encoders=dict(raw.get("encoders", {})),
        codec_plugins=dict(raw.get("codec_plugins", {})),
        mos_adapter=raw.get("mos_adapter"),
    )


# --- planning ---------------------------------------------------------------

def derive_seed(*parts) -> int:
    """Stable 64-bit seed from a tuple of identity parts."""
    text = "\x1f".join(str(p) for p in parts)
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


def _plan_regime_key(regime) -> str:
    if isinstance(regime, Fixed):
        return f"fixed={regime.value}"
    return regime.value


@dataclass(frozen=True)
class WorkCell:
    cell_id: str
    clip_id: str
    clip_path: str
    domain: str
    collection: str
    watermarker: str
    spec: AttackSpec | None  # None marks the clean cell
    message_seed: int


def plan_run(manifest: DatasetManifest, config: RunConfig) -> list[WorkCell]:
    """Expand the full work grid in stable order.

    Cell seeds are hash(master_seed, clip id, attack id, regime), so the
    sampled attack parameters are shared across watermarkers and identical
    between runs of the same configuration.
    """
    wm_names = []
    for i, wmc in enumerate(config.watermarkers):
        name = f"builtin-ss{wmc.message_length}" if wmc.kind == "builtin" else f"plugin{i}"
        wm_names.append(name)
    if len(set(wm_names)) != len(wm_names):
        wm_names = [f"{n}#{i}" for i, n in enumerate(wm_names)]

    cells = []
    for i, entry in enumerate(manifest.entries):
        clip_id = f"{i:04d}-{Path(entry.path).stem}"
        for wm_name in wm_names:
            cells.append(
                WorkCell(
                    cell_id=f"{clip_id}|{wm_name}|{CLEAN_LABEL}|-",
                    clip_id=clip_id,
                    clip_path=entry.path,
                    domain=entry.domain,
                    collection=entry.collection,
                    watermarker=wm_name,
                    spec=None,
                    message_seed=derive_seed(config.master_seed, clip_id, wm_name, CLEAN_LABEL, "msg"),
                )
            )
            for attack, regime in config.attacks:
                rkey = _plan_regime_key(regime)
                seed = derive_seed(config.master_seed, clip_id, attack.value, rkey)
                noise_path = ir_path = None
                if attack is AttackId.BN and manifest.noise_paths:
                    pick = np.random.default_rng(derive_seed(seed, "noise"))
                    noise_path = manifest.noise_paths[int(pick.integers(len(manifest.noise_paths)))]
                if attack is AttackId.RV and manifest.ir_paths:
                    pick = np.random.default_rng(derive_seed(seed, "ir"))
                    ir_path = manifest.ir_paths[int(pick.integers(len(manifest.ir_paths)))]
                spec = make_spec(attack, regime, seed, noise_path=noise_path, ir_path=ir_path)
                cells.append(
                    WorkCell(
                        cell_id=f"{clip_id}|{wm_name}|{attack.value}|{rkey}",
                        clip_id=clip_id,
                        clip_path=entry.path,
                        domain=entry.domain,
                        collection=entry.collection,
                        watermarker=wm_name,
                        spec=spec,
                        message_seed=derive_seed(config.master_seed, clip_id, wm_name,
                                                 attack.value, rkey, "msg"),
                    )
                )
    return cells


# --- execution --------------------------------------------------------------

def _segment(clip: AudioClip, seconds: float) -> AudioClip:
    n = min(len(clip), int(round(seconds * clip.sample_rate)))
    return AudioClip(clip.samples[:n], clip.sample_rate, clip.source_bit_depth)


def read_records(records_path) -> list[dict]:
    """Read a record file, ignoring a trailing partial line from a crash."""
    p = Path(records_path)
    if not p.is_file():
        return []
    records = []
    for line in p.read_text().splitlines():
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError:
            log.warning("skipping partial record line in %s", p)
    return records


def _repair_records_file(path: Path) -> set[str]:
    """Drop any trailing partial line and return the persisted cell ids."""
    if not path.is_file():
        return set()
    raw = path.read_bytes()
    keep = len(raw)
    if raw and not raw.endswith(b"\n"):
        keep = raw.rfind(b"\n") + 1
        path.write_bytes(raw[:keep])
    done = set()
    for line in raw[:keep].decode("utf-8").splitlines():
        if line.strip():
            done.add(json.loads(line)["cell_id"])
    return done


class _HandlePool:
    """One handle per watermarker name; plugin handles are serialized."""

    def __init__(self, config: RunConfig, names: list[str]):
        self._handles = {}
        self._locks = {}
        for name, wmc in zip(names, config.watermarkers):
            self._handles[name] = wmc.build()
            self._locks[name] = threading.Lock() if wmc.kind == "plugin" else None

    def get(self, name):
        return self._handles[name], self._locks[name]

    def close(self):
        for handle in self._handles.values():
            handle.close()


def execute_run(plan: list[WorkCell], config: RunConfig, out_dir) -> list[dict]:
    """Execute all pending cells, appending one JSON record per cell.

    Per-cell failures are recorded with a failure status and the run
    continues; the returned list holds every record of the (possibly
    resumed) run in plan order.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records_path = out / RECORDS_FILENAME
    done = _repair_records_file(records_path)
    pending = [c for c in plan if c.cell_id not in done]

    wm_names = sorted({c.watermarker for c in plan},
                      key=lambda n: next(i for i, c in enumerate(plan) if c.watermarker == n))
    pool = _HandlePool(config, wm_names)
    ctx = AttackContext(encoders=config.encoders, codec_plugins=config.codec_plugins)
    adapter = spawn_plugin(config.mos_adapter) if config.mos_adapter else None

    clip_cache: dict[str, AudioClip] = {}
    cache_lock = threading.Lock()

    def get_segment(cell: WorkCell) -> AudioClip:
        with cache_lock:
            cached = clip_cache.get(cell.clip_id)
        if cached is not None:
            return cached
        seg = _segment(load_wav(cell.clip_path), config.segment_seconds)
        with cache_lock:
            clip_cache[cell.clip_id] = seg
        return seg

    def run_cell(cell: WorkCell) -> dict:
        record = {
            "cell_id": cell.cell_id,
            "clip_id": cell.clip_id,
            "domain": cell.domain,
            "collection": cell.collection,
            "watermarker": cell.watermarker,
            "attack": cell.spec.attack.value if cell.spec else CLEAN_LABEL,
            "regime": cell.spec.regime if cell.spec else None,
            "parameter": cell.spec.parameter if cell.spec else None,
            "seed": cell.spec.seed if cell.spec else None,
            "si_snr_db": None,
            "mcd": None,
            "mos_lqo": None,
            "bitwise_acc": None,
            "message_acc": None,
            "status": "ok",
            "error": None,
        }
        handle, lock = pool.get(cell.watermarker)
        try:
            clip = get_segment(cell)
            message = Message.random(handle.message_length, cell.message_seed)
            if lock:
                with lock:
                    marked = embed(handle, clip, message)
            else:
                marked = embed(handle, clip, message)
            perceptual = PerceptualReport(
                si_snr_db=si_snr(clip, marked),
                mcd=mel_cepstral_distance(clip, marked),
                mos_lqo=(request_quality_score(adapter, clip, marked)
                         if adapter is not None else None),
            )
            record["si_snr_db"] = perceptual.si_snr_db
            record["mcd"] = perceptual.mcd
            record["mos_lqo"] = perceptual.mos_lqo
            attacked = apply_attack(marked, cell.spec, ctx) if cell.spec else marked
            if lock:
                with lock:
                    result = detect(handle, attacked)
            else:
                result = detect(handle, attacked)
            robustness = RobustnessReport(
                bitwise_acc=bitwise_accuracy(message, result.bits),
                message_acc=message_accuracy(message, result.bits),
            )
            record["bitwise_acc"] = robustness.bitwise_acc
            record["message_acc"] = robustness.message_acc
        except PluginError as exc:
            record["status"] = "plugin_failed"
            record["error"] = str(exc)
            record["bitwise_acc"] = record["message_acc"] = None
        except (AttackError, CapacityError, AudioIOError, ValueError) as exc:
            record["status"] = "attack_failed"
            record["error"] = str(exc)
            record["bitwise_acc"] = record["message_acc"] = None
        return record

    try:
        with open(records_path, "a", encoding="utf-8") as sink:
            if config.workers == 1:
                for cell in pending:
                    sink.write(json.dumps(run_cell(cell), sort_keys=True) + "\n")
                    sink.flush()
            else:
                with ThreadPoolExecutor(max_workers=config.workers) as pool_exec:
                    for record in pool_exec.map(run_cell, pending):
                        sink.write(json.dumps(record, sort_keys=True) + "\n")
                        sink.flush()
    finally:
        pool.close()
        ctx.close()
        if adapter is not None:
            adapter.close()

    return read_records(records_path)


# --- aggregation ------------------------------------------------------------

@dataclass
class ReportTables:
    """Aggregated views: the attack grid, per-domain strict means, and
    clean-condition metric means."""

    grid_rows: list  # (watermarker, regime, metric) -> per-code means
    grid_values: dict
    grid_failures: dict
    domain_rows: list  # (watermarker,)
    domain_values: dict  # (watermarker, domain) -> (bitwise, message) or None
    domain_failures: dict
    clean_rows: list
    clean_values: dict  # watermarker -> dict of metric means


def _mean(values) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def aggregate(records: list[dict]) -> ReportTables:
    """Fold raw records into report tables.

    Failed records are excluded from every mean but counted per group in a
    failure column.
    """
    if not records:
        raise ValueError("empty result set")

    wm_order = []
    for r in records:
        if r["watermarker"] not in wm_order:
            wm_order.append(r["watermarker"])

    regimes_present = []
    for r in records:
        reg = r["regime"]
        if reg is not None and reg not in regimes_present:
            regimes_present.append(reg)
    regimes_present.sort(key=lambda x: {"strict": 0, "loose": 1}.get(x, 2))

    grid_values = {}
    grid_failures = {}
    grid_rows = []
    for wm in wm_order:
        for regime in regimes_present:
            group = [r for r in records if r["watermarker"] == wm and r["regime"] == regime]
            if not group:
                continue
            failures = sum(1 for r in group if r["status"] != "ok")
            grid_failures[(wm, regime)] = failures
            for metric, key in (("bitwise", "bitwise_acc"), ("message", "message_acc")):
                row = {}
                for attack in ATTACK_ORDER:
                    row[attack.value] = _mean(
                        r[key] for r in group
                        if r["attack"] == attack.value and r["status"] == "ok"
                    )
                grid_values[(wm, regime, metric)] = row
                grid_rows.append((wm, regime, metric))

    domain_values = {}
    domain_failures = {}
    for wm in wm_order:
        strict = [r for r in records
                  if r["watermarker"] == wm and r["regime"] == "strict"]
        domain_failures[wm] = sum(1 for r in strict if r["status"] != "ok")
        for domain in DOMAINS:
            group = [r for r in strict if r["domain"] == domain and r["status"] == "ok"]
            if group:
                domain_values[(wm, domain)] = (
                    _mean(r["bitwise_acc"] for r in group),
                    _mean(r["message_acc"] for r in group),
                )
            else:
                domain_values[(wm, domain)] = None

    clean_values = {}
    for wm in wm_order:
        group = [r for r in records if r["watermarker"] == wm and r["attack"] == CLEAN_LABEL]
        ok = [r for r in group if r["status"] == "ok"]
        clean_values[wm] = {
            "si_snr_db": _mean(r["si_snr_db"] for r in ok),
            "mcd": _mean(r["mcd"] for r in ok),
            "mos_lqo": _mean(r["mos_lqo"] for r in ok),
            "bitwise_acc": _mean(r["bitwise_acc"] for r in ok),
            "message_acc": _mean(r["message_acc"] for r in ok),
            "failures": sum(1 for r in group if r["status"] != "ok"),
        }

    return ReportTables(
        grid_rows=grid_rows,
        grid_values=grid_values,
        grid_failures=grid_failures,
        domain_rows=list(wm_order),
        domain_values=domain_values,
        domain_failures=domain_failures,
        clean_rows=list(wm_order),
        clean_values=clean_values,
    )


# --- report emission --------------------------------------------------------

GRID_HEADER = [a.value for a in ATTACK_ORDER]


def _fmt_csv(value) -> str:
    return "" if value is None else repr(float(value))


def _fmt_md(value, checkmarks: bool) -> str:
    if value is None:
        return "—"
    if checkmarks and value >= 0.99:
        return "✓"
    return f"{value:.2f}"


def emit_report(tables: ReportTables, out_dir, formats=("csv", "markdown"),
                checkmarks: bool = True) -> list[str]:
    """Write the attack grid, domain, and clean tables.

    CSV carries full precision for machines; markdown rounds to two
    decimals and renders values >= 0.99 as a check symbol. Missing groups
    render as an em dash, never as zero.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    if "csv" in formats:
        lines = ["watermarker,regime,metric," + ",".join(GRID_HEADER) + ",failures"]
        for wm, regime, metric in tables.grid_rows:
            row = tables.grid_values[(wm, regime, metric)]
            cells = [_fmt_csv(row[c]) for c in GRID_HEADER]
            lines.append(f"{wm},{regime},{metric}," + ",".join(cells)
                         + f",{tables.grid_failures[(wm, regime)]}")
        path = out / "attack_grid.csv"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(str(path))

        lines = ["watermarker,metric," + ",".join(DOMAINS) + ",failures"]
        for wm in tables.domain_rows:
            for metric, pos in (("bitwise", 0), ("message", 1)):
                cells = []
                for domain in DOMAINS:
                    pair = tables.domain_values[(wm, domain)]
                    cells.append(_fmt_csv(pair[pos] if pair else None))
                lines.append(f"{wm},{metric}," + ",".join(cells)
                             + f",{tables.domain_failures[wm]}")
        path = out / "domains.csv"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(str(path))

        lines = ["watermarker,si_snr_db,mcd,mos_lqo,bitwise_acc,message_acc,failures"]
        for wm in tables.clean_rows:
            v = tables.clean_values[wm]
            lines.append(
                f"{wm},{_fmt_csv(v['si_snr_db'])},{_fmt_csv(v['mcd'])},"
                f"{_fmt_csv(v['mos_lqo'])},{_fmt_csv(v['bitwise_acc'])},"
                f"{_fmt_csv(v['message_acc'])},{v['failures']}"
            )
        path = out / "clean.csv"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(str(path))

    if "markdown" in formats:
        lines = ["| watermarker | eval | metric | " + " | ".join(GRID_HEADER) + " | failures |",
                 "|---" * (len(GRID_HEADER) + 4) + "|"]
        for wm, regime, metric in tables.grid_rows:
            row = tables.grid_values[(wm, regime, metric)]
            cells = [_fmt_md(row[c], checkmarks) for c in GRID_HEADER]
            lines.append(f"| {wm} | {regime} | {metric} | " + " | ".join(cells)
                         + f" | {tables.grid_failures[(wm, regime)]} |")
        path = out / "attack_grid.md"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(str(path))

        lines = ["| watermarker | " + " | ".join(DOMAINS) + " | failures |",
                 "|---" * (len(DOMAINS) + 2) + "|"]
        for wm in tables.domain_rows:
            cells = []
            for domain in DOMAINS:
                pair = tables.domain_values[(wm, domain)]
                if pair is None:
                    cells.append("—")
                else:
                    cells.append(f"{_fmt_md(pair[0], checkmarks)} / {_fmt_md(pair[1], checkmarks)}")
            lines.append(f"| {wm} | " + " | ".join(cells) + f" | {tables.domain_failures[wm]} |")
        path = out / "domains.md"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(str(path))

        lines = ["| watermarker | SI-SNR | MCD | MOS-LQO | ACC |",
                 "|---|---|---|---|---|"]
        for wm in tables.clean_rows:
            v = tables.clean_values[wm]
            si = "—" if v["si_snr_db"] is None else f"{v['si_snr_db']:.2f}"
            mc = "—" if v["mcd"] is None else f"{v['mcd']:.2f}"
            mo = "—" if v["mos_lqo"] is None else f"{v['mos_lqo']:.2f}"
            acc = (f"{_fmt_md(v['bitwise_acc'], checkmarks)} / "
                   f"{_fmt_md(v['message_acc'], checkmarks)}")
            lines.append(f"| {wm} | {si} | {mc} | {mo} | {acc} |")
        path = out / "clean.md"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(str(path))

    return written
