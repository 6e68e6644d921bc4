"""Toolkit for benchmarking the robustness and imperceptibility of audio
watermarking systems: a 20-distortion attack pipeline with loose/strict
parameter regimes, perceptual and detection metrics, a language-neutral
watermarker plugin protocol, and a deterministic evaluation harness."""

from .attacks import (
    ATTACK_ORDER,
    ATTACKS,
    AttackContext,
    AttackId,
    AttackSpec,
    Fixed,
    Regime,
    apply_attack,
    make_spec,
    sample_parameter,
)
from .audio import AudioClip, Spectrogram, load_wav, measure_snr, resample, save_wav
from .errors import (
    AttackError,
    AudioIOError,
    CapacityError,
    ConfigError,
    ManifestError,
    PluginError,
    ProtocolError,
    RawbenchError,
)
from .harness import (
    DatasetManifest,
    RunConfig,
    WatermarkerConfig,
    aggregate,
    emit_report,
    execute_run,
    load_config,
    load_manifest,
    plan_run,
)
from .metrics import (
    PerceptualReport,
    RobustnessReport,
    bitwise_accuracy,
    compute_capacity,
    mel_cepstral_distance,
    message_accuracy,
    mos_lqo,
    si_snr,
    tpr_at_zero_fpr,
)
from .watermark import (
    DetectionResult,
    Message,
    PluginWatermarker,
    SpreadSpectrumWatermarker,
    detect,
    embed,
    run_conformance_check,
    spawn_plugin,
)

__version__ = "0.1.0"
