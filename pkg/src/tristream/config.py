"""Pipeline configuration and the flat ``key = value`` config-file format.

Every tunable of every stage has a key; unknown keys are rejected so typos
fail loudly.  ``parse_config`` and ``format_config`` round-trip, and the
formatted text doubles as the config snapshot embedded in run reports.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .encoding import LlcConfig
from .errors import ConfigError
from .featmaps import STREAM_NAMES, STREAMS, FilterBankConfig
from .flow import FlowConfig
from .temporal import MhiConfig, OfsdiConfig, StackConfig
from .tracking import TrajectoryConfig
from .video import SynthSpec

_STREAM_ALIASES = {name: tag for tag, name in STREAM_NAMES.items()} | {
    tag: tag for tag in STREAMS
}


def normalize_streams(value) -> tuple:
    """Canonicalize stream tags, preserving the fixed lt, st, gt order."""
    if isinstance(value, str):
        value = [v.strip() for v in value.split(",") if v.strip()]
    tags = []
    for item in value:
        tag = _STREAM_ALIASES.get(item)
        if tag is None:
            raise ConfigError(f"unknown stream {item!r} (use lt, st, gt or their long names)")
        if tag not in tags:
            tags.append(tag)
    if not tags:
        raise ConfigError("at least one stream must be enabled")
    return tuple(tag for tag in STREAMS if tag in tags)


@dataclass(frozen=True)
class SplitSpec:
    """Either a fixed training count per class or a training fraction."""

    train_per_class: int | None = 30
    train_fraction: float | None = None

    def __post_init__(self):
        if (self.train_per_class is None) == (self.train_fraction is None):
            raise ConfigError("set exactly one of train_per_class / train_fraction")
        if self.train_per_class is not None and self.train_per_class < 1:
            raise ConfigError("train_per_class must be >= 1")
        if self.train_fraction is not None and not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must be in (0, 1)")


@dataclass(frozen=True)
class PipelineConfig:
    flow: FlowConfig = FlowConfig()
    ofsdi: OfsdiConfig = OfsdiConfig()
    mhi: MhiConfig = MhiConfig()
    stack: StackConfig = StackConfig()
    trajectory: TrajectoryConfig = TrajectoryConfig()
    filterbank: FilterBankConfig = FilterBankConfig()
    llc: LlcConfig = LlcConfig()
    synth: SynthSpec = SynthSpec()
    pca_dim: int = 256
    codebook_size: int = 4000
    code_pooling: str = "max"
    whiten_retain: float = 0.99
    svm_c: float = 30.0
    streams: tuple = STREAMS
    split: SplitSpec = SplitSpec()
    repeats: int = 5
    master_seed: int = 0
    cache_dir: str = ""
    synth_videos_per_class: int = 20

    def __post_init__(self):
        object.__setattr__(self, "streams", normalize_streams(self.streams))
        if self.repeats < 1:
            raise ConfigError("repeat count must be >= 1")
        if self.pca_dim < 1 or self.codebook_size < 1:
            raise ConfigError("pca_dim and codebook_size must be >= 1")
        if self.code_pooling not in ("max", "sum"):
            raise ConfigError("code_pooling must be 'max' or 'sum'")
        if not 0.0 < self.whiten_retain < 1.0:
            raise ConfigError("whiten_retain must be in (0, 1)")
        if self.svm_c <= 0:
            raise ConfigError("svm_c must be positive")
        if self.synth_videos_per_class < 1:
            raise ConfigError("synth videos_per_class must be >= 1")


def _streams_to_text(streams) -> str:
    return ",".join(streams)


def _split_to_items(split: SplitSpec):
    if split.train_per_class is not None:
        return [("pipeline.train_per_class", str(split.train_per_class))]
    return [("pipeline.train_fraction", repr(split.train_fraction))]


# key -> (section attr, field attr, parser); pipeline-level keys use section None
_KEYS = {
    "flow.pyramid_levels": ("flow", "pyramid_levels", int),
    "flow.smoothness_weight": ("flow", "smoothness_weight", float),
    "flow.iterations_per_level": ("flow", "iterations_per_level", int),
    "flow.quantization_bound": ("flow", "quantization_bound", float),
    "ofsdi.alpha": ("ofsdi", "alpha", float),
    "ofsdi.init_mode": ("ofsdi", "init_mode", str),
    "mhi.tau": ("mhi", "tau", int),
    "mhi.motion_threshold": ("mhi", "motion_threshold", int),
    "stack.window": ("stack", "window", int),
    "trajectory.sampling_stride": ("trajectory", "sampling_stride", int),
    "trajectory.length": ("trajectory", "length", int),
    "trajectory.static_threshold": ("trajectory", "static_threshold", float),
    "trajectory.erratic_threshold": ("trajectory", "erratic_threshold", float),
    "trajectory.median_radius": ("trajectory", "median_radius", int),
    "filterbank.stages": ("filterbank", "stage_count", int),
    "filterbank.orientations": ("filterbank", "orientations", int),
    "filterbank.max_channels": ("filterbank", "max_channels", int),
    "encoding.llc_bases": ("llc", "k_bases", int),
    "encoding.llc_lambda": ("llc", "ridge_lambda", float),
    "encoding.samples_per_video": ("llc", "samples_per_video", int),
    "synth.width": ("synth", "width", int),
    "synth.height": ("synth", "height", int),
    "synth.length": ("synth", "length", int),
    "synth.noise_amplitude": ("synth", "noise_amplitude", float),
    "synth.blob_radius": ("synth", "blob_radius", float),
    "synth.pulse_period": ("synth", "pulse_period", int),
    "synth.pulse_amplitude": ("synth", "pulse_amplitude", float),
    "descriptors.pca_dim": (None, "pca_dim", int),
    "encoding.codebook_size": (None, "codebook_size", int),
    "encoding.code_pooling": (None, "code_pooling", str),
    "encoding.whiten_retain": (None, "whiten_retain", float),
    "svm.c": (None, "svm_c", float),
    "pipeline.streams": (None, "streams", normalize_streams),
    "pipeline.repeats": (None, "repeats", int),
    "pipeline.master_seed": (None, "master_seed", int),
    "pipeline.cache_dir": (None, "cache_dir", str),
    "pipeline.train_per_class": (None, "_train_per_class", int),
    "pipeline.train_fraction": (None, "_train_fraction", float),
    "synth.videos_per_class": (None, "synth_videos_per_class", int),
}


def format_config(cfg: PipelineConfig) -> str:
    """Render the full configuration as flat ``key = value`` lines."""
    values = {}
    for key, (section, field, _) in _KEYS.items():
        if field in ("_train_per_class", "_train_fraction"):
            continue
        if section is None:
            val = getattr(cfg, field)
        else:
            val = getattr(getattr(cfg, section), field)
        if key == "pipeline.streams":
            val = _streams_to_text(val)
        values[key] = str(val)
    items = sorted(values.items()) + _split_to_items(cfg.split)
    return "\n".join(f"{k} = {v}" for k, v in sorted(items)) + "\n"


def parse_config(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    """Parse flat ``key = value`` lines over ``base`` (package defaults if None)."""
    base = base or PipelineConfig()
    sections = {
        name: dict(dataclasses.asdict(getattr(base, name)))
        for name in ("flow", "ofsdi", "mhi", "stack", "trajectory", "filterbank", "llc", "synth")
    }
    top = {
        "pca_dim": base.pca_dim,
        "codebook_size": base.codebook_size,
        "code_pooling": base.code_pooling,
        "whiten_retain": base.whiten_retain,
        "svm_c": base.svm_c,
        "streams": base.streams,
        "repeats": base.repeats,
        "master_seed": base.master_seed,
        "cache_dir": base.cache_dir,
        "synth_videos_per_class": base.synth_videos_per_class,
    }
    split_kwargs = {
        "train_per_class": base.split.train_per_class,
        "train_fraction": base.split.train_fraction,
    }
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = (part.strip() for part in line.partition("="))
        entry = _KEYS.get(key)
        if entry is None:
            raise ConfigError(f"line {lineno}: unknown configuration key {key!r}")
        section, field, parser = entry
        try:
            parsed = parser(value)
        except ConfigError:
            raise
        except (TypeError, ValueError):
            raise ConfigError(f"line {lineno}: bad value {value!r} for {key}") from None
        if field == "_train_per_class":
            split_kwargs = {"train_per_class": parsed, "train_fraction": None}
        elif field == "_train_fraction":
            split_kwargs = {"train_per_class": None, "train_fraction": parsed}
        elif section is None:
            top[field] = parsed
        else:
            sections[section][field] = parsed
    return PipelineConfig(
        flow=FlowConfig(**sections["flow"]),
        ofsdi=OfsdiConfig(**sections["ofsdi"]),
        mhi=MhiConfig(**sections["mhi"]),
        stack=StackConfig(**sections["stack"]),
        trajectory=TrajectoryConfig(**sections["trajectory"]),
        filterbank=FilterBankConfig(**sections["filterbank"]),
        llc=LlcConfig(**sections["llc"]),
        synth=SynthSpec(**sections["synth"]),
        split=SplitSpec(**split_kwargs),
        **top,
    )


def load_config(path: str | Path, base: PipelineConfig | None = None) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"configuration file not found: {path}")
    return parse_config(path.read_text(), base)
