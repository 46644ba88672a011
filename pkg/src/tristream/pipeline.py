"""End-to-end orchestration: extraction with caching, splits, and evaluation.

Datasets are laid out ``<root>/<class>/<video>/frame_*.pgm``.  Per video and
per stream, raw trajectory descriptors are cached under a content hash of the
extraction configuration and the frame bytes, so a warm cache never
recomputes and never goes stale.  Model fitting (per-stream PCA, codebook,
whitening, SVM) happens per repeat on the training split only.
"""

from __future__ import annotations

import hashlib
import logging
import struct
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .classifier import SvmModel, evaluate, load_svm, predict, save_svm, train_svm
from .config import PipelineConfig, format_config, load_config, normalize_streams
from .descriptors import (
    PcaModel,
    assemble_stream_tdd,
    concat_stream_descriptors,
    fit_pca,
    load_descriptors,
    load_pca,
    save_descriptors,
    save_pca,
)
from .encoding import (
    Codebook,
    WhitenModel,
    build_codebook,
    llc_encode_batch,
    load_codebook,
    load_whitening,
    pca_whiten,
    pool_codes,
    save_codebook,
    save_whitening,
)
from .errors import ConfigError, DataError
from .featmaps import channel_normalize, filterbank_extract, spatiotemporal_normalize
from .flow import flow_sequence, quantize_flow
from .report import RunReport
from .temporal import (
    magnitude_plane,
    ofmhi_sequence,
    ofsdi_sequence,
    ofsdi_to_input,
    stack_flows,
    to_byte_image,
)
from .tracking import extract_trajectories
from .video import SYNTH_CLASSES, VideoClip, load_frame_sequence, save_clip, synth_generate

logger = logging.getLogger("tristream")

ABLATION_SUBSETS = (("lt",), ("st",), ("gt",), ("lt", "st"), ("lt", "st", "gt"))

_CACHE_TAG = b"tstd-cache-v1"
_EXTRACTION_KEY_PREFIXES = ("flow.", "ofsdi.", "mhi.", "stack.", "trajectory.", "filterbank.")


def derive_seed(*parts: int) -> int:
    """Deterministic child seed from integer parts (negatives are wrapped)."""
    entropy = [int(p) % (2**63) for p in parts]
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class VideoEntry:
    class_label: str
    name: str
    path: Path

    @property
    def video_id(self) -> str:
        return f"{self.class_label}/{self.name}"


def discover_dataset(root: str | Path) -> list[VideoEntry]:
    """Enumerate ``<root>/<class>/<video>`` directories in sorted order."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset directory not found: {root}")
    entries = []
    for class_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        if class_dir.name.startswith((".", "_")):
            continue
        for video_dir in sorted(p for p in class_dir.iterdir() if p.is_dir()):
            entries.append(VideoEntry(class_dir.name, video_dir.name, video_dir))
    if not entries:
        raise DataError(f"no <class>/<video> directories under {root}")
    return entries


def generate_synthetic_dataset(
    root: str | Path,
    cfg: PipelineConfig,
    classes: Sequence[str] = SYNTH_CLASSES,
    videos_per_class: int | None = None,
    seed: int | None = None,
) -> list[VideoEntry]:
    """Render a synthetic dataset tree; deterministic for a fixed seed."""
    root = Path(root)
    count = videos_per_class if videos_per_class is not None else cfg.synth_videos_per_class
    base_seed = cfg.master_seed if seed is None else seed
    entries = []
    for ci, cls in enumerate(classes):
        for vi in range(count):
            clip = synth_generate(cls, derive_seed(base_seed, ci, vi), cfg.synth)
            video_dir = root / cls / f"video_{vi:03d}"
            save_clip(clip, video_dir)
            entries.append(VideoEntry(cls, video_dir.name, video_dir))
    return entries


# ---------------------------------------------------------------------------
# Per-video descriptor extraction
# ---------------------------------------------------------------------------

def build_stream_inputs(clip, flows, flow_images, stream: str, cfg: PipelineConfig):
    """Per-frame filter-bank inputs for one stream, aligned to frame indices.

    Each representation covers fewer time steps than the clip; indices are
    clamped at the ends so every frame z in [0, L) has an input.
    """
    length = clip.length
    if stream == "lt":
        window = cfg.stack.window
        if window > length - 1:
            raise DataError(
                f"stack window {window} exceeds the {length - 1} available flow images"
            )
        volumes: dict[int, np.ndarray] = {}
        out = []
        for z in range(length):
            start = min(z, length - 1 - window)
            if start not in volumes:
                volumes[start] = stack_flows(flow_images, cfg.stack, start)
            out.append(volumes[start])
        return out
    if stream == "st":
        histories = ofmhi_sequence(flows, cfg.mhi, cfg.flow.quantization_bound)
        images = [np.repeat(to_byte_image(h.values)[:, :, None], 3, axis=2) for h in histories]
        return [images[min(max(z - 1, 0), len(images) - 1)] for z in range(length)]
    if stream == "gt":
        planes = [magnitude_plane(img, t) for t, img in enumerate(flow_images)]
        templates = ofsdi_sequence(planes, cfg.ofsdi)
        images = [ofsdi_to_input(o) for o in templates]
        return [images[min(max(z - 2, 0), len(images) - 1)] for z in range(length)]
    raise ConfigError(f"unknown stream {stream!r}")


def stream_descriptor_dim(cfg: PipelineConfig, stream: str) -> int:
    input_channels = 2 * cfg.stack.window if stream == "lt" else 3
    return cfg.filterbank.descriptor_dim(input_channels)


def extract_video_descriptors(
    clip: VideoClip, cfg: PipelineConfig, streams: Sequence[str]
) -> tuple[dict[str, np.ndarray], dict[str, float]]:
    """Full extraction for one clip: flow, templates, maps, trajectories, pooling.

    Returns float32 matrices (one row per trajectory) keyed by stream, plus
    per-stage wall-clock seconds.
    """
    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    flows = flow_sequence(clip, cfg.flow)
    flow_images = [quantize_flow(f, cfg.flow.quantization_bound) for f in flows]
    timings["flow"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    trajectories = extract_trajectories(clip, flows, cfg.trajectory)
    timings["trajectories"] = time.perf_counter() - t0

    matrices: dict[str, np.ndarray] = {}
    timings["featmaps"] = 0.0
    timings["pooling"] = 0.0
    for stream in streams:
        t0 = time.perf_counter()
        inputs = build_stream_inputs(clip, flows, flow_images, stream, cfg)
        stacks = filterbank_extract(inputs, cfg.filterbank, stream)
        layers = [(spatiotemporal_normalize(s), channel_normalize(s)) for s in stacks]
        timings["featmaps"] += time.perf_counter() - t0

        t0 = time.perf_counter()
        if trajectories:
            rows = [assemble_stream_tdd(traj, layers) for traj in trajectories]
            matrices[stream] = np.stack(rows)
        else:
            matrices[stream] = np.zeros((0, stream_descriptor_dim(cfg, stream)), np.float32)
        timings["pooling"] += time.perf_counter() - t0
    return matrices, timings


# ---------------------------------------------------------------------------
# Descriptor cache
# ---------------------------------------------------------------------------

def extraction_fingerprint(cfg: PipelineConfig) -> bytes:
    """Serialized extraction-relevant configuration (model knobs excluded)."""
    lines = [
        line
        for line in format_config(cfg).splitlines()
        if line.startswith(_EXTRACTION_KEY_PREFIXES)
    ]
    return "\n".join(lines).encode("utf-8")


def _content_hash(cfg: PipelineConfig, clip: VideoClip, stream: str) -> str:
    digest = hashlib.sha256()
    digest.update(_CACHE_TAG)
    digest.update(stream.encode("ascii"))
    digest.update(extraction_fingerprint(cfg))
    digest.update(struct.pack("<III", clip.width, clip.height, clip.length))
    for frame in clip.frames:
        digest.update(frame.pixels.tobytes())
    return digest.hexdigest()[:16]


def resolve_cache_dir(data_dir: str | Path, cfg: PipelineConfig) -> Path:
    if cfg.cache_dir:
        return Path(cfg.cache_dir)
    # leading underscore keeps the default cache out of dataset discovery
    return Path(data_dir) / "_descriptor_cache"


@dataclass
class ExtractResult:
    entries: list
    matrices: dict  # video_id -> {stream: (K, d) float32}
    labels: dict  # video_id -> class label
    computed: int = 0
    cache_hits: int = 0
    excluded: tuple = ()
    timings: dict = field(default_factory=dict)
    cache_files: dict = field(default_factory=dict)  # video_id -> {stream: Path}


def run_extract(
    data_dir: str | Path, cfg: PipelineConfig, streams: Sequence[str] | None = None
) -> ExtractResult:
    """Extract (or load from cache) per-stream descriptors for every video."""
    streams = normalize_streams(streams or cfg.streams)
    entries = discover_dataset(data_dir)
    cache_root = resolve_cache_dir(data_dir, cfg)
    result = ExtractResult(entries=entries, matrices={}, labels={})
    totals: dict[str, float] = {}
    excluded = []
    for entry in entries:
        clip = load_frame_sequence(entry.path)
        per_stream: dict[str, np.ndarray] = {}
        files: dict[str, Path] = {}
        missing = []
        for stream in streams:
            path = (
                cache_root
                / entry.class_label
                / f"{entry.name}.{stream}.{_content_hash(cfg, clip, stream)}.tstd"
            )
            files[stream] = path
            if path.is_file():
                per_stream[stream] = load_descriptors(path)
                result.cache_hits += 1
            else:
                missing.append(stream)
        if missing:
            try:
                matrices, timings = extract_video_descriptors(clip, cfg, missing)
            except DataError as exc:
                raise DataError(f"{entry.video_id}: {exc}") from exc
            for name, seconds in timings.items():
                totals[name] = totals.get(name, 0.0) + seconds
            for stream in missing:
                files[stream].parent.mkdir(parents=True, exist_ok=True)
                save_descriptors(files[stream], matrices[stream])
                per_stream[stream] = matrices[stream]
                result.computed += 1
        counts = {mat.shape[0] for mat in per_stream.values()}
        if len(counts) != 1:
            raise DataError(f"{entry.video_id}: streams disagree on trajectory count {counts}")
        if counts == {0}:
            logger.warning("%s: no trajectories survived; excluding from evaluation", entry.video_id)
            excluded.append(entry.video_id)
        result.matrices[entry.video_id] = per_stream
        result.labels[entry.video_id] = entry.class_label
        result.cache_files[entry.video_id] = files
    result.excluded = tuple(excluded)
    result.timings = totals
    return result


# ---------------------------------------------------------------------------
# Splits and model fitting
# ---------------------------------------------------------------------------

def split_videos(
    ids_by_class: dict, split, seed: int
) -> tuple[list[str], list[str]]:
    """Seeded train/test partition per class; returns sorted id lists."""
    rng = np.random.default_rng(seed)
    train, test = [], []
    for cls in sorted(ids_by_class):
        ids = sorted(ids_by_class[cls])
        if len(ids) < 2:
            raise DataError(f"class {cls!r} needs at least 2 videos to split, has {len(ids)}")
        if split.train_per_class is not None:
            count = split.train_per_class
        else:
            count = int(np.floor(split.train_fraction * len(ids) + 0.5))
            count = min(max(count, 1), len(ids) - 1)
        if len(ids) <= count:
            raise DataError(
                f"class {cls!r} has {len(ids)} videos but the split needs {count} "
                "for training plus at least one for testing"
            )
        perm = rng.permutation(len(ids))
        train.extend(ids[i] for i in perm[:count])
        test.extend(ids[i] for i in perm[count:])
    return sorted(train), sorted(test)


@dataclass(frozen=True)
class PipelineModels:
    """Frozen per-split models: stream PCAs, codebook, whitening, SVM."""

    streams: tuple
    pca: dict  # stream -> PcaModel
    codebook: Codebook
    whiten: WhitenModel
    svm: SvmModel

    @property
    def descriptor_dim(self) -> int:
        return sum(model.dim for model in self.pca.values())

    def reduce_video(self, stream_mats: dict) -> np.ndarray:
        """Per-stream PCA + concatenation: (K, common_dim * n_streams) float64."""
        parts = [self.pca[s].transform(stream_mats[s]) for s in self.streams]
        return concat_stream_descriptors(parts)

    def encode_video(self, stream_mats: dict, cfg: PipelineConfig) -> np.ndarray:
        reduced = self.reduce_video(stream_mats)
        if reduced.shape[0] == 0:
            raise DataError("video has no trajectories; nothing to encode")
        codes = llc_encode_batch(reduced, self.codebook, cfg.llc)
        pooled = pool_codes(codes, cfg.code_pooling)
        return self.whiten.transform(pooled)

    def classify_video(self, stream_mats: dict, cfg: PipelineConfig):
        return predict(self.svm, self.encode_video(stream_mats, cfg))


def fit_pipeline_models(
    extract: ExtractResult,
    train_ids: Sequence[str],
    cfg: PipelineConfig,
    streams: Sequence[str],
    seed: int,
) -> PipelineModels:
    """Fit every model stage on the training videos only."""
    streams = normalize_streams(streams)
    train_ids = list(train_ids)
    if not train_ids:
        raise DataError("empty training split")

    pca = {}
    for stream in streams:
        stacked = np.vstack([extract.matrices[vid][stream] for vid in train_ids])
        pca[stream] = fit_pca(stacked, cfg.pca_dim)
    common = min(model.dim for model in pca.values())
    if common < cfg.pca_dim:
        logger.info(
            "stream PCA limited to %d components (requested %d) at this data scale",
            common,
            cfg.pca_dim,
        )
        pca = {
            s: PcaModel(m.mean, m.components[:, :common], m.explained_variance[:common], cfg.pca_dim)
            for s, m in pca.items()
        }

    def reduce(vid: str) -> np.ndarray:
        parts = [pca[s].transform(extract.matrices[vid][s]) for s in streams]
        return concat_stream_descriptors(parts)

    reduced = {vid: reduce(vid) for vid in train_ids}
    codebook = build_codebook(
        [reduced[vid] for vid in train_ids],
        cfg.codebook_size,
        cfg.llc,
        seed=derive_seed(seed, 1),
    )

    def encode(vid: str) -> np.ndarray:
        codes = llc_encode_batch(reduced[vid], codebook, cfg.llc)
        return pool_codes(codes, cfg.code_pooling)

    train_encodings = np.stack([encode(vid) for vid in train_ids])
    whiten, train_white = pca_whiten(train_encodings, cfg.whiten_retain)
    svm = train_svm(train_white, [extract.labels[vid] for vid in train_ids], cfg.svm_c)
    return PipelineModels(streams, pca, codebook, whiten, svm)


# ---------------------------------------------------------------------------
# Evaluation protocols
# ---------------------------------------------------------------------------

def run_evaluate(
    data_dir: str | Path, cfg: PipelineConfig, streams: Sequence[str] | None = None
) -> RunReport:
    """Repeated-split evaluation: extract, fit per repeat, score the test split."""
    streams = normalize_streams(streams or cfg.streams)
    extract = run_extract(data_dir, cfg, streams)
    usable = [e.video_id for e in extract.entries if e.video_id not in extract.excluded]
    ids_by_class: dict[str, list[str]] = {}
    for vid in usable:
        ids_by_class.setdefault(extract.labels[vid], []).append(vid)
    if len(ids_by_class) < 2:
        raise DataError(f"need at least 2 classes with usable videos, got {len(ids_by_class)}")
    labels = tuple(sorted(ids_by_class))

    accuracies = []
    confusions = []
    descriptor_dim = 0
    fit_seconds = 0.0
    for r in range(cfg.repeats):
        train_ids, test_ids = split_videos(
            ids_by_class, cfg.split, derive_seed(cfg.master_seed, r, 11)
        )
        overlap = set(train_ids) & set(test_ids)
        if overlap:
            raise DataError(f"train/test overlap in repeat {r}: {sorted(overlap)}")
        t0 = time.perf_counter()
        models = fit_pipeline_models(
            extract, train_ids, cfg, streams, derive_seed(cfg.master_seed, r, 22)
        )
        test_features = np.stack(
            [models.encode_video(extract.matrices[vid], cfg) for vid in test_ids]
        )
        outcome = evaluate(models.svm, test_features, [extract.labels[vid] for vid in test_ids])
        fit_seconds += time.perf_counter() - t0
        accuracies.append(outcome.accuracy)
        confusions.append(outcome.confusion)
        descriptor_dim = models.descriptor_dim
    timings = dict(extract.timings)
    timings["model_fit_eval"] = fit_seconds
    return RunReport(
        streams=streams,
        repeats=cfg.repeats,
        master_seed=cfg.master_seed,
        labels=labels,
        accuracies=tuple(accuracies),
        confusions=tuple(confusions),
        descriptor_dim=descriptor_dim,
        excluded=extract.excluded,
        timings=timings,
        config_text=format_config(replace(cfg, streams=streams)),
    )


def run_ablation(data_dir: str | Path, cfg: PipelineConfig) -> list[tuple[tuple, RunReport]]:
    """Evaluate fixed stream subsets on identical splits (same seeds throughout)."""
    run_extract(data_dir, cfg, ("lt", "st", "gt"))  # warm the cache once
    return [(subset, run_evaluate(data_dir, cfg, subset)) for subset in ABLATION_SUBSETS]


# ---------------------------------------------------------------------------
# Model bundles (train once, predict later)
# ---------------------------------------------------------------------------

_BUNDLE_CONFIG = "config.txt"


def save_models(models: PipelineModels, cfg: PipelineConfig, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / _BUNDLE_CONFIG).write_text(
        format_config(replace(cfg, streams=models.streams))
    )
    for stream, model in models.pca.items():
        save_pca(directory / f"pca_{stream}.pcam", model)
    save_codebook(directory / "codebook.cdbk", models.codebook)
    save_whitening(directory / "whiten.whtn", models.whiten)
    save_svm(directory / "svm.lsvm", models.svm)


def load_models(directory: str | Path) -> tuple[PipelineModels, PipelineConfig]:
    directory = Path(directory)
    cfg_path = directory / _BUNDLE_CONFIG
    if not cfg_path.is_file():
        raise DataError(f"model directory {directory} is missing {_BUNDLE_CONFIG}")
    cfg = load_config(cfg_path)
    pca = {}
    for stream in cfg.streams:
        path = directory / f"pca_{stream}.pcam"
        if not path.is_file():
            raise DataError(f"model directory {directory} is missing {path.name}")
        pca[stream] = load_pca(path)
    models = PipelineModels(
        streams=cfg.streams,
        pca=pca,
        codebook=load_codebook(directory / "codebook.cdbk"),
        whiten=load_whitening(directory / "whiten.whtn"),
        svm=load_svm(directory / "svm.lsvm"),
    )
    return models, cfg


def classify_frames_dir(
    frames_dir: str | Path, models: PipelineModels, cfg: PipelineConfig
):
    """Extract a single video (uncached) and classify it with a trained bundle."""
    clip = load_frame_sequence(frames_dir)
    matrices, _ = extract_video_descriptors(clip, cfg, models.streams)
    if next(iter(matrices.values())).shape[0] == 0:
        raise DataError(f"{Path(frames_dir).name}: no trajectories survived; cannot classify")
    return models.classify_video(matrices, cfg)
