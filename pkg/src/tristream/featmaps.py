"""Per-stream convolutional feature maps and their normalizations.

Feature maps come from a pluggable provider: either the built-in deterministic
filter bank (oriented even-symmetric Gabor kernels, absolute-value rectified,
2x2 max pooled per stage) or a binary file produced by an external extractor.
Two normalizations are supplied: per-channel division by the maximum over the
whole video extent, and per-position division by the maximum across channels.

Tensors are laid out (H_m, W_m, L, N_m): rows, columns, time, channels.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.ndimage import correlate

from .errors import ConfigError, DataError, FormatError

STREAMS = ("lt", "st", "gt")
STREAM_NAMES = {
    "lt": "local-temporal",
    "st": "spatial-temporal",
    "gt": "global-temporal",
}
_STREAM_TAG_BYTES = {"lt": b"l", "st": b"s", "gt": b"g"}
_STREAM_FROM_TAG = {v: k for k, v in _STREAM_TAG_BYTES.items()}

ZERO_MAX_EPS = 1e-12
FMAP_MAGIC = b"FMAP"
FMAP_VERSION = 1


@dataclass(frozen=True)
class FeatureMapStack:
    """One layer's maps over a whole video, with its spatial down-scaling ratio."""

    stream: str
    layer_id: str
    values: np.ndarray
    map_ratio: float

    def __post_init__(self):
        if self.stream not in STREAMS:
            raise DataError(f"unknown stream tag {self.stream!r} (choose from {STREAMS})")
        vals = np.asarray(self.values)
        if vals.dtype not in (np.float32, np.float64):
            vals = vals.astype(np.float64)
        if vals.ndim != 4 or vals.shape[3] < 1:
            raise DataError("feature maps must be a 4-D (H, W, L, N) tensor with N >= 1")
        if not np.isfinite(vals).all():
            raise DataError("feature maps contain non-finite values")
        if not 0.0 < self.map_ratio <= 1.0:
            raise DataError(f"map ratio must be in (0, 1], got {self.map_ratio}")
        object.__setattr__(self, "values", vals)

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class FilterBankConfig:
    stage_count: int = 2
    orientations: int = 8
    max_channels: int = 64

    def __post_init__(self):
        if self.stage_count < 1:
            raise ConfigError("stage_count must be >= 1")
        if self.orientations < 1:
            raise ConfigError("orientations must be >= 1")
        if self.max_channels < 1:
            raise ConfigError("max_channels must be >= 1")

    def stage_channels(self, input_channels: int) -> list[int]:
        """Channel count per stage after the truncation cap."""
        counts = []
        n = input_channels
        for _ in range(self.stage_count):
            n = min(n * self.orientations, self.max_channels)
            counts.append(n)
        return counts

    def descriptor_dim(self, input_channels: int) -> int:
        """Length of one stream descriptor: both normalizations of every stage."""
        return 2 * sum(self.stage_channels(input_channels))


def oriented_kernels(orientations: int = 8) -> np.ndarray:
    """Even-symmetric 3x3 Gabor kernels at ``orientations`` angles over [0, pi).

    Cosine phase keeps a positive DC response, so uniform input levels survive
    filtering; that matters downstream, where direction information lives in
    flow byte levels rather than in local gradients.
    """
    kernels = np.empty((orientations, 3, 3))
    offsets = np.array([-1.0, 0.0, 1.0])
    dy, dx = np.meshgrid(offsets, offsets, indexing="ij")
    envelope = np.exp(-(dx * dx + dy * dy) / 2.0)
    for i in range(orientations):
        theta = np.pi * i / orientations
        rotated = dx * np.cos(theta) + dy * np.sin(theta)
        kernels[i] = envelope * np.cos(np.pi * rotated / 2.0)
    return kernels


def _max_pool2(volume: np.ndarray) -> np.ndarray:
    """2x2 spatial max over an (L, N, H, W) volume; odd edges replicate."""
    h, w = volume.shape[2:]
    if h % 2 or w % 2:
        volume = np.pad(volume, ((0, 0), (0, 0), (0, h % 2), (0, w % 2)), mode="edge")
        h, w = volume.shape[2:]
    length, n = volume.shape[:2]
    return volume.reshape(length, n, h // 2, 2, w // 2, 2).max(axis=(3, 5))


def filterbank_extract(
    inputs: Sequence[np.ndarray], cfg: FilterBankConfig, stream: str
) -> list[FeatureMapStack]:
    """Run the fixed filter bank over per-frame images of shape (H, W, C).

    Every stage correlates each channel with each oriented kernel (edges
    replicated), rectifies by absolute value, and max-pools 2x2, halving the
    map ratio.  Output channels are orientation-major (o * C + c) and
    truncated at ``max_channels``.
    """
    if len(inputs) == 0:
        raise DataError("filter bank needs at least one input frame")
    first = np.asarray(inputs[0])
    if first.ndim != 3:
        raise DataError("filter bank inputs must be (H, W, C) arrays")
    for i, frame in enumerate(inputs):
        if np.asarray(frame).shape != first.shape:
            raise DataError(f"input frame {i} shape differs from frame 0")

    # channels-first (L, C, H, W) layout keeps every 2-D slice contiguous;
    # float32 matches the canonical descriptor precision downstream
    x = np.stack([np.asarray(f, dtype=np.float32).transpose(2, 0, 1) for f in inputs])
    kernels = oriented_kernels(cfg.orientations).astype(np.float32)
    stacks = []
    for stage in range(1, cfg.stage_count + 1):
        length, c_in, h, w = x.shape
        n_out = min(c_in * cfg.orientations, cfg.max_channels)
        flat = x.reshape(length * c_in, h, w)
        out = np.empty((length, n_out, h, w), dtype=np.float32)
        for o in range((n_out + c_in - 1) // c_in):
            resp = np.abs(correlate(flat, kernels[o][None, :, :], mode="nearest"))
            resp = resp.reshape(length, c_in, h, w)
            lo = o * c_in
            hi = min(lo + c_in, n_out)
            out[:, lo:hi] = resp[:, : hi - lo]
        pooled = _max_pool2(out)
        stacks.append(
            FeatureMapStack(
                stream, f"stage{stage}", pooled.transpose(2, 3, 0, 1), 2.0 ** (-stage)
            )
        )
        x = pooled
    return stacks


# ---------------------------------------------------------------------------
# Map normalizations
# ---------------------------------------------------------------------------

def spatiotemporal_normalize(stack: FeatureMapStack) -> FeatureMapStack:
    """Divide each channel by its maximum over the whole (x, y, z) extent.

    Channels whose maximum does not exceed a tiny epsilon come out all-zero.
    """
    vals = stack.values
    maxc = vals.max(axis=(0, 1, 2))
    ok = maxc > ZERO_MAX_EPS
    out = np.zeros_like(vals)
    if ok.any():
        out[:, :, :, ok] = vals[:, :, :, ok] / maxc[ok]
    return FeatureMapStack(stack.stream, stack.layer_id, out, stack.map_ratio)


def channel_normalize(stack: FeatureMapStack) -> FeatureMapStack:
    """Divide each position by the maximum across channels at that position."""
    vals = stack.values
    maxp = vals.max(axis=3)
    ok = maxp > ZERO_MAX_EPS
    out = np.zeros_like(vals)
    if ok.any():
        out[ok, :] = vals[ok, :] / maxp[ok][:, None]
    return FeatureMapStack(stack.stream, stack.layer_id, out, stack.map_ratio)


# ---------------------------------------------------------------------------
# Feature-map files (externally computed maps)
# ---------------------------------------------------------------------------

def save_feature_maps(path: str | Path, stack: FeatureMapStack) -> None:
    """Write the FMAP binary format (header + f32 values, x fastest, then y, z, n)."""
    h, w, length, n = stack.values.shape
    layer = stack.layer_id.encode("utf-8")
    header = (
        FMAP_MAGIC
        + struct.pack("<B", FMAP_VERSION)
        + _STREAM_TAG_BYTES[stack.stream]
        + struct.pack("<I", len(layer))
        + layer
        + struct.pack("<IIII", h, w, length, n)
        + struct.pack("<d", stack.map_ratio)
    )
    body = stack.values.transpose(3, 2, 0, 1).astype("<f4").tobytes()
    Path(path).write_bytes(header + body)


def load_feature_maps(path: str | Path) -> FeatureMapStack:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 10 or data[:4] != FMAP_MAGIC:
        raise FormatError(f"{path.name}: not a feature-map file (bad magic)")
    version = data[4]
    if version != FMAP_VERSION:
        raise FormatError(f"{path.name}: unsupported feature-map version {version}")
    tag = data[5:6]
    if tag not in _STREAM_FROM_TAG:
        raise FormatError(f"{path.name}: unknown stream tag byte {tag!r}")
    pos = 6
    (layer_len,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if len(data) < pos + layer_len + 24:
        raise FormatError(f"{path.name}: truncated feature-map header")
    layer_id = data[pos : pos + layer_len].decode("utf-8")
    pos += layer_len
    h, w, length, n = struct.unpack_from("<IIII", data, pos)
    pos += 16
    (ratio,) = struct.unpack_from("<d", data, pos)
    pos += 8
    count = h * w * length * n
    if len(data) != pos + 4 * count:
        raise FormatError(
            f"{path.name}: expected {count} map values, file holds {(len(data) - pos) // 4}"
        )
    if not 0.0 < ratio <= 1.0:
        raise FormatError(f"{path.name}: map ratio {ratio} outside (0, 1]")
    flat = np.frombuffer(data, dtype="<f4", count=count, offset=pos).astype(np.float64)
    if not np.isfinite(flat).all():
        raise FormatError(f"{path.name}: feature maps contain non-finite values")
    values = flat.reshape(n, length, h, w).transpose(2, 3, 1, 0)
    return FeatureMapStack(_STREAM_FROM_TAG[tag], layer_id, values, ratio)
