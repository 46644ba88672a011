"""Dense optical flow between consecutive frames, plus byte quantization.

The estimator is a coarse-to-fine Horn-Schunck scheme with a fixed iteration
count per pyramid level, so the output is a deterministic function of the
inputs and the configuration.  Borders are handled by edge replication for
both derivatives and warping.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate, map_coordinates

from .errors import ConfigError, DataError, FormatError
from .video import Frame, VideoClip

_AVG_KERNEL = np.array(
    [[1 / 12, 1 / 6, 1 / 12], [1 / 6, 0.0, 1 / 6], [1 / 12, 1 / 6, 1 / 12]]
)
_KX = 0.25 * np.array([[-1.0, 1.0], [-1.0, 1.0]])
_KY = 0.25 * np.array([[-1.0, -1.0], [1.0, 1.0]])
_KT = 0.25 * np.ones((2, 2))

FLOW_MAGIC = b"OFL1"


@dataclass(frozen=True)
class FlowConfig:
    pyramid_levels: int = 3
    smoothness_weight: float = 15.0
    iterations_per_level: int = 100
    quantization_bound: float = 20.0

    def __post_init__(self):
        if self.pyramid_levels < 1:
            raise ConfigError("pyramid_levels must be >= 1")
        if self.smoothness_weight <= 0:
            raise ConfigError("smoothness_weight must be positive")
        if self.iterations_per_level < 1:
            raise ConfigError("iterations_per_level must be >= 1")
        if self.quantization_bound <= 0:
            raise ConfigError("quantization_bound must be positive")


@dataclass(frozen=True)
class FlowField:
    """Per-pixel (u, v) displacements in pixels, real-valued and finite."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        if u.ndim != 2 or u.shape != v.shape:
            raise DataError("flow planes must be 2-D arrays of identical shape")
        if not (np.isfinite(u).all() and np.isfinite(v).all()):
            raise DataError("flow contains non-finite values")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)


@dataclass(frozen=True)
class FlowImage:
    """Quantized 3-channel byte form of a flow field: (u, v, magnitude)."""

    channels: np.ndarray

    def __post_init__(self):
        ch = np.asarray(self.channels)
        if ch.ndim != 3 or ch.shape[2] != 3 or ch.dtype != np.uint8:
            raise DataError("flow image must be an (H, W, 3) uint8 array")
        object.__setattr__(self, "channels", ch)

    @property
    def height(self) -> int:
        return self.channels.shape[0]

    @property
    def width(self) -> int:
        return self.channels.shape[1]


def _downsample2(img: np.ndarray) -> np.ndarray:
    """2x2 block mean; odd edges are replicated so every block is full."""
    h, w = img.shape
    if h % 2 or w % 2:
        img = np.pad(img, ((0, h % 2), (0, w % 2)), mode="edge")
        h, w = img.shape
    return img.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def _resample(img: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Bilinear resample onto ``shape`` with endpoints aligned."""
    h, w = img.shape
    ht, wt = shape
    ys = np.linspace(0.0, h - 1.0, ht)
    xs = np.linspace(0.0, w - 1.0, wt)
    grid = np.meshgrid(ys, xs, indexing="ij")
    return map_coordinates(img, grid, order=1, mode="nearest")


def _warp(img: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    h, w = img.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    return map_coordinates(img, [ys + v, xs + u], order=1, mode="nearest")


def _hs_iterate(i1, i2, alpha, iters):
    """Classic Horn-Schunck relaxation from a zero flow estimate."""
    fx = correlate(i1, _KX, mode="nearest") + correlate(i2, _KX, mode="nearest")
    fy = correlate(i1, _KY, mode="nearest") + correlate(i2, _KY, mode="nearest")
    ft = correlate(i2, _KT, mode="nearest") - correlate(i1, _KT, mode="nearest")
    den = alpha * alpha + fx * fx + fy * fy
    u = np.zeros_like(i1)
    v = np.zeros_like(i1)
    for _ in range(iters):
        ubar = correlate(u, _AVG_KERNEL, mode="nearest")
        vbar = correlate(v, _AVG_KERNEL, mode="nearest")
        common = (fx * ubar + fy * vbar + ft) / den
        u = ubar - fx * common
        v = vbar - fy * common
    return u, v


def compute_flow(prev: Frame, next_: Frame, cfg: FlowConfig = FlowConfig()) -> FlowField:
    """Dense flow from ``prev`` to ``next_``; deterministic for fixed inputs."""
    if prev.width != next_.width or prev.height != next_.height:
        raise DataError(
            f"flow inputs differ in size: {prev.width}x{prev.height} vs {next_.width}x{next_.height}"
        )
    i1 = prev.pixels.astype(np.float64)
    i2 = next_.pixels.astype(np.float64)
    min_side = min(prev.width, prev.height)
    levels = max(1, min(cfg.pyramid_levels, int(np.log2(min_side / 8.0)) + 1))

    pyramid = [(i1, i2)]
    for _ in range(levels - 1):
        a, b = pyramid[-1]
        pyramid.append((_downsample2(a), _downsample2(b)))

    u = np.zeros_like(pyramid[-1][0])
    v = np.zeros_like(pyramid[-1][0])
    for level in range(levels - 1, -1, -1):
        a, b = pyramid[level]
        if u.shape != a.shape:
            u = 2.0 * _resample(u, a.shape)
            v = 2.0 * _resample(v, a.shape)
        bw = _warp(b, u, v)
        du, dv = _hs_iterate(a, bw, cfg.smoothness_weight, cfg.iterations_per_level)
        u = u + du
        v = v + dv
    return FlowField(u, v)


def flow_sequence(clip: VideoClip, cfg: FlowConfig = FlowConfig()) -> list[FlowField]:
    """One flow field per consecutive frame pair: exactly length - 1 fields."""
    return [compute_flow(clip.frames[i], clip.frames[i + 1], cfg) for i in range(clip.length - 1)]


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5)


def quantize_magnitude(u: np.ndarray, v: np.ndarray, bound: float) -> np.ndarray:
    """Magnitude channel bytes: 255 * |flow| / (bound * sqrt(2)), clamped."""
    mag = 255.0 * np.hypot(u, v) / (bound * np.sqrt(2.0))
    return np.clip(_round_half_up(mag), 0, 255).astype(np.uint8)


def quantize_flow(flow: FlowField, bound: float) -> FlowImage:
    """Map (u, v) into byte channels centered at 128 with range +-bound pixels."""
    if bound <= 0:
        raise ConfigError("quantization bound must be positive")
    cu = np.clip(_round_half_up(128.0 + 127.0 * flow.u / bound), 0, 255).astype(np.uint8)
    cv = np.clip(_round_half_up(128.0 + 127.0 * flow.v / bound), 0, 255).astype(np.uint8)
    cm = quantize_magnitude(flow.u, flow.v, bound)
    return FlowImage(np.stack([cu, cv, cm], axis=2))


# ---------------------------------------------------------------------------
# Optional on-disk flow cache
# ---------------------------------------------------------------------------

def save_flow_field(path: str | Path, flow: FlowField) -> None:
    """Write ``OFL1`` + width + height (u32 LE) + u-plane + v-plane (f32 LE)."""
    header = FLOW_MAGIC + struct.pack("<II", flow.width, flow.height)
    body = flow.u.astype("<f4").tobytes() + flow.v.astype("<f4").tobytes()
    Path(path).write_bytes(header + body)


def load_flow_field(path: str | Path) -> FlowField:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != FLOW_MAGIC:
        raise FormatError(f"{path.name}: not a flow cache file (bad magic)")
    width, height = struct.unpack("<II", data[4:12])
    count = width * height
    if len(data) != 12 + 8 * count:
        raise FormatError(f"{path.name}: flow cache size mismatch for {width}x{height}")
    planes = np.frombuffer(data, dtype="<f4", count=2 * count, offset=12).astype(np.float64)
    u = planes[:count].reshape(height, width)
    v = planes[count:].reshape(height, width)
    return FlowField(u, v)
