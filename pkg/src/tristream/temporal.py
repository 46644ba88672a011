"""Temporal templates derived from optical flow.

Three representations feed the three downstream streams:

* a decayed accumulation of absolute differences between consecutive flow
  images (the global-temporal template),
* a motion-history image over flow magnitude (the spatial-temporal template),
* stacked (u, v) flow channels over a short window (the local-temporal input).

The scalar "brightness" plane of a flow image is its magnitude channel.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError
from .flow import FlowField, FlowImage, quantize_magnitude
from .video import encode_pgm

INIT_FIRST_FLOW = "first-flow-image"
INIT_ZEROS = "zeros"


@dataclass(frozen=True)
class OfsdiConfig:
    alpha: float = 0.96
    init_mode: str = INIT_FIRST_FLOW

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.init_mode not in (INIT_FIRST_FLOW, INIT_ZEROS):
            raise ConfigError(f"unknown init_mode {self.init_mode!r}")


@dataclass(frozen=True)
class MhiConfig:
    tau: int = 15
    motion_threshold: int = 10

    def __post_init__(self):
        if self.tau < 1:
            raise ConfigError("tau must be >= 1")
        if not 1 <= self.motion_threshold <= 254:
            raise ConfigError("motion_threshold must be in [1, 254]")


@dataclass(frozen=True)
class StackConfig:
    window: int = 10

    def __post_init__(self):
        if self.window < 1:
            raise ConfigError("stack window must be >= 1")


@dataclass(frozen=True)
class TemporalImage:
    """Single-channel non-negative float image with a time index."""

    values: np.ndarray
    time_index: int = 0

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise DataError("temporal image must be 2-D")
        if not np.isfinite(vals).all():
            raise DataError("temporal image contains non-finite values")
        if (vals < 0).any():
            raise DataError("temporal image contains negative values")
        object.__setattr__(self, "values", vals)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def magnitude_plane(flow_image: FlowImage, time_index: int = 0) -> TemporalImage:
    """The scalar brightness plane of a flow image (its magnitude channel)."""
    return TemporalImage(flow_image.channels[:, :, 2].astype(np.float64), time_index)


def flow_difference(f_t: TemporalImage, f_prev: TemporalImage) -> TemporalImage:
    """Per-pixel absolute difference between two consecutive flow planes."""
    if f_t.values.shape != f_prev.values.shape:
        raise DataError(
            f"plane sizes differ: {f_t.values.shape} vs {f_prev.values.shape}"
        )
    return TemporalImage(np.abs(f_t.values - f_prev.values), f_t.time_index)


def ofsdi_update(o_prev: TemporalImage, d_t: TemporalImage, alpha: float) -> TemporalImage:
    """One accumulation step: alpha * previous + current difference."""
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must be in (0, 1), got {alpha}")
    if o_prev.values.shape != d_t.values.shape:
        raise DataError(
            f"image sizes differ: {o_prev.values.shape} vs {d_t.values.shape}"
        )
    return TemporalImage(alpha * o_prev.values + d_t.values, o_prev.time_index + 1)


def ofsdi_sequence(
    flow_planes: Sequence[TemporalImage], cfg: OfsdiConfig = OfsdiConfig()
) -> list[TemporalImage]:
    """Run the accumulation over consecutive flow-plane differences.

    With n input planes there are n - 1 differences, hence n - 1 outputs;
    the accumulator starts from the first flow plane (or zeros).
    """
    if len(flow_planes) < 2:
        raise DataError(f"need at least 2 flow planes, got {len(flow_planes)}")
    if cfg.init_mode == INIT_FIRST_FLOW:
        state = TemporalImage(flow_planes[0].values, 0)
    else:
        state = TemporalImage(np.zeros_like(flow_planes[0].values), 0)
    out = []
    for i in range(1, len(flow_planes)):
        diff = flow_difference(flow_planes[i], flow_planes[i - 1])
        state = ofsdi_update(state, diff, cfg.alpha)
        out.append(state)
    return out


def to_byte_image(values: np.ndarray) -> np.ndarray:
    """Min-max scale to [0, 255] with half-up rounding; constant input maps to zero."""
    vals = np.asarray(values, dtype=np.float64)
    lo = vals.min()
    hi = vals.max()
    if hi <= lo:
        return np.zeros(vals.shape, dtype=np.uint8)
    scaled = np.floor((vals - lo) / (hi - lo) * 255.0 + 0.5)
    return np.clip(scaled, 0, 255).astype(np.uint8)


def ofsdi_to_input(o: TemporalImage) -> np.ndarray:
    """Byte-scale the template and replicate it into three identical channels."""
    byte = to_byte_image(o.values)
    return np.repeat(byte[:, :, None], 3, axis=2)


def dump_temporal_pgm(path, image: TemporalImage) -> None:
    """Write a min-max byte-scaled PGM of the template, for eyeballing."""
    Path(path).write_bytes(encode_pgm(to_byte_image(image.values)))


def ofmhi_sequence(
    flows: Sequence[FlowField],
    cfg: MhiConfig = MhiConfig(),
    quantization_bound: float = 20.0,
) -> list[TemporalImage]:
    """Motion-history recursion over quantized flow magnitude.

    Pixels whose byte magnitude exceeds the threshold refresh to ``tau``;
    all others decay by one per step, floored at zero.  One image per flow
    field.  ``quantization_bound`` sets the byte scale of the magnitude test.
    """
    if len(flows) < 1:
        raise DataError("need at least one flow field")
    history = np.zeros((flows[0].height, flows[0].width), dtype=np.float64)
    out = []
    for t, flow in enumerate(flows, start=1):
        mag = quantize_magnitude(flow.u, flow.v, quantization_bound)
        history = np.where(mag > cfg.motion_threshold, float(cfg.tau), np.maximum(history - 1.0, 0.0))
        out.append(TemporalImage(history, t))
    return out


def stack_flows(
    flow_images: Sequence[FlowImage], cfg: StackConfig, t: int
) -> np.ndarray:
    """Stack (u, v) byte channels for flow images t .. t + window - 1 (0-based).

    Channel order interleaves per time step: u_t, v_t, u_{t+1}, v_{t+1}, ...
    """
    n = len(flow_images)
    if t < 0 or t + cfg.window > n:
        raise DataError(
            f"stack window [{t}, {t + cfg.window}) out of range for {n} flow images"
        )
    channels = []
    for i in range(t, t + cfg.window):
        channels.append(flow_images[i].channels[:, :, 0])
        channels.append(flow_images[i].channels[:, :, 1])
    return np.stack(channels, axis=2)
