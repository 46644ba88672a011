"""Grayscale video clips: loading, PGM/PNG decoding, and synthetic clip generation.

The on-disk interchange format is binary PGM (P5, maxval 255) with frames named
``frame_%05d.pgm``.  PNG is accepted on input only; color PNGs are converted to
gray by the unweighted channel mean, rounded half up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .errors import ConfigError, DataError, FormatError

MIN_FRAME_SIDE = 16

SYNTH_CLASSES = ("translate-right", "translate-left", "expand", "oscillate")


@dataclass(frozen=True)
class Frame:
    """One 8-bit grayscale image, row-major, at least 16x16."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.dtype != np.uint8:
            raise DataError("frame pixels must be a 2-D uint8 array")
        if px.shape[0] < MIN_FRAME_SIDE or px.shape[1] < MIN_FRAME_SIDE:
            raise DataError(
                f"frame must be at least {MIN_FRAME_SIDE}x{MIN_FRAME_SIDE}, "
                f"got {px.shape[1]}x{px.shape[0]}"
            )
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class VideoClip:
    """Ordered frames of identical size; ``length`` is the frame count."""

    frames: tuple
    identifier: str = ""
    class_label: str | None = None

    def __post_init__(self):
        frames = tuple(self.frames)
        if len(frames) < 2:
            raise DataError(f"clip {self.identifier!r}: needs at least 2 frames, got {len(frames)}")
        w, h = frames[0].width, frames[0].height
        for i, f in enumerate(frames[1:], start=2):
            if f.width != w or f.height != h:
                raise DataError(
                    f"clip {self.identifier!r}: frame {i} is {f.width}x{f.height}, expected {w}x{h}"
                )
        object.__setattr__(self, "frames", frames)

    @property
    def length(self) -> int:
        return len(self.frames)

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height

    def as_array(self) -> np.ndarray:
        """Frames stacked to a (length, height, width) uint8 array."""
        return np.stack([f.pixels for f in self.frames])


# ---------------------------------------------------------------------------
# Frame file formats
# ---------------------------------------------------------------------------

def _pgm_header_tokens(data: bytes, pos: int, count: int, name: str):
    tokens = []
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos] not in (0x0A, 0x0D):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{name}: truncated PGM header")
        tokens.append(data[start:pos])
    return tokens, pos


def decode_pgm(data: bytes, name: str = "<pgm>") -> np.ndarray:
    """Decode a binary (P5) PGM with maxval 255 into a 2-D uint8 array."""
    if not data.startswith(b"P5"):
        raise FormatError(f"{name}: not a binary PGM (missing P5 magic)")
    tokens, pos = _pgm_header_tokens(data, 2, 3, name)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise FormatError(f"{name}: malformed PGM header") from None
    if maxval != 255:
        raise FormatError(f"{name}: unsupported PGM maxval {maxval} (expected 255)")
    if width <= 0 or height <= 0:
        raise FormatError(f"{name}: bad PGM dimensions {width}x{height}")
    pos += 1  # single whitespace byte after maxval
    if len(data) - pos < width * height:
        raise FormatError(f"{name}: PGM pixel data truncated")
    px = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
    return px.reshape(height, width).copy()


def encode_pgm(pixels: np.ndarray) -> bytes:
    h, w = pixels.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(pixels).tobytes()


def _decode_png(path: Path) -> np.ndarray:
    try:
        img = Image.open(path)
        img.load()
    except Exception as exc:
        raise FormatError(f"{path.name}: undecodable PNG ({exc})") from exc
    if img.mode == "P":
        img = img.convert("RGB")
    arr = np.asarray(img)
    if img.mode == "L":
        return arr
    if img.mode == "LA":
        return arr[:, :, 0]
    if img.mode in ("RGB", "RGBA"):
        s = arr[:, :, :3].astype(np.uint32).sum(axis=2)
        # channel mean rounded half up: floor(s/3 + 1/2) = (2s + 3) // 6
        return ((2 * s + 3) // 6).astype(np.uint8)
    raise FormatError(f"{path.name}: unsupported PNG mode {img.mode!r} (need 8-bit gray or color)")


def load_frame(path: str | Path) -> Frame:
    """Load one frame file; format is chosen by suffix (.pgm or .png)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"frame file not found: {path}")
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        px = decode_pgm(path.read_bytes(), path.name)
    elif suffix == ".png":
        px = _decode_png(path)
    else:
        raise FormatError(f"{path.name}: unsupported frame format {suffix!r} (need .pgm or .png)")
    try:
        return Frame(px)
    except DataError as exc:
        raise DataError(f"{path.name}: {exc}") from exc


def load_frame_sequence(directory: str | Path, pattern: str = "frame_*.pgm") -> VideoClip:
    """Load all frames matching ``pattern``, sorted by filename, into a clip."""
    root = Path(directory)
    if not root.is_dir():
        raise DataError(f"frame directory not found: {root}")
    paths = sorted(root.glob(pattern))
    if len(paths) < 2:
        raise DataError(f"{root}: found {len(paths)} frame(s) matching {pattern!r}, need at least 2")
    frames = []
    for idx, path in enumerate(paths, start=1):
        frame = load_frame(path)
        if frames and (frame.width != frames[0].width or frame.height != frames[0].height):
            raise DataError(
                f"{path.name}: frame {idx} is {frame.width}x{frame.height}, "
                f"expected {frames[0].width}x{frames[0].height} (from {paths[0].name})"
            )
        frames.append(frame)
    return VideoClip(tuple(frames), identifier=root.name)


def save_clip(clip: VideoClip, directory: str | Path) -> list[Path]:
    """Write the clip as frame_%05d.pgm files (0-based), creating the directory."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frame in enumerate(clip.frames):
        path = root / f"frame_{i:05d}.pgm"
        path.write_bytes(encode_pgm(frame.pixels))
        paths.append(path)
    return paths


# ---------------------------------------------------------------------------
# Synthetic clips
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    """Knobs for the synthetic generator; defaults are tuned for 64x64, 30 frames.

    The blob's speed pulses around its mean so that tracked step magnitudes
    vary; perfectly steady tracks would otherwise be discarded by the
    static-trajectory filter downstream.
    """

    width: int = 64
    height: int = 64
    length: int = 30
    noise_amplitude: float = 40.0
    blob_radius: float = 10.0
    pulse_period: int = 10
    pulse_amplitude: float = 0.9

    def __post_init__(self):
        if self.width < MIN_FRAME_SIDE or self.height < MIN_FRAME_SIDE:
            raise ConfigError(f"synthetic frames must be at least {MIN_FRAME_SIDE} px per side")
        if self.length < 2:
            raise ConfigError("synthetic clips need at least 2 frames")
        if self.blob_radius <= 1 or self.pulse_period < 2:
            raise ConfigError("blob_radius must exceed 1 px and pulse_period 1 frame")


def _smooth_noise(rng: np.random.Generator, shape, sigma: float) -> np.ndarray:
    """Band-limited noise scaled to [-0.5, 0.5]."""
    raw = gaussian_filter(rng.uniform(-1.0, 1.0, shape), sigma, mode="wrap")
    peak = np.abs(raw).max()
    if peak <= 0:
        return raw
    return raw * (0.5 / peak)


def _bilinear(tex: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    h, w = tex.shape
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.minimum(xs.astype(np.int64), w - 2)
    y0 = np.minimum(ys.astype(np.int64), h - 2)
    fx = xs - x0
    fy = ys - y0
    top = tex[y0, x0] * (1 - fx) + tex[y0, x0 + 1] * fx
    bot = tex[y0 + 1, x0] * (1 - fx) + tex[y0 + 1, x0 + 1] * fx
    return top * (1 - fy) + bot * fy


def _motion_tables(class_id: str, spec: SynthSpec):
    """Per-frame center (cx, cy) and radius tables for one motion class."""
    w, h, n = float(spec.width), float(spec.height), spec.length
    t = np.arange(n)
    pulse = np.sin(2.0 * np.pi * (np.arange(spec.pulse_period) / spec.pulse_period))
    pulse_t = pulse[t % spec.pulse_period]
    radius = np.full(n, spec.blob_radius)
    if class_id in ("translate-right", "translate-left"):
        steps = 1.0 + spec.pulse_amplitude * pulse[np.arange(n - 1) % spec.pulse_period]
        travel = np.concatenate([[0.0], np.cumsum(steps)])
        if class_id == "translate-right":
            cx = 0.25 * w + travel
        else:
            cx = 0.75 * w - travel
        cy = np.full(n, 0.5 * h)
    elif class_id == "expand":
        cx = np.full(n, 0.5 * w)
        cy = np.full(n, 0.5 * h)
        radius = 0.6 * spec.blob_radius + 0.35 * t + 0.16 * spec.blob_radius * pulse_t
    elif class_id == "oscillate":
        cx = 0.5 * w + 0.6 * spec.blob_radius * pulse_t
        cy = np.full(n, 0.5 * h)
    else:
        raise DataError(f"unknown synthetic class {class_id!r} (choose from {SYNTH_CLASSES})")
    return cx, cy, radius


def synth_generate(class_id: str, seed: int, spec: SynthSpec = SynthSpec()) -> VideoClip:
    """Render a textured blob moving per ``class_id`` over a static textured background.

    Pure function of its arguments: the same (class_id, seed, spec) always
    yields byte-identical frames.
    """
    if class_id not in SYNTH_CLASSES:
        raise DataError(f"unknown synthetic class {class_id!r} (choose from {SYNTH_CLASSES})")
    cx, cy, radius = _motion_tables(class_id, spec)
    rng = np.random.default_rng([seed % (2**63), SYNTH_CLASSES.index(class_id)])
    background = 60.0 + spec.noise_amplitude * _smooth_noise(rng, (spec.height, spec.width), 1.5)

    base_radius = float(radius[0]) if class_id == "expand" else spec.blob_radius
    tex_side = 2 * int(math.ceil(radius.max())) + 5
    texture = 200.0 + spec.noise_amplitude * _smooth_noise(rng, (tex_side, tex_side), 1.2)

    ys, xs = np.mgrid[0 : spec.height, 0 : spec.width].astype(np.float64)
    frames = []
    for t in range(spec.length):
        dx = xs - cx[t]
        dy = ys - cy[t]
        scale = base_radius / radius[t]  # rigid motion except for "expand", which stretches
        tu = dx * scale + (tex_side - 1) / 2.0
        tv = dy * scale + (tex_side - 1) / 2.0
        alpha = np.clip(radius[t] + 0.5 - np.hypot(dx, dy), 0.0, 1.0)
        vals = background * (1.0 - alpha) + _bilinear(texture, tu, tv) * alpha
        frames.append(Frame(np.clip(np.floor(vals + 0.5), 0, 255).astype(np.uint8)))
    return VideoClip(tuple(frames), identifier=f"{class_id}-{seed}", class_label=class_id)
