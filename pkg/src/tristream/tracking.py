"""Dense point trajectories tracked through median-filtered optical flow.

Points are seeded on a regular grid, advected by bilinear sampling of the
median-filtered flow, and discarded when they leave the frame.  Completed
tracks are pruned when their step magnitudes are nearly constant (static by
the displacement-spread test, which also drops constant-velocity tracks) or
when any single step is implausibly large (erratic).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.ndimage import median_filter

from .errors import ConfigError, DataError
from .flow import FlowField
from .video import VideoClip


@dataclass(frozen=True)
class TrajectoryPoint:
    x: float
    y: float
    z: int


@dataclass(frozen=True)
class Trajectory:
    """Tracked points at consecutive frame indices."""

    points: tuple

    def __post_init__(self):
        pts = tuple(self.points)
        if len(pts) < 2:
            raise DataError("trajectory needs at least 2 points")
        for a, b in zip(pts, pts[1:]):
            if b.z != a.z + 1:
                raise DataError("trajectory frame indices must increase by exactly 1")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def start_frame(self) -> int:
        return self.points[0].z

    def positions(self) -> np.ndarray:
        """(P, 2) array of (x, y) positions."""
        return np.array([(p.x, p.y) for p in self.points])

    def displacements(self) -> np.ndarray:
        """(P - 1, 2) array of per-step displacement vectors."""
        pos = self.positions()
        return pos[1:] - pos[:-1]


@dataclass(frozen=True)
class TrajectoryConfig:
    sampling_stride: int = 5
    length: int = 15
    static_threshold: float = 0.4
    erratic_threshold: float = 10.0
    median_radius: int = 2

    def __post_init__(self):
        if self.sampling_stride < 1:
            raise ConfigError("sampling_stride must be >= 1")
        if self.length < 2:
            raise ConfigError("trajectory length must be >= 2")
        if self.static_threshold <= 0 or self.erratic_threshold <= 0:
            raise ConfigError("pruning thresholds must be positive")
        if self.median_radius < 0:
            raise ConfigError("median_radius must be >= 0")


def sample_seed_points(
    frame_index: int, width: int, height: int, cfg: TrajectoryConfig
) -> list[TrajectoryPoint]:
    """Grid-cell centers for every stride-sized cell fully inside the frame."""
    stride = cfg.sampling_stride
    nx = width // stride
    ny = height // stride
    half = stride / 2.0
    return [
        TrajectoryPoint(i * stride + half, j * stride + half, frame_index)
        for j in range(ny)
        for i in range(nx)
    ]


def median_filtered(flow: FlowField, radius: int) -> tuple[np.ndarray, np.ndarray]:
    """Flow planes median-filtered over a (2r+1)^2 window, edges replicated."""
    if radius == 0:
        return flow.u, flow.v
    size = 2 * radius + 1
    return (
        median_filter(flow.u, size=size, mode="nearest"),
        median_filter(flow.v, size=size, mode="nearest"),
    )


def _sample_bilinear(plane: np.ndarray, x: float, y: float) -> float:
    h, w = plane.shape
    x = min(max(x, 0.0), w - 1.0)
    y = min(max(y, 0.0), h - 1.0)
    x0 = min(int(x), w - 2) if w > 1 else 0
    y0 = min(int(y), h - 2) if h > 1 else 0
    fx = x - x0
    fy = y - y0
    top = plane[y0, x0] * (1 - fx) + plane[y0, min(x0 + 1, w - 1)] * fx
    bot = plane[min(y0 + 1, h - 1), x0] * (1 - fx) + plane[min(y0 + 1, h - 1), min(x0 + 1, w - 1)] * fx
    return top * (1 - fy) + bot * fy


def _track(seed: TrajectoryPoint, med_planes, width: int, height: int, length: int):
    x, y, z = seed.x, seed.y, seed.z
    points = [seed]
    for p in range(length - 1):
        mu, mv = med_planes[z + p]
        dx = _sample_bilinear(mu, x, y)
        dy = _sample_bilinear(mv, x, y)
        x += dx
        y += dy
        if not (0.0 <= x < width and 0.0 <= y < height):
            return None
        points.append(TrajectoryPoint(x, y, z + p + 1))
    return Trajectory(tuple(points))


def track_point(
    seed: TrajectoryPoint, flows: Sequence[FlowField], cfg: TrajectoryConfig
) -> Trajectory | None:
    """Track one seed through the flows; None means the point left the frame."""
    if seed.z < 0 or seed.z + cfg.length - 1 > len(flows):
        raise DataError(
            f"seed at frame {seed.z} needs {cfg.length - 1} flow fields, have {len(flows)}"
        )
    med = {
        seed.z + p: median_filtered(flows[seed.z + p], cfg.median_radius)
        for p in range(cfg.length - 1)
    }
    return _track(seed, med, flows[0].width, flows[0].height, cfg.length)


def prune_trajectories(
    raw: Sequence[Trajectory], cfg: TrajectoryConfig
) -> list[Trajectory]:
    """Drop static tracks (step-magnitude spread below threshold) and erratic ones."""
    kept = []
    for traj in raw:
        mags = np.hypot(*traj.displacements().T)
        if mags.std() < cfg.static_threshold:
            continue
        if mags.max() > cfg.erratic_threshold:
            continue
        kept.append(traj)
    return kept


def extract_trajectories(
    clip: VideoClip, flows: Sequence[FlowField], cfg: TrajectoryConfig = TrajectoryConfig()
) -> list[Trajectory]:
    """Seed, track, and prune trajectories over a whole clip.

    Seeds are issued every ``length`` frames on the sampling grid, skipping
    grid points that an already-accepted trajectory passes within half a
    stride at the seeding frame.
    """
    if len(flows) != clip.length - 1:
        raise DataError(
            f"need {clip.length - 1} flow fields for {clip.length} frames, got {len(flows)}"
        )
    for i, f in enumerate(flows):
        if f.width != clip.width or f.height != clip.height:
            raise DataError(f"flow field {i} size differs from the clip frames")

    med_planes = {i: median_filtered(f, cfg.median_radius) for i, f in enumerate(flows)}
    accepted: list[Trajectory] = []
    min_gap = cfg.sampling_stride / 2.0
    for start in range(0, clip.length - cfg.length + 1, cfg.length):
        occupied = [
            (p.x, p.y)
            for traj in accepted
            for p in traj.points
            if p.z == start
        ]
        occ = np.array(occupied) if occupied else None
        for seed in sample_seed_points(start, clip.width, clip.height, cfg):
            if occ is not None and (
                np.hypot(occ[:, 0] - seed.x, occ[:, 1] - seed.y).min() < min_gap
            ):
                continue
            traj = _track(seed, med_planes, clip.width, clip.height, cfg.length)
            if traj is not None:
                accepted.append(traj)
    return prune_trajectories(accepted, cfg)


def write_trajectories(path: str | Path, trajectories: Sequence[Trajectory]) -> None:
    """Dump one line per trajectory: start frame then x y pairs at 4 decimals."""
    lines = []
    for traj in trajectories:
        coords = " ".join(f"{p.x:.4f} {p.y:.4f}" for p in traj.points)
        lines.append(f"{traj.start_frame} {coords}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))
