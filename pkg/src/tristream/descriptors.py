"""Trajectory-pooled descriptors and their dimensionality reduction.

A stream descriptor for one trajectory concatenates, layer by layer, the
trajectory-constrained sum pool of the spatiotemporally-normalized maps and
then of the channel-normalized maps.  Per-stream descriptors are reduced by
PCA and concatenated (local-temporal, spatial-temporal, global-temporal
order) into the final per-trajectory vector.

Descriptor matrices are float32 row-per-trajectory arrays; that is also the
canonical precision of the on-disk cache, so cached and freshly computed
descriptors are bit-identical.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, FormatError
from .featmaps import FeatureMapStack
from .tracking import Trajectory

DESC_MAGIC = b"TSTD"
PCA_MAGIC = b"PCAM"


def trajectory_pool(trajectory: Trajectory, stack: FeatureMapStack) -> np.ndarray:
    """Sum the map values at the trajectory's points, one total per channel.

    Point coordinates are scaled by the map ratio, rounded half up, and
    clamped to the map grid; the trajectory's frame indices must lie inside
    the stack's time extent.  Accumulation order is point order, so the
    result is bit-reproducible.
    """
    h, w, length, n = stack.values.shape
    acc = np.zeros(n, dtype=np.float64)
    for p in trajectory.points:
        if not 0 <= p.z < length:
            raise DataError(f"trajectory frame {p.z} outside map time extent [0, {length})")
        col = min(max(int(np.floor(stack.map_ratio * p.x + 0.5)), 0), w - 1)
        row = min(max(int(np.floor(stack.map_ratio * p.y + 0.5)), 0), h - 1)
        acc += stack.values[row, col, p.z, :]
    return acc


def assemble_stream_tdd(
    trajectory: Trajectory,
    normalized_layers: Sequence[tuple[FeatureMapStack, FeatureMapStack]],
) -> np.ndarray:
    """Concatenate pooled (spatiotemporal-, then channel-normalized) maps per layer.

    ``normalized_layers`` lists one (spatiotemporal, channel) pair per layer;
    all stacks must share one stream and appear in ascending layer order.
    """
    if not normalized_layers:
        raise DataError("need at least one feature-map layer")
    stream = normalized_layers[0][0].stream
    last_layer = None
    parts = []
    for st_norm, ch_norm in normalized_layers:
        if st_norm.stream != stream or ch_norm.stream != stream:
            raise DataError("all layers must come from a single stream")
        if st_norm.layer_id != ch_norm.layer_id or st_norm.map_ratio != ch_norm.map_ratio:
            raise DataError(
                f"normalization pair mismatch: {st_norm.layer_id!r} vs {ch_norm.layer_id!r}"
            )
        if last_layer is not None and st_norm.layer_id <= last_layer:
            raise DataError(
                f"layers out of order: {st_norm.layer_id!r} after {last_layer!r}"
            )
        last_layer = st_norm.layer_id
        parts.append(trajectory_pool(trajectory, st_norm))
        parts.append(trajectory_pool(trajectory, ch_norm))
    return np.concatenate(parts).astype(np.float32)


def assemble_tstdd(tdd_lt: np.ndarray, tdd_st: np.ndarray, tdd_gt: np.ndarray) -> np.ndarray:
    """Concatenate the three per-stream reduced descriptors in lt, st, gt order."""
    return concat_stream_descriptors([tdd_lt, tdd_st, tdd_gt])


def concat_stream_descriptors(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Concatenate stream descriptors, requiring one common per-stream length."""
    arrays = [np.asarray(v) for v in vectors]
    lengths = {a.shape[-1] for a in arrays}
    if len(lengths) != 1:
        raise DataError(f"stream descriptor lengths differ: {sorted(lengths)}")
    return np.concatenate(arrays, axis=-1)


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------

def principal_axes(samples: np.ndarray):
    """Mean, descending eigenvalues, and sign-fixed eigenvectors of the covariance.

    The sign convention makes the largest-magnitude entry of each component
    positive, which pins an otherwise arbitrary choice.
    """
    x = np.asarray(samples, dtype=np.float64)
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (x.shape[0] - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.maximum(eigvals[order], 0.0)
    eigvecs = eigvecs[:, order]
    for j in range(eigvecs.shape[1]):
        pivot = np.argmax(np.abs(eigvecs[:, j]))
        if eigvecs[pivot, j] < 0:
            eigvecs[:, j] = -eigvecs[:, j]
    return mean, eigvals, eigvecs


@dataclass(frozen=True)
class PcaModel:
    """Frozen mean + orthonormal basis with per-component variances."""

    mean: np.ndarray
    components: np.ndarray  # (d, d'), columns are components
    explained_variance: np.ndarray  # (d',), non-increasing
    requested_dim: int

    def __post_init__(self):
        gram = self.components.T @ self.components
        if not np.allclose(gram, np.eye(self.components.shape[1]), atol=1e-8):
            raise DataError("principal components are not orthonormal")
        if (np.diff(self.explained_variance) > 1e-9).any():
            raise DataError("explained variance must be non-increasing")

    @property
    def dim(self) -> int:
        return self.components.shape[1]

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.components

    def inverse_transform(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y, dtype=np.float64) @ self.components.T + self.mean


def fit_pca(samples: np.ndarray, target_dim: int) -> PcaModel:
    """Fit PCA, keeping at most ``target_dim`` components.

    When the samples cannot support that many directions, the model falls
    back to the achievable rank; ``requested_dim`` records what was asked.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DataError("PCA needs a 2-D sample matrix with at least 2 rows")
    if target_dim < 1:
        raise DataError("PCA target dimension must be >= 1")
    mean, eigvals, eigvecs = principal_axes(x)
    tol = eigvals[0] * 1e-10 if eigvals[0] > 0 else 0.0
    rank = max(1, int((eigvals > tol).sum()))
    keep = min(target_dim, x.shape[1], rank)
    return PcaModel(mean, eigvecs[:, :keep], eigvals[:keep], target_dim)


# ---------------------------------------------------------------------------
# Binary artifacts
# ---------------------------------------------------------------------------

def save_descriptors(path: str | Path, matrix: np.ndarray) -> None:
    """Write a (count, dim) float32 descriptor matrix: TSTD + counts + rows."""
    m = np.asarray(matrix, dtype=np.float32)
    if m.ndim != 2:
        raise DataError("descriptor matrix must be 2-D")
    header = DESC_MAGIC + struct.pack("<II", m.shape[0], m.shape[1])
    Path(path).write_bytes(header + np.ascontiguousarray(m, dtype="<f4").tobytes())


def load_descriptors(path: str | Path) -> np.ndarray:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != DESC_MAGIC:
        raise FormatError(f"{path.name}: not a descriptor cache (bad magic)")
    count, dim = struct.unpack("<II", data[4:12])
    if len(data) != 12 + 4 * count * dim:
        raise FormatError(f"{path.name}: descriptor cache size mismatch ({count}x{dim})")
    flat = np.frombuffer(data, dtype="<f4", count=count * dim, offset=12)
    return flat.reshape(count, dim).copy()


def save_pca(path: str | Path, model: PcaModel) -> None:
    d, dprime = model.components.shape
    blob = PCA_MAGIC + struct.pack("<II", d, dprime)
    blob += model.mean.astype("<f8").tobytes()
    blob += np.ascontiguousarray(model.components, dtype="<f8").tobytes()
    blob += model.explained_variance.astype("<f8").tobytes()
    Path(path).write_bytes(blob)


def load_pca(path: str | Path) -> PcaModel:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != PCA_MAGIC:
        raise FormatError(f"{path.name}: not a PCA model file (bad magic)")
    d, dprime = struct.unpack("<II", data[4:12])
    expected = 12 + 8 * (d + d * dprime + dprime)
    if len(data) != expected:
        raise FormatError(f"{path.name}: PCA model size mismatch (d={d}, d'={dprime})")
    pos = 12
    mean = np.frombuffer(data, dtype="<f8", count=d, offset=pos).copy()
    pos += 8 * d
    comps = np.frombuffer(data, dtype="<f8", count=d * dprime, offset=pos).reshape(d, dprime).copy()
    pos += 8 * d * dprime
    var = np.frombuffer(data, dtype="<f8", count=dprime, offset=pos).copy()
    return PcaModel(mean, comps, var, dprime)
