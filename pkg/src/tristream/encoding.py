"""Codebook construction, locality-constrained coding, and video-level encoding.

Per video, a fixed number of descriptors is sampled (seeded) to build a
k-means vocabulary; each descriptor is then coded over its nearest centers
with a sum-to-one ridge-regularized least-squares solve, codes are pooled
into one vector per video, and the pooled vectors are PCA-whitened at a
configured retained-variance level.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError, FormatError
from .descriptors import principal_axes

CODEBOOK_MAGIC = b"CDBK"
WHITEN_MAGIC = b"WHTN"
WHITEN_EIG_FLOOR = 1e-10


@dataclass(frozen=True)
class LlcConfig:
    k_bases: int = 5
    ridge_lambda: float = 1e-4
    samples_per_video: int = 200

    def __post_init__(self):
        if self.k_bases < 1:
            raise ConfigError("k_bases must be >= 1")
        if self.ridge_lambda <= 0:
            raise ConfigError("ridge_lambda must be positive")
        if self.samples_per_video < 1:
            raise ConfigError("samples_per_video must be >= 1")


@dataclass(frozen=True)
class Codebook:
    """K_c x Dim matrix of distinct cluster centers."""

    centers: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] < 1:
            raise DataError("codebook centers must be a non-empty 2-D matrix")
        if not np.isfinite(c).all():
            raise DataError("codebook contains non-finite values")
        if np.unique(c, axis=0).shape[0] != c.shape[0]:
            raise DataError("codebook contains duplicate centers")
        object.__setattr__(self, "centers", c)

    @property
    def size(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]


def _squared_distances(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """(n, k) squared Euclidean distances, clipped at zero."""
    d2 = (
        (x * x).sum(axis=1)[:, None]
        - 2.0 * x @ centers.T
        + (centers * centers).sum(axis=1)[None, :]
    )
    return np.maximum(d2, 0.0)


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded k-means++ initialization (squared-distance weighted draws)."""
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    first = int(rng.integers(n))
    centers[0] = x[first]
    d2 = _squared_distances(x, centers[:1]).ravel()
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j] = x[int(rng.integers(n))]
        else:
            r = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(d2), r))
            centers[j] = x[min(idx, n - 1)]
        d2 = np.minimum(d2, _squared_distances(x, centers[j : j + 1]).ravel())
    return centers


def kmeans(
    x: np.ndarray,
    k: int,
    seed: int,
    max_iter: int = 100,
    tol: float = 1e-6,
) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Lloyd's iterations with k-means++ init; returns centers, labels, objectives.

    The within-cluster objective is recorded at every assignment step and
    checked to be non-increasing; empty clusters keep their previous center.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n < k:
        raise DataError(f"k-means needs at least {k} samples, got {n}")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(x, k, rng)
    objectives: list[float] = []
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        d2 = _squared_distances(x, centers)
        labels = d2.argmin(axis=1)
        obj = float(d2[np.arange(n), labels].sum())
        if objectives and obj > objectives[-1] + 1e-9 * max(1.0, objectives[-1]):
            raise DataError("k-means objective increased; numerical trouble")
        objectives.append(obj)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, x)
        counts = np.bincount(labels, minlength=k).astype(np.float64)
        nonempty = counts > 0
        new_centers = centers.copy()
        new_centers[nonempty] = sums[nonempty] / counts[nonempty, None]
        shift = np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max()
        centers = new_centers
        if shift < tol:
            break
    return centers, labels, objectives


def build_codebook(
    per_video_descriptors: Sequence[np.ndarray],
    size: int,
    cfg: LlcConfig,
    seed: int,
    max_iter: int = 100,
    tol: float = 1e-6,
) -> Codebook:
    """Sample descriptors per video (seeded) and cluster them into a codebook."""
    rng = np.random.default_rng(seed)
    picked = []
    for mat in per_video_descriptors:
        mat = np.asarray(mat)
        if mat.shape[0] == 0:
            continue
        take = min(cfg.samples_per_video, mat.shape[0])
        idx = rng.choice(mat.shape[0], size=take, replace=False)
        picked.append(mat[np.sort(idx)])
    if not picked:
        raise DataError("no descriptors available for codebook construction")
    pool = np.vstack(picked).astype(np.float64)
    if pool.shape[0] < size:
        raise DataError(
            f"codebook of {size} centers needs at least {size} sampled descriptors, got {pool.shape[0]}"
        )
    centers, _, _ = kmeans(pool, size, seed=seed, max_iter=max_iter, tol=tol)
    return Codebook(centers)


# ---------------------------------------------------------------------------
# LLC coding and pooling
# ---------------------------------------------------------------------------

def llc_encode_batch(x: np.ndarray, codebook: Codebook, cfg: LlcConfig) -> np.ndarray:
    """Code each row of ``x`` over its k nearest centers; rows sum to one.

    The local solve minimizes the reconstruction error plus a ridge penalty
    under the sum-to-one constraint; ties in the nearest-center search break
    toward lower center indices.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if not np.isfinite(x).all():
        raise DataError("descriptors to encode contain non-finite values")
    k = cfg.k_bases
    if k > codebook.size:
        raise ConfigError(f"k_bases={k} exceeds codebook size {codebook.size}")
    d2 = _squared_distances(x, codebook.centers)
    # stable sort: equal distances resolve to the lower center index
    nearest = np.argsort(d2, axis=1, kind="stable")[:, :k]
    codes = np.zeros((x.shape[0], codebook.size))
    eye = np.eye(k)
    ones = np.ones(k)
    for i in range(x.shape[0]):
        sel = nearest[i]
        z = codebook.centers[sel] - x[i]
        gram = z @ z.T + cfg.ridge_lambda * eye
        try:
            w = np.linalg.solve(gram, ones)
        except np.linalg.LinAlgError as exc:
            raise DataError(f"singular local coding system for descriptor {i}") from exc
        total = w.sum()
        if not np.isfinite(total) or total == 0.0:
            raise DataError(f"degenerate local coding solution for descriptor {i}")
        codes[i, sel] = w / total
    return codes


def llc_encode(x: np.ndarray, codebook: Codebook, cfg: LlcConfig) -> np.ndarray:
    """Code a single descriptor; see ``llc_encode_batch``."""
    return llc_encode_batch(x[None, :], codebook, cfg)[0]


def pool_codes(codes: np.ndarray, mode: str = "max") -> np.ndarray:
    """Aggregate per-trajectory codes into one L2-normalized video vector.

    ``max`` takes the coordinatewise maximum of absolute code values;
    ``sum`` adds the codes coordinatewise.
    """
    codes = np.atleast_2d(np.asarray(codes, dtype=np.float64))
    if codes.shape[0] == 0:
        raise DataError("cannot pool an empty code list")
    if mode == "max":
        pooled = np.abs(codes).max(axis=0)
    elif mode == "sum":
        pooled = codes.sum(axis=0)
    else:
        raise ConfigError(f"unknown pooling mode {mode!r} (max or sum)")
    norm = np.linalg.norm(pooled)
    if norm == 0:
        raise DataError("pooled code vector is zero")
    return pooled / norm


# ---------------------------------------------------------------------------
# Whitening
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WhitenModel:
    """PCA basis with variance scaling, truncated at a retained-variance level."""

    mean: np.ndarray
    components: np.ndarray  # (d, d')
    eigenvalues: np.ndarray  # (d',)

    @property
    def dim(self) -> int:
        return self.components.shape[1]

    def transform(self, x: np.ndarray) -> np.ndarray:
        proj = (np.asarray(x, dtype=np.float64) - self.mean) @ self.components
        return proj / np.sqrt(self.eigenvalues + WHITEN_EIG_FLOOR)

    def inverse_transform(self, y: np.ndarray) -> np.ndarray:
        scaled = np.asarray(y, dtype=np.float64) * np.sqrt(self.eigenvalues + WHITEN_EIG_FLOOR)
        return scaled @ self.components.T + self.mean


def pca_whiten(
    encodings: np.ndarray, retain: float = 0.99
) -> tuple[WhitenModel, np.ndarray]:
    """Fit whitening on training encodings and return (model, whitened encodings).

    Keeps the smallest number of leading components whose cumulative
    explained variance exceeds ``retain``.
    """
    x = np.asarray(encodings, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DataError("whitening needs at least 2 training encodings")
    if not 0.0 < retain < 1.0:
        raise ConfigError("retained variance must be in (0, 1)")
    mean, eigvals, eigvecs = principal_axes(x)
    total = eigvals.sum()
    if total <= 0:
        raise DataError("degenerate training encodings: no variance to whiten")
    cumulative = np.cumsum(eigvals) / total
    dprime = int(np.searchsorted(cumulative, retain, side="right")) + 1
    dprime = min(dprime, len(eigvals))
    model = WhitenModel(mean, eigvecs[:, :dprime], eigvals[:dprime])
    return model, model.transform(x)


# ---------------------------------------------------------------------------
# Binary artifacts
# ---------------------------------------------------------------------------

def save_codebook(path: str | Path, codebook: Codebook) -> None:
    header = CODEBOOK_MAGIC + struct.pack("<II", codebook.size, codebook.dim)
    Path(path).write_bytes(header + np.ascontiguousarray(codebook.centers, dtype="<f4").tobytes())


def load_codebook(path: str | Path) -> Codebook:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != CODEBOOK_MAGIC:
        raise FormatError(f"{path.name}: not a codebook file (bad magic)")
    size, dim = struct.unpack("<II", data[4:12])
    if len(data) != 12 + 4 * size * dim:
        raise FormatError(f"{path.name}: codebook size mismatch ({size}x{dim})")
    centers = np.frombuffer(data, dtype="<f4", count=size * dim, offset=12)
    return Codebook(centers.reshape(size, dim).astype(np.float64))


def save_whitening(path: str | Path, model: WhitenModel) -> None:
    d, dprime = model.components.shape
    blob = WHITEN_MAGIC + struct.pack("<II", d, dprime)
    blob += model.mean.astype("<f8").tobytes()
    blob += np.ascontiguousarray(model.components, dtype="<f8").tobytes()
    blob += model.eigenvalues.astype("<f8").tobytes()
    Path(path).write_bytes(blob)


def load_whitening(path: str | Path) -> WhitenModel:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != WHITEN_MAGIC:
        raise FormatError(f"{path.name}: not a whitening model file (bad magic)")
    d, dprime = struct.unpack("<II", data[4:12])
    expected = 12 + 8 * (d + d * dprime + dprime)
    if len(data) != expected:
        raise FormatError(f"{path.name}: whitening model size mismatch (d={d}, d'={dprime})")
    pos = 12
    mean = np.frombuffer(data, dtype="<f8", count=d, offset=pos).copy()
    pos += 8 * d
    comps = np.frombuffer(data, dtype="<f8", count=d * dprime, offset=pos).reshape(d, dprime).copy()
    pos += 8 * d * dprime
    eig = np.frombuffer(data, dtype="<f8", count=dprime, offset=pos).copy()
    return WhitenModel(mean, comps, eig)
