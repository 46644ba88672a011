"""One-vs-rest linear SVM trained by deterministic dual coordinate descent.

The bias is carried as an extra always-one feature and regularized with the
weights, so a perfectly symmetric two-class problem yields a bias of zero.
Loss is the standard hinge with L2 regularization.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, FormatError

SVM_MAGIC = b"LSVM"


@dataclass(frozen=True)
class SvmModel:
    labels: tuple
    weights: np.ndarray  # (n_classes, d)
    biases: np.ndarray  # (n_classes,)
    c_value: float = float("nan")
    dual_gaps: np.ndarray | None = None

    def __post_init__(self):
        if self.weights.ndim != 2 or self.weights.shape[0] != len(self.labels):
            raise DataError("one weight vector per class is required")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.biases).all()):
            raise DataError("model weights contain non-finite values")

    @property
    def dim(self) -> int:
        return self.weights.shape[1]


def _solve_binary(x_aug: np.ndarray, y: np.ndarray, c: float, tol: float, max_epochs: int):
    """Dual coordinate descent for min 1/2 ||w||^2 + C sum hinge(y, w.x).

    Fixed index order every epoch; stops when the largest projected dual
    gradient falls below ``tol``.  Returns (w, dual_objective, gap).
    """
    n, d = x_aug.shape
    q_diag = (x_aug * x_aug).sum(axis=1)
    alpha = np.zeros(n)
    w = np.zeros(d)
    dual_prev = 0.0
    for _ in range(max_epochs):
        max_violation = 0.0
        for i in range(n):
            g = y[i] * (w @ x_aug[i]) - 1.0
            if alpha[i] <= 0.0:
                pg = min(g, 0.0)
            elif alpha[i] >= c:
                pg = max(g, 0.0)
            else:
                pg = g
            if pg != 0.0:
                max_violation = max(max_violation, abs(pg))
                new_alpha = min(max(alpha[i] - g / q_diag[i], 0.0), c)
                w = w + (new_alpha - alpha[i]) * y[i] * x_aug[i]
                alpha[i] = new_alpha
        dual = alpha.sum() - 0.5 * (w @ w)
        if dual < dual_prev - 1e-9 * max(1.0, abs(dual_prev)):
            raise DataError("SVM dual objective decreased; numerical trouble")
        dual_prev = dual
        if max_violation < tol:
            break
    margins = 1.0 - y * (x_aug @ w)
    primal = 0.5 * (w @ w) + c * np.maximum(margins, 0.0).sum()
    gap = (primal - dual_prev) / max(1.0, abs(primal))
    return w, dual_prev, gap


def train_svm(
    features: np.ndarray,
    labels: Sequence,
    c: float = 30.0,
    tol: float = 1e-4,
    max_epochs: int = 1000,
) -> SvmModel:
    """Train one-vs-rest hinge-loss linear classifiers; deterministic output."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != len(labels):
        raise DataError("features must be (n, d) with one label per row")
    if x.shape[0] == 0:
        raise DataError("cannot train on an empty feature set")
    if not np.isfinite(x).all():
        raise DataError("training features contain non-finite values")
    if c <= 0:
        raise DataError("C must be positive")
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise DataError(f"need at least 2 classes, got {len(classes)}")
    labels = list(labels)
    x_aug = np.hstack([x, np.ones((x.shape[0], 1))])
    weights = np.zeros((len(classes), x.shape[1]))
    biases = np.zeros(len(classes))
    gaps = np.zeros(len(classes))
    for ci, cls in enumerate(classes):
        y = np.where(np.array([lab == cls for lab in labels]), 1.0, -1.0)
        w_aug, _, gap = _solve_binary(x_aug, y, c, tol, max_epochs)
        weights[ci] = w_aug[:-1]
        biases[ci] = w_aug[-1]
        gaps[ci] = gap
    return SvmModel(tuple(classes), weights, biases, c, gaps)


def decision_scores(model: SvmModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.dim:
        raise DataError(f"feature length {x.shape[-1]} does not match model dim {model.dim}")
    return x @ model.weights.T + model.biases


def predict(model: SvmModel, x: np.ndarray):
    """Predicted label and per-class scores; ties go to the lowest class index."""
    scores = decision_scores(model, x)
    return model.labels[int(np.argmax(scores))], scores


@dataclass(frozen=True)
class EvalResult:
    accuracy: float
    confusion: np.ndarray  # rows: true class, columns: predicted
    labels: tuple

    def per_class_accuracy(self) -> dict:
        out = {}
        for i, lab in enumerate(self.labels):
            total = self.confusion[i].sum()
            out[lab] = float(self.confusion[i, i] / total) if total else float("nan")
        return out


def evaluate(model: SvmModel, features: np.ndarray, labels: Sequence) -> EvalResult:
    """Accuracy and confusion matrix of the model on a labeled test set."""
    x = np.asarray(features, dtype=np.float64)
    if x.shape[0] == 0:
        raise DataError("cannot evaluate on an empty test set")
    if x.shape[0] != len(labels):
        raise DataError("one label per test row is required")
    index = {lab: i for i, lab in enumerate(model.labels)}
    for lab in labels:
        if lab not in index:
            raise DataError(f"test label {lab!r} unknown to the model")
    scores = decision_scores(model, x)
    predicted = scores.argmax(axis=1)
    confusion = np.zeros((len(model.labels), len(model.labels)), dtype=np.int64)
    correct = 0
    for row, lab in enumerate(labels):
        t = index[lab]
        p = int(predicted[row])
        confusion[t, p] += 1
        correct += int(t == p)
    return EvalResult(correct / len(labels), confusion, model.labels)


# ---------------------------------------------------------------------------
# Model file
# ---------------------------------------------------------------------------

def save_svm(path: str | Path, model: SvmModel) -> None:
    """Write LSVM + class count + d + per-class (label, w, b), reals as f64 LE."""
    blob = SVM_MAGIC + struct.pack("<II", len(model.labels), model.dim)
    for i, label in enumerate(model.labels):
        encoded = str(label).encode("utf-8")
        blob += struct.pack("<I", len(encoded)) + encoded
        blob += model.weights[i].astype("<f8").tobytes()
        blob += struct.pack("<d", model.biases[i])
    Path(path).write_bytes(blob)


def load_svm(path: str | Path) -> SvmModel:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != SVM_MAGIC:
        raise FormatError(f"{path.name}: not an SVM model file (bad magic)")
    count, dim = struct.unpack("<II", data[4:12])
    pos = 12
    labels = []
    weights = np.zeros((count, dim))
    biases = np.zeros(count)
    for i in range(count):
        if len(data) < pos + 4:
            raise FormatError(f"{path.name}: truncated SVM model")
        (label_len,) = struct.unpack_from("<I", data, pos)
        pos += 4
        need = label_len + 8 * dim + 8
        if len(data) < pos + need:
            raise FormatError(f"{path.name}: truncated SVM model")
        labels.append(data[pos : pos + label_len].decode("utf-8"))
        pos += label_len
        weights[i] = np.frombuffer(data, dtype="<f8", count=dim, offset=pos)
        pos += 8 * dim
        (biases[i],) = struct.unpack_from("<d", data, pos)
        pos += 8
    if pos != len(data):
        raise FormatError(f"{path.name}: trailing bytes in SVM model")
    return SvmModel(tuple(labels), weights, biases)
