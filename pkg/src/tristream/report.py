"""Run reports: tab-delimited records plus rendered figures.

Reports are written as line-delimited ``key<TAB>value`` records.  Timing keys
are prefixed ``timing_`` so deterministic comparisons can strip them.  The
report path also renders matplotlib figures (confusion heatmap, accuracy
bars) next to the delimited output.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

REPORT_VERSION = 1


@dataclass(frozen=True)
class RunReport:
    """Outcome of one repeated-split evaluation."""

    streams: tuple
    repeats: int
    master_seed: int
    labels: tuple
    accuracies: tuple
    confusions: tuple  # one (n_classes, n_classes) int matrix per repeat
    descriptor_dim: int
    excluded: tuple = ()
    timings: dict = field(default_factory=dict)
    config_text: str = ""

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.accuracies))

    def aggregate_confusion(self) -> np.ndarray:
        return np.sum(self.confusions, axis=0)

    def per_class_accuracy(self) -> dict:
        agg = self.aggregate_confusion()
        out = {}
        for i, lab in enumerate(self.labels):
            total = agg[i].sum()
            out[lab] = float(agg[i, i] / total) if total else float("nan")
        return out

    def to_records(self) -> list[tuple[str, str]]:
        rec: list[tuple[str, str]] = [
            ("report_version", str(REPORT_VERSION)),
            ("streams", ",".join(self.streams)),
            ("repeats", str(self.repeats)),
            ("master_seed", str(self.master_seed)),
            ("classes", ",".join(str(lab) for lab in self.labels)),
            ("descriptor_dim", str(self.descriptor_dim)),
            ("mean_accuracy", repr(self.mean_accuracy)),
        ]
        for r, acc in enumerate(self.accuracies):
            rec.append((f"repeat_{r}_accuracy", repr(float(acc))))
        for lab, acc in self.per_class_accuracy().items():
            rec.append((f"class_accuracy_{lab}", repr(acc)))
        for r, conf in enumerate(self.confusions):
            for i, true_lab in enumerate(self.labels):
                for j, pred_lab in enumerate(self.labels):
                    rec.append(
                        (f"confusion_{r}_{true_lab}_{pred_lab}", str(int(conf[i, j])))
                    )
        rec.append(("excluded_videos", ",".join(self.excluded)))
        for name in sorted(self.timings):
            rec.append((f"timing_{name}_seconds", f"{self.timings[name]:.3f}"))
        for line in self.config_text.splitlines():
            if line.strip():
                key, _, value = line.partition("=")
                rec.append((f"config.{key.strip()}", value.strip()))
        return rec


def records_to_text(records: Sequence[tuple[str, str]]) -> str:
    return "".join(f"{k}\t{v}\n" for k, v in records)


def strip_timing(records: Sequence[tuple[str, str]]) -> list[tuple[str, str]]:
    return [(k, v) for k, v in records if not k.startswith("timing_")]


def write_report(path: str | Path, report: RunReport) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(records_to_text(report.to_records()))
    return path


def ablation_records(rows: Sequence[tuple[tuple, RunReport]]) -> list[tuple[str, str]]:
    rec = [("report_version", str(REPORT_VERSION)), ("ablation_rows", str(len(rows)))]
    for i, (subset, report) in enumerate(rows):
        rec.append((f"subset_{i}_streams", ",".join(subset)))
        rec.append((f"subset_{i}_mean_accuracy", repr(report.mean_accuracy)))
        for r, acc in enumerate(report.accuracies):
            rec.append((f"subset_{i}_repeat_{r}_accuracy", repr(float(acc))))
    return rec


def write_ablation_report(path: str | Path, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(records_to_text(ablation_records(rows)))
    return path


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------

def render_report_figures(report: RunReport, out_dir: str | Path, stem: str) -> list[Path]:
    """Render the confusion heatmap and per-repeat accuracy chart as PNGs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []

    agg = report.aggregate_confusion()
    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    im = ax.imshow(agg, cmap="Blues")
    ax.set_xticks(range(len(report.labels)), report.labels, rotation=45, ha="right")
    ax.set_yticks(range(len(report.labels)), report.labels)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(f"confusion over {report.repeats} repeats ({','.join(report.streams)})")
    threshold = agg.max() / 2 if agg.max() else 0.5
    for i in range(agg.shape[0]):
        for j in range(agg.shape[1]):
            ax.text(
                j, i, str(int(agg[i, j])), ha="center", va="center",
                color="white" if agg[i, j] > threshold else "black",
            )
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    conf_path = out_dir / f"{stem}_confusion.png"
    fig.savefig(conf_path, dpi=120)
    plt.close(fig)
    paths.append(conf_path)

    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    xs = np.arange(len(report.accuracies))
    ax.bar(xs, report.accuracies, color="#4878a8")
    ax.axhline(report.mean_accuracy, color="#b2182b", linestyle="--",
               label=f"mean = {report.mean_accuracy:.3f}")
    ax.set_xticks(xs, [f"repeat {r}" for r in xs])
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("accuracy")
    ax.legend(loc="lower right")
    fig.tight_layout()
    acc_path = out_dir / f"{stem}_accuracy.png"
    fig.savefig(acc_path, dpi=120)
    plt.close(fig)
    paths.append(acc_path)
    return paths


def render_ablation_figure(rows, out_dir: str | Path, stem: str) -> Path:
    """Bar chart of mean accuracy per stream subset, with per-repeat dots."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = ["+".join(subset) for subset, _ in rows]
    means = [report.mean_accuracy for _, report in rows]
    fig, ax = plt.subplots(figsize=(6.5, 3.8))
    xs = np.arange(len(rows))
    ax.bar(xs, means, color="#4878a8")
    for i, (_, report) in enumerate(rows):
        ax.plot([i] * len(report.accuracies), report.accuracies, "k.", markersize=4)
    ax.set_xticks(xs, names)
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("mean accuracy")
    ax.set_title("stream ablation")
    fig.tight_layout()
    path = out_dir / f"{stem}_ablation.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
