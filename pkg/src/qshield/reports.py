"""Report rendering: delimited outputs plus matplotlib figures saved to files."""

from __future__ import annotations

import json

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import MetricsReport
from .training import TrainHistory


def save_metrics_json(report: MetricsReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def plot_history(history: TrainHistory, path) -> None:
    """Loss-per-step curve: total objective with the CE component underneath."""
    fig, ax = plt.subplots(figsize=(8, 4.5))
    steps = np.arange(history.steps)
    ax.plot(steps, history.total, label="cross entropy + L2", color="tab:blue")
    ax.plot(steps, history.ce_loss, label="cross entropy", color="tab:orange", alpha=0.6)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title("training loss")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_metrics(report: MetricsReport, path) -> None:
    """Per-class recall/precision bars with the headline numbers in the title."""
    x = np.arange(len(report.labels))
    width = 0.38
    fig, ax = plt.subplots(figsize=(8, 4.5))
    recall = [report.recall[label] * 100 for label in report.labels]
    precision = [report.precision[label] * 100 for label in report.labels]
    ax.bar(x - width / 2, recall, width, label="recall", color="tab:blue")
    ax.bar(x + width / 2, precision, width, label="precision", color="tab:orange")
    ax.set_xticks(x, report.labels)
    ax.set_ylim(0, 105)
    ax.set_ylabel("%")
    ax.set_title(
        f"accuracy {report.accuracy * 100:.2f}%   FPR {report.fpr * 100:.2f}%   n={report.total}"
    )
    ax.legend(loc="lower right")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
