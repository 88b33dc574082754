"""Anomaly scores, top-ratio precision/recall/F1, AUROC and heatmaps."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .distributions import Grid2D
from .gan_training import RCGANModel
from .nn_core import forward

SCORE_KINDS = ("dxx", "fm")


class SingleClassError(ValueError):
    """AUROC is undefined unless both labels are present."""


@dataclass
class ScoreReport:
    scores: np.ndarray
    labels: np.ndarray
    kind: str = "dxx"

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).ravel()
        self.labels = np.asarray(self.labels).ravel().astype(np.int64)
        if self.scores.shape != self.labels.shape:
            raise ValueError("scores and labels differ in length")
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0 (normal) or 1 (anomalous)")

    def __len__(self) -> int:
        return self.scores.size

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("id", "score", "label"))
            for i, (s, l) in enumerate(zip(self.scores, self.labels)):
                w.writerow((i, repr(float(s)), int(l)))

    @classmethod
    def from_csv(cls, path: str | Path, kind: str = "dxx") -> ScoreReport:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        rows.sort(key=lambda r: int(r["id"]))
        return cls([float(r["score"]) for r in rows], [int(r["label"]) for r in rows], kind)


@dataclass
class MetricSummary:
    precision: float
    recall: float
    f1: float
    auroc: float | None = None
    ratio: float | None = None
    n_flagged: int | None = None

    def as_row(self) -> dict[str, float]:
        return {
            "ratio": self.ratio,
            "n_flagged": self.n_flagged,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "auroc": self.auroc,
        }


def score_dxx(model: RCGANModel, x: np.ndarray) -> np.ndarray:
    """``1 - D_xx(x, G(E(x)))`` per example."""
    x = np.asarray(x, dtype=np.float64)
    d = model.disc_xx(np.hstack((x, model.reconstruct(x)))).ravel()
    return np.clip(1.0 - d, 0.0, 1.0)


def score_fm(model: RCGANModel, x: np.ndarray) -> np.ndarray:
    """Feature-matching score: distance between the last hidden layer of
    ``D_xx`` on ``(x, x)`` and on ``(x, G(E(x)))``."""
    x = np.asarray(x, dtype=np.float64)
    same = forward(model.disc_xx, np.hstack((x, x))).features
    recon = forward(model.disc_xx, np.hstack((x, model.reconstruct(x)))).features
    return np.linalg.norm(same - recon, axis=1)


def score(model: RCGANModel, x: np.ndarray, kind: str = "dxx") -> np.ndarray:
    if kind == "dxx":
        return score_dxx(model, x)
    if kind == "fm":
        return score_fm(model, x)
    raise ValueError(f"score kind must be one of {SCORE_KINDS}")


def n_flagged(n: int, ratio: float) -> int:
    # round first so that e.g. 0.3 * 10 counts as 3, not 4
    return int(math.ceil(round(ratio * n, 9)))


def predict_top_ratio(scores: np.ndarray, ratio: float) -> np.ndarray:
    """Flag the ``ceil(ratio * N)`` highest scores as anomalous.

    Ties go to the example that comes first in input order.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie strictly between 0 and 1")
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("no scores to threshold")
    k = n_flagged(scores.size, ratio)
    order = np.argsort(-scores, kind="stable")
    pred = np.zeros(scores.size, dtype=np.int64)
    pred[order[:k]] = 1
    return pred


def metrics_at_ratio(report: ScoreReport, ratio: float) -> MetricSummary:
    pred = predict_top_ratio(report.scores, ratio)
    y = report.labels
    tp = int(np.sum((pred == 1) & (y == 1)))
    fp = int(np.sum((pred == 1) & (y == 0)))
    fn = int(np.sum((pred == 0) & (y == 1)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return MetricSummary(precision, recall, f1, ratio=ratio, n_flagged=int(pred.sum()))


def auroc(report: ScoreReport) -> float:
    """Probability that a random anomaly outscores a random normal; ties count half."""
    y = report.labels
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("AUROC needs both normal and anomalous examples")
    ranks = rankdata(report.scores)
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def evaluate(report: ScoreReport, ratio: float) -> MetricSummary:
    summary = metrics_at_ratio(report, ratio)
    summary.auroc = auroc(report)
    return summary


def heatmap(model: RCGANModel, grid: Grid2D, which: str = "dxz") -> np.ndarray:
    """Discriminator probability at every cell center, shaped ``grid.shape``.

    ``dxz`` evaluates ``D_xz(x, E(x))``, ``dxx`` evaluates ``D_xx(x, G(E(x)))``.
    """
    if model.x_dim != 2:
        raise ValueError("heatmaps need a model over 2-D data")
    c = grid.centers()
    if which == "dxz":
        d = model.disc_xz(np.hstack((c, model.encoder(c))))
    elif which == "dxx":
        d = model.disc_xx(np.hstack((c, model.reconstruct(c))))
    else:
        raise ValueError("which must be 'dxz' or 'dxx'")
    return d.reshape(grid.shape)
