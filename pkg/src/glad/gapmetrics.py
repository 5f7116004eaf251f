"""Domain-gap measurements: symmetric minimum scene-feature distance,
1-D earth mover's distance between length distributions, mean class
accuracy, and the supervised/source-only accuracy gap."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np


class ZeroVectorError(ValueError):
    """A scene feature vector has zero norm and cannot be normalized."""


class EmptyClassError(ValueError):
    """A confusion-matrix row has no samples."""


@dataclass
class SceneFeatureSet:
    vectors: np.ndarray  # (L, D)
    normalized: bool = False

    @classmethod
    def from_vectors(cls, vectors) -> "SceneFeatureSet":
        arr = np.asarray(vectors, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] == 0:
            raise ValueError("need a non-empty (L, D) array")
        norms = np.linalg.norm(arr, axis=1)
        if np.any(norms == 0.0):
            raise ZeroVectorError("zero vector cannot be normalized")
        return cls(arr / norms[:, None], normalized=True)


def scene_distance(u: SceneFeatureSet, v: SceneFeatureSet) -> float:
    """Symmetric average of per-item minimum cosine distances between the
    two sets, d(u, v) = 1 - u.v on unit vectors."""
    us = u if u.normalized else SceneFeatureSet.from_vectors(u.vectors)
    vs = v if v.normalized else SceneFeatureSet.from_vectors(v.vectors)
    d = 1.0 - us.vectors @ vs.vectors.T  # (L_S, L_T)
    return 0.5 * (d.min(axis=1).mean() + d.min(axis=0).mean())


def temporal_distance(lengths_p, lengths_q) -> float:
    """Exact EMD between two empirical 1-D distributions: the integral of
    |CDF_p - CDF_q| over the merged breakpoints."""
    p = np.sort(np.asarray(lengths_p, dtype=np.float64))
    q = np.sort(np.asarray(lengths_q, dtype=np.float64))
    if p.size == 0 or q.size == 0:
        raise ValueError("length lists must be non-empty")
    xs = np.union1d(p, q)
    if xs.size == 1:
        return 0.0
    cdf_p = np.searchsorted(p, xs, side="right") / p.size
    cdf_q = np.searchsorted(q, xs, side="right") / q.size
    return float(np.sum(np.abs(cdf_p[:-1] - cdf_q[:-1]) * np.diff(xs)))


def confusion_matrix(true_labels, pred_labels, n_classes: int) -> np.ndarray:
    """Counts with rows = ground truth, columns = prediction."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    for t, p in zip(true_labels, pred_labels):
        cm[t, p] += 1
    return cm


def mean_class_accuracy(cm: np.ndarray) -> float:
    """Unweighted mean of per-class accuracies, in percent."""
    cm = np.asarray(cm)
    row_sums = cm.sum(axis=1)
    for k, s in enumerate(row_sums):
        if s == 0:
            raise EmptyClassError(f"class {k} has no samples")
    return float(np.mean(np.diag(cm) / row_sums) * 100.0)


def accuracy_gap(mca_supervised_target: float, mca_source_only: float) -> float:
    """Supervised-target MCA minus source-only MCA, in percentage points."""
    for v in (mca_supervised_target, mca_source_only):
        if not 0.0 <= v <= 100.0:
            raise ValueError(f"MCA {v} outside [0, 100]")
    return mca_supervised_target - mca_source_only


@dataclass
class GapReport:
    delta_bg: float
    delta_temp: float
    delta_acc: float | None = None
    mca_source_only: float | None = None
    mca_supervised_target: float | None = None
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_table(self) -> str:
        def fmt(v):
            return "-" if v is None else f"{v:.3f}"
        header = f"{'Delta_bg':>10} {'Delta_temp':>12} {'Delta_Acc':>10}"
        row = f"{fmt(self.delta_bg):>10} {fmt(self.delta_temp):>12} {fmt(self.delta_acc):>10}"
        return header + "\n" + row
