"""Discrete measures: weighted point clouds with CSV round-tripping."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

__all__ = ["DiscreteMeasure", "load_measure_csv", "save_measure_csv"]

_WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class DiscreteMeasure:
    """Points (n, d) with strictly positive weights summing to one."""

    points: np.ndarray
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValueError(f"points must be a non-empty n x d matrix, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points contain non-finite coordinates")
        if self.weights is None:
            w = np.full(pts.shape[0], 1.0 / pts.shape[0])
        else:
            w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (pts.shape[0],):
            raise ValueError(f"weights shape {w.shape} does not match {pts.shape[0]} points")
        if np.any(w <= 0):
            raise ValueError("weights must be strictly positive (zero-weight atoms rejected)")
        if abs(w.sum() - 1.0) > _WEIGHT_TOL:
            raise ValueError(f"weights sum to {w.sum()!r}, expected 1 within {_WEIGHT_TOL}")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    @classmethod
    def uniform(cls, points):
        return cls(np.asarray(points, dtype=np.float64))

    def subset(self, indices):
        """Sub-measure on the given atoms, reweighted to a probability measure."""
        idx = np.asarray(indices, dtype=np.intp)
        w = self.weights[idx]
        return DiscreteMeasure(self.points[idx], w / w.sum())


def load_measure_csv(path):
    """Read ``x0,...,x{d-1}[,weight]``; a missing weight column means uniform."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    has_weight = header[-1] == "weight"
    d = len(header) - (1 if has_weight else 0)
    expected = [f"x{i}" for i in range(d)] + (["weight"] if has_weight else [])
    if header != expected:
        raise ValueError(f"{path}: bad header {header}, expected {expected}")
    data = np.array([[float(v) for v in row] for row in rows[1:]], dtype=np.float64)
    if data.shape[0] == 0:
        raise ValueError(f"{path}: no data rows")
    if has_weight:
        return DiscreteMeasure(data[:, :d], data[:, d])
    return DiscreteMeasure.uniform(data)


def save_measure_csv(path, measure, write_weights=True):
    """Write a measure in the same format :func:`load_measure_csv` reads."""
    d = measure.dim
    header = [f"x{i}" for i in range(d)] + (["weight"] if write_weights else [])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(measure.n):
            row = [repr(v) for v in measure.points[i]]
            if write_weights:
                row.append(repr(measure.weights[i]))
            writer.writerow(row)
