"""Pose-accuracy metrics: 2D projection error, ADD, ADD-S, and AUC.

All three per-pose metrics compare an estimated pose against ground truth on
the model's surface points and report both the raw value and a boolean verdict
against the conventional threshold (5 px for projection error, 10% of the
model diameter for ADD/ADD-S).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import CameraIntrinsics, Pose, project, transform_points
from .models import ObjectModel

_ADDS_EXACT_LIMIT = 5000  # above this many points, nearest neighbors go through a KD-tree


@dataclass(frozen=True)
class MetricReport:
    metric: str
    value: float
    threshold: float
    correct: bool

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "value": self.value,
            "threshold": self.threshold,
            "correct": self.correct,
        }


def metric_2d_projection(
    est: Pose,
    gt: Pose,
    model: ObjectModel,
    intr: CameraIntrinsics,
    threshold: float = 5.0,
) -> MetricReport:
    """Mean pixel distance between projections of the surface points.

    Raises:
        BehindCamera: either pose puts surface points at non-positive depth.
    """
    pts = model.surface_points
    err = np.linalg.norm(project(intr, est, pts) - project(intr, gt, pts), axis=1)
    value = float(err.mean())
    return MetricReport("2d-projection", value, float(threshold), value < threshold)


def metric_add(
    est: Pose,
    gt: Pose,
    model: ObjectModel,
    diameter: float,
    symmetric: bool = False,
    rel_threshold: float = 0.1,
) -> MetricReport:
    """Mean 3D distance between transformed surface points (ADD).

    With symmetric=True each ground-truth point matches its nearest estimated
    point instead of its index twin (ADD-S), which ignores rotations that map
    the shape onto itself.
    """
    if diameter <= 0.0:
        raise ValueError(f"diameter must be positive, got {diameter}")
    a = transform_points(est, model.surface_points)
    b = transform_points(gt, model.surface_points)
    if not symmetric:
        value = float(np.linalg.norm(a - b, axis=1).mean())
    elif len(a) <= _ADDS_EXACT_LIMIT:
        diff = b[:, None, :] - a[None, :, :]
        value = float(np.sqrt((diff**2).sum(axis=2)).min(axis=1).mean())
    else:
        dists, _ = cKDTree(a).query(b, k=1)
        value = float(np.asarray(dists).mean())
    threshold = rel_threshold * diameter
    name = "add-s" if symmetric else "add"
    return MetricReport(name, value, float(threshold), value < threshold)


def metric_auc(add_values, max_threshold: float = 0.1) -> float:
    """Area under the ADD accuracy-threshold curve, normalized to [0, 1].

    Exact evaluation of the integral of the step-function accuracy curve:
    each value v contributes clip(1 - v/max_threshold, 0, 1).
    """
    vals = np.asarray(add_values, dtype=float)
    if vals.size == 0:
        raise ValueError("AUC of an empty value list is undefined")
    if max_threshold <= 0.0:
        raise ValueError(f"max_threshold must be positive, got {max_threshold}")
    return float(np.clip(1.0 - vals / max_threshold, 0.0, 1.0).mean())
