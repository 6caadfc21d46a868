"""
Copyright (c) tsarmvs contributors.

This source code is licensed under the MIT license found in the
LICENSE file in the root directory of this source tree.
"""

from typing import Dict, Iterable, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from runstats import Statistics
from scipy.spatial import cKDTree

from .fusion import PointCloud
from .pmstereo import HypothesisMap, PixelState

# the 2cm and 10cm thresholds as fractions of the scene depth range
DEPTH_RANGE_FRACTIONS = (0.004, 0.02)


class EmptyCloudError(ValueError):
    """Raised when a metric needs a non-empty point cloud."""


class EmptyMaskError(ValueError):
    """Raised when a depth metric has no valid pixel."""


class CloudMetrics(NamedTuple):
    accuracy: float
    completeness: float
    f_score: float
    tolerance: float


class DepthErrorStats(NamedTuple):
    """Fraction of valid pixels with absolute depth error below each threshold."""

    frac_below: Dict[float, float]


def f_score(accuracy: float, completeness: float) -> float:
    if accuracy + completeness <= 0:
        return 0.0
    return 2 * accuracy * completeness / (accuracy + completeness)


def nearest_distances(query: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Euclidean distance from every query point to its nearest reference point."""
    distances, _ = cKDTree(reference).query(query, k=1)

    return distances


def cloud_metrics(pred: PointCloud, gt: PointCloud, tolerance: float) -> CloudMetrics:
    """
    Accuracy, completeness and f-score of a point cloud.

    Args:
        pred: Reconstructed cloud.
        gt: Ground-truth cloud.
        tolerance: Distance below which a point is matched.

    Returns:
        The cloud metrics.
    """
    if len(pred) == 0 or len(gt) == 0:
        raise EmptyCloudError("Both point clouds must be non-empty.")
    accuracy = float(np.mean(nearest_distances(pred.positions, gt.positions) < tolerance))
    completeness = float(
        np.mean(nearest_distances(gt.positions, pred.positions) < tolerance)
    )

    return CloudMetrics(
        accuracy, completeness, f_score(accuracy, completeness), tolerance
    )


def scaled_thresholds(depth_range: Tuple[float, float]) -> Tuple[float, ...]:
    """Depth error thresholds scaled to a scene's depth range."""
    span = depth_range[1] - depth_range[0]

    return tuple(frac * span for frac in DEPTH_RANGE_FRACTIONS)


def depth_error_stats(
    pred_map: HypothesisMap,
    gt_depth: np.ndarray,
    valid_mask: np.ndarray,
    thresholds: Iterable[float],
    fused_mask: Optional[np.ndarray] = None,
) -> DepthErrorStats:
    """
    Fraction of valid pixels with absolute depth error below each threshold.

    Discarded pixels count in the denominator but never in the numerator.
    With ``fused_mask`` only fused pixels may count in the numerator.

    Args:
        pred_map: Estimated hypotheses.
        gt_depth: Ground-truth depth.
        valid_mask: Pixels to evaluate.
        thresholds: Absolute error thresholds (strict).
        fused_mask: Optional mask of pixels used by fused points.

    Returns:
        The error fractions keyed by threshold.
    """
    if pred_map.depth.shape != gt_depth.shape or gt_depth.shape != valid_mask.shape:
        raise ValueError("Prediction, ground truth and mask shapes differ.")
    valid = valid_mask.astype(bool)
    total = int(valid.sum())
    if total == 0:
        raise EmptyMaskError("Valid mask is empty.")

    counted = valid & (pred_map.state != PixelState.DISCARDED)
    if fused_mask is not None:
        counted &= fused_mask.astype(bool)
    errors = np.abs(pred_map.depth - gt_depth)[counted]

    return DepthErrorStats(
        {float(t): float(np.count_nonzero(errors < t)) / total for t in sorted(thresholds)}
    )


def relative_depth_accuracy(
    pred_map: HypothesisMap,
    gt_depth: np.ndarray,
    mask: np.ndarray,
    rel_tol: float = 0.01,
) -> float:
    """Fraction of mask pixels whose non-Discarded depth is within rel_tol of the truth."""
    valid = mask.astype(bool)
    total = int(valid.sum())
    if total == 0:
        raise EmptyMaskError("Mask is empty.")
    counted = valid & (pred_map.state != PixelState.DISCARDED)
    rel = np.abs(pred_map.depth - gt_depth)[counted] / gt_depth[counted]

    return float(np.count_nonzero(rel < rel_tol)) / total


class Metrics:
    """
    Maintains running statistics for a given collection of metrics.
    """

    def __init__(self, metric_names: Sequence[str]):
        """
        Args:
            metric_names: Names of the tracked metrics.
        """
        self.metrics = {metric: Statistics() for metric in metric_names}

    def push(self, values: Dict[str, float]):
        for metric, value in values.items():
            self.metrics[metric].push(value)

    def means(self):
        return {metric: stat.mean() for metric, stat in self.metrics.items()}

    def stddevs(self):
        return {
            metric: stat.stddev() if len(stat) > 1 else 0.0
            for metric, stat in self.metrics.items()
        }

    def __repr__(self):
        means = self.means()
        stddevs = self.stddevs()
        metric_names = sorted(list(means))
        return " ".join(
            f"{name} = {means[name]:.4g} +/- {2 * stddevs[name]:.4g}"
            for name in metric_names
        )
