"""
Copyright (c) tsarmvs contributors.

This source code is licensed under the MIT license found in the
LICENSE file in the root directory of this source tree.
"""

import numpy as np
import pytest
from tsarmvs.evaluate import (
    EmptyCloudError,
    EmptyMaskError,
    Metrics,
    cloud_metrics,
    depth_error_stats,
    f_score,
    relative_depth_accuracy,
    scaled_thresholds,
)
from tsarmvs.fusion import PointCloud
from tsarmvs.pmstereo import HypothesisMap, PixelState


def cloud(positions):
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    normals = np.zeros_like(positions)
    normals[:, 2] = 1.0

    return PointCloud(positions, normals, np.zeros_like(positions))


def depth_map(depth, state=None):
    depth = np.asarray(depth, dtype=np.float64)
    if state is None:
        state = np.zeros(depth.shape, dtype=np.uint8)

    return HypothesisMap(
        depth, np.zeros(depth.shape + (3,)), np.zeros(depth.shape), np.asarray(state, np.uint8)
    )


def test_identical_clouds():
    points = np.random.default_rng(0).uniform(size=(100, 3))
    metrics = cloud_metrics(cloud(points), cloud(points), 0.01)

    assert metrics.accuracy == metrics.completeness == metrics.f_score == 1.0
    assert metrics.tolerance == 0.01


def test_cloud_metrics_partial_overlap():
    gt = cloud([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]])
    pred = cloud([[0, 0, 0], [1, 0.05, 0], [10, 0, 0]])
    metrics = cloud_metrics(pred, gt, 0.1)

    assert np.isclose(metrics.accuracy, 2 / 3)
    assert np.isclose(metrics.completeness, 2 / 4)
    assert np.isclose(metrics.f_score, f_score(2 / 3, 2 / 4))


def test_cloud_tolerance_is_strict():
    metrics = cloud_metrics(cloud([[0.0, 0.0, 0.0]]), cloud([[0.5, 0.0, 0.0]]), 0.5)

    assert metrics.accuracy == metrics.completeness == metrics.f_score == 0.0


def test_f_score_identity():
    rng = np.random.default_rng(1)
    for a, c in rng.uniform(size=(100, 2)):
        assert np.isclose(f_score(a, c), 2 * a * c / (a + c))
    assert f_score(0.0, 0.0) == 0.0


def test_empty_cloud():
    with pytest.raises(EmptyCloudError):
        cloud_metrics(PointCloud(), cloud([[0, 0, 0]]), 0.1)


def test_depth_error_stats():
    gt = np.full((2, 3), 2.0)
    pred = depth_map(
        [[2.0, 2.01, 2.5], [2.1, 2.0, 9.0]], state=[[0, 0, 0], [0, 1, 2]]
    )
    valid = np.array([[True, True, True], [True, True, False]])
    stats = depth_error_stats(pred, gt, valid, [0.2, 0.02])

    # the Discarded exact pixel still counts in the denominator
    assert list(stats.frac_below) == [0.02, 0.2]
    assert stats.frac_below[0.02] == 2 / 5
    assert stats.frac_below[0.2] == 3 / 5


def test_depth_error_thresholds_are_strict():
    stats = depth_error_stats(depth_map([[2.5]]), np.array([[2.0]]), np.ones((1, 1)), [0.5])

    assert stats.frac_below[0.5] == 0.0


def test_depth_error_fused_mask():
    pred = depth_map(np.full((2, 2), 2.0))
    fused = np.array([[True, False], [False, False]])
    stats = depth_error_stats(pred, np.full((2, 2), 2.0), np.ones((2, 2)), [0.1], fused)

    assert stats.frac_below[0.1] == 0.25


def test_depth_error_invalid_input():
    pred = depth_map(np.ones((2, 2)))

    with pytest.raises(ValueError):
        depth_error_stats(pred, np.ones((3, 2)), np.ones((3, 2)), [0.1])
    with pytest.raises(EmptyMaskError):
        depth_error_stats(pred, np.ones((2, 2)), np.zeros((2, 2)), [0.1])


def test_relative_depth_accuracy():
    gt = np.array([[1.0, 2.0, 4.0, 8.0]])
    pred = depth_map([[1.005, 2.03, 4.0, 8.0]], state=[[0, 0, PixelState.DISCARDED, 2]])

    assert relative_depth_accuracy(pred, gt, np.ones((1, 4))) == 2 / 4
    assert relative_depth_accuracy(pred, gt, np.ones((1, 4)), rel_tol=0.02) == 3 / 4
    with pytest.raises(EmptyMaskError):
        relative_depth_accuracy(pred, gt, np.zeros((1, 4)))


def test_scaled_thresholds():
    assert np.allclose(scaled_thresholds((1.0, 6.0)), (0.02, 0.1))


def test_metrics_running_stats():
    metrics = Metrics(["acc", "comp"])
    metrics.push({"acc": 0.5, "comp": 1.0})
    metrics.push({"acc": 0.7, "comp": 1.0})

    assert np.isclose(metrics.means()["acc"], 0.6)
    assert metrics.stddevs()["comp"] == 0.0
    assert repr(metrics).startswith("acc = 0.6 +/- ")


def test_cloud_metrics_match_brute_force():
    rng = np.random.default_rng(2)
    for _ in range(20):
        pred = rng.uniform(size=(200, 3))
        gt = rng.uniform(size=(200, 3))
        dists = np.linalg.norm(pred[:, None] - gt[None], axis=-1)
        metrics = cloud_metrics(cloud(pred), cloud(gt), 0.1)

        assert metrics.accuracy == (dists.min(axis=1) < 0.1).mean()
        assert metrics.completeness == (dists.min(axis=0) < 0.1).mean()
