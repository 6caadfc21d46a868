"""
Copyright (c) tsarmvs contributors.

This source code is licensed under the MIT license found in the
LICENSE file in the root directory of this source tree.
"""

import numpy as np
import pytest
from tsarmvs.geom import CameraIntrinsics, pixel_rays
from tsarmvs.icrefine import (
    PlaneModel,
    RefineConfig,
    RegionLabelMap,
    plane_inliers,
    plane_ray_depths,
    ransac_plane,
    refine,
    superpixels,
    weighted_median,
    weighted_median_filter,
)
from tsarmvs.pmstereo import HypothesisMap, PixelState

from .conftest import make_view


def unit(vec):
    vec = np.asarray(vec, dtype=np.float64)
    return vec / np.linalg.norm(vec)


def angle(a, b):
    return np.arccos(np.clip(abs(a @ b), -1.0, 1.0))


def plane_points(rng, model, num):
    rays = np.column_stack([rng.uniform(-0.4, 0.4, size=(num, 2)), np.ones(num)])
    return rays * plane_ray_depths(model, rays)[:, None]


def planar_map(intr, model, image=None):
    depth = plane_ray_depths(model, pixel_rays(intr))
    normal = np.broadcast_to(-model.normal, depth.shape + (3,)).copy()
    state = np.zeros(depth.shape, dtype=np.uint8)
    hmap = HypothesisMap(depth, normal, np.zeros(depth.shape), state)

    return hmap, make_view(intr, image=image)


def test_weighted_median_example():
    assert weighted_median(np.array([1.0, 2.0, 9.0]), np.array([1.0, 1.0, 0.1])) == 2.0
    assert weighted_median(np.array([5.0, 1.0]), np.array([3.0, 1.0])) == 5.0


def test_weighted_median_matches_sort_oracle():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        num = rng.integers(1, 30)
        values = rng.uniform(0, 10, size=num)
        weights = rng.uniform(0.01, 1, size=num)

        pairs = sorted(zip(values, weights), key=lambda p: p[0])
        total = np.cumsum([w for _, w in pairs])
        expected = next(v for (v, _), c in zip(pairs, total) if c >= 0.5 * total[-1])

        assert weighted_median(values, weights) == expected


def test_superpixels_constant_image():
    intr = CameraIntrinsics(50.0, 50.0, 31.5, 31.5, 64, 64)
    view = make_view(intr, image=np.full((64, 64), 0.5))
    regions = superpixels(view, RefineConfig(superpixel_size=64))
    sizes = np.bincount(regions.labels.ravel())

    assert regions.labels.shape == (64, 64)
    assert np.all(sizes >= 0.7 * 64) and np.all(sizes <= 1.3 * 64)


@pytest.mark.parametrize("low, high", [(0.2, 0.8), (0.0, 1.0), (0.25, 0.75)])
def test_superpixels_respect_step_edge(low, high):
    intr = CameraIntrinsics(50.0, 50.0, 31.5, 31.5, 64, 64)
    image = np.full((64, 64), low)
    image[:, 30:] = high
    view = make_view(intr, image=image)
    regions = superpixels(view, RefineConfig(superpixel_size=64))
    cols = np.broadcast_to(np.arange(64), (64, 64))

    for label in range(regions.num_regions):
        inside = cols[regions.labels == label]
        left, right = inside[inside < 30], inside[inside >= 30]
        if left.size and right.size:
            assert left.min() >= 29 or right.max() <= 30


def test_superpixels_deterministic():
    rng = np.random.default_rng(1)
    intr = CameraIntrinsics(50.0, 50.0, 19.5, 14.5, 40, 30)
    view = make_view(intr, image=rng.uniform(size=(30, 40)))
    cfg = RefineConfig(superpixel_size=50)

    assert np.array_equal(superpixels(view, cfg).labels, superpixels(view, cfg).labels)


def test_region_label_map_invariants():
    regions = RegionLabelMap.from_labels(np.array([[4, 4, 9], [2, 9, 9]]))

    assert regions.num_regions == 3
    assert sorted(np.concatenate(regions.regions()).tolist()) == list(range(6))
    with pytest.raises(ValueError):
        RegionLabelMap(np.array([[0, 2]]), 3)


@pytest.mark.parametrize("seed", range(50))
def test_ransac_noiseless_plane(seed):
    rng = np.random.default_rng(seed)
    model = PlaneModel(unit([rng.normal(0, 0.2), rng.normal(0, 0.2), 1.0]), 3.0)
    points = plane_points(rng, model, 60)
    fit = ransac_plane(points, rng.uniform(size=60), RefineConfig(rng_seed=seed))

    assert fit is not None
    assert angle(fit.normal, model.normal) < 1e-6
    assert np.isclose(fit.dist, model.dist, rtol=1e-9)
    assert plane_inliers(fit, points, 1e-9).all()


def test_ransac_too_few_points():
    points = np.array([[0.0, 0.0, 2.0], [0.1, 0.0, 2.0]])

    assert ransac_plane(points, np.ones(2), RefineConfig()) is None


def test_ransac_rejects_weak_support():
    rng = np.random.default_rng(2)
    points = np.column_stack([rng.uniform(-1, 1, size=(40, 2)), rng.uniform(1, 8, size=40)])

    assert ransac_plane(points, np.ones(40), RefineConfig(ransac_min_inlier_frac=0.9)) is None


@pytest.mark.parametrize("chunk_size", [1, 500, 7 * 250])
def test_ransac_chunked_scoring(chunk_size):
    rng = np.random.default_rng(11)
    model = PlaneModel(unit([0.1, 0.3, 1.0]), 2.5)
    points = plane_points(rng, model, 250)
    points *= rng.normal(1.0, 0.004, size=(250, 1))
    points[:60] *= 1.4
    weights = rng.uniform(size=250)
    cfg = RefineConfig(rng_seed=3, ransac_iters=64)

    expected = ransac_plane(points, weights, cfg)
    fit = ransac_plane(points, weights, cfg, chunk_size=chunk_size)

    assert expected is not None and fit is not None
    assert np.allclose(fit.normal, expected.normal, atol=1e-12)
    assert np.isclose(fit.dist, expected.dist, rtol=1e-12)


def test_ransac_with_outliers():
    recovered = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        model = PlaneModel(unit([0.2, -0.1, 1.0]), 3.0)
        points = plane_points(rng, model, 100)
        outlier = np.zeros(100, dtype=bool)
        outlier[rng.permutation(100)[:30]] = True
        points[outlier] *= rng.choice([0.7, 1.3], size=30)[:, None]
        fit = ransac_plane(points, np.ones(100), RefineConfig(rng_seed=seed))

        if fit is None or angle(fit.normal, model.normal) >= 1e-3:
            continue
        assert np.array_equal(plane_inliers(fit, points, 0.01), ~outlier)
        recovered += 1

    assert recovered >= 99


def test_weighted_median_filter_constant_sources():
    intr = CameraIntrinsics(20.0, 20.0, 4.5, 4.5, 10, 10)
    hmap, view = planar_map(intr, PlaneModel(np.array([0.0, 0.0, 1.0]), 2.5))
    target = np.zeros((10, 10), dtype=bool)
    target[3:6, 4:7] = True
    hmap.depth[target] = 7.0
    out = weighted_median_filter(
        hmap, view, target, {PixelState.CONFIDENT}, RefineConfig(wmf_radius=2)
    )

    assert np.all(out.depth[target] == 2.5)
    assert np.all(out.state[target] == PixelState.FILLED)
    assert np.array_equal(out.depth[~target], hmap.depth[~target])


def test_weighted_median_filter_containment():
    rng = np.random.default_rng(3)
    intr = CameraIntrinsics(20.0, 20.0, 7.5, 7.5, 16, 16)
    hmap, view = planar_map(
        intr, PlaneModel(np.array([0.0, 0.0, 1.0]), 2.0), rng.uniform(size=(16, 16))
    )
    hmap.depth[:] = rng.uniform(1, 5, size=(16, 16))
    target = rng.uniform(size=(16, 16)) < 0.3
    r = 2
    out = weighted_median_filter(
        hmap, view, target, {PixelState.CONFIDENT}, RefineConfig(wmf_radius=r)
    )

    for y, x in zip(*np.nonzero(target)):
        window = np.s_[max(y - r, 0) : y + r + 1, max(x - r, 0) : x + r + 1]
        sources = hmap.depth[window][~target[window]]
        if sources.size == 0:
            assert out.state[y, x] == PixelState.CONFIDENT
            assert out.depth[y, x] == hmap.depth[y, x]
            continue
        assert sources.min() <= out.depth[y, x] <= sources.max()
        assert out.depth[y, x] in sources
    assert np.allclose(np.linalg.norm(out.normal, axis=-1), 1.0)


def test_refine_without_discarded_pixels():
    intr = CameraIntrinsics(30.0, 30.0, 9.5, 9.5, 20, 20)
    hmap, view = planar_map(intr, PlaneModel(unit([0.1, 0.0, 1.0]), 2.0))
    out = refine(hmap, view, RefineConfig())

    assert np.array_equal(out.depth, hmap.depth)
    assert np.array_equal(out.normal, hmap.normal)
    assert np.array_equal(out.state, hmap.state)


def test_refine_restores_near_plane_pixels():
    rng = np.random.default_rng(4)
    intr = CameraIntrinsics(30.0, 30.0, 7.5, 7.5, 16, 16)
    hmap, view = planar_map(
        intr, PlaneModel(unit([0.1, 0.2, 1.0]), 2.0), np.full((16, 16), 0.5)
    )
    discarded = rng.uniform(size=(16, 16)) < 0.5
    hmap.state[discarded] = PixelState.DISCARDED
    out = refine(hmap, view, RefineConfig(superpixel_size=256))

    assert np.all(out.state == PixelState.CONFIDENT)
    assert np.array_equal(out.depth, hmap.depth)


def corrupted_plane(seed):
    rng = np.random.default_rng(seed)
    intr = CameraIntrinsics(100.0, 100.0, 31.5, 23.5, 64, 48)
    ys, xs = np.mgrid[0:48, 0:64]
    image = 0.5 + 0.2 * np.sin(xs / 9.0) * np.cos(ys / 7.0)
    hmap, view = planar_map(intr, PlaneModel(unit([0.05, -0.08, 1.0]), 3.0), image)
    truth = hmap.depth.copy()
    corrupted = rng.uniform(size=truth.shape) < 0.3
    hmap.depth[corrupted] *= rng.uniform(1.2, 2.0, size=corrupted.sum())
    hmap.normal[corrupted] = unit([0.5, 0.5, -1.0])
    hmap.state[corrupted] = PixelState.DISCARDED

    return hmap, view, truth, corrupted


def test_refine_recovers_corrupted_plane():
    hmap, view, truth, corrupted = corrupted_plane(5)
    out = refine(hmap, view, RefineConfig(superpixel_size=100))
    rel = np.abs(out.depth - truth) / truth

    assert (rel[corrupted] <= 0.01).mean() >= 0.95


def test_refine_invariants():
    hmap, view, _, corrupted = corrupted_plane(6)
    cfg = RefineConfig(superpixel_size=100, rng_seed=3)
    out = refine(hmap, view, cfg)
    confident = hmap.state == PixelState.CONFIDENT

    assert np.array_equal(out.depth[confident], hmap.depth[confident])
    assert np.array_equal(out.normal[confident], hmap.normal[confident])
    assert np.all(out.state[confident] == PixelState.CONFIDENT)
    assert set(np.unique(out.state[corrupted])) <= {
        PixelState.CONFIDENT,
        PixelState.DISCARDED,
        PixelState.FILLED,
    }
    # the input map is left untouched
    assert np.all(hmap.state[corrupted] == PixelState.DISCARDED)

    again = refine(hmap, view, cfg)
    assert np.array_equal(out.depth, again.depth)
    assert np.array_equal(out.state, again.state)


def test_refine_toggles():
    hmap, view, _, corrupted = corrupted_plane(7)
    out = refine(
        hmap, view, RefineConfig(superpixel_size=100, use_planarization=False)
    )

    # without planarization only the median pass can fill
    assert np.all(out.state[corrupted] != PixelState.CONFIDENT)

    out = refine(
        hmap,
        view,
        RefineConfig(superpixel_size=100, use_planarization=False, use_wmf=False),
    )
    assert np.array_equal(out.state, hmap.state)


@pytest.mark.parametrize(
    "kwargs",
    [dict(superpixel_size=0), dict(ransac_min_inlier_frac=1.5), dict(outer_iters=0)],
)
def test_config_invariants(kwargs):
    with pytest.raises(ValueError):
        RefineConfig(**kwargs)
