"""
Copyright (c) tsarmvs contributors.

This source code is licensed under the MIT license found in the
LICENSE file in the root directory of this source tree.
"""

import math
from dataclasses import replace

import numpy as np
import pytest
from tsarmvs.data.synthgen import get_scene, render
from tsarmvs.geom import CameraIntrinsics, pixel_rays
from tsarmvs.icrefine import PlaneModel, RefineConfig, RegionLabelMap, plane_ray_depths
from tsarmvs.pmstereo import HypothesisMap, PixelState
from tsarmvs.texseg import (
    EdgeMap,
    SegConfig,
    hough_accumulator,
    hough_lines,
    planarize_textureless,
    rasterize_segments,
    roberts_edges,
    segment_textureless,
)

from .conftest import make_view


def line_image(lines, shape):
    """Pixels within half a pixel of each ``(rho, theta)`` line."""
    ys, xs = np.mgrid[0 : shape[0], 0 : shape[1]]
    mask = np.zeros(shape, dtype=bool)
    for rho, theta in lines:
        mask |= np.abs(xs * math.cos(theta) + ys * math.sin(theta) - rho) < 0.5

    return mask


def bin_line(rng, theta_bin, shape, cfg):
    """A line through the image center region whose parameters sit on bin centers."""
    theta = float(np.arange(0.0, math.pi, cfg.hough_theta_res)[theta_bin])
    center = (shape[1] / 2) * math.cos(theta) + (shape[0] / 2) * math.sin(theta)
    rho_bin = round((center + rng.uniform(-50, 50)) / cfg.hough_rho_res)

    return rho_bin * cfg.hough_rho_res, theta


def recovered(segments, rho, theta, cfg):
    return any(
        abs(seg.rho - rho) <= cfg.hough_rho_res + 1e-9
        and abs(seg.theta - theta) <= cfg.hough_theta_res + 1e-9
        for seg in segments
    )


def test_roberts_constant_image():
    edges = roberts_edges(np.full((8, 9), 0.3), SegConfig())

    assert np.all(edges.magnitude == 0)
    assert not edges.binary.any()


def test_roberts_vertical_step():
    image = np.zeros((6, 8))
    image[:, 4:] = 0.5
    edges = roberts_edges(image, SegConfig())
    expected = np.zeros((6, 8))
    expected[:-1, 3] = math.sqrt(2) * 0.5

    assert np.allclose(edges.magnitude, expected, rtol=0, atol=1e-15)
    assert np.array_equal(edges.binary, expected > 0.05)


def test_roberts_matches_difference_oracle():
    rng = np.random.default_rng(0)
    image = rng.uniform(size=(17, 23))
    edges = roberts_edges(image, SegConfig(edge_threshold=0.3))
    expected = np.zeros_like(image)
    for y in range(16):
        for x in range(22):
            gx = image[y, x] - image[y + 1, x + 1]
            gy = image[y, x + 1] - image[y + 1, x]
            expected[y, x] = math.sqrt(gx * gx + gy * gy)

    assert np.array_equal(edges.magnitude, expected)
    assert np.array_equal(edges.binary, expected > 0.3)


def test_roberts_rejects_tiny_image():
    with pytest.raises(ValueError):
        roberts_edges(np.zeros((1, 5)), SegConfig())


def test_hough_empty():
    empty = np.zeros((32, 32), dtype=bool)

    assert hough_lines(EdgeMap(empty.astype(float), empty), SegConfig()) == []


def test_hough_single_line():
    cfg = SegConfig()
    shape = (120, 160)
    rho, theta = bin_line(np.random.default_rng(1), 30, shape, cfg)
    mask = line_image([(rho, theta)], shape)
    segments = hough_lines(EdgeMap(mask.astype(float), mask), cfg)

    # strongest segment comes first
    assert segments
    seg = segments[0]
    assert abs(seg.rho - rho) <= cfg.hough_rho_res
    assert abs(seg.theta - theta) <= cfg.hough_theta_res
    normal = np.array([math.cos(seg.theta), math.sin(seg.theta)])
    for end in seg.endpoints:
        assert abs(end @ normal - seg.rho) <= 0.5
    assert seg.length >= cfg.hough_len_min


def test_hough_random_lines():
    rng = np.random.default_rng(2)
    cfg = SegConfig()
    shape = (256, 256)
    theta_bins = rng.choice(np.arange(0, 180, 6), size=20, replace=False)
    lines = [bin_line(rng, int(b), shape, cfg) for b in theta_bins]
    mask = line_image(lines, shape)
    segments = hough_lines(EdgeMap(mask.astype(float), mask), cfg)

    assert sum(recovered(segments, rho, theta, cfg) for rho, theta in lines) >= 19


@pytest.mark.parametrize("rho_res", [1.0, 2.0, 3.0])
def test_hough_accumulator_matches_vote_count(rho_res):
    rng = np.random.default_rng(4)
    binary = rng.uniform(size=(23, 31)) < 0.1
    cfg = SegConfig(hough_rho_res=rho_res, hough_theta_res=0.1)
    acc, thetas, rhos = hough_accumulator(binary, cfg)

    cos_t, sin_t = np.cos(thetas), np.sin(thetas)
    expected = np.zeros_like(acc)
    for y, x in zip(*np.nonzero(binary)):
        for j in range(thetas.size):
            rho = round(x * cos_t[j] + y * sin_t[j])
            coarse = rho_res * math.floor(rho / rho_res + 0.5)
            expected[np.searchsorted(rhos, coarse), j] += 1

    assert thetas.size == 32
    assert np.all(np.diff(rhos) == rho_res)
    assert acc.sum() == binary.sum() * thetas.size
    assert np.array_equal(acc, expected)


def test_hough_ordering_and_rasterization():
    cfg = SegConfig()
    shape = (100, 100)
    lines = [(50.0, 0.0)]
    mask = line_image(lines, shape)
    segments = hough_lines(EdgeMap(mask.astype(float), mask), cfg)
    votes = [seg.votes for seg in segments]

    assert votes == sorted(votes, reverse=True)
    drawn = rasterize_segments(segments, shape)
    assert drawn.any()
    assert np.all(mask[drawn])


def test_segment_constant_image():
    intr = CameraIntrinsics(40.0, 40.0, 15.5, 11.5, 32, 24)
    regions, flags = segment_textureless(
        make_view(intr, image=np.full((24, 32), 0.4)), SegConfig()
    )

    assert regions.num_regions == 1
    assert np.all(regions.labels == 0)
    assert flags == [True]


def test_segment_bisected_image():
    intr = CameraIntrinsics(40.0, 40.0, 31.5, 23.5, 64, 48)
    image = np.full((48, 64), 0.2)
    image[:, 40:] = 0.7
    regions, flags = segment_textureless(
        make_view(intr, image=image), SegConfig(textureless_min_area=0.5)
    )

    assert regions.num_regions == 2
    left, right = regions.labels[0, 0], regions.labels[0, -1]
    assert left != right
    assert flags[left] and not flags[right]
    # boundary pixels are folded into their nearest region
    assert np.all(regions.labels[:, :38] == left)
    assert np.all(regions.labels[:, 41:] == right)


def test_segment_partitions_image():
    rng = np.random.default_rng(3)
    intr = CameraIntrinsics(40.0, 40.0, 31.5, 23.5, 64, 48)
    image = np.kron(rng.uniform(size=(6, 8)), np.ones((8, 8)))
    regions, flags = segment_textureless(make_view(intr, image=image), SegConfig())
    counts = np.bincount(regions.labels.ravel(), minlength=regions.num_regions)

    assert len(flags) == regions.num_regions
    assert counts.sum() == 48 * 64
    assert np.all(counts > 0)


def test_segment_blank_wall_matches_ground_truth():
    spec = get_scene("box-blank-wall").scaled(2)
    (view,), gt = render(replace(spec, cameras=spec.cameras[:1]))
    regions, flags = segment_textureless(view, SegConfig())
    predicted = np.asarray(flags)[regions.labels]
    truth = gt.textureless[0]

    assert truth.mean() >= 0.25
    iou = (predicted & truth).sum() / (predicted | truth).sum()
    assert iou >= 0.8


def planar_setup(seed, confident_frac=0.4):
    rng = np.random.default_rng(seed)
    intr = CameraIntrinsics(60.0, 60.0, 23.5, 17.5, 48, 36)
    model = PlaneModel(np.array([0.1, -0.15, 1.0]) / np.linalg.norm([0.1, -0.15, 1.0]), 2.5)
    truth = plane_ray_depths(model, pixel_rays(intr))
    depth = truth * rng.uniform(1.1, 1.6, size=truth.shape)
    confident = rng.uniform(size=truth.shape) < confident_frac
    depth[confident] = truth[confident]
    state = np.where(confident, PixelState.CONFIDENT, PixelState.DISCARDED).astype(np.uint8)
    state[~confident & (rng.uniform(size=truth.shape) < 0.5)] = PixelState.FILLED
    normal = np.zeros(truth.shape + (3,))
    normal[..., 2] = -1.0
    hmap = HypothesisMap(depth, normal, np.zeros(truth.shape), state)

    return hmap, make_view(intr), truth, model


def test_planarize_exact_plane():
    hmap, view, truth, model = planar_setup(4)
    regions = RegionLabelMap(np.zeros(truth.shape, dtype=np.int64), 1)
    out = planarize_textureless(hmap, view, regions, [True], SegConfig(), RefineConfig())
    confident = hmap.state == PixelState.CONFIDENT

    assert np.all(np.abs(out.depth - truth) < 1e-9)
    assert np.all(out.state[~confident] == PixelState.FILLED)
    assert np.allclose(out.normal[~confident], -model.normal)
    assert np.array_equal(out.depth[confident], hmap.depth[confident])
    assert np.array_equal(out.normal[confident], hmap.normal[confident])


def test_planarize_only_flagged_regions():
    hmap, view, truth, _ = planar_setup(5)
    labels = np.zeros(truth.shape, dtype=np.int64)
    labels[:, 24:] = 1
    regions = RegionLabelMap(labels, 2)
    out = planarize_textureless(
        hmap, view, regions, [True, False], SegConfig(), RefineConfig()
    )

    assert np.array_equal(out.depth[:, 24:], hmap.depth[:, 24:])
    assert np.array_equal(out.state[:, 24:], hmap.state[:, 24:])
    assert np.all(np.abs(out.depth[:, :24] - truth[:, :24]) < 1e-9)


def test_planarize_without_support():
    hmap, view, truth, _ = planar_setup(6, confident_frac=0.0)
    regions = RegionLabelMap(np.zeros(truth.shape, dtype=np.int64), 1)
    out = planarize_textureless(hmap, view, regions, [True], SegConfig(), RefineConfig())

    assert np.array_equal(out.depth, hmap.depth)
    assert np.array_equal(out.state, hmap.state)


def test_planarize_flag_count_mismatch():
    hmap, view, truth, _ = planar_setup(7)
    regions = RegionLabelMap(np.zeros(truth.shape, dtype=np.int64), 1)

    with pytest.raises(ValueError):
        planarize_textureless(hmap, view, regions, [], SegConfig(), RefineConfig())


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(edge_threshold=0),
        dict(textureless_min_area=1.0),
        dict(hough_len_min=0),
        dict(hough_rho_res=0.5),
    ],
)
def test_config_invariants(kwargs):
    with pytest.raises(ValueError):
        SegConfig(**kwargs)
