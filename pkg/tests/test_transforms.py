"""
Copyright (c) tsarmvs contributors.

This source code is licensed under the MIT license found in the
LICENSE file in the root directory of this source tree.
"""

import numpy as np
import pytest
from tsarmvs.data.transforms import crop_to_multiple, downsample_view
from tsarmvs.geom import CameraIntrinsics, CameraView, project, unproject

from .conftest import make_view, random_pose


@pytest.mark.parametrize(
    "shape, factor, expected", [((7, 9), 2, (6, 8)), ((8, 12), 4, (8, 12))]
)
def test_crop_to_multiple(shape, factor, expected):
    assert crop_to_multiple(np.zeros(shape), factor).shape == expected


def test_downsample_identity():
    view = make_view(CameraIntrinsics(50.0, 50.0, 10.0, 8.0, 20, 16))

    assert downsample_view(view, 1) is view


@pytest.mark.parametrize("factor", [2, 4])
def test_downsample_block_mean(factor):
    rng = np.random.default_rng(factor)
    intr = CameraIntrinsics(80.0, 80.0, 31.5, 23.5, 64, 48)
    color = rng.uniform(size=(48, 64, 3))
    view = make_view(intr, random_pose(rng), image=rng.uniform(size=(48, 64)))
    view = CameraView(view.id, intr, view.pose, view.image, color)
    small = downsample_view(view, factor)

    assert small.shape == (48 // factor, 64 // factor)
    block = view.image[factor : 2 * factor, 2 * factor : 3 * factor]
    assert np.isclose(small.image[1, 2], block.mean())
    assert small.color.shape == small.shape + (3,)
    assert small.intrinsics == intr.scaled(factor)
    assert small.pose is view.pose


def test_downsample_geometry():
    rng = np.random.default_rng(0)
    intr = CameraIntrinsics(100.0, 100.0, 39.5, 29.5, 80, 60)
    view = make_view(intr, random_pose(rng))
    small = downsample_view(view, 2)
    # a world point maps to the block containing its full-resolution pixel
    point = unproject(view, np.array([20.5, 10.5]), 3.0)
    pixel, depth = project(small, point)

    assert np.allclose(pixel, [10.0, 5.0], atol=1e-9)
    assert np.isclose(depth, 3.0)
