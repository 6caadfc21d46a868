"""
Copyright (c) tsarmvs contributors.

This source code is licensed under the MIT license found in the
LICENSE file in the root directory of this source tree.
"""

from typing import Optional

import numpy as np
import pytest
from scipy.spatial.transform import Rotation
from tsarmvs.geom import CameraIntrinsics, CameraPose, CameraView

from .create_temp_data import create_temp_data

# these are really slow - skip by default
SKIP_INTEGRATIONS = True


def make_view(
    intrinsics: CameraIntrinsics,
    pose: Optional[CameraPose] = None,
    image: Optional[np.ndarray] = None,
    view_id: int = 0,
) -> CameraView:
    if pose is None:
        pose = CameraPose.identity()
    if image is None:
        image = np.zeros((intrinsics.height, intrinsics.width))

    return CameraView(view_id, intrinsics, pose, image)


def random_pose(rng: np.random.Generator, spread: float = 1.0) -> CameraPose:
    rotation = Rotation.from_rotvec(rng.normal(size=3) * spread).as_matrix()

    return CameraPose(rotation, rng.normal(size=3) * spread)


def rectified_pair(
    rng: np.random.Generator,
    width: int = 64,
    height: int = 48,
    focal: float = 100.0,
    baseline: float = 0.2,
    depth: float = 2.0,
):
    """
    Two views of a random fronto-parallel texture at an integer disparity.

    The source camera is shifted by ``baseline`` along -x so a ref pixel
    ``(x, y)`` appears at ``(x + focal * baseline / depth, y)`` in the source.
    """
    shift = int(round(focal * baseline / depth))
    texture = rng.uniform(0.0, 1.0, size=(height, width + shift))
    intr = CameraIntrinsics(focal, focal, (width - 1) / 2, (height - 1) / 2, width, height)
    ref = make_view(intr, image=texture[:, shift:], view_id=0)
    src = make_view(
        intr,
        CameraPose(np.eye(3), np.array([baseline, 0.0, 0.0])),
        image=texture[:, :width],
        view_id=1,
    )

    return ref, src, shift


@pytest.fixture(scope="session")
def tiny_scene_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("tiny_scene")

    return create_temp_data(path)


@pytest.fixture
def skip_integration_tests():
    return SKIP_INTEGRATIONS
