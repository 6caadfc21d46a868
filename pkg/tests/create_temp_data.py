"""
Copyright (c) tsarmvs contributors.

This source code is licensed under the MIT license found in the
LICENSE file in the root directory of this source tree.
"""

import numpy as np
from tsarmvs.data.scene_data import save_scene
from tsarmvs.data.synthgen import (
    CameraPlacement,
    Constant,
    SceneSpec,
    ValueNoise,
    render,
    room,
)
from tsarmvs.geom import CameraIntrinsics, look_at
from tsarmvs.utils import write_pfm


def tiny_scene(rng_seed: int = 0) -> SceneSpec:
    """An 80x60 three-camera room with a blank back wall."""
    intrinsics = CameraIntrinsics(60.0, 60.0, 40.0, 30.0, 80, 60)
    textures = {
        name: ValueNoise(texel=0.05, amplitude=0.35, seed=100 + i)
        for i, name in enumerate(("left", "right", "floor", "ceiling"))
    }
    textures["back"] = Constant(0.5)
    target = np.array([0.0, 0.0, 3.0])
    cameras = tuple(
        CameraPlacement(intrinsics, look_at(np.array([x, 0.0, 0.0]), target))
        for x in (0.0, -0.25, 0.25)
    )

    return SceneSpec(
        name="tiny-room",
        planes=room(1.0, 0.75, -1.0, 3.0, textures),
        cameras=cameras,
        noise_sigma=0.005,
        rng_seed=rng_seed,
        depth_range=(1.0, 3.5),
    )


def create_temp_data(path):
    views, gt = render(tiny_scene())
    save_scene(path, views)
    for i, view in enumerate(views):
        write_pfm(path / f"gt_depth_{view.id:03d}.pfm", gt.depth[i])

    return path


def create_temp_config(path, text: str):
    config_file = path / "config.ini"
    config_file.write_text(text)

    return config_file
