"""
Copyright (c) tsarmvs contributors.

This source code is licensed under the MIT license found in the
LICENSE file in the root directory of this source tree.
"""

from .scene_data import CameraFileError, fetch_dir, load_scene, read_cameras, save_scene
from .synthgen import SCENES, GroundTruth, SceneSpec, render, standard_scenes
from .transforms import downsample_view
