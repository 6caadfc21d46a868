"""
Copyright (c) tsarmvs contributors.

This source code is licensed under the MIT license found in the
LICENSE file in the root directory of this source tree.
"""

import logging
import os
from pathlib import Path
from typing import List, NamedTuple, Sequence, Union
from warnings import warn

import numpy as np
import yaml
from skimage.color import rgb2gray

from ..geom import CameraIntrinsics, CameraPose, CameraView
from ..utils import load_png, save_png

CAMERA_FILE = "cameras.txt"
IMAGE_DIR = "images"

# rotations read from text may deviate from orthonormal by up to this much
# before they are rejected
ORTHO_REPAIR_TOL = 1e-4


class CameraFileError(ValueError):
    """Raised for malformed camera files."""


class CameraRecord(NamedTuple):
    id: int
    intrinsics: CameraIntrinsics
    pose: CameraPose


def fetch_dir(
    key: str, data_config_file: Union[str, Path, os.PathLike] = "tsarmvs_dirs.yaml"
) -> Path:
    """
    Data directory fetcher.

    Reads default directories from a small YAML file. When the file is
    missing, a template is written and the template value is returned.

    Args:
        key: Key to retrieve, one of ("data_path", "output_path").
        data_config_file: Optional; path config file to fetch the path from.

    Returns:
        The path to the requested directory.
    """
    data_config_file = Path(data_config_file)
    if not data_config_file.is_file():
        default_config = {
            "data_path": "/path/to/scenes",
            "output_path": "outputs",
        }
        with open(data_config_file, "w") as f:
            yaml.dump(default_config, f)

        data_dir = default_config[key]

        warn(
            f"Path config at {data_config_file.resolve()} does not exist. "
            "A template has been created for you. "
            "Please enter the directory paths for your system to have defaults."
        )
    else:
        with open(data_config_file, "r") as f:
            data_dir = yaml.safe_load(f)[key]

    return Path(data_dir)


def nearest_rotation(matrix: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(matrix)
    rotation = u @ vt
    if np.linalg.det(rotation) < 0:
        u[:, -1] *= -1
        rotation = u @ vt

    return rotation


def parse_camera_line(line: str, lineno: int) -> CameraRecord:
    tokens = line.split()
    if len(tokens) != 19:
        raise CameraFileError(
            f"line {lineno}: expected 19 fields, found {len(tokens)}"
        )
    try:
        view_id = int(tokens[0])
        fx, fy, cx, cy = (float(t) for t in tokens[1:5])
        width, height = int(tokens[5]), int(tokens[6])
        rotation = np.array([float(t) for t in tokens[7:16]]).reshape(3, 3)
        translation = np.array([float(t) for t in tokens[16:19]])
    except ValueError as e:
        raise CameraFileError(f"line {lineno}: {e}") from e

    deviation = np.abs(rotation.T @ rotation - np.eye(3)).max()
    if deviation > ORTHO_REPAIR_TOL or np.linalg.det(rotation) <= 0:
        raise CameraFileError(f"line {lineno}: rotation is not orthonormal")
    if deviation > 0:
        rotation = nearest_rotation(rotation)

    try:
        intrinsics = CameraIntrinsics(fx, fy, cx, cy, width, height)
        pose = CameraPose(rotation, translation)
    except ValueError as e:
        raise CameraFileError(f"line {lineno}: {e}") from e

    return CameraRecord(view_id, intrinsics, pose)


def read_cameras(path: Union[str, Path]) -> List[CameraRecord]:
    """
    Read a camera text file.

    Each non-comment line reads ``id fx fy cx cy width height r11 .. r33 tx ty
    tz``; ``#`` starts a comment.

    Args:
        path: Camera file.

    Returns:
        Camera records sorted by id.
    """
    path = Path(path)
    if not path.is_file():
        raise CameraFileError(f"Camera file {path} does not exist.")
    records = []
    with open(path, "r") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if line:
                records.append(parse_camera_line(line, lineno))

    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise CameraFileError(f"{path}: duplicate view ids.")

    return sorted(records, key=lambda r: r.id)


def write_cameras(path: Union[str, Path], cameras: Sequence[CameraRecord]):
    with open(path, "w") as f:
        f.write("# id fx fy cx cy width height r11 r12 r13 r21 r22 r23 r31 r32 r33 tx ty tz\n")
        for cam in cameras:
            intr = cam.intrinsics
            values = [intr.fx, intr.fy, intr.cx, intr.cy]
            values += list(cam.pose.rotation.ravel()) + list(cam.pose.translation)
            fields = [str(cam.id)] + [repr(float(v)) for v in values[:4]]
            fields += [str(intr.width), str(intr.height)]
            fields += [repr(float(v)) for v in values[4:]]
            f.write(" ".join(fields) + "\n")


def image_name(view_id: int) -> str:
    return f"{view_id:03d}.png"


def load_scene(root: Union[str, Path]) -> List[CameraView]:
    """
    Load a scene directory holding ``cameras.txt`` and ``images/XXX.png``.

    Colour images are converted to luminance and kept for point colours.
    """
    root = Path(root)
    views = []
    for cam in read_cameras(root / CAMERA_FILE):
        image_path = root / IMAGE_DIR / image_name(cam.id)
        if not image_path.is_file():
            raise FileNotFoundError(f"Missing image {image_path}.")
        image = load_png(image_path)
        color = None
        if image.ndim == 3:
            color = image
            image = rgb2gray(image)
        if image.shape != (cam.intrinsics.height, cam.intrinsics.width):
            raise ValueError(
                f"Image {image_path} has shape {image.shape}, camera file says "
                f"({cam.intrinsics.height}, {cam.intrinsics.width})."
            )
        views.append(CameraView(cam.id, cam.intrinsics, cam.pose, image, color))
    logging.info(f"loaded {len(views)} views from {root}")

    return views


def save_scene(root: Union[str, Path], views: Sequence[CameraView]):
    root = Path(root)
    (root / IMAGE_DIR).mkdir(parents=True, exist_ok=True)
    for view in views:
        image = view.color if view.color is not None else view.image
        save_png(root / IMAGE_DIR / image_name(view.id), image)
    write_cameras(
        root / CAMERA_FILE, [CameraRecord(v.id, v.intrinsics, v.pose) for v in views]
    )
