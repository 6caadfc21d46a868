"""
Copyright (c) tsarmvs contributors.

This source code is licensed under the MIT license found in the
LICENSE file in the root directory of this source tree.
"""

from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from matplotlib import colormaps
from skimage import io
from skimage.color import gray2rgb
from skimage.segmentation import mark_boundaries
from skimage.util import img_as_ubyte

from .fusion import PointCloud

PLY_VERTEX = np.dtype(
    [
        ("x", "<f4"),
        ("y", "<f4"),
        ("z", "<f4"),
        ("nx", "<f4"),
        ("ny", "<f4"),
        ("nz", "<f4"),
        ("red", "u1"),
        ("green", "u1"),
        ("blue", "u1"),
    ]
)

DISCARD_COLOR = np.array([1.0, 0.0, 0.0])


def write_pfm(path: Union[str, Path], data: np.ndarray):
    """
    Write a 1- or 3-channel little-endian PFM; rows are stored bottom-up.

    Args:
        path: Output file.
        data: Array of shape ``(H, W)`` or ``(H, W, 3)``.
    """
    data = np.asarray(data, dtype="<f4")
    if data.ndim == 2:
        header = "Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        header = "PF"
    else:
        raise ValueError(f"Unsupported PFM shape {data.shape}.")
    height, width = data.shape[:2]
    with open(path, "wb") as f:
        f.write(f"{header}\n{width} {height}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(data[::-1]).tobytes())


def read_pfm(path: Union[str, Path]) -> np.ndarray:
    """Read a PFM file into a float32 array with the top row first."""
    with open(path, "rb") as f:
        header = f.readline().strip().decode("ascii")
        if header == "Pf":
            channels = 1
        elif header == "PF":
            channels = 3
        else:
            raise ValueError(f"{path} is not a PFM file.")
        width, height = (int(v) for v in f.readline().split())
        scale = float(f.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(), dtype=dtype, count=width * height * channels)

    shape = (height, width) if channels == 1 else (height, width, 3)

    return data.reshape(shape)[::-1].astype(np.float32)


def write_ply(path: Union[str, Path], cloud: PointCloud):
    """Write a binary little-endian PLY with positions, normals and colours."""
    vertices = np.empty(len(cloud), dtype=PLY_VERTEX)
    for i, name in enumerate("xyz"):
        vertices[name] = cloud.positions[:, i]
        vertices["n" + name] = cloud.normals[:, i]
    colors = np.clip(np.floor(cloud.colors * 255 + 0.5), 0, 255).astype(np.uint8)
    for i, name in enumerate(("red", "green", "blue")):
        vertices[name] = colors[:, i]

    header = [
        "ply",
        "format binary_little_endian 1.0",
        f"element vertex {len(cloud)}",
    ]
    header += [f"property float {n}" for n in ("x", "y", "z", "nx", "ny", "nz")]
    header += [f"property uchar {n}" for n in ("red", "green", "blue")]
    header.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(vertices.tobytes())


def read_ply(path: Union[str, Path]) -> PointCloud:
    """Read a PLY written by ``write_ply``."""
    with open(path, "rb") as f:
        if f.readline().strip() != b"ply":
            raise ValueError(f"{path} is not a PLY file.")
        count = None
        while True:
            line = f.readline()
            if not line:
                raise ValueError(f"{path} has no end_header.")
            tokens = line.decode("ascii").split()
            if tokens[:1] == ["format"] and tokens[1] != "binary_little_endian":
                raise ValueError(f"Unsupported PLY format {tokens[1]}.")
            if tokens[:2] == ["element", "vertex"]:
                count = int(tokens[2])
            if tokens[:1] == ["end_header"]:
                break
        if count is None:
            raise ValueError(f"{path} has no vertex element.")
        if count == 0:
            return PointCloud()
        vertices = np.frombuffer(f.read(count * PLY_VERTEX.itemsize), dtype=PLY_VERTEX)

    positions = np.stack([vertices[n] for n in ("x", "y", "z")], axis=-1)
    normals = np.stack([vertices[n] for n in ("nx", "ny", "nz")], axis=-1)
    colors = np.stack([vertices[n] for n in ("red", "green", "blue")], axis=-1) / 255.0

    return PointCloud(positions, normals, colors)


def save_png(path: Union[str, Path], image: np.ndarray):
    """Save a float image in [0, 1] (gray or RGB) as an 8-bit PNG."""
    io.imsave(str(path), img_as_ubyte(np.clip(image, 0.0, 1.0)), check_contrast=False)


def load_png(path: Union[str, Path]) -> np.ndarray:
    """Load a PNG as float in [0, 1]; alpha channels are dropped."""
    image = io.imread(str(path))
    if image.ndim == 3:
        image = image[..., :3]

    return image.astype(np.float64) / np.iinfo(image.dtype).max


def depth_preview(
    depth: np.ndarray,
    depth_min: float,
    depth_max: float,
    invalid: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Viridis pseudo-colour of a depth map over ``[depth_min, depth_max]``;
    invalid pixels are black.
    """
    span = max(depth_max - depth_min, 1e-12)
    rgb = colormaps["viridis"](np.clip((depth - depth_min) / span, 0.0, 1.0))[..., :3]
    if invalid is not None:
        rgb[invalid] = 0.0

    return rgb


def discard_overlay(image: np.ndarray, discarded: np.ndarray) -> np.ndarray:
    """Gray image with discarded pixels painted red."""
    rgb = gray2rgb(image).astype(np.float64)
    rgb[discarded] = 0.5 * rgb[discarded] + 0.5 * DISCARD_COLOR

    return rgb


def region_colors(
    image: np.ndarray, labels: np.ndarray, hatched: Optional[Sequence[bool]] = None
) -> np.ndarray:
    """
    Random colour per region with boundaries marked; flagged regions are
    hatched with dark diagonal stripes.
    """
    rng = np.random.default_rng(0)
    palette = rng.uniform(0.2, 1.0, size=(int(labels.max()) + 1, 3))
    rgb = palette[labels]
    if hatched is not None:
        ys, xs = np.mgrid[0 : labels.shape[0], 0 : labels.shape[1]]
        stripes = (xs + ys) % 8 < 2
        rgb[np.asarray(hatched)[labels] & stripes] *= 0.3
    blend = 0.5 * rgb + 0.5 * gray2rgb(image)

    return mark_boundaries(blend, labels, color=(1, 1, 0))


def lines_overlay(image: np.ndarray, line_mask: np.ndarray) -> np.ndarray:
    rgb = gray2rgb(image).astype(np.float64)
    rgb[line_mask] = DISCARD_COLOR

    return rgb
