"""
Copyright (c) tsarmvs contributors.

This source code is licensed under the MIT license found in the
LICENSE file in the root directory of this source tree.
"""

import numpy as np
import pytest
from tsarmvs.fusion import PointCloud
from tsarmvs.utils import (
    depth_preview,
    discard_overlay,
    load_png,
    read_pfm,
    read_ply,
    region_colors,
    save_png,
    write_pfm,
    write_ply,
)


@pytest.mark.parametrize("shape", [(5, 7), (4, 6, 3)])
def test_pfm_round_trip(tmp_path, shape):
    data = np.random.default_rng(0).uniform(-3, 3, size=shape).astype(np.float32)
    write_pfm(tmp_path / "map.pfm", data)
    loaded = read_pfm(tmp_path / "map.pfm")

    assert loaded.dtype == np.float32
    assert np.array_equal(loaded, data)


def test_pfm_layout(tmp_path):
    data = np.arange(6, dtype=np.float32).reshape(2, 3)
    write_pfm(tmp_path / "map.pfm", data)
    raw = (tmp_path / "map.pfm").read_bytes()

    assert raw.startswith(b"Pf\n3 2\n-1.0\n")
    # rows are stored bottom-up
    assert np.array_equal(np.frombuffer(raw[-24:], dtype="<f4"), [3, 4, 5, 0, 1, 2])


def test_pfm_big_endian(tmp_path):
    data = np.array([[1.5, -2.0]], dtype=">f4")
    (tmp_path / "be.pfm").write_bytes(b"Pf\n2 1\n1.0\n" + data.tobytes())

    assert np.array_equal(read_pfm(tmp_path / "be.pfm"), [[1.5, -2.0]])


def test_pfm_errors(tmp_path):
    with pytest.raises(ValueError):
        write_pfm(tmp_path / "bad.pfm", np.zeros((2, 2, 2)))
    (tmp_path / "bad.pfm").write_bytes(b"P6\n1 1\n255\n\x00")
    with pytest.raises(ValueError):
        read_pfm(tmp_path / "bad.pfm")


def test_ply_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    normals = rng.normal(size=(50, 3))
    cloud = PointCloud(
        rng.uniform(-5, 5, size=(50, 3)),
        normals / np.linalg.norm(normals, axis=-1, keepdims=True),
        rng.uniform(size=(50, 3)),
    )
    write_ply(tmp_path / "cloud.ply", cloud)
    loaded = read_ply(tmp_path / "cloud.ply")

    assert len(loaded) == 50
    assert np.allclose(loaded.positions, cloud.positions, rtol=1e-6, atol=1e-6)
    assert np.allclose(loaded.normals, cloud.normals, atol=1e-6)
    assert np.abs(loaded.colors - cloud.colors).max() <= 0.5 / 255 + 1e-9


def test_ply_header(tmp_path):
    write_ply(tmp_path / "empty.ply", PointCloud())
    text = (tmp_path / "empty.ply").read_bytes().decode("ascii")

    assert text.startswith("ply\nformat binary_little_endian 1.0\nelement vertex 0\n")
    assert "property uchar red" in text
    assert text.endswith("end_header\n")
    assert len(read_ply(tmp_path / "empty.ply")) == 0


def test_ply_rejects_ascii(tmp_path):
    (tmp_path / "ascii.ply").write_bytes(
        b"ply\nformat ascii 1.0\nelement vertex 0\nend_header\n"
    )

    with pytest.raises(ValueError):
        read_ply(tmp_path / "ascii.ply")


def test_png_round_trip(tmp_path):
    image = np.linspace(0, 1, 64).reshape(8, 8)
    save_png(tmp_path / "gray.png", image)
    loaded = load_png(tmp_path / "gray.png")

    assert loaded.shape == (8, 8)
    assert np.abs(loaded - image).max() <= 0.5 / 255 + 1e-9


def test_depth_preview():
    depth = np.array([[1.0, 2.0], [3.0, 9.0]])
    invalid = np.array([[False, False], [False, True]])
    rgb = depth_preview(depth, 1.0, 3.0, invalid)

    assert rgb.shape == (2, 2, 3)
    assert np.all(rgb[1, 1] == 0)
    assert not np.allclose(rgb[0, 0], rgb[1, 0])
    assert rgb.min() >= 0 and rgb.max() <= 1


def test_overlays():
    image = np.full((6, 6), 0.5)
    discarded = np.zeros((6, 6), dtype=bool)
    discarded[2, 3] = True
    overlay = discard_overlay(image, discarded)

    assert np.allclose(overlay[2, 3], [0.75, 0.25, 0.25])
    assert np.allclose(overlay[0, 0], 0.5)

    labels = np.zeros((6, 6), dtype=np.int64)
    labels[:, 3:] = 1
    colored = region_colors(image, labels, hatched=[True, False])
    assert colored.shape == (6, 6, 3)
    assert colored.min() >= 0 and colored.max() <= 1
