"""
Copyright (c) tsarmvs contributors.

This source code is licensed under the MIT license found in the
LICENSE file in the root directory of this source tree.
"""

import logging
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union
from warnings import warn

import numpy as np

from .geom import CameraView, project_points, unproject_depth_map, unproject_pixels
from .pmstereo import HypothesisMap, PixelState


class EmptyOutputWarning(UserWarning):
    """Fusion produced no point."""


@dataclass(frozen=True)
class FusionParams:
    """
    Consistency thresholds of depth map fusion.

    Args:
        max_rel_depth_diff: Largest relative depth difference (exclusive).
        max_normal_angle: Largest angle between normals in degrees
            (exclusive).
        max_reproj_error: Largest reprojection error in pixels (inclusive).
        min_consistent_views: Fewest consistent other views for a point.
    """

    max_rel_depth_diff: float = 0.01
    max_normal_angle: float = 30.0
    max_reproj_error: float = 2.0
    min_consistent_views: int = 2

    def __post_init__(self):
        for name in (
            "max_rel_depth_diff",
            "max_normal_angle",
            "max_reproj_error",
            "min_consistent_views",
        ):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive.")


@dataclass
class PointCloud:
    """
    Points with unit normals and RGB colours in [0, 1], stored column-wise.
    """

    positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    normals: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    colors: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        if not (len(self.positions) == len(self.normals) == len(self.colors)):
            raise ValueError("Point attributes differ in length.")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("Point positions must be finite.")

    def __len__(self) -> int:
        return self.positions.shape[0]


class ViewMatches(NamedTuple):
    """
    Matches of every reference pixel into one source view.

    Args:
        consistent: Pixels passing every check, shape ``(H, W)``.
        src_pixels: Rounded source pixel ``(x, y)``, shape ``(H, W, 2)``.
        src_depths: Source depth at the rounded pixel, shape ``(H, W)``.
    """

    consistent: np.ndarray
    src_pixels: np.ndarray
    src_depths: np.ndarray


def world_normals(view: CameraView, normals: np.ndarray) -> np.ndarray:
    return normals @ view.pose.rotation


def match_pixels(
    ref: CameraView,
    ref_map: HypothesisMap,
    src: CameraView,
    src_map: HypothesisMap,
    xs: np.ndarray,
    ys: np.ndarray,
    params: FusionParams,
) -> ViewMatches:
    """
    Check reference pixels ``(xs, ys)`` against one source view.

    A reference pixel is lifted to the world and projected into the source;
    the source depth is read at the nearest pixel. The match is consistent
    when the relative depth difference, the world normal angle and the
    reprojection error of the source point back into the reference are all
    within ``params``. Outputs have the shape of ``xs``.
    """
    ref_depth = ref_map.depth[ys, xs]
    ref_pixels = np.stack([xs, ys], axis=-1).astype(np.float64)
    points = unproject_pixels(ref, ref_pixels, ref_depth)
    proj, proj_depth = project_points(src, points)

    src_h, src_w = src_map.depth.shape
    rounded = np.floor(proj + 0.5)
    rounded = np.where(np.isfinite(rounded), rounded, -1).astype(np.int64)
    sx, sy = rounded[..., 0], rounded[..., 1]
    inside = (sx >= 0) & (sx < src_w) & (sy >= 0) & (sy < src_h) & (proj_depth > 0)
    sx, sy = np.clip(sx, 0, src_w - 1), np.clip(sy, 0, src_h - 1)
    src_depth = src_map.depth[sy, sx]
    valid = (
        inside
        & (ref_map.state[ys, xs] != PixelState.DISCARDED)
        & (src_map.state[sy, sx] != PixelState.DISCARDED)
    )

    with np.errstate(divide="ignore", invalid="ignore"):
        depth_ok = np.abs(src_depth - proj_depth) / proj_depth < params.max_rel_depth_diff
    cos = np.sum(
        world_normals(ref, ref_map.normal[ys, xs])
        * world_normals(src, src_map.normal[sy, sx]),
        axis=-1,
    )
    angle = np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))
    normal_ok = angle < params.max_normal_angle

    back = unproject_pixels(src, np.where(valid[..., None], proj, 0.0), src_depth)
    reproj, _ = project_points(ref, back)
    err = np.hypot(reproj[..., 0] - xs, reproj[..., 1] - ys)
    reproj_ok = err <= params.max_reproj_error

    consistent = valid & depth_ok & normal_ok & reproj_ok

    return ViewMatches(consistent, np.stack([sx, sy], axis=-1), src_depth)


def match_view(
    ref: CameraView,
    ref_map: HypothesisMap,
    src: CameraView,
    src_map: HypothesisMap,
    params: FusionParams,
) -> ViewMatches:
    """Check every reference pixel against one source view."""
    ys, xs = np.mgrid[0 : ref_map.depth.shape[0], 0 : ref_map.depth.shape[1]]

    return match_pixels(ref, ref_map, src, src_map, xs, ys, params)


def check_consistency(
    ref: CameraView,
    ref_map: HypothesisMap,
    src: CameraView,
    src_map: HypothesisMap,
    pixel: Sequence[int],
    params: FusionParams,
) -> Optional[Tuple[np.ndarray, float]]:
    """
    Consistency of one reference pixel with a source view.

    Returns:
        The rounded source pixel and its depth, or None if inconsistent.
    """
    height, width = ref_map.depth.shape
    x, y = int(pixel[0]), int(pixel[1])
    if not (0 <= x < width and 0 <= y < height):
        raise ValueError(f"Pixel {(x, y)} lies outside the reference map.")
    matches = match_pixels(
        ref, ref_map, src, src_map, np.array([x]), np.array([y]), params
    )
    if not matches.consistent[0]:
        return None

    return matches.src_pixels[0].copy(), float(matches.src_depths[0])


def fuse(
    views: Sequence[CameraView],
    maps: Sequence[HypothesisMap],
    params: FusionParams,
    return_masks: bool = False,
) -> Union[PointCloud, Tuple[PointCloud, List[np.ndarray]]]:
    """
    Fuse depth maps into one point cloud.

    Views are taken as reference in order. A non-Discarded reference pixel
    with at least ``min_consistent_views`` consistent, still unused matches in
    the other views emits the mean of its point and the matched points, the
    renormalized mean world normal and the reference colour. Every pixel
    contributing to a point is marked used and never contributes again.

    Args:
        views: Views aligned with ``maps``.
        maps: Hypothesis maps.
        params: Fusion thresholds.
        return_masks: If True, also return the per-view masks of pixels used
            by emitted points.

    Returns:
        The point cloud, plus the used-pixel masks when requested.
    """
    if len(views) != len(maps):
        raise ValueError("Views and maps must be aligned.")
    used = [np.zeros(m.depth.shape, dtype=bool) for m in maps]
    world = [unproject_depth_map(v, m.depth) for v, m in zip(views, maps)]
    wnormals = [world_normals(v, m.normal) for v, m in zip(views, maps)]
    positions, normals, colors = [], [], []

    for r, (ref, ref_map) in enumerate(zip(views, maps)):
        others = [s for s in range(len(views)) if s != r]
        matches = {
            s: match_view(ref, ref_map, views[s], maps[s], params) for s in others
        }
        if not matches:
            continue
        count = sum(m.consistent.astype(np.int64) for m in matches.values())
        rgb = ref.rgb()
        cand_y, cand_x = np.nonzero(count >= params.min_consistent_views)
        for y, x in zip(cand_y, cand_x):
            if used[r][y, x]:
                continue
            hits = []
            for s, m in matches.items():
                if not m.consistent[y, x]:
                    continue
                sx, sy = m.src_pixels[y, x]
                if not used[s][sy, sx]:
                    hits.append((s, sx, sy))
            if len(hits) < params.min_consistent_views:
                continue

            pts = [world[r][y, x]] + [world[s][sy, sx] for s, sx, sy in hits]
            nrm = wnormals[r][y, x] + sum(wnormals[s][sy, sx] for s, sx, sy in hits)
            positions.append(np.mean(pts, axis=0))
            normals.append(nrm / np.linalg.norm(nrm))
            colors.append(rgb[y, x])
            used[r][y, x] = True
            for s, sx, sy in hits:
                used[s][sy, sx] = True
        logging.info(f"fusion: view {ref.id} as reference, {len(positions)} points total")

    cloud = PointCloud(np.array(positions), np.array(normals), np.array(colors))
    if len(cloud) == 0:
        msg = "Fusion produced an empty point cloud."
        logging.warning(msg)
        warn(msg, EmptyOutputWarning)
    if return_masks:
        return cloud, used

    return cloud
