"""
Copyright (c) tsarmvs contributors.

This source code is licensed under the MIT license found in the
LICENSE file in the root directory of this source tree.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import distance_transform_edt
from skimage.draw import line as draw_line
from skimage.feature import peak_local_max
from skimage.measure import label
from skimage.morphology import binary_dilation, disk
from skimage.transform import hough_line

from .geom import CameraView, orient_normals, pixel_rays, view_directions
from .icrefine import (
    RefineConfig,
    RegionLabelMap,
    camera_points,
    plane_ray_depths,
    ransac_plane,
)
from .jhfilter import ScoreMap
from .pmstereo import HypothesisMap, PixelState

# radius of the collar of reliable pixels added around a textureless region
COLLAR_RADIUS = 5


@dataclass(frozen=True)
class SegConfig:
    """
    Textureless segmentation parameters.

    Args:
        edge_threshold: Roberts magnitude above which a pixel is an edge.
        hough_rho_res: Accumulator resolution along rho in pixels, at least 1.
        hough_theta_res: Accumulator resolution along theta in radians.
        hough_votes_min: Smallest number of votes of a peak.
        hough_gap_max: Largest gap in pixels bridged while tracing a segment.
        hough_len_min: Shortest segment kept, in pixels.
        textureless_min_area: Smallest textureless region as a fraction of
            the image area.
        dilation_radius: Radius of the boundary dilation in pixels.
        hough_max_peaks: Largest number of accumulator peaks traced.
    """

    edge_threshold: float = 0.05
    hough_rho_res: float = 1.0
    hough_theta_res: float = math.pi / 180
    hough_votes_min: int = 50
    hough_gap_max: int = 5
    hough_len_min: int = 30
    textureless_min_area: float = 0.01
    dilation_radius: int = 1
    hough_max_peaks: int = 64

    def __post_init__(self):
        for name in (
            "edge_threshold",
            "hough_rho_res",
            "hough_theta_res",
            "hough_votes_min",
            "hough_gap_max",
            "hough_len_min",
            "dilation_radius",
            "hough_max_peaks",
        ):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive.")
        if self.hough_rho_res < 1:
            raise ValueError("hough_rho_res must be at least one pixel.")
        if not 0 < self.textureless_min_area < 1:
            raise ValueError("textureless_min_area must lie in (0, 1).")


class EdgeMap(NamedTuple):
    magnitude: np.ndarray
    binary: np.ndarray


class LineSegment(NamedTuple):
    """
    A traced line segment.

    Args:
        rho: Signed distance of the line from the image origin.
        theta: Angle of the line normal in ``[0, pi)``.
        endpoints: Segment ends as ``(x, y)`` arrays lying on the line.
        votes: Accumulator votes of the line.
    """

    rho: float
    theta: float
    endpoints: Tuple[np.ndarray, np.ndarray]
    votes: int

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.endpoints[1] - self.endpoints[0]))


def roberts_edges(image: np.ndarray, cfg: SegConfig) -> EdgeMap:
    """
    Roberts cross magnitude; the last row and column are 0.

    Args:
        image: Luminance grid of at least 2x2 pixels.
        cfg: Segmentation configuration.

    Returns:
        Magnitude and thresholded binary edges.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.shape[0] < 2 or image.shape[1] < 2:
        raise ValueError("Image must be at least 2x2.")
    gx = image[:-1, :-1] - image[1:, 1:]
    gy = image[:-1, 1:] - image[1:, :-1]
    magnitude = np.zeros_like(image)
    magnitude[:-1, :-1] = np.sqrt(gx ** 2 + gy ** 2)

    return EdgeMap(magnitude, magnitude > cfg.edge_threshold)


def hough_accumulator(
    binary: np.ndarray, cfg: SegConfig
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Vote every edge pixel into a ``(rho, theta)`` accumulator.

    Votes are cast by ``skimage.transform.hough_line`` on a one pixel rho
    grid; coarser resolutions merge its rows into bins centred on multiples
    of ``hough_rho_res``.

    Returns:
        tuple containing:
            accumulator: Votes of shape ``(num_rho, num_theta)``.
            thetas: Bin angles.
            rhos: Bin distances.
    """
    thetas = np.arange(0.0, math.pi, cfg.hough_theta_res)
    acc, thetas, rhos = hough_line(binary, theta=thetas)
    acc = acc.astype(np.int64)
    if cfg.hough_rho_res != 1:
        coarse = np.floor(rhos / cfg.hough_rho_res + 0.5)
        bins, starts = np.unique(coarse, return_index=True)
        acc = np.add.reduceat(acc, starts, axis=0)
        rhos = bins * cfg.hough_rho_res

    return acc, thetas, rhos


def trace_segments(
    binary: np.ndarray,
    used: np.ndarray,
    rho: float,
    theta: float,
    votes: int,
    cfg: SegConfig,
) -> List[LineSegment]:
    """
    Walk along a line at unit steps and cut it into segments of unused edge
    pixels; pixels of accepted segments are marked used.
    """
    height, width = binary.shape
    normal = np.array([math.cos(theta), math.sin(theta)])
    direction = np.array([-normal[1], normal[0]])
    foot = rho * normal
    extent = math.hypot(height, width)
    ts = np.arange(-math.ceil(extent), math.ceil(extent) + 1, dtype=np.float64)

    samples = foot + ts[:, None] * direction
    hit = np.zeros(ts.size, dtype=bool)
    pixels = []
    for k in (-1.0, 0.0, 1.0):
        px = np.floor(samples + k * normal + 0.5).astype(np.int64)
        inside = (px[:, 0] >= 0) & (px[:, 0] < width) & (px[:, 1] >= 0) & (px[:, 1] < height)
        cx, cy = np.clip(px[:, 0], 0, width - 1), np.clip(px[:, 1], 0, height - 1)
        ok = inside & binary[cy, cx] & ~used[cy, cx]
        hit |= ok
        pixels.append((cx, cy, ok))

    segments = []
    idx = np.nonzero(hit)[0]
    if idx.size == 0:
        return segments
    breaks = np.nonzero(np.diff(idx) > cfg.hough_gap_max + 1)[0]
    starts = np.concatenate([[idx[0]], idx[breaks + 1]])
    stops = np.concatenate([idx[breaks], [idx[-1]]])
    for lo, hi in zip(starts, stops):
        if ts[hi] - ts[lo] < cfg.hough_len_min:
            continue
        for cx, cy, ok in pixels:
            sel = ok.copy()
            sel[:lo] = False
            sel[hi + 1 :] = False
            used[cy[sel], cx[sel]] = True
        segments.append(
            LineSegment(rho, theta, (samples[lo].copy(), samples[hi].copy()), votes)
        )

    return segments


def hough_lines(edges: EdgeMap, cfg: SegConfig) -> List[LineSegment]:
    """
    Hough line segments of a binary edge map.

    Accumulator peaks are local maxima in a 3x3 neighbourhood with at least
    ``hough_votes_min`` votes, visited by descending votes then
    ``(rho, theta)``. Each peak is traced into maximal runs of edge pixels
    bridging gaps of up to ``hough_gap_max`` pixels. Edge pixels claimed by a
    segment are not counted again by later peaks.

    Args:
        edges: Edge map.
        cfg: Segmentation configuration.

    Returns:
        Segments of at least ``hough_len_min`` pixels.
    """
    binary = np.asarray(edges.binary, dtype=bool)
    if not binary.any():
        return []
    acc, thetas, rhos = hough_accumulator(binary, cfg)
    peaks = peak_local_max(
        acc,
        min_distance=1,
        threshold_abs=cfg.hough_votes_min - 0.5,
        exclude_border=False,
    )
    if peaks.size == 0:
        return []
    votes = acc[peaks[:, 0], peaks[:, 1]]
    order = np.lexsort((peaks[:, 1], peaks[:, 0], -votes))[: cfg.hough_max_peaks]

    used = np.zeros_like(binary)
    segments: List[LineSegment] = []
    for i in order:
        rho = float(rhos[peaks[i, 0]])
        theta = float(thetas[peaks[i, 1]])
        segments.extend(trace_segments(binary, used, rho, theta, int(votes[i]), cfg))
    logging.debug(f"hough: {len(order)} peaks traced into {len(segments)} segments")

    return segments


def rasterize_segments(
    segments: Sequence[LineSegment], shape: Tuple[int, int]
) -> np.ndarray:
    """Boolean mask of the pixels covered by the segments."""
    mask = np.zeros(shape, dtype=bool)
    for seg in segments:
        (x0, y0), (x1, y1) = [np.floor(p + 0.5).astype(int) for p in seg.endpoints]
        rr, cc = draw_line(y0, x0, y1, x1)
        keep = (rr >= 0) & (rr < shape[0]) & (cc >= 0) & (cc < shape[1])
        mask[rr[keep], cc[keep]] = True

    return mask


def boundary_mask(
    view: CameraView,
    cfg: SegConfig,
    edges: Optional[EdgeMap] = None,
    segments: Optional[Sequence[LineSegment]] = None,
) -> np.ndarray:
    """Dilated union of the binary edges and the rasterized Hough segments."""
    if edges is None:
        edges = roberts_edges(view.image, cfg)
    if segments is None:
        segments = hough_lines(edges, cfg)
    mask = edges.binary | rasterize_segments(segments, view.shape)

    return binary_dilation(mask, disk(cfg.dilation_radius))


def segment_textureless(
    view: CameraView, cfg: SegConfig
) -> Tuple[RegionLabelMap, List[bool]]:
    """
    Split a view into regions bounded by edges and Hough segments.

    Regions are the 4-connected components of the complement of the boundary
    mask. A region is textureless when its area before boundary folding is at
    least ``textureless_min_area`` of the image. Boundary pixels are then
    folded into their nearest region, so the labels partition the image.

    Args:
        view: The view to segment.
        cfg: Segmentation configuration.

    Returns:
        tuple containing:
            regions: Label map covering every pixel.
            flags: Textureless flag per region label.
    """
    height, width = view.shape
    boundary = boundary_mask(view, cfg)
    components = label(~boundary, connectivity=1)
    num = int(components.max())
    if num == 0:
        return RegionLabelMap(np.zeros((height, width), dtype=np.int64), 1), [False]

    areas = np.bincount(components.ravel(), minlength=num + 1)[1:]
    flags = [bool(a >= cfg.textureless_min_area * height * width) for a in areas]
    nearest = distance_transform_edt(
        boundary, return_distances=False, return_indices=True
    )
    labels = components[nearest[0], nearest[1]] - 1
    logging.info(
        f"view {view.id}: {num} regions, {sum(flags)} textureless "
        f"covering {100 * areas[flags].sum() / (height * width):.1f}%"
    )

    return RegionLabelMap(labels.astype(np.int64), num), flags


def planarize_textureless(
    hmap: HypothesisMap,
    view: CameraView,
    regions: RegionLabelMap,
    flags: Sequence[bool],
    cfg: SegConfig,
    refine_cfg: RefineConfig,
    scores: Optional[ScoreMap] = None,
) -> HypothesisMap:
    """
    Replace non-Confident hypotheses of textureless regions by RANSAC planes.

    The plane of a flagged region is fit to its Confident pixels together
    with the Confident pixels of a collar around it. Confident pixels and
    unflagged regions are never modified.

    Args:
        hmap: Refined hypothesis map.
        view: The view of the map.
        regions: Region label map.
        flags: Textureless flag per region.
        cfg: Segmentation configuration.
        refine_cfg: Configuration of the RANSAC fit.
        scores: Joint filter scores weighting RANSAC sampling; uniform when
            omitted.

    Returns:
        The planarized map.
    """
    if len(flags) != regions.num_regions:
        raise ValueError("One flag per region is required.")
    out = hmap.copy()
    height, width = out.depth.shape
    rng = np.random.default_rng(refine_cfg.rng_seed)
    weights = np.ones((height, width)) if scores is None else scores.aggregate
    points = camera_points(out, view)
    rays = pixel_rays(view.intrinsics)
    viewdirs = view_directions(view.intrinsics)
    confident = out.state == PixelState.CONFIDENT
    footprint = disk(COLLAR_RADIUS)

    for region, idx in enumerate(regions.regions()):
        if not flags[region]:
            continue
        ys, xs = np.unravel_index(idx, (height, width))
        y0, y1 = max(ys.min() - COLLAR_RADIUS, 0), min(ys.max() + COLLAR_RADIUS + 1, height)
        x0, x1 = max(xs.min() - COLLAR_RADIUS, 0), min(xs.max() + COLLAR_RADIUS + 1, width)
        inside = regions.labels[y0:y1, x0:x1] == region
        support = binary_dilation(inside, footprint) & confident[y0:y1, x0:x1]
        model = ransac_plane(
            points[y0:y1, x0:x1][support],
            weights[y0:y1, x0:x1][support],
            refine_cfg,
            rng=rng,
        )
        if model is None:
            logging.debug(f"region {region}: no plane from {support.sum()} pixels")
            continue

        target = inside & ~confident[y0:y1, x0:x1]
        depth = plane_ray_depths(model, rays[y0:y1, x0:x1][target])
        ok = np.isfinite(depth)
        ty, tx = np.nonzero(target)
        ty, tx = ty[ok] + y0, tx[ok] + x0
        out.depth[ty, tx] = depth[ok]
        out.normal[ty, tx] = orient_normals(
            np.broadcast_to(-model.normal, (ty.size, 3)), viewdirs[ty, tx]
        )
        out.state[ty, tx] = PixelState.FILLED
        logging.debug(f"region {region}: planarized {ty.size} pixels")

    return out
