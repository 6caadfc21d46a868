"""
Copyright (c) tsarmvs contributors.

This source code is licensed under the MIT license found in the
LICENSE file in the root directory of this source tree.
"""

import logging
from dataclasses import dataclass
from typing import Iterable, List, Optional, Tuple

import numpy as np
from skimage.segmentation import relabel_sequential, slic

from .geom import CameraView, orient_normals, pixel_rays, view_directions
from .jhfilter import ScoreMap
from .pmstereo import HypothesisMap, PixelState

COLLINEAR_EPS = 1e-12


@dataclass(frozen=True)
class RefineConfig:
    """
    Iterative correlation refinement parameters.

    Args:
        superpixel_size: Target number of pixels per superpixel.
        slic_compactness: Balance of spatial against lightness distance.
        ransac_iters: Number of RANSAC rounds per plane fit.
        ransac_rel_inlier_tol: Relative ray-depth residual of an inlier.
        ransac_min_inlier_frac: Smallest inlier fraction for an accepted
            plane.
        wmf_radius: Half-width of the weighted median window.
        wmf_sigma_color: Luminance falloff of the median weights.
        accept_rel_tol: Relative distance to the plane under which a
            discarded pixel is restored.
        outer_iters: Number of planarization and filtering rounds.
        rng_seed: Seed of the RANSAC sampling.
        use_planarization: If False, superpixel RANSAC is skipped.
        use_wmf: If False, every weighted median pass is skipped.
    """

    superpixel_size: int = 400
    slic_compactness: float = 10.0
    ransac_iters: int = 256
    ransac_rel_inlier_tol: float = 0.01
    ransac_min_inlier_frac: float = 0.5
    wmf_radius: int = 7
    wmf_sigma_color: float = 0.1
    accept_rel_tol: float = 0.02
    outer_iters: int = 2
    rng_seed: int = 0
    use_planarization: bool = True
    use_wmf: bool = True

    def __post_init__(self):
        for name in (
            "superpixel_size",
            "slic_compactness",
            "ransac_iters",
            "ransac_rel_inlier_tol",
            "wmf_radius",
            "wmf_sigma_color",
            "accept_rel_tol",
            "outer_iters",
        ):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive.")
        if not 0 < self.ransac_min_inlier_frac <= 1:
            raise ValueError("ransac_min_inlier_frac must lie in (0, 1].")


@dataclass(frozen=True)
class RegionLabelMap:
    """
    Integer region label per pixel.

    Args:
        labels: Grid of labels in ``[0, num_regions)``.
        num_regions: Number of regions; every label occurs at least once.
    """

    labels: np.ndarray
    num_regions: int

    def __post_init__(self):
        if self.labels.size and (
            self.labels.min() < 0 or self.labels.max() >= self.num_regions
        ):
            raise ValueError("Labels out of range.")
        counts = np.bincount(self.labels.ravel(), minlength=self.num_regions)
        if np.any(counts == 0):
            raise ValueError("Every label must occur at least once.")

    @classmethod
    def from_labels(cls, labels: np.ndarray) -> "RegionLabelMap":
        """Relabel an arbitrary integer grid to consecutive labels from 0."""
        relabeled, _, _ = relabel_sequential(labels.astype(np.int64) + 1)
        relabeled = relabeled - 1

        return cls(relabeled, int(relabeled.max()) + 1)

    def regions(self) -> List[np.ndarray]:
        """Flat pixel indices of every region, in label order."""
        flat = self.labels.ravel()
        order = np.argsort(flat, kind="stable")
        counts = np.bincount(flat, minlength=self.num_regions)

        return np.split(order, np.cumsum(counts)[:-1])


@dataclass(frozen=True)
class PlaneModel:
    """
    Camera-frame plane ``normal . X = dist``.

    The normal points away from the camera so ``dist`` is positive; the
    camera-facing hypothesis normal is ``-normal``.
    """

    normal: np.ndarray
    dist: float

    def __post_init__(self):
        if abs(np.linalg.norm(self.normal) - 1.0) > 1e-9:
            raise ValueError("Plane normal must be unit length.")
        if not self.dist > 0:
            raise ValueError("Plane distance must be positive.")


def superpixels(view: CameraView, cfg: RefineConfig) -> RegionLabelMap:
    """
    SLIC superpixels on lightness with connectivity enforcement.

    Args:
        view: The view to segment.
        cfg: Refinement configuration.

    Returns:
        The superpixel label map.
    """
    height, width = view.shape
    n_segments = max(1, int(round(height * width / cfg.superpixel_size)))
    # compactness is given on a 0-100 lightness scale; slic may rescale its
    # input to [0, 1], so rescale here and convert compactness to match
    image = np.asarray(view.image, dtype=np.float64)
    lo, span = float(image.min()), float(image.max() - image.min())
    if span > 0:
        image = (image - lo) / span
    else:
        image = np.zeros_like(image)
        span = 1.0
    labels = slic(
        image,
        n_segments=n_segments,
        compactness=cfg.slic_compactness / (100.0 * span),
        max_num_iter=10,
        channel_axis=None,
        start_label=0,
        enforce_connectivity=True,
    )

    return RegionLabelMap.from_labels(labels)


def camera_points(hmap: HypothesisMap, view: CameraView) -> np.ndarray:
    """Camera-frame points of every pixel, shape ``(H, W, 3)``."""
    return pixel_rays(view.intrinsics) * hmap.depth[..., None]


def plane_ray_depths(model: PlaneModel, rays: np.ndarray) -> np.ndarray:
    """
    Depth at which unit-z rays meet the plane; NaN where they do not meet it
    in front of the camera.
    """
    denom = rays @ model.normal
    with np.errstate(divide="ignore", invalid="ignore"):
        depth = model.dist / denom

    return np.where(denom > 1e-12, depth, np.nan)


def plane_residuals(model: PlaneModel, points: np.ndarray) -> np.ndarray:
    """Relative ray-depth residuals ``|z_plane - z| / z``."""
    z = points[:, 2]
    z_plane = plane_ray_depths(model, points / z[:, None])
    res = np.abs(z_plane - z) / z

    return np.where(np.isfinite(res), res, np.inf)


def plane_inliers(model: PlaneModel, points: np.ndarray, tol: float) -> np.ndarray:
    return plane_residuals(model, points) <= tol


def fit_plane(points: np.ndarray, weights: np.ndarray) -> Optional[PlaneModel]:
    """Weighted least-squares plane through points; None if it meets the camera."""
    if weights.sum() <= 0:
        weights = np.ones_like(weights)
    centroid = np.sum(weights[:, None] * points, axis=0) / weights.sum()
    centered = points - centroid
    cov = (weights[:, None] * centered).T @ centered
    _, vecs = np.linalg.eigh(cov)
    normal = vecs[:, 0]
    dist = float(normal @ centroid)
    if dist < 0:
        normal, dist = -normal, -dist
    if dist <= 1e-12:
        return None

    return PlaneModel(normal / np.linalg.norm(normal), dist)


def candidate_residuals(
    rays: np.ndarray, z: np.ndarray, normals: np.ndarray, dists: np.ndarray
) -> np.ndarray:
    """Relative ray-depth residuals of N points against k planes, shape ``(N, k)``."""
    denom = rays @ normals.T
    with np.errstate(divide="ignore", invalid="ignore"):
        res = np.abs(dists[None, :] / denom - z[:, None]) / z[:, None]

    return np.where((denom > 1e-12) & np.isfinite(res), res, np.inf)


def score_planes(
    rays: np.ndarray, z: np.ndarray, normals: np.ndarray, dists: np.ndarray, tol: float
) -> Tuple[np.ndarray, np.ndarray]:
    """Inlier count and mean inlier residual of every candidate plane."""
    res = candidate_residuals(rays, z, normals, dists)
    inliers = res <= tol
    counts = inliers.sum(axis=0)
    mean_res = np.where(inliers, res, 0).sum(axis=0) / np.maximum(counts, 1)

    return counts, mean_res


def ransac_plane(
    points: np.ndarray,
    weights: np.ndarray,
    cfg: RefineConfig,
    rng: Optional[np.random.Generator] = None,
    chunk_size: int = 1 << 21,
) -> Optional[PlaneModel]:
    """
    Weighted RANSAC plane fit.

    Minimal samples are drawn with probability proportional to ``weights``.
    The candidate with the most inliers wins, ties going to the smaller mean
    inlier residual, and is refit by weighted least squares on its inliers.

    Args:
        points: Camera-frame points of shape ``(N, 3)`` with positive z.
        weights: Sampling weights of shape ``(N,)``.
        cfg: Refinement configuration.
        rng: Random generator; seeded from ``cfg.rng_seed`` when omitted.
        chunk_size: Largest number of point-candidate residuals held at once.

    Returns:
        The plane, or None if there are fewer than 3 points or the best
        inlier fraction is below ``cfg.ransac_min_inlier_frac``.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    weights = np.asarray(weights, dtype=np.float64).ravel()
    if weights.shape[0] != points.shape[0]:
        raise ValueError("weights and points differ in length.")
    num = points.shape[0]
    if num < 3:
        return None
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)

    prob = None
    if np.count_nonzero(weights > 0) >= 3:
        prob = np.clip(weights, 0, None) / np.clip(weights, 0, None).sum()
    samples = np.stack(
        [rng.choice(num, size=3, replace=False, p=prob) for _ in range(cfg.ransac_iters)]
    )

    tri = points[samples]
    normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    norms = np.linalg.norm(normals, axis=-1)
    keep = norms >= COLLINEAR_EPS
    if not keep.any():
        return None
    normals = normals[keep] / norms[keep, None]
    dists = np.sum(normals * tri[keep, 0], axis=-1)
    normals = np.where(dists[:, None] < 0, -normals, normals)
    dists = np.abs(dists)

    rays = points / points[:, 2:3]
    step = max(1, chunk_size // num)
    best, best_count, best_res = -1, -1, np.inf
    for start in range(0, normals.shape[0], step):
        counts, mean_res = score_planes(
            rays,
            points[:, 2],
            normals[start : start + step],
            dists[start : start + step],
            cfg.ransac_rel_inlier_tol,
        )
        # earlier candidates win exact ties
        i = int(np.lexsort((mean_res, -counts))[0])
        if counts[i] > best_count or (counts[i] == best_count and mean_res[i] < best_res):
            best, best_count, best_res = start + i, int(counts[i]), float(mean_res[i])

    if best_count / num < cfg.ransac_min_inlier_frac:
        return None
    best_inliers = (
        candidate_residuals(
            rays, points[:, 2], normals[best : best + 1], dists[best : best + 1]
        )[:, 0]
        <= cfg.ransac_rel_inlier_tol
    )

    return fit_plane(points[best_inliers], weights[best_inliers])


def weighted_median(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """
    Smallest value whose cumulative weight reaches half the total, along the
    last axis.
    """
    values = np.asarray(values, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    order = np.argsort(values, axis=-1, kind="stable")
    sorted_vals = np.take_along_axis(values, order, axis=-1)
    cum = np.cumsum(np.take_along_axis(weights, order, axis=-1), axis=-1)
    idx = np.argmax(cum >= 0.5 * cum[..., -1:], axis=-1)

    return np.take_along_axis(sorted_vals, idx[..., None], axis=-1)[..., 0]


def weighted_median_filter(
    hmap: HypothesisMap,
    view: CameraView,
    target_mask: np.ndarray,
    source_states: Iterable[PixelState],
    cfg: RefineConfig,
    chunk_size: int = 8192,
) -> HypothesisMap:
    """
    Replace target hypotheses by colour-weighted medians of nearby sources.

    Sources are pixels within ``wmf_radius`` whose state is in
    ``source_states`` and which are not targets themselves. Depth is the
    weighted median, normal the weighted mean renormalized. Targets with at
    least one source become Filled; the rest are left untouched.
    """
    if target_mask.shape != hmap.depth.shape:
        raise ValueError("Target mask does not match the hypothesis map.")
    out = hmap.copy()
    height, width = hmap.depth.shape
    source_mask = np.isin(hmap.state, [int(s) for s in source_states]) & ~target_mask
    viewdirs = view_directions(view.intrinsics)

    r = cfg.wmf_radius
    dy, dx = np.mgrid[-r : r + 1, -r : r + 1]
    dy, dx = dy.ravel(), dx.ravel()
    ty, tx = np.nonzero(target_mask)
    for start in range(0, ty.shape[0], chunk_size):
        py, px = ty[start : start + chunk_size], tx[start : start + chunk_size]
        qy, qx = py[:, None] + dy, px[:, None] + dx
        inside = (qy >= 0) & (qy < height) & (qx >= 0) & (qx < width)
        qy, qx = np.clip(qy, 0, height - 1), np.clip(qx, 0, width - 1)
        use = inside & source_mask[qy, qx]
        diff = view.image[qy, qx] - view.image[py, px][:, None]
        weights = np.exp(-(diff ** 2) / (2 * cfg.wmf_sigma_color ** 2)) * use
        has = weights.sum(axis=1) > 0
        if not has.any():
            continue
        weights, qy, qx = weights[has], qy[has], qx[has]
        py, px = py[has], px[has]

        depth = weighted_median(np.where(weights > 0, hmap.depth[qy, qx], np.inf), weights)
        normal = np.sum(weights[..., None] * hmap.normal[qy, qx], axis=1)
        out.depth[py, px] = depth
        out.normal[py, px] = orient_normals(normal, viewdirs[py, px])
        out.state[py, px] = PixelState.FILLED

    return out


def refine(
    hmap: HypothesisMap,
    view: CameraView,
    cfg: RefineConfig,
    scores: Optional[ScoreMap] = None,
) -> HypothesisMap:
    """
    Two-phase iterative correlation refinement.

    Phase one fits a RANSAC plane per superpixel to its Confident pixels,
    restores Discarded pixels that already lie near the plane, fills the rest
    with the plane when enough Confident pixels agree with it, and smooths
    the filled pixels with a weighted median of Confident neighbours. Phase two
    fills the remaining Discarded pixels by a weighted median of Confident and
    Filled neighbours. Confident pixels are never modified.

    Args:
        hmap: Joint-filtered hypothesis map.
        view: The view of the map.
        cfg: Refinement configuration.
        scores: Joint filter scores; their aggregate weights RANSAC sampling.
            Uniform weights are used when omitted.

    Returns:
        The refined map.
    """
    out = hmap.copy()
    if not np.any(out.state == PixelState.DISCARDED):
        return out

    rng = np.random.default_rng(cfg.rng_seed)
    weights = np.ones(out.depth.shape) if scores is None else scores.aggregate
    weights = weights.ravel()
    rays = pixel_rays(view.intrinsics).reshape(-1, 3)
    viewdirs = view_directions(view.intrinsics).reshape(-1, 3)
    regions = superpixels(view, cfg).regions() if cfg.use_planarization else []

    for outer in range(cfg.outer_iters):
        filled = np.zeros(out.depth.shape, dtype=bool)
        restored = 0
        flat_state = out.state.reshape(-1)
        flat_depth = out.depth.reshape(-1)
        flat_normal = out.normal.reshape(-1, 3)
        points = camera_points(out, view).reshape(-1, 3)
        for idx in regions:
            conf = idx[flat_state[idx] == PixelState.CONFIDENT]
            disc = idx[flat_state[idx] == PixelState.DISCARDED]
            if disc.size == 0:
                continue
            model = ransac_plane(points[conf], weights[conf], cfg, rng=rng)
            if model is None:
                continue

            plane_depth = plane_ray_depths(model, rays[disc])
            near = np.abs(flat_depth[disc] - plane_depth) <= cfg.accept_rel_tol * plane_depth
            flat_state[disc[near]] = PixelState.CONFIDENT
            restored += int(near.sum())

            frac = plane_inliers(model, points[conf], cfg.ransac_rel_inlier_tol).mean()
            fill = ~near & np.isfinite(plane_depth)
            if frac < cfg.ransac_min_inlier_frac or not fill.any():
                continue
            target = disc[fill]
            flat_depth[target] = plane_depth[fill]
            flat_normal[target] = orient_normals(
                np.broadcast_to(-model.normal, (target.size, 3)), viewdirs[target]
            )
            flat_state[target] = PixelState.FILLED
            filled.reshape(-1)[target] = True

        logging.debug(
            f"refine round {outer + 1}: restored {restored}, planarized {filled.sum()}"
        )
        if cfg.use_wmf and filled.any():
            out = weighted_median_filter(
                out, view, filled, {PixelState.CONFIDENT}, cfg
            )

    if cfg.use_wmf:
        out = weighted_median_filter(
            out,
            view,
            out.state == PixelState.DISCARDED,
            {PixelState.CONFIDENT, PixelState.FILLED},
            cfg,
        )
    logging.info(f"refine: {out.state_counts()}")

    return out
