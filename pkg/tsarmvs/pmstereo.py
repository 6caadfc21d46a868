"""
Copyright (c) tsarmvs contributors.

This source code is licensed under the MIT license found in the
LICENSE file in the root directory of this source tree.
"""

import logging
import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from .geom import (
    CameraView,
    PlaneHypothesis,
    orient_normals,
    pixel_rays,
    relative_pose,
    view_directions,
)

# candidate offsets (dx, dy); every offset has odd |dx| + |dy| so it reads the
# opposite checkerboard parity. The near ring is the four axial neighbours plus
# a pinwheel half of the ring at distance sqrt(5).
NEAR_OFFSETS = (
    (-1, 0),
    (1, 0),
    (0, -1),
    (0, 1),
    (1, 2),
    (-1, -2),
    (2, -1),
    (-2, 1),
)
FAR_OFFSETS = ((-9, 0), (9, 0), (0, -17), (0, 17))

MAX_NORMAL_JITTER = math.radians(10.0)
VARIANCE_EPS = 1e-12


class InsufficientViewsError(ValueError):
    """Raised when PatchMatch is run without any source view."""


class PixelState(IntEnum):
    CONFIDENT = 0
    DISCARDED = 1
    FILLED = 2


@dataclass(frozen=True)
class PatchMatchConfig:
    """
    PatchMatch parameters.

    Args:
        iterations: Number of full red/black iterations.
        patch_radius: Patch half-width in pixels.
        depth_min: Smallest depth hypothesis.
        depth_max: Largest depth hypothesis.
        num_src_views: Number of source views used for matching, 0 for all.
        bilateral_sigma_spatial: Spatial falloff of the patch weights in
            pixels.
        bilateral_sigma_color: Luminance falloff of the patch weights.
        cost_max: Cost assigned to invalid or degenerate matches.
        rng_seed: Seed of all random draws.
    """

    iterations: int = 4
    patch_radius: int = 5
    depth_min: float = 1.0
    depth_max: float = 8.0
    num_src_views: int = 0
    bilateral_sigma_spatial: float = 5.0
    bilateral_sigma_color: float = 0.12
    cost_max: float = 2.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative.")
        if self.patch_radius < 1:
            raise ValueError("patch_radius must be at least 1.")
        if not 0 < self.depth_min <= self.depth_max:
            raise ValueError("Depth range must satisfy 0 < depth_min <= depth_max.")
        if self.num_src_views < 0:
            raise ValueError("num_src_views must be non-negative.")
        if self.bilateral_sigma_spatial <= 0 or self.bilateral_sigma_color <= 0:
            raise ValueError("Bilateral sigmas must be positive.")
        if self.cost_max <= 0:
            raise ValueError("cost_max must be positive.")


@dataclass
class HypothesisMap:
    """
    Per-pixel plane hypotheses of one view.

    Args:
        depth: Camera-frame depth of shape ``(H, W)``.
        normal: Camera-facing unit normals of shape ``(H, W, 3)``.
        cost: Matching cost of shape ``(H, W)``.
        state: ``PixelState`` values of shape ``(H, W)``.
    """

    depth: np.ndarray
    normal: np.ndarray
    cost: np.ndarray
    state: np.ndarray

    def __post_init__(self):
        shape = self.depth.shape
        if len(shape) != 2:
            raise ValueError("Depth must be a 2D grid.")
        if self.normal.shape != shape + (3,):
            raise ValueError("Normal grid does not match depth grid.")
        if self.cost.shape != shape or self.state.shape != shape:
            raise ValueError("Cost and state grids must match depth grid.")

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    def hypothesis(self, x: int, y: int) -> PlaneHypothesis:
        return PlaneHypothesis(float(self.depth[y, x]), self.normal[y, x].copy())

    def state_counts(self) -> Dict[str, int]:
        return {
            state.name.lower(): int(np.count_nonzero(self.state == state))
            for state in PixelState
        }

    def copy(self) -> "HypothesisMap":
        return HypothesisMap(
            self.depth.copy(), self.normal.copy(), self.cost.copy(), self.state.copy()
        )


def select_sources(
    srcs: Sequence[CameraView], cfg: PatchMatchConfig
) -> List[CameraView]:
    if len(srcs) == 0:
        raise InsufficientViewsError("At least one source view is required.")
    if cfg.num_src_views == 0:
        return list(srcs)

    return list(srcs[: cfg.num_src_views])


class CostEvaluator:
    """
    Batched bilateral weighted NCC between a reference view and its sources.

    Every patch sample of a chunk of pixels is warped through the plane
    induced homography of its pixel's hypothesis and bilinearly sampled in
    each source image with ``grid_sample``. A source is invalid for a pixel
    (cost ``cost_max``) when any in-image patch sample lands outside the source
    image or behind the source camera, or when the plane passes through a
    camera center.
    """

    def __init__(
        self,
        ref: CameraView,
        srcs: Sequence[CameraView],
        cfg: PatchMatchConfig,
        chunk_size: int = 4096,
    ):
        if len(srcs) == 0:
            raise InsufficientViewsError("At least one source view is required.")
        self.ref = ref
        self.cfg = cfg
        self.chunk_size = chunk_size
        self.height, self.width = ref.shape
        self.ref_image = torch.from_numpy(ref.image)
        self.k_inv = torch.from_numpy(ref.intrinsics.inverse)

        r = cfg.patch_radius
        dy, dx = np.mgrid[-r : r + 1, -r : r + 1]
        self.offsets = torch.from_numpy(
            np.stack([dx.ravel(), dy.ravel()], axis=-1).astype(np.int64)
        )
        sq_dist = (dx.ravel() ** 2 + dy.ravel() ** 2).astype(np.float64)
        self.spatial_weights = torch.from_numpy(
            np.exp(-sq_dist / (2 * cfg.bilateral_sigma_spatial ** 2))
        )

        self.sources = []
        for src in srcs:
            rot, trans = relative_pose(ref, src)
            k_src = src.intrinsics.matrix
            self.sources.append(
                dict(
                    image=torch.from_numpy(src.image)[None, None],
                    a=torch.from_numpy(k_src @ rot @ ref.intrinsics.inverse),
                    b=torch.from_numpy(k_src @ trans),
                    center=torch.from_numpy(-rot.T @ trans),
                    height=src.shape[0],
                    width=src.shape[1],
                )
            )

    @property
    def num_views(self) -> int:
        return len(self.sources)

    def view_costs(
        self, xs: np.ndarray, ys: np.ndarray, depths: np.ndarray, normals: np.ndarray
    ) -> np.ndarray:
        """
        Per-source costs.

        Args:
            xs: Integer pixel columns of shape ``(N,)``.
            ys: Integer pixel rows of shape ``(N,)``.
            depths: Hypothesis depths of shape ``(N,)``.
            normals: Hypothesis normals of shape ``(N, 3)``.

        Returns:
            Costs of shape ``(N, num_views)``.
        """
        xs = np.asarray(xs, dtype=np.int64).ravel()
        ys = np.asarray(ys, dtype=np.int64).ravel()
        depths = np.asarray(depths, dtype=np.float64).ravel()
        normals = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
        out = np.empty((xs.shape[0], self.num_views), dtype=np.float64)
        for start in range(0, xs.shape[0], self.chunk_size):
            stop = start + self.chunk_size
            out[start:stop] = self._chunk_costs(
                torch.from_numpy(xs[start:stop]),
                torch.from_numpy(ys[start:stop]),
                torch.from_numpy(depths[start:stop]),
                torch.from_numpy(normals[start:stop]),
            ).numpy()

        return out

    def __call__(
        self, xs: np.ndarray, ys: np.ndarray, depths: np.ndarray, normals: np.ndarray
    ) -> np.ndarray:
        """Best-half aggregated cost of shape ``(N,)``."""
        return aggregate_costs(self.view_costs(xs, ys, depths, normals))

    def _chunk_costs(
        self,
        xs: torch.Tensor,
        ys: torch.Tensor,
        depths: torch.Tensor,
        normals: torch.Tensor,
    ) -> torch.Tensor:
        cfg = self.cfg
        qx = xs[:, None] + self.offsets[None, :, 0]
        qy = ys[:, None] + self.offsets[None, :, 1]
        inside = (qx >= 0) & (qx < self.width) & (qy >= 0) & (qy < self.height)
        ref_vals = self.ref_image[
            qy.clamp(0, self.height - 1), qx.clamp(0, self.width - 1)
        ]
        center_vals = self.ref_image[ys, xs]
        weights = (
            self.spatial_weights[None, :]
            * torch.exp(
                -((ref_vals - center_vals[:, None]) ** 2)
                / (2 * cfg.bilateral_sigma_color ** 2)
            )
            * inside
        )

        ones = torch.ones_like(depths)
        center_rays = torch.stack([xs.double(), ys.double(), ones], dim=-1) @ self.k_inv.T
        plane_offset = torch.sum(normals * center_rays, dim=-1) * depths
        safe_offset = torch.where(
            plane_offset.abs() > 1e-12, plane_offset, torch.ones_like(plane_offset)
        )
        plane_vec = (normals @ self.k_inv) / safe_offset[:, None]
        homog = torch.stack([qx.double(), qy.double(), torch.ones_like(ref_vals)], dim=-1)
        plane_term = torch.sum(homog * plane_vec[:, None, :], dim=-1)

        costs = []
        for src in self.sources:
            warped = homog @ src["a"].T + plane_term[..., None] * src["b"]
            z = warped[..., 2]
            safe_z = torch.where(z > 1e-12, z, torch.ones_like(z))
            u = warped[..., 0] / safe_z
            v = warped[..., 1] / safe_z
            in_src = (
                (z > 1e-12)
                & (u >= 0)
                & (u <= src["width"] - 1)
                & (v >= 0)
                & (v <= src["height"] - 1)
            )
            valid = torch.all(in_src | ~inside, dim=1)
            center_dist = torch.sum(normals * src["center"], dim=-1)
            valid &= (plane_offset.abs() > 1e-12) & (
                (center_dist - plane_offset).abs() > 1e-12
            )

            u = torch.where(in_src, u, torch.zeros_like(u))
            v = torch.where(in_src, v, torch.zeros_like(v))
            grid = torch.stack(
                [2 * u / (src["width"] - 1) - 1, 2 * v / (src["height"] - 1) - 1],
                dim=-1,
            )
            src_vals = F.grid_sample(
                src["image"], grid[None], mode="bilinear", align_corners=True
            )[0, 0]
            cost = weighted_ncc_cost(ref_vals, src_vals, weights, cfg.cost_max)
            costs.append(torch.where(valid, cost, torch.full_like(cost, cfg.cost_max)))

        return torch.stack(costs, dim=-1)


def weighted_ncc_cost(
    ref_vals: torch.Tensor,
    src_vals: torch.Tensor,
    weights: torch.Tensor,
    cost_max: float,
) -> torch.Tensor:
    """
    ``1 - NCC`` of weighted samples along the last dimension, clamped to
    ``[0, cost_max]``; ``cost_max`` when either weighted variance vanishes.
    """
    total = weights.sum(dim=-1, keepdim=True)
    total = torch.where(total > 0, total, torch.ones_like(total))
    w = weights / total
    ref_mean = torch.sum(w * ref_vals, dim=-1, keepdim=True)
    src_mean = torch.sum(w * src_vals, dim=-1, keepdim=True)
    ref_c = ref_vals - ref_mean
    src_c = src_vals - src_mean
    ref_var = torch.sum(w * ref_c * ref_c, dim=-1)
    src_var = torch.sum(w * src_c * src_c, dim=-1)
    cov = torch.sum(w * ref_c * src_c, dim=-1)

    degenerate = (ref_var < VARIANCE_EPS) | (src_var < VARIANCE_EPS)
    denom = torch.sqrt(torch.where(degenerate, torch.ones_like(ref_var), ref_var * src_var))
    cost = torch.clamp(1.0 - cov / denom, 0.0, cost_max)

    return torch.where(degenerate, torch.full_like(cost, cost_max), cost)


def aggregate_costs(view_costs: np.ndarray) -> np.ndarray:
    """Mean of the best ``ceil(V / 2)`` per-view costs along the last axis."""
    num_best = math.ceil(view_costs.shape[-1] / 2)

    return np.mean(np.sort(view_costs, axis=-1)[..., :num_best], axis=-1)


def bilateral_ncc_cost(
    ref: CameraView,
    src: CameraView,
    pixel: Sequence[float],
    hyp: PlaneHypothesis,
    cfg: PatchMatchConfig,
) -> float:
    """Bilateral weighted NCC cost of one pixel against one source view."""
    return multiview_cost(ref, [src], pixel, hyp, cfg)


def multiview_cost(
    ref: CameraView,
    srcs: Sequence[CameraView],
    pixel: Sequence[float],
    hyp: PlaneHypothesis,
    cfg: PatchMatchConfig,
) -> float:
    """
    Multi-view cost of one pixel: the mean of the best half of the per-view
    bilateral NCC costs.
    """
    evaluator = CostEvaluator(ref, srcs, cfg)
    x, y = int(round(pixel[0])), int(round(pixel[1]))
    cost = evaluator(
        np.array([x]), np.array([y]), np.array([hyp.depth]), np.asarray(hyp.normal)[None]
    )

    return float(cost[0])


def random_hypotheses(
    rng: np.random.Generator, shape: Tuple[int, int], cfg: PatchMatchConfig, viewdirs: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    depth = rng.uniform(cfg.depth_min, cfg.depth_max, size=shape)
    normal = orient_normals(rng.standard_normal(shape + (3,)), viewdirs)

    return depth, normal


def random_init(
    view: CameraView,
    cfg: PatchMatchConfig,
    srcs: Optional[Sequence[CameraView]] = None,
) -> HypothesisMap:
    """
    Random depth and camera-facing normal for every pixel.

    Args:
        view: The reference view.
        cfg: PatchMatch configuration.
        srcs: Source views used to evaluate the initial cost. Without sources
            every cost is ``cfg.cost_max``.

    Returns:
        A map with all pixels Confident.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    shape = view.shape
    depth, normal = random_hypotheses(rng, shape, cfg, view_directions(view.intrinsics))
    state = np.full(shape, PixelState.CONFIDENT, dtype=np.uint8)
    if srcs:
        evaluator = CostEvaluator(view, select_sources(srcs, cfg), cfg)
        ys, xs = np.mgrid[0 : shape[0], 0 : shape[1]]
        cost = evaluator(xs.ravel(), ys.ravel(), depth.ravel(), normal.reshape(-1, 3))
        cost = cost.reshape(shape)
    else:
        cost = np.full(shape, cfg.cost_max)

    return HypothesisMap(depth, normal, cost, state)


def rotate_normals(
    normals: np.ndarray, rng: np.random.Generator, max_angle: float
) -> np.ndarray:
    """Rotate each normal about a random perpendicular axis by up to max_angle."""
    axis = rng.standard_normal(normals.shape)
    axis -= np.sum(axis * normals, axis=-1, keepdims=True) * normals
    axis /= np.maximum(np.linalg.norm(axis, axis=-1, keepdims=True), 1e-12)
    angle = rng.uniform(0.0, max_angle, size=normals.shape[:-1])[..., None]

    return normals * np.cos(angle) + np.cross(axis, normals) * np.sin(angle)


def transfer_planes(
    rays: np.ndarray,
    nb_rays: np.ndarray,
    nb_depth: np.ndarray,
    nb_normal: np.ndarray,
) -> np.ndarray:
    """
    Depth at which a pixel's ray meets a neighbour's plane, falling back to the
    neighbour's own depth when the intersection is not in front of the camera.
    """
    plane_offset = np.sum(nb_normal * nb_rays, axis=-1) * nb_depth
    denom = np.sum(nb_normal * rays, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        depth = plane_offset / denom
    bad = ~np.isfinite(depth) | (depth <= 0) | (np.abs(denom) <= 1e-12)

    return np.where(bad, nb_depth, depth)


def checkerboard_iterate(
    hmap: HypothesisMap,
    ref: CameraView,
    srcs: Sequence[CameraView],
    cfg: PatchMatchConfig,
    iteration: int = 0,
    reverse: bool = False,
    evaluator: Optional[CostEvaluator] = None,
) -> HypothesisMap:
    """
    One red/black PatchMatch iteration.

    Pixels with even ``x + y`` are updated first, then the odd ones. Every
    random draw is made for the whole grid before a half-pass, and candidates
    only read the opposite parity, so the result does not depend on the order
    in which same-parity pixels are visited.

    Args:
        hmap: Current hypotheses; not modified.
        ref: Reference view.
        srcs: Source views.
        cfg: PatchMatch configuration.
        iteration: Iteration index, mixed into the random seed.
        reverse: Visit same-parity pixels in reverse raster order.
        evaluator: Optional prebuilt cost evaluator.

    Returns:
        The updated map.
    """
    if hmap.depth.shape != ref.shape:
        raise ValueError("Hypothesis map does not match the reference view.")
    if evaluator is None:
        evaluator = CostEvaluator(ref, select_sources(srcs, cfg), cfg)
    out = hmap.copy()
    rng = np.random.default_rng(np.random.SeedSequence([cfg.rng_seed, iteration + 1]))
    height, width = ref.shape
    rays = pixel_rays(ref.intrinsics)
    viewdirs = view_directions(ref.intrinsics)
    ys, xs = np.mgrid[0:height, 0:width]
    offsets = NEAR_OFFSETS + FAR_OFFSETS

    for parity in (0, 1):
        jitter = rng.uniform(-0.5, 0.5, size=(height, width))
        jittered_normal = orient_normals(
            rotate_normals(out.normal, rng, MAX_NORMAL_JITTER), viewdirs
        )
        rand_depth, rand_normal = random_hypotheses(rng, (height, width), cfg, viewdirs)

        sel = (xs + ys) % 2 == parity
        px, py = xs[sel], ys[sel]
        if reverse:
            px, py = px[::-1], py[::-1]
        num = px.shape[0]
        cur_depth = out.depth[py, px]
        cur_normal = out.normal[py, px]
        p_rays = rays[py, px]

        cand_depth = [cur_depth]
        cand_normal = [cur_normal]
        cand_valid = [np.ones(num, dtype=bool)]
        for dx, dy in offsets:
            nx, ny = px + dx, py + dy
            valid = (nx >= 0) & (nx < width) & (ny >= 0) & (ny < height)
            nx, ny = np.clip(nx, 0, width - 1), np.clip(ny, 0, height - 1)
            nb_normal = out.normal[ny, nx]
            depth = transfer_planes(p_rays, rays[ny, nx], out.depth[ny, nx], nb_normal)
            cand_depth.append(np.clip(depth, cfg.depth_min, cfg.depth_max))
            cand_normal.append(orient_normals(nb_normal, viewdirs[py, px]))
            cand_valid.append(valid)
        cand_depth.append(
            np.clip(cur_depth * np.exp(jitter[py, px]), cfg.depth_min, cfg.depth_max)
        )
        cand_normal.append(cur_normal)
        cand_depth.append(cur_depth)
        cand_normal.append(jittered_normal[py, px])
        cand_depth.append(rand_depth[py, px])
        cand_normal.append(rand_normal[py, px])
        cand_valid.extend([np.ones(num, dtype=bool)] * 3)

        costs = np.empty((num, len(cand_depth)))
        costs[:, 0] = out.cost[py, px]
        for k in range(1, len(cand_depth)):
            costs[:, k] = evaluator(px, py, cand_depth[k], cand_normal[k])
            costs[~cand_valid[k], k] = np.inf

        best = np.argmin(costs, axis=1)
        rows = np.arange(num)
        depth_stack = np.stack(cand_depth, axis=1)
        normal_stack = np.stack(cand_normal, axis=1)
        out.depth[py, px] = depth_stack[rows, best]
        out.normal[py, px] = normal_stack[rows, best]
        out.cost[py, px] = costs[rows, best]

    return out


def run_patchmatch(
    ref: CameraView, srcs: Sequence[CameraView], cfg: PatchMatchConfig
) -> HypothesisMap:
    """
    Random initialization followed by ``cfg.iterations`` red/black passes.

    Args:
        ref: Reference view.
        srcs: Source views, at least one.
        cfg: PatchMatch configuration.

    Returns:
        The estimated hypothesis map, all pixels Confident.
    """
    srcs = select_sources(srcs, cfg)
    evaluator = CostEvaluator(ref, srcs, cfg)
    hmap = random_init(ref, cfg, srcs)
    logging.info(f"view {ref.id}: init mean cost {hmap.cost.mean():.4f}")
    for iteration in range(cfg.iterations):
        hmap = checkerboard_iterate(
            hmap, ref, srcs, cfg, iteration=iteration, evaluator=evaluator
        )
        logging.info(
            f"view {ref.id}: iteration {iteration + 1}/{cfg.iterations} "
            f"mean cost {hmap.cost.mean():.4f}"
        )

    return hmap
