"""
Copyright (c) tsarmvs contributors.

This source code is licensed under the MIT license found in the
LICENSE file in the root directory of this source tree.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import map_coordinates

from ..fusion import PointCloud
from ..geom import (
    CameraIntrinsics,
    CameraPose,
    CameraView,
    look_at,
    orient_normals,
    pixel_rays,
    unproject_depth_map,
)

IMAGE_WIDTH = 640
IMAGE_HEIGHT = 480
FOCAL = 500.0


@dataclass(frozen=True)
class Checkerboard:
    """Checkerboard with square cells of side ``cell`` in plane units."""

    cell: float
    low: float = 0.2
    high: float = 0.8

    def __call__(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        parity = (np.floor(u / self.cell) + np.floor(v / self.cell)) % 2

        return np.where(parity == 0, self.low, self.high)


@dataclass(frozen=True)
class ValueNoise:
    """
    Seeded lattice of random values, bilinearly interpolated and tiled.

    Args:
        texel: Lattice spacing in plane units.
        amplitude: Half-range of the values around ``mean``.
        seed: Lattice seed.
        mean: Mean luminance.
        size: Lattice nodes per side before the pattern repeats.
    """

    texel: float
    amplitude: float
    seed: int = 0
    mean: float = 0.5
    size: int = 1024

    def __call__(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        lattice = self.mean + rng.uniform(
            -self.amplitude, self.amplitude, size=(self.size, self.size)
        )
        coords = np.stack([v / self.texel, u / self.texel])

        return map_coordinates(lattice, coords, order=1, mode="grid-wrap")


@dataclass(frozen=True)
class Constant:
    level: float = 0.5

    def __call__(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        return np.full(np.shape(u), self.level, dtype=np.float64)


@dataclass(frozen=True)
class ScenePlane:
    """
    A textured convex polygon on the world plane ``normal . X = dist``.

    Args:
        normal: Unit world normal.
        dist: Plane offset.
        origin: World point of plane coordinate ``(0, 0)``.
        axis_u: Unit in-plane axis of the first plane coordinate.
        axis_v: Unit in-plane axis of the second plane coordinate.
        polygon: Convex counter-clockwise polygon ``(K, 2)`` in plane
            coordinates.
        texture: Callable mapping plane coordinates to luminance.
    """

    normal: np.ndarray
    dist: float
    origin: np.ndarray
    axis_u: np.ndarray
    axis_v: np.ndarray
    polygon: np.ndarray
    texture: Callable[[np.ndarray, np.ndarray], np.ndarray]

    @classmethod
    def rectangle(
        cls,
        origin: Sequence[float],
        axis_u: Sequence[float],
        axis_v: Sequence[float],
        size_u: float,
        size_v: float,
        texture: Callable[[np.ndarray, np.ndarray], np.ndarray],
    ) -> "ScenePlane":
        origin = np.asarray(origin, dtype=np.float64)
        axis_u = np.asarray(axis_u, dtype=np.float64)
        axis_v = np.asarray(axis_v, dtype=np.float64)
        normal = np.cross(axis_u, axis_v)
        polygon = np.array([[0.0, 0.0], [size_u, 0.0], [size_u, size_v], [0.0, size_v]])

        return cls(normal, float(normal @ origin), origin, axis_u, axis_v, polygon, texture)

    @property
    def textureless(self) -> bool:
        return isinstance(self.texture, Constant)

    def contains(self, uv: np.ndarray, eps: float = 1e-9) -> np.ndarray:
        """Whether plane coordinates ``(..., 2)`` fall inside the polygon."""
        inside = np.ones(uv.shape[:-1], dtype=bool)
        for a, b in zip(self.polygon, np.roll(self.polygon, -1, axis=0)):
            edge = b - a
            rel = uv - a
            inside &= edge[0] * rel[..., 1] - edge[1] * rel[..., 0] >= -eps

        return inside

    def plane_coords(self, points: np.ndarray) -> np.ndarray:
        rel = points - self.origin

        return np.stack([rel @ self.axis_u, rel @ self.axis_v], axis=-1)


class CameraPlacement(NamedTuple):
    intrinsics: CameraIntrinsics
    pose: CameraPose


@dataclass(frozen=True)
class SceneSpec:
    """
    A synthetic scene.

    Args:
        name: Scene name.
        planes: Textured planes.
        cameras: Camera placements; the first one is the reference view.
        noise_sigma: Standard deviation of luminance noise.
        rng_seed: Seed of the luminance noise.
        depth_range: Depth range covering every view.
    """

    name: str
    planes: Tuple[ScenePlane, ...]
    cameras: Tuple[CameraPlacement, ...]
    noise_sigma: float = 0.0
    rng_seed: int = 0
    depth_range: Tuple[float, float] = (1.0, 8.0)

    @property
    def image_size(self) -> Tuple[int, int]:
        intr = self.cameras[0].intrinsics
        return intr.width, intr.height

    def scaled(self, factor: int) -> "SceneSpec":
        """The same scene seen through block-averaged intrinsics."""
        cameras = tuple(
            CameraPlacement(c.intrinsics.scaled(factor), c.pose) for c in self.cameras
        )

        return replace(self, cameras=cameras)


@dataclass
class GroundTruth:
    """
    Per-view ground truth of a rendered scene.

    Args:
        depth: Camera-frame depth maps, 0 where the ray hits nothing.
        normal: Camera-facing unit normal maps.
        textureless: Masks of pixels seeing a constant-textured plane.
        plane_index: Index of the plane seen at each pixel, -1 on a miss.
        planes: The world-frame surfaces.
    """

    depth: List[np.ndarray] = field(default_factory=list)
    normal: List[np.ndarray] = field(default_factory=list)
    textureless: List[np.ndarray] = field(default_factory=list)
    plane_index: List[np.ndarray] = field(default_factory=list)
    planes: Tuple[ScenePlane, ...] = ()

    def hit(self, view: int) -> np.ndarray:
        return self.plane_index[view] >= 0


def cast_rays(
    placement: CameraPlacement, planes: Sequence[ScenePlane]
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Intersect every pixel ray of a camera with the nearest plane.

    Returns:
        tuple containing:
            depth: Camera-frame depth, 0 on a miss.
            plane_index: Nearest plane per pixel, -1 on a miss.
            points: World hit points.
    """
    rays = pixel_rays(placement.intrinsics)
    rotation = placement.pose.rotation
    center = -rotation.T @ placement.pose.translation
    world_rays = rays @ rotation

    depth = np.full(rays.shape[:2], np.inf)
    index = np.full(rays.shape[:2], -1, dtype=np.int64)
    for i, plane in enumerate(planes):
        denom = world_rays @ plane.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (plane.dist - plane.normal @ center) / denom
        ok = np.isfinite(t) & (t > 1e-9) & (t < depth)
        points = center + t[..., None] * world_rays
        ok &= plane.contains(plane.plane_coords(np.where(ok[..., None], points, 0.0)))
        depth = np.where(ok, t, depth)
        index = np.where(ok, i, index)

    hit = index >= 0
    depth = np.where(hit, depth, 0.0)
    points = center + depth[..., None] * world_rays

    return depth, index, points


def render(spec: SceneSpec) -> Tuple[List[CameraView], GroundTruth]:
    """
    Render every camera of a scene.

    Each pixel ray is intersected with the nearest plane inside its polygon;
    the plane texture is sampled at the hit point and Gaussian noise is added
    to the luminance only. Missed pixels have depth 0 and luminance 0.

    Args:
        spec: Scene to render.

    Returns:
        tuple containing:
            views: Rendered views with ids in camera order.
            gt: Ground truth of every view.
    """
    views = []
    gt = GroundTruth(planes=spec.planes)
    for cam_id, placement in enumerate(spec.cameras):
        depth, index, points = cast_rays(placement, spec.planes)
        hit = index >= 0
        if not hit.any():
            raise ValueError(f"Camera {cam_id} of scene {spec.name} sees no plane.")

        image = np.zeros(depth.shape)
        normal = np.zeros(depth.shape + (3,))
        textureless = np.zeros(depth.shape, dtype=bool)
        for i, plane in enumerate(spec.planes):
            sel = index == i
            if not sel.any():
                continue
            uv = plane.plane_coords(points[sel])
            image[sel] = plane.texture(uv[:, 0], uv[:, 1])
            normal[sel] = placement.pose.rotation @ plane.normal
            textureless[sel] = plane.textureless

        rays = pixel_rays(placement.intrinsics)
        normal = orient_normals(np.where(hit[..., None], normal, -rays), rays)
        normal[~hit] = 0.0
        if spec.noise_sigma > 0:
            rng = np.random.default_rng(np.random.SeedSequence([spec.rng_seed, cam_id]))
            image = image + rng.normal(0.0, spec.noise_sigma, size=image.shape)
        image = np.where(hit, np.clip(image, 0.0, 1.0), 0.0)

        views.append(CameraView(cam_id, placement.intrinsics, placement.pose, image))
        gt.depth.append(depth)
        gt.normal.append(normal)
        gt.textureless.append(textureless)
        gt.plane_index.append(index)
        logging.debug(
            f"{spec.name} view {cam_id}: {100 * textureless.mean():.1f}% textureless, "
            f"{100 * (1 - hit.mean()):.1f}% missed"
        )

    return views, gt


def ground_truth_cloud(
    views: Sequence[CameraView], gt: GroundTruth, stride: int = 1
) -> PointCloud:
    """
    Ground-truth points sampled from every rendered view.

    Args:
        views: Rendered views.
        gt: Their ground truth.
        stride: Pixel stride along both image axes.

    Returns:
        World points with normals and the rendered luminance as colour.
    """
    positions, normals, colors = [], [], []
    for i, view in enumerate(views):
        sl = (slice(None, None, stride), slice(None, None, stride))
        hit = gt.hit(i)[sl]
        positions.append(unproject_depth_map(view, gt.depth[i])[sl][hit])
        normals.append((gt.normal[i] @ view.pose.rotation)[sl][hit])
        colors.append(view.rgb()[sl][hit])

    return PointCloud(
        np.concatenate(positions), np.concatenate(normals), np.concatenate(colors)
    )


def default_intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(
        FOCAL, FOCAL, IMAGE_WIDTH / 2, IMAGE_HEIGHT / 2, IMAGE_WIDTH, IMAGE_HEIGHT
    )


def five_cameras(target: Sequence[float], baseline: float) -> Tuple[CameraPlacement, ...]:
    """A reference camera at the origin and four offset cameras, all aimed at target."""
    intrinsics = default_intrinsics()
    centers = [
        (0.0, 0.0, 0.0),
        (-baseline, 0.0, 0.0),
        (baseline, 0.0, 0.0),
        (0.0, -baseline, 0.0),
        (0.0, baseline, 0.0),
    ]

    return tuple(
        CameraPlacement(intrinsics, look_at(np.array(c), np.asarray(target))) for c in centers
    )


def room(
    half_width: float,
    half_height: float,
    near: float,
    far: float,
    textures: Dict[str, Callable[[np.ndarray, np.ndarray], np.ndarray]],
) -> Tuple[ScenePlane, ...]:
    """
    Five walls of an axis-aligned room open towards -z.

    ``textures`` maps "back", "left", "right", "floor" and "ceiling" to a
    texture. The floor lies at ``+half_height`` since image y points down.
    """
    w, h = half_width, half_height
    depth = far - near

    return (
        ScenePlane.rectangle((-w, -h, far), (1, 0, 0), (0, 1, 0), 2 * w, 2 * h, textures["back"]),
        ScenePlane.rectangle((-w, -h, near), (0, 1, 0), (0, 0, 1), 2 * h, depth, textures["left"]),
        ScenePlane.rectangle((w, -h, near), (0, 0, 1), (0, 1, 0), depth, 2 * h, textures["right"]),
        ScenePlane.rectangle((-w, h, near), (0, 0, 1), (1, 0, 0), depth, 2 * w, textures["floor"]),
        ScenePlane.rectangle((-w, -h, near), (1, 0, 0), (0, 0, 1), 2 * w, depth, textures["ceiling"]),
    )


def noise_textures(seed: int) -> Dict[str, Callable[[np.ndarray, np.ndarray], np.ndarray]]:
    names = ("back", "left", "right", "floor", "ceiling")

    return {
        name: ValueNoise(texel=0.02, amplitude=0.35, seed=seed + i)
        for i, name in enumerate(names)
    }


def box_textured() -> SceneSpec:
    return SceneSpec(
        name="box-textured",
        planes=room(1.5, 1.0, -1.0, 3.5, noise_textures(11)),
        cameras=five_cameras((0.0, 0.0, 3.5), baseline=0.3),
        noise_sigma=0.01,
        rng_seed=1,
        depth_range=(1.0, 4.0),
    )


def box_blank_wall() -> SceneSpec:
    textures = noise_textures(21)
    textures["back"] = Constant(0.5)

    return SceneSpec(
        name="box-blank-wall",
        planes=room(1.5, 1.0, -1.0, 3.5, textures),
        cameras=five_cameras((0.0, 0.0, 3.5), baseline=0.3),
        noise_sigma=0.01,
        rng_seed=2,
        depth_range=(1.0, 4.0),
    )


def corridor_blank() -> SceneSpec:
    textures = {
        "back": Constant(0.5),
        "left": Constant(0.35),
        "right": Constant(0.65),
        "ceiling": Constant(0.8),
        "floor": ValueNoise(texel=0.02, amplitude=0.35, seed=31),
    }

    return SceneSpec(
        name="corridor-blank",
        planes=room(1.0, 1.0, -1.0, 6.0, textures),
        cameras=five_cameras((0.0, 0.0, 6.0), baseline=0.4),
        noise_sigma=0.01,
        rng_seed=3,
        depth_range=(0.8, 6.5),
    )


SCENES: Dict[str, Callable[[], SceneSpec]] = {
    "box-textured": box_textured,
    "box-blank-wall": box_blank_wall,
    "corridor-blank": corridor_blank,
}


def standard_scenes() -> List[SceneSpec]:
    """The named scenes in a fixed order."""
    return [factory() for factory in SCENES.values()]


def get_scene(name: str, rng_seed: Optional[int] = None) -> SceneSpec:
    if name not in SCENES:
        raise ValueError(f"Unknown scene {name}; choose from {sorted(SCENES)}.")
    spec = SCENES[name]()
    if rng_seed is not None:
        spec = replace(spec, rng_seed=rng_seed)

    return spec
