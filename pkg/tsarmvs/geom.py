"""
Copyright (c) tsarmvs contributors.

This source code is licensed under the MIT license found in the
LICENSE file in the root directory of this source tree.
"""

from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Tuple

import numpy as np

# tolerance used for orthonormality checks of rotations
ROTATION_TOL = 1e-9


class BehindCameraError(ValueError):
    """Raised when a point does not lie in front of the camera."""


class NonPositiveDepthError(ValueError):
    """Raised when a depth that should be positive is not."""


class DegeneratePlaneError(ValueError):
    """Raised when a plane passes through one of the camera centers."""


@dataclass(frozen=True)
class CameraIntrinsics:
    """
    Pinhole intrinsics.

    Pixel centers sit at integer coordinates with the origin at the top-left
    pixel.

    Args:
        fx: Focal length along x in pixels.
        fy: Focal length along y in pixels.
        cx: Principal point x in pixels.
        cy: Principal point y in pixels.
        width: Image width in pixels.
        height: Image height in pixels.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("Focal lengths must be positive.")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("Principal point must lie inside the image.")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @property
    def inverse(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    def scaled(self, factor: int) -> "CameraIntrinsics":
        """
        Intrinsics of the image block-averaged by an integer factor.

        A block of ``factor`` pixels maps to one pixel whose center lies at the
        mean of the block's pixel centers.

        Args:
            factor: Integer downsampling factor.

        Returns:
            The intrinsics of the downsampled image.
        """
        if factor < 1:
            raise ValueError("Downsampling factor must be at least 1.")
        shift = (factor - 1) / 2.0

        return CameraIntrinsics(
            fx=self.fx / factor,
            fy=self.fy / factor,
            cx=(self.cx - shift) / factor,
            cy=(self.cy - shift) / factor,
            width=self.width // factor,
            height=self.height // factor,
        )


@dataclass(frozen=True)
class CameraPose:
    """
    World-to-camera extrinsics, ``X_cam = rotation @ X_world + translation``.

    Args:
        rotation: A 3x3 orthonormal matrix with determinant 1.
        translation: A 3-vector in world units.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rotation = np.asarray(self.rotation, dtype=np.float64)
        translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if rotation.shape != (3, 3):
            raise ValueError("Rotation must be a 3x3 matrix.")
        if not np.allclose(rotation.T @ rotation, np.eye(3), rtol=0, atol=ROTATION_TOL):
            raise ValueError("Rotation is not orthonormal.")
        if abs(np.linalg.det(rotation) - 1.0) > ROTATION_TOL:
            raise ValueError("Rotation determinant is not 1.")
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls(np.eye(3), np.zeros(3))


@dataclass(frozen=True)
class CameraView:
    """
    A calibrated view with its luminance image.

    Args:
        id: View index.
        intrinsics: Pinhole intrinsics.
        pose: World-to-camera pose.
        image: Luminance image of shape ``(height, width)`` in [0, 1].
        color: Optional RGB image of shape ``(height, width, 3)`` in [0, 1],
            only used to colour fused points.
    """

    id: int
    intrinsics: CameraIntrinsics
    pose: CameraPose
    image: np.ndarray
    color: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        image = np.asarray(self.image, dtype=np.float64)
        if image.shape != (self.intrinsics.height, self.intrinsics.width):
            raise ValueError(
                f"Image shape {image.shape} does not match intrinsics "
                f"({self.intrinsics.height}, {self.intrinsics.width})."
            )
        object.__setattr__(self, "image", image)
        if self.color is not None and self.color.shape[:2] != image.shape:
            raise ValueError("Color image shape does not match luminance image.")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.image.shape

    def rgb(self) -> np.ndarray:
        """The colour image, or the luminance replicated to three channels."""
        if self.color is not None:
            return self.color
        return np.repeat(self.image[..., None], 3, axis=-1)


class PlaneHypothesis(NamedTuple):
    """
    Per-pixel plane hypothesis.

    Args:
        depth: Camera-frame z of the point seen at the pixel.
        normal: Unit normal in camera coordinates, facing the camera.
    """

    depth: float
    normal: np.ndarray


def look_at(
    center: np.ndarray, target: np.ndarray, down: Tuple[float, float, float] = (0, 1, 0)
) -> CameraPose:
    """
    Build a pose whose optical axis points from ``center`` to ``target``.

    Args:
        center: Camera center in world coordinates.
        target: Point the camera looks at.
        down: World direction that should map to the image's +y axis.

    Returns:
        The world-to-camera pose.
    """
    center = np.asarray(center, dtype=np.float64)
    z_axis = np.asarray(target, dtype=np.float64) - center
    z_axis = z_axis / np.linalg.norm(z_axis)
    x_axis = np.cross(np.asarray(down, dtype=np.float64), z_axis)
    norm = np.linalg.norm(x_axis)
    if norm < 1e-12:
        raise ValueError("Viewing direction is parallel to the down vector.")
    x_axis = x_axis / norm
    y_axis = np.cross(z_axis, x_axis)
    rotation = np.stack([x_axis, y_axis, z_axis])

    return CameraPose(rotation, -rotation @ center)


def pixel_rays(intrinsics: CameraIntrinsics) -> np.ndarray:
    """
    Camera-frame rays with unit z for every pixel.

    Returns:
        Array of shape ``(height, width, 3)``.
    """
    ys, xs = np.mgrid[0 : intrinsics.height, 0 : intrinsics.width].astype(np.float64)
    rays = np.stack(
        [
            (xs - intrinsics.cx) / intrinsics.fx,
            (ys - intrinsics.cy) / intrinsics.fy,
            np.ones_like(xs),
        ],
        axis=-1,
    )

    return rays


def view_directions(intrinsics: CameraIntrinsics) -> np.ndarray:
    """Unit viewing directions for every pixel, shape ``(height, width, 3)``."""
    rays = pixel_rays(intrinsics)

    return rays / np.linalg.norm(rays, axis=-1, keepdims=True)


def orient_normals(normals: np.ndarray, viewdirs: np.ndarray) -> np.ndarray:
    """
    Normalize normals and flip those not facing the camera.

    Args:
        normals: Array of shape ``(..., 3)``.
        viewdirs: Viewing directions broadcastable to ``normals``.

    Returns:
        Unit normals with ``normal . viewdir < 0``.
    """
    normals = normals / np.linalg.norm(normals, axis=-1, keepdims=True)
    flip = np.sum(normals * viewdirs, axis=-1, keepdims=True) >= 0

    return np.where(flip, -normals, normals)


def make_hypothesis(
    depth: float, normal: np.ndarray, viewdir: np.ndarray
) -> PlaneHypothesis:
    """
    Build a camera-facing, unit-normal plane hypothesis.

    Args:
        depth: Positive camera-frame depth.
        normal: Any non-zero 3-vector.
        viewdir: Viewing direction of the pixel.

    Returns:
        The normalized hypothesis.
    """
    if not depth > 0:
        raise NonPositiveDepthError(f"Depth must be positive, got {depth}.")
    normal = np.asarray(normal, dtype=np.float64)
    if np.linalg.norm(normal) < 1e-12:
        raise ValueError("Normal must be non-zero.")

    return PlaneHypothesis(float(depth), orient_normals(normal, np.asarray(viewdir)))


def world_to_camera(view: CameraView, points: np.ndarray) -> np.ndarray:
    """Transform world points of shape ``(..., 3)`` into the camera frame."""
    return points @ view.pose.rotation.T + view.pose.translation


def camera_to_world(view: CameraView, points: np.ndarray) -> np.ndarray:
    """Transform camera-frame points of shape ``(..., 3)`` into the world."""
    return (points - view.pose.translation) @ view.pose.rotation


def project_points(view: CameraView, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Project world points without validity checks.

    Args:
        view: The camera.
        points: World points of shape ``(..., 3)``.

    Returns:
        tuple containing:
            pixels: Array of shape ``(..., 2)``; non-finite where z is zero.
            depths: Camera-frame z of shape ``(...)``.
    """
    cam = world_to_camera(view, points)
    z = cam[..., 2]
    intr = view.intrinsics
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * cam[..., 0] / z + intr.cx
        v = intr.fy * cam[..., 1] / z + intr.cy

    return np.stack([u, v], axis=-1), z


def project(view: CameraView, point: np.ndarray) -> Tuple[np.ndarray, float]:
    """
    Project a world point into a view.

    Args:
        view: The camera.
        point: World point, a 3-vector.

    Returns:
        tuple containing:
            pixel: The projected pixel position.
            depth: The camera-frame z.
    """
    pixel, depth = project_points(view, np.asarray(point, dtype=np.float64))
    if not depth > 1e-12:
        raise BehindCameraError(f"Point {point} is behind camera {view.id}.")

    return pixel, float(depth)


def unproject_pixels(
    view: CameraView, pixels: np.ndarray, depths: np.ndarray
) -> np.ndarray:
    """
    Lift pixels with depths into world points (vectorized, unchecked).

    Args:
        view: The camera.
        pixels: Array of shape ``(..., 2)``.
        depths: Array of shape ``(...)``.

    Returns:
        World points of shape ``(..., 3)``.
    """
    intr = view.intrinsics
    pixels = np.asarray(pixels, dtype=np.float64)
    depths = np.asarray(depths, dtype=np.float64)
    cam = np.stack(
        [
            (pixels[..., 0] - intr.cx) / intr.fx * depths,
            (pixels[..., 1] - intr.cy) / intr.fy * depths,
            depths,
        ],
        axis=-1,
    )

    return camera_to_world(view, cam)


def unproject(view: CameraView, pixel: np.ndarray, depth: float) -> np.ndarray:
    """
    Lift a pixel at a given camera-frame depth into the world.

    Args:
        view: The camera.
        pixel: Pixel position, a 2-vector.
        depth: Positive camera-frame z.

    Returns:
        The world point.
    """
    if not depth > 0:
        raise NonPositiveDepthError(f"Depth must be positive, got {depth}.")

    return unproject_pixels(view, np.asarray(pixel, dtype=np.float64), depth)


def unproject_depth_map(view: CameraView, depth: np.ndarray) -> np.ndarray:
    """World points for every pixel of a depth map, shape ``(H, W, 3)``."""
    cam = pixel_rays(view.intrinsics) * depth[..., None]

    return camera_to_world(view, cam)


def relative_pose(ref: CameraView, src: CameraView) -> Tuple[np.ndarray, np.ndarray]:
    """
    Rotation and translation taking ref camera coordinates to src camera
    coordinates.
    """
    rot = src.pose.rotation @ ref.pose.rotation.T
    trans = src.pose.translation - rot @ ref.pose.translation

    return rot, trans


def plane_homography(
    ref: CameraView, src: CameraView, pixel: np.ndarray, hyp: PlaneHypothesis
) -> np.ndarray:
    """
    Homography induced by a pixel's plane hypothesis.

    The plane passes through the ref point seen at ``pixel`` at depth
    ``hyp.depth`` with normal ``hyp.normal``. For a ref camera point X on the
    plane, ``normal . X = c`` so ``X_src = (R + t normal^T / c) X`` and the
    pixel map is ``K_src (R + t normal^T / c) K_ref^-1``.

    Args:
        ref: Reference view.
        src: Source view.
        pixel: Reference pixel, a 2-vector.
        hyp: Plane hypothesis at that pixel.

    Returns:
        3x3 homography mapping homogeneous ref pixels to src pixels.
    """
    pixel = np.asarray(pixel, dtype=np.float64)
    normal = np.asarray(hyp.normal, dtype=np.float64)
    point = ref.intrinsics.inverse @ np.array([pixel[0], pixel[1], 1.0]) * hyp.depth
    offset = float(normal @ point)
    rot, trans = relative_pose(ref, src)
    src_center = -rot.T @ trans
    if abs(offset) <= 1e-12 or abs(float(normal @ src_center) - offset) <= 1e-12:
        raise DegeneratePlaneError("Plane passes through a camera center.")

    return (
        src.intrinsics.matrix
        @ (rot + np.outer(trans, normal) / offset)
        @ ref.intrinsics.inverse
    )
