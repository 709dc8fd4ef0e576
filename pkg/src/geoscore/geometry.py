"""Pinhole cameras, hemisphere pose sampling, projection, and point-splat depth rendering.

Conventions: right-handed world frame with +Y up; camera frame has x right,
y down, z forward (depth is camera-space z). Pixel coordinates are continuous,
with integer coordinates at pixel centers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Sentinel stored in DepthMap.values where validity is False.
DEPTH_INVALID = np.inf

_ORTHONORMAL_TOL = 1e-9


class GeometryError(ValueError):
    """Invalid geometric input (empty cloud, non-orthonormal rotation, ...)."""


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixel units."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise GeometryError("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        """3x3 intrinsic matrix K."""
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @property
    def matrix_inv(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera rigid transform: x_cam = R @ x_world + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        err = np.abs(r.T @ r - np.eye(3)).max()
        if err >= _ORTHONORMAL_TOL:
            raise GeometryError(f"rotation not orthonormal (|R'R - I| = {err:.3g})")
        if np.linalg.det(r) < 0:
            raise GeometryError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    @property
    def forward(self) -> np.ndarray:
        """Optical axis direction in world coordinates."""
        return self.rotation[2]

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return pts @ self.rotation.T + self.translation

    def relative_to(self, other: "CameraPose") -> "CameraPose":
        """Transform taking this camera's frame to `other`'s frame."""
        r = other.rotation @ self.rotation.T
        t = other.translation - r @ self.translation
        return CameraPose(rotation=r, translation=t)


@dataclass(frozen=True)
class PointCloud:
    """World-space 3D points."""

    positions: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        if not np.isfinite(pts).all():
            raise GeometryError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "positions", pts)

    def __len__(self) -> int:
        return self.positions.shape[0]

    def bounding_radius(self, center: np.ndarray | None = None) -> float:
        if len(self) == 0:
            return 0.0
        c = np.zeros(3) if center is None else np.asarray(center, dtype=np.float64)
        return float(np.linalg.norm(self.positions - c, axis=1).max())


@dataclass
class DepthMap:
    """Camera-space depth with per-pixel validity; invalid pixels hold +inf."""

    values: np.ndarray
    validity: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.validity = np.asarray(self.validity, dtype=bool)
        if self.values.shape != self.validity.shape or self.values.ndim != 2:
            raise GeometryError("depth values and validity must be equal HxW arrays")
        valid_vals = self.values[self.validity]
        if valid_vals.size and not (np.isfinite(valid_vals).all() and (valid_vals > 0).all()):
            raise GeometryError("valid depths must be finite and positive")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def project_points(
    points: np.ndarray, intrinsics: CameraIntrinsics, pose: CameraPose
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project world points to continuous pixel coordinates.

    Returns (pixels Nx2, depths N, in_frustum N). Pixels/depths are defined
    only where in_frustum is True; out-of-frustum means z <= 0 or the pixel
    falls outside [0, width) x [0, height).
    """
    cam = pose.world_to_camera(points)
    z = cam[:, 2]
    pixels = np.full((cam.shape[0], 2), np.nan)
    front = z > 0
    zs = np.where(front, z, 1.0)
    pixels[:, 0] = intrinsics.fx * cam[:, 0] / zs + intrinsics.cx
    pixels[:, 1] = intrinsics.fy * cam[:, 1] / zs + intrinsics.cy
    inside = (
        front
        & (pixels[:, 0] >= 0)
        & (pixels[:, 0] < intrinsics.width)
        & (pixels[:, 1] >= 0)
        & (pixels[:, 1] < intrinsics.height)
    )
    return pixels, z, inside


def project(
    point: np.ndarray, intrinsics: CameraIntrinsics, pose: CameraPose
) -> tuple[np.ndarray, float] | None:
    """Project one world point; returns (pixel, depth) or None if out of frustum."""
    pixels, z, inside = project_points(np.asarray(point).reshape(1, 3), intrinsics, pose)
    if not inside[0]:
        return None
    return pixels[0], float(z[0])


def unproject(
    pixels: np.ndarray, depths: np.ndarray, intrinsics: CameraIntrinsics, pose: CameraPose
) -> np.ndarray:
    """Lift continuous pixel coordinates with depths back to world points."""
    px = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
    d = np.asarray(depths, dtype=np.float64).reshape(-1)
    x = (px[:, 0] - intrinsics.cx) / intrinsics.fx * d
    y = (px[:, 1] - intrinsics.cy) / intrinsics.fy * d
    cam = np.stack([x, y, d], axis=1)
    return (cam - pose.translation) @ pose.rotation


def _disc_offsets(radius: float) -> np.ndarray:
    r = int(math.floor(radius))
    if r == 0:
        return np.zeros((1, 2), dtype=np.int64)
    dy, dx = np.mgrid[-r : r + 1, -r : r + 1]
    keep = dx * dx + dy * dy <= radius * radius
    return np.stack([dx[keep], dy[keep]], axis=1)


def render_depth(
    cloud: PointCloud,
    intrinsics: CameraIntrinsics,
    pose: CameraPose,
    splat_radius: float = 1.0,
) -> DepthMap:
    """Z-buffer depth of a point cloud; each point covers a pixel disc.

    Nearest depth wins per pixel; exactly equal depths resolve to the
    lowest point index. Uncovered pixels are invalid.
    """
    if len(cloud) == 0:
        raise GeometryError("cannot render an empty point cloud")
    if splat_radius < 0:
        raise GeometryError("splat_radius must be >= 0")
    h, w = intrinsics.height, intrinsics.width
    buf = np.full(h * w, DEPTH_INVALID)
    pixels, z, inside = project_points(cloud.positions, intrinsics, pose)
    u = np.round(pixels[inside, 0]).astype(np.int64)
    v = np.round(pixels[inside, 1]).astype(np.int64)
    zi = z[inside]
    for dx, dy in _disc_offsets(splat_radius):
        uu = u + dx
        vv = v + dy
        ok = (uu >= 0) & (uu < w) & (vv >= 0) & (vv < h)
        np.minimum.at(buf, vv[ok] * w + uu[ok], zi[ok])
    values = buf.reshape(h, w)
    validity = np.isfinite(values)
    return DepthMap(values=values, validity=validity)


def sample_hemisphere_pose(
    azimuth: float,
    elevation: float,
    radius: float,
    target: np.ndarray = (0.0, 0.0, 0.0),
) -> CameraPose:
    """Look-at pose on the upper hemisphere around `target` (+Y world up).

    azimuth is measured in the XZ plane (0 along +Z), elevation in [0, pi/2]
    up from the equator.
    """
    if radius <= 0:
        raise GeometryError("radius must be positive")
    if not (0.0 <= elevation <= math.pi / 2 + 1e-12):
        raise GeometryError("elevation must lie in [0, pi/2]")
    target = np.asarray(target, dtype=np.float64).reshape(3)
    offset = radius * np.array(
        [
            math.cos(elevation) * math.sin(azimuth),
            math.sin(elevation),
            math.cos(elevation) * math.cos(azimuth),
        ]
    )
    return look_at_pose(target + offset, target)


def look_at_pose(
    position: np.ndarray, target: np.ndarray, world_up: np.ndarray = (0.0, 1.0, 0.0)
) -> CameraPose:
    """World-to-camera pose looking from `position` toward `target`."""
    position = np.asarray(position, dtype=np.float64).reshape(3)
    target = np.asarray(target, dtype=np.float64).reshape(3)
    fwd = target - position
    norm = np.linalg.norm(fwd)
    if norm < 1e-12:
        raise GeometryError("camera position coincides with look-at target")
    fwd = fwd / norm
    up = np.asarray(world_up, dtype=np.float64).reshape(3)
    if abs(float(fwd @ up)) > 1.0 - 1e-9:
        up = np.array([0.0, 0.0, 1.0])  # pole fallback
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    down /= np.linalg.norm(down)
    r = np.stack([right, down, fwd], axis=0)
    return CameraPose(rotation=r, translation=-r @ position)
