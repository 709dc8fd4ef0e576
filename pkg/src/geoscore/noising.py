"""3D-consistent 2D noise maps.

A scalar Gaussian noise field is sampled on the scene point cloud, each
point is conditionally upsampled into N children whose normalized sum
reconstructs the parent, the children are projected and aggregated per
pixel (discrete noise integral), and uncovered pixels are filled from a
noised background sphere. Because all randomness lives in the 3D fields,
maps rendered from nearby viewpoints are correlated at geometrically
corresponding pixels while each map stays pixelwise i.i.d. standard normal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import cKDTree

from .geometry import (
    CameraIntrinsics,
    CameraPose,
    DepthMap,
    PointCloud,
    look_at_pose,
    project_points,
    render_depth,
)
from .scenes import fibonacci_sphere


class NoisingError(ValueError):
    pass


class BackgroundCoverageError(NoisingError):
    """Background sphere too sparse to cover every pixel."""

    def __init__(self, uncovered: int):
        self.uncovered = uncovered
        super().__init__(f"background noise left {uncovered} pixels uncovered; increase sphere_points")


@dataclass(frozen=True)
class NoisingParams:
    """Knobs for the noise pipeline; None fields are resolved from the scene.

    upsample_std defaults to half the median nearest-neighbor distance of
    the cloud, depth_tolerance to 3x upsample_std, and sphere_points to a
    count giving ~background_target_per_pixel projected children per pixel.
    """

    upsample_n: int = 9
    upsample_std: float | None = None
    depth_tolerance: float | None = None
    sphere_radius_factor: float = 4.0
    sphere_points: int | None = None
    background_target_per_pixel: float = 32.0
    splat_radius: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.upsample_n < 1:
            raise NoisingError("upsample_n must be >= 1")
        if self.upsample_std is not None and self.upsample_std < 0:
            raise NoisingError("upsample_std must be >= 0")
        if self.depth_tolerance is not None and self.depth_tolerance <= 0:
            raise NoisingError("depth_tolerance must be > 0")
        if self.sphere_radius_factor <= 1.0:
            raise NoisingError("sphere_radius_factor must exceed 1 (sphere outside scene)")


@dataclass(frozen=True)
class NoiseField3D:
    """Per-point C-channel noise values over a point cloud."""

    values: np.ndarray
    cloud: PointCloud

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.shape[0] != len(self.cloud):
            raise NoisingError("one value vector per cloud point required")
        if not np.isfinite(vals).all():
            raise NoisingError("noise field values must be finite")
        object.__setattr__(self, "values", vals)

    @property
    def channels(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class UpsampledNoiseField:
    """N children per parent; (1/sqrt(N)) * sum of children reconstructs the parent."""

    parent_index: np.ndarray
    positions: np.ndarray
    values: np.ndarray
    factor: int

    @property
    def channels(self) -> int:
        return self.values.shape[1]


@dataclass
class NoiseMap2D:
    """HxWxC pixel noise plus per-pixel coverage flags."""

    values: np.ndarray
    coverage: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 2:
            self.values = self.values[:, :, None]
        self.coverage = np.asarray(self.coverage, dtype=bool)
        if self.values.shape[:2] != self.coverage.shape:
            raise NoisingError("noise values and coverage shapes disagree")
        if not np.isfinite(self.values).all():
            raise NoisingError("noise map must be finite")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape


def median_nn_distance(cloud: PointCloud) -> float:
    """Median nearest-neighbor distance; 0 for single-point clouds."""
    if len(cloud) < 2:
        return 0.0
    tree = cKDTree(cloud.positions)
    d, _ = tree.query(cloud.positions, k=2)
    return float(np.median(d[:, 1]))


def resolve_params(params: NoisingParams, cloud: PointCloud) -> NoisingParams:
    """Fill in scene-dependent defaults (upsample_std, depth_tolerance)."""
    rho = params.upsample_std
    if rho is None:
        rho = 0.5 * median_nn_distance(cloud)
    tau = params.depth_tolerance
    if tau is None:
        tau = max(3.0 * rho, 1e-6)
    return replace(params, upsample_std=rho, depth_tolerance=tau)


def sample_noise_field(cloud: PointCloud, channels: int, rng: np.random.Generator) -> NoiseField3D:
    """I.i.d. standard-normal value per point and channel."""
    if len(cloud) == 0:
        raise NoisingError("cannot noise an empty point cloud")
    return NoiseField3D(values=rng.standard_normal((len(cloud), channels)), cloud=cloud)


def conditional_upsample(
    field: NoiseField3D, params: NoisingParams, rng: np.random.Generator
) -> UpsampledNoiseField:
    """Split each parent into N children around it.

    Child values are mean-removed standard-normal draws plus parent/sqrt(N),
    which makes every child marginally standard normal, children mutually
    uncorrelated, and (1/sqrt(N)) * sum(children) == parent exactly. Child
    positions are isotropic Gaussian of std upsample_std about the parent.
    """
    n = params.upsample_n
    rho = params.upsample_std
    if rho is None:
        rho = 0.5 * median_nn_distance(field.cloud)
    p, c = field.values.shape
    raw = rng.standard_normal((p, n, c))
    children = raw - raw.mean(axis=1, keepdims=True) + field.values[:, None, :] / math.sqrt(n)
    offsets = rho * rng.standard_normal((p, n, 3))
    positions = field.cloud.positions[:, None, :] + offsets
    return UpsampledNoiseField(
        parent_index=np.repeat(np.arange(p), n),
        positions=positions.reshape(p * n, 3),
        values=children.reshape(p * n, c),
        factor=n,
    )


def _integrate(
    positions: np.ndarray,
    values: np.ndarray,
    intrinsics: CameraIntrinsics,
    pose: CameraPose,
    depth: DepthMap | None,
    tau: float | None,
) -> NoiseMap2D:
    """Shared projection + per-pixel sum/sqrt(count) aggregation."""
    h, w = intrinsics.height, intrinsics.width
    pixels, z, _ = project_points(positions, intrinsics, pose)
    # Bin by nearest pixel center over all front-of-camera points, so edge
    # pixels keep their full catch basin [c - 0.5, c + 0.5).
    front = z > 0
    u = np.round(pixels[front, 0]).astype(np.int64)
    v = np.round(pixels[front, 1]).astype(np.int64)
    ok = (u >= 0) & (u < w) & (v >= 0) & (v < h)
    idx = v[ok] * w + u[ok]
    zi = z[front][ok]
    vals = values[front][ok]
    if depth is not None:
        dflat = depth.values.reshape(-1)[idx]
        keep = depth.validity.reshape(-1)[idx] & (np.abs(zi - dflat) <= tau)
        idx = idx[keep]
        vals = vals[keep]
    counts = np.bincount(idx, minlength=h * w)
    out = np.zeros((h * w, vals.shape[1]))
    for ch in range(vals.shape[1]):
        out[:, ch] = np.bincount(idx, weights=vals[:, ch], minlength=h * w)
    covered = counts > 0
    out[covered] /= np.sqrt(counts[covered])[:, None]
    return NoiseMap2D(
        values=out.reshape(h, w, vals.shape[1]),
        coverage=covered.reshape(h, w),
    )


def discrete_noise_integral(
    upsampled: UpsampledNoiseField,
    intrinsics: CameraIntrinsics,
    pose: CameraPose,
    depth: DepthMap,
    tau: float,
) -> NoiseMap2D:
    """Per-pixel n(p) = sum(children in p) / sqrt(count).

    A child contributes to the single pixel it projects into, and only when
    its camera-space depth is within tau of the rendered depth there (this
    drops children on self-occluded back surfaces). Pixels receiving no
    children are left 0 and marked uncovered.
    """
    if tau <= 0:
        raise NoisingError("depth tolerance must be > 0")
    if depth.shape != (intrinsics.height, intrinsics.width):
        raise NoisingError("depth map dimensions do not match intrinsics")
    return _integrate(upsampled.positions, upsampled.values, intrinsics, pose, depth, tau)


def default_sphere_points(
    intrinsics: CameraIntrinsics,
    sphere_radius: float,
    camera_distance: float,
    center: np.ndarray,
    upsample_n: int,
    target_per_pixel: float,
) -> int:
    """Sphere point count giving ~target_per_pixel projected children per pixel.

    A deterministic probe lattice is projected from a representative camera
    at the given distance from the sphere center; the density of the
    sparsest 8x8 image tile (pixel solid angle shrinks off-axis) sets the
    scale so the target holds even at the image corners.
    """
    n_probe = 1 << 17
    probe = fibonacci_sphere(n_probe, radius=sphere_radius, center=center)
    center = np.asarray(center, dtype=np.float64)
    cam_pos = center + np.array([0.0, 0.0, camera_distance])
    pose = look_at_pose(cam_pos, center)
    back = (probe - center) @ (cam_pos - center) <= 0
    pixels, _, inside = project_points(probe[back], intrinsics, pose)
    if not inside.any():
        raise NoisingError("no background sphere point projects into the image")
    h, w = intrinsics.height, intrinsics.width
    tiles = 8
    tu = np.minimum((pixels[inside, 0] * tiles / w).astype(np.int64), tiles - 1)
    tv = np.minimum((pixels[inside, 1] * tiles / h).astype(np.int64), tiles - 1)
    tile_counts = np.bincount(tv * tiles + tu, minlength=tiles * tiles)
    pixels_per_tile = h * w / (tiles * tiles)
    worst_density = tile_counts.min() / (n_probe * pixels_per_tile)
    if worst_density <= 0:
        raise NoisingError("background sphere leaves an image region empty")
    return int(math.ceil(target_per_pixel / (upsample_n * worst_density)))


@dataclass(frozen=True)
class BackgroundField:
    """Noised, upsampled sphere shared by all viewpoints of one iteration."""

    sphere: PointCloud
    upsampled: UpsampledNoiseField
    center: np.ndarray
    radius: float

    def noise_map(self, intrinsics: CameraIntrinsics, pose: CameraPose) -> NoiseMap2D:
        """Integrate the back-facing hemisphere (relative to this camera)."""
        back = (self.sphere.positions - self.center) @ (pose.center - self.center) <= 0
        child_mask = back[self.upsampled.parent_index]
        out = _integrate(
            self.upsampled.positions[child_mask],
            self.upsampled.values[child_mask],
            intrinsics,
            pose,
            depth=None,
            tau=None,
        )
        uncovered = int((~out.coverage).sum())
        if uncovered:
            raise BackgroundCoverageError(uncovered)
        return out


def build_background_field(
    params: NoisingParams,
    intrinsics: CameraIntrinsics,
    channels: int,
    rng: np.random.Generator,
    scene_center: np.ndarray,
    scene_radius: float,
    camera_distance: float,
) -> BackgroundField:
    """Sample, noise, and upsample the background sphere."""
    center = np.asarray(scene_center, dtype=np.float64)
    radius = params.sphere_radius_factor * max(scene_radius, 1e-6)
    count = params.sphere_points
    if count is None:
        count = default_sphere_points(
            intrinsics, radius, camera_distance, center, params.upsample_n,
            params.background_target_per_pixel,
        )
    direction = rng.standard_normal((count, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    sphere = PointCloud(positions=center + radius * direction)
    field = sample_noise_field(sphere, channels, rng)
    # Children jitter at least one pixel footprint at the sphere's far side,
    # so each parent's children spread over neighboring pixels and coverage
    # is governed by the child density, not the sparser parent density.
    spacing = math.sqrt(4.0 * math.pi * radius**2 / count)
    pixel_world = (camera_distance + radius) / min(intrinsics.fx, intrinsics.fy)
    bg_params = replace(params, upsample_std=max(0.5 * spacing, pixel_world))
    upsampled = conditional_upsample(field, bg_params, rng)
    return BackgroundField(sphere=sphere, upsampled=upsampled, center=center, radius=radius)


def spherical_background_noise(
    params: NoisingParams,
    intrinsics: CameraIntrinsics,
    pose: CameraPose,
    rng: np.random.Generator,
    scene_center=(0.0, 0.0, 0.0),
    scene_radius: float = 1.0,
) -> NoiseMap2D:
    """One-shot background map; errors if any pixel stays uncovered."""
    center = np.asarray(scene_center, dtype=np.float64)
    field = build_background_field(
        params, intrinsics, channels=1, rng=rng, scene_center=center,
        scene_radius=scene_radius,
        camera_distance=float(np.linalg.norm(pose.center - center)),
    )
    return field.noise_map(intrinsics, pose)


def composite_noise(foreground: NoiseMap2D, background: NoiseMap2D) -> NoiseMap2D:
    """Foreground where covered, background elsewhere; no blending."""
    if foreground.shape != background.shape:
        raise NoisingError("foreground/background dimensions disagree")
    if not background.coverage.all():
        raise NoisingError("background map must have full coverage")
    sel = foreground.coverage[:, :, None]
    return NoiseMap2D(
        values=np.where(sel, foreground.values, background.values),
        coverage=np.ones_like(foreground.coverage),
    )


class ConsistentNoiseSampler:
    """Noise fields sampled once, rendered into maps for any viewpoint.

    All random draws happen at construction, in a fixed order, so two
    samplers built from identically-seeded generators produce the same 3D
    fields and therefore cross-view-consistent maps. Rendering a map for a
    pose is deterministic.
    """

    def __init__(
        self,
        cloud: PointCloud,
        intrinsics: CameraIntrinsics,
        params: NoisingParams,
        rng: np.random.Generator,
        channels: int = 1,
        camera_distance: float | None = None,
        scene_center=None,
    ):
        if len(cloud) == 0:
            raise NoisingError("cannot noise an empty point cloud")
        self.cloud = cloud
        self.intrinsics = intrinsics
        center = (
            cloud.positions.mean(axis=0) if scene_center is None
            else np.asarray(scene_center, dtype=np.float64)
        )
        self.center = center
        scene_radius = cloud.bounding_radius(center)
        self.params = resolve_params(params, cloud)
        if camera_distance is None:
            camera_distance = 2.5 * max(scene_radius, 1e-6)
        self.field = sample_noise_field(cloud, channels, rng)
        self.upsampled = conditional_upsample(self.field, self.params, rng)
        self.background = build_background_field(
            self.params, intrinsics, channels, rng,
            scene_center=center, scene_radius=scene_radius,
            camera_distance=camera_distance,
        )

    def foreground_map(self, pose: CameraPose, depth: DepthMap | None = None) -> NoiseMap2D:
        if depth is None:
            depth = render_depth(self.cloud, self.intrinsics, pose, self.params.splat_radius)
        return discrete_noise_integral(
            self.upsampled, self.intrinsics, pose, depth, self.params.depth_tolerance
        )

    def noise_map(self, pose: CameraPose, depth: DepthMap | None = None) -> NoiseMap2D:
        fg = self.foreground_map(pose, depth)
        bg = self.background.noise_map(self.intrinsics, pose)
        return composite_noise(fg, bg)


def consistent_noise_map(
    cloud: PointCloud,
    intrinsics: CameraIntrinsics,
    pose: CameraPose,
    params: NoisingParams,
    rng: np.random.Generator,
    channels: int = 1,
    depth: DepthMap | None = None,
) -> NoiseMap2D:
    """End-to-end 3D-consistent noise map for one viewpoint.

    Same generator state and pose give identical maps; two calls with
    identically-seeded generators but different poses share the same 3D
    fields and are therefore correlated at corresponding pixels.
    """
    center = cloud.positions.mean(axis=0)
    sampler = ConsistentNoiseSampler(
        cloud, intrinsics, params, rng, channels=channels,
        camera_distance=float(np.linalg.norm(pose.center - center)),
        scene_center=center,
    )
    return sampler.noise_map(pose, depth)
