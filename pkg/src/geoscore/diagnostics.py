"""Warp self-checks with independent oracles, shared by the CLI and tests."""

from __future__ import annotations

import math

import numpy as np

from .geometry import (
    CameraIntrinsics,
    CameraPose,
    render_depth,
    sample_hemisphere_pose,
)
from .scenes import builtin_scene
from .warping import compute_warp, occlusion_mask


def plane_homography(
    intrinsics: CameraIntrinsics,
    pose_i: CameraPose,
    pose_j: CameraPose,
    plane_normal_cam: np.ndarray,
    plane_distance: float,
) -> np.ndarray:
    """Exact homography for a plane n.X = d in camera i's frame.

    With X_j = R X_i + t the induced map is H = K (R + t n^T / d) K^{-1},
    derived directly from substituting the plane constraint.
    """
    rel = pose_i.relative_to(pose_j)
    n = np.asarray(plane_normal_cam, dtype=np.float64).reshape(3)
    h = rel.rotation + np.outer(rel.translation, n) / plane_distance
    return intrinsics.matrix @ h @ intrinsics.matrix_inv


def apply_homography(h: np.ndarray, pixels: np.ndarray) -> np.ndarray:
    pts = np.concatenate([pixels, np.ones((pixels.shape[0], 1))], axis=1)
    mapped = pts @ h.T
    return mapped[:, :2] / mapped[:, 2:3]


def identity_warp_check(intrinsics: CameraIntrinsics, splat_radius: float = 1.0) -> float:
    """Max |warp target - pixel| for pose_j == pose_i on the sphere scene."""
    scene = builtin_scene("sphere")
    pose = sample_hemisphere_pose(0.0, math.radians(20.0), 2.5)
    depth = render_depth(scene.cloud, intrinsics, pose, splat_radius)
    warp = compute_warp(depth, pose, pose, intrinsics)
    vv, uu = np.mgrid[0 : intrinsics.height, 0 : intrinsics.width]
    grid = np.stack([uu, vv], axis=-1).astype(np.float64)
    err = np.linalg.norm(warp.targets - grid, axis=-1)
    return float(err[warp.valid].max())


def plane_homography_check(
    intrinsics: CameraIntrinsics, separation_deg: float = 5.0, radius: float = 3.0
) -> float:
    """Max |warp - homography oracle| in pixels on a fronto-parallel plane."""
    scene = builtin_scene("plane", grid=200)
    pose_i = sample_hemisphere_pose(0.0, 0.0, radius)
    pose_j = sample_hemisphere_pose(math.radians(separation_deg), 0.0, radius)
    depth = render_depth(scene.cloud, intrinsics, pose_i, splat_radius=1.0)
    warp = compute_warp(depth, pose_i, pose_j, intrinsics)
    # Plane z = 0 sits at camera-space depth `radius` with normal along the
    # optical axis for this fronto-parallel setup.
    h = plane_homography(intrinsics, pose_i, pose_j, np.array([0.0, 0.0, 1.0]), radius)
    valid = warp.valid
    vv, uu = np.mgrid[0 : intrinsics.height, 0 : intrinsics.width]
    pix = np.stack([uu[valid], vv[valid]], axis=1).astype(np.float64)
    expected = apply_homography(h, pix)
    err = np.linalg.norm(warp.targets[valid] - expected, axis=1)
    return float(err.max())


def roundtrip_check(
    intrinsics: CameraIntrinsics,
    separation_deg: float = 5.0,
    delta: float = 0.02,
    splat_radius: float = 1.0,
) -> float:
    """Max i->j->i round-trip pixel error on the sphere scene, masked regions only."""
    scene = builtin_scene("sphere", count=20000)
    pose_i = sample_hemisphere_pose(0.0, math.radians(20.0), 2.5)
    pose_j = sample_hemisphere_pose(math.radians(separation_deg), math.radians(20.0), 2.5)
    depth_i = render_depth(scene.cloud, intrinsics, pose_i, splat_radius)
    depth_j = render_depth(scene.cloud, intrinsics, pose_j, splat_radius)
    warp_ij = compute_warp(depth_i, pose_i, pose_j, intrinsics)
    warp_ji = compute_warp(depth_j, pose_j, pose_i, intrinsics)
    mask_ij = occlusion_mask(warp_ij, depth_j, delta).weights > 0.5
    mask_ji = occlusion_mask(warp_ji, depth_i, delta).weights > 0.5

    ys, xs = np.nonzero(warp_ij.valid & mask_ij)
    t = warp_ij.targets[ys, xs]
    tu = np.floor(t[:, 0] + 0.5).astype(np.int64)
    tv = np.floor(t[:, 1] + 0.5).astype(np.int64)
    tu = np.clip(tu, 0, intrinsics.width - 1)
    tv = np.clip(tv, 0, intrinsics.height - 1)
    ok = warp_ji.valid[tv, tu] & mask_ji[tv, tu]
    back = warp_ji.targets[tv[ok], tu[ok]]
    orig = np.stack([xs[ok], ys[ok]], axis=1).astype(np.float64)
    if back.size == 0:
        return float("nan")
    return float(np.linalg.norm(back - orig, axis=1).max())


def run_warp_checks(intrinsics: CameraIntrinsics) -> dict[str, float]:
    return {
        "identity_max_px": identity_warp_check(intrinsics),
        "plane_homography_max_px": plane_homography_check(intrinsics),
        "roundtrip_max_px": roundtrip_check(intrinsics),
    }


WARP_CHECK_TOLERANCES = {
    "identity_max_px": 1e-6,
    "plane_homography_max_px": 1e-4,
    "roundtrip_max_px": 1.0,
}
