"""Depth-based cross-view correspondence: warp fields, inverse warping, occlusion masks.

A warp field maps each pixel of the destination view to a continuous
location in the source view by unprojecting the destination depth,
applying the relative pose, and reprojecting. Inverse warping samples the
source there (nearest by default; bilinear is available for the
depth-differentiable loss path).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraIntrinsics, CameraPose, DepthMap, unproject


class WarpError(ValueError):
    pass


@dataclass
class WarpField:
    """Per-pixel target coordinates in the source view, plus validity.

    targets[v, u] = (x, y) continuous pixel location in the source image;
    reprojected_depth[v, u] is the correspondent's depth in the source
    camera frame. Both are defined only where valid.
    """

    targets: np.ndarray
    reprojected_depth: np.ndarray
    valid: np.ndarray
    source_shape: tuple[int, int]

    def __post_init__(self):
        if self.targets.shape[:2] != self.valid.shape or self.targets.shape[2] != 2:
            raise WarpError("targets must be HxWx2 matching the validity mask")


@dataclass
class OcclusionMask:
    """Binary per-pixel validity of a warp (1 = trustworthy correspondence)."""

    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights)
        if not np.isin(self.weights, (0, 1)).all():
            raise WarpError("occlusion mask must be binary")
        self.weights = self.weights.astype(np.float64)


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5).astype(np.int64)


def compute_warp(
    depth_i: DepthMap,
    pose_i: CameraPose,
    pose_j: CameraPose,
    intrinsics: CameraIntrinsics,
) -> WarpField:
    """Correspondence from view i's pixels into view j, driven by depth_i.

    For each valid pixel of view i: unproject with its depth, transform to
    view j, reproject. Invalid where depth_i is invalid or the reprojection
    leaves view j's frustum.
    """
    h, w = depth_i.shape
    if (h, w) != (intrinsics.height, intrinsics.width):
        raise WarpError("depth map dimensions do not match intrinsics")
    vv, uu = np.mgrid[0:h, 0:w]
    valid_src = depth_i.validity.reshape(-1)
    pix = np.stack([uu.reshape(-1), vv.reshape(-1)], axis=1).astype(np.float64)
    d = np.where(valid_src, depth_i.values.reshape(-1), 1.0)
    world = unproject(pix, d, intrinsics, pose_i)
    cam_j = pose_j.world_to_camera(world)
    z = cam_j[:, 2]
    front = z > 0
    zs = np.where(front, z, 1.0)
    tx = intrinsics.fx * cam_j[:, 0] / zs + intrinsics.cx
    ty = intrinsics.fy * cam_j[:, 1] / zs + intrinsics.cy
    inside = (
        front & (tx >= 0) & (tx < intrinsics.width) & (ty >= 0) & (ty < intrinsics.height)
    )
    valid = valid_src & inside
    targets = np.full((h * w, 2), np.nan)
    targets[valid, 0] = tx[valid]
    targets[valid, 1] = ty[valid]
    rdepth = np.where(valid, z, np.nan)
    return WarpField(
        targets=targets.reshape(h, w, 2),
        reprojected_depth=rdepth.reshape(h, w),
        valid=valid.reshape(h, w),
        source_shape=(intrinsics.height, intrinsics.width),
    )


def sample_nearest(values: np.ndarray, warp: WarpField) -> tuple[np.ndarray, np.ndarray]:
    """Nearest (round half-up) inverse-warp sampling; returns (out, covered)."""
    h, w = warp.valid.shape
    sh, sw = values.shape[:2]
    flat = values.reshape(sh * sw, -1)
    out = np.zeros((h * w, flat.shape[1]))
    covered = np.zeros(h * w, dtype=bool)
    vmask = warp.valid.reshape(-1)
    t = warp.targets.reshape(-1, 2)[vmask]
    u = _round_half_up(t[:, 0])
    v = _round_half_up(t[:, 1])
    ok = (u >= 0) & (u < sw) & (v >= 0) & (v < sh)
    dst = np.flatnonzero(vmask)[ok]
    out[dst] = flat[v[ok] * sw + u[ok]]
    covered[dst] = True
    return out.reshape(h, w, -1), covered.reshape(h, w)


def sample_bilinear(values: np.ndarray, warp: WarpField) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear inverse-warp sampling (used on the depth-differentiable loss path)."""
    h, w = warp.valid.shape
    sh, sw = values.shape[:2]
    vals = values.reshape(sh, sw, -1)
    out = np.zeros((h * w, vals.shape[2]))
    covered = np.zeros(h * w, dtype=bool)
    vmask = warp.valid.reshape(-1)
    t = warp.targets.reshape(-1, 2)[vmask]
    x = np.clip(t[:, 0], 0.0, sw - 1.0)
    y = np.clip(t[:, 1], 0.0, sh - 1.0)
    x0 = np.clip(np.floor(x).astype(np.int64), 0, sw - 2) if sw > 1 else np.zeros(len(x), np.int64)
    y0 = np.clip(np.floor(y).astype(np.int64), 0, sh - 2) if sh > 1 else np.zeros(len(y), np.int64)
    fx = x - x0
    fy = y - y0
    v00 = vals[y0, x0]
    v01 = vals[y0, np.minimum(x0 + 1, sw - 1)]
    v10 = vals[np.minimum(y0 + 1, sh - 1), x0]
    v11 = vals[np.minimum(y0 + 1, sh - 1), np.minimum(x0 + 1, sw - 1)]
    interp = (
        v00 * ((1 - fx) * (1 - fy))[:, None]
        + v01 * (fx * (1 - fy))[:, None]
        + v10 * ((1 - fx) * fy)[:, None]
        + v11 * (fx * fy)[:, None]
    )
    dst = np.flatnonzero(vmask)
    out[dst] = interp
    covered[dst] = True
    return out.reshape(h, w, -1), covered.reshape(h, w)


def inverse_warp(source, warp: WarpField, mode: str = "nearest"):
    """Warp a map into this view's pixel grid by sampling the source.

    `source` may be a NoiseMap2D/GradientMap-like object (with .values and
    .coverage) or a bare HxWxC array; the return type mirrors the input.
    Pixels with an invalid warp are zero and uncovered.
    """
    sampler = {"nearest": sample_nearest, "bilinear": sample_bilinear}[mode]
    if hasattr(source, "values"):
        out, covered = sampler(source.values, warp)
        src_cov = np.asarray(source.coverage, dtype=np.float64)[:, :, None]
        cov_out, _ = sampler(src_cov, warp)
        covered &= cov_out[:, :, 0] > 0.5
        out[~covered] = 0.0
        return type(source)(values=out, coverage=covered)
    out, covered = sampler(np.asarray(source, dtype=np.float64), warp)
    out[~covered] = 0.0
    return out


def occlusion_mask(warp: WarpField, depth_j: DepthMap, delta: float) -> OcclusionMask:
    """1 where the warp's reprojected depth agrees with view j's rendered depth.

    Agreement is relative: |reprojected - d_j(target)| <= delta * d_j(target),
    with the target looked up by nearest pixel. Invalid warps get 0.
    """
    if delta <= 0:
        raise WarpError("occlusion threshold delta must be > 0")
    h, w = warp.valid.shape
    sh, sw = depth_j.shape
    weights = np.zeros(h * w)
    vmask = warp.valid.reshape(-1)
    t = warp.targets.reshape(-1, 2)[vmask]
    u = np.clip(_round_half_up(t[:, 0]), 0, sw - 1)
    v = np.clip(_round_half_up(t[:, 1]), 0, sh - 1)
    dj = depth_j.values.reshape(-1)[v * sw + u]
    dj_valid = depth_j.validity.reshape(-1)[v * sw + u]
    rd = warp.reprojected_depth.reshape(-1)[vmask]
    ok = dj_valid & (np.abs(rd - dj) <= delta * dj)
    weights[np.flatnonzero(vmask)[ok]] = 1.0
    return OcclusionMask(weights=weights.reshape(h, w))
