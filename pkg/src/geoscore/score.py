"""Score-distillation core.

Gradient maps are denoiser residuals on noised renderings; averaging them
over noise draws estimates the score of the clean rendering, and chaining
them through the splat renderer's explicit pixel weights yields parameter
gradients. An analytic Gaussian denoiser (closed-form optimal for an
N(target, s^2 I) image prior) stands in for a diffusion model so every
quantity here has a checkable closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .geometry import (
    DEPTH_INVALID,
    CameraIntrinsics,
    CameraPose,
    DepthMap,
    PointCloud,
    _disc_offsets,
    project_points,
    render_depth,
)
from .noising import ConsistentNoiseSampler, NoiseMap2D, NoisingParams
from .warping import OcclusionMask, WarpField, compute_warp, inverse_warp, sample_bilinear

COSINE_NORM_EPS = 1e-8


class ScoreError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    """Ordered positive noise levels with uniform timestep sampling."""

    sigmas: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.sigmas, dtype=np.float64).reshape(-1)
        if s.size == 0 or not (np.isfinite(s).all() and (s > 0).all()):
            raise ScoreError("schedule needs finite positive noise levels")
        object.__setattr__(self, "sigmas", s)

    @classmethod
    def log_uniform(cls, sigma_min: float = 0.1, sigma_max: float = 2.0, steps: int = 50):
        return cls(sigmas=np.geomspace(sigma_min, sigma_max, steps))

    def sample(self, rng: np.random.Generator) -> float:
        return float(self.sigmas[rng.integers(len(self.sigmas))])


class Denoiser(Protocol):
    """Maps a noised image and its noise level to a denoised image."""

    def __call__(self, x: np.ndarray, sigma: float) -> np.ndarray: ...


@dataclass(frozen=True)
class AnalyticGaussianDenoiser:
    """Optimal denoiser for the image prior N(target, prior_std^2 I).

    D(x; sigma) = x + sigma^2 * (target - x) / (prior_std^2 + sigma^2).
    """

    target: np.ndarray
    prior_std: float = 1.0

    def __call__(self, x: np.ndarray, sigma: float) -> np.ndarray:
        gain = sigma**2 / (self.prior_std**2 + sigma**2)
        return x + gain * (self.target - x)

    def closed_form_score(self, z: np.ndarray, sigma: float) -> np.ndarray:
        """Exact expected gradient map for a clean rendering z."""
        return (self.target - z) / (self.prior_std**2 + sigma**2)


@dataclass
class GradientMap:
    """HxWxC score estimate with a coverage mask."""

    values: np.ndarray
    coverage: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 2:
            self.values = self.values[:, :, None]
        self.coverage = np.asarray(self.coverage, dtype=bool)
        if self.values.shape[:2] != self.coverage.shape:
            raise ScoreError("gradient values and coverage shapes disagree")
        if not np.isfinite(self.values).all():
            raise ScoreError("gradient map must be finite")


def _noise_values(n, shape) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(n, NoiseMap2D):
        return n.values, n.coverage
    arr = np.asarray(n, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr, np.ones(arr.shape[:2], dtype=bool)


def gradient_map(z: np.ndarray, n, sigma: float, denoiser: Denoiser) -> GradientMap:
    """g = (D(z + sigma*n; sigma) - (z + sigma*n)) / sigma^2."""
    if sigma <= 0:
        raise ScoreError("noise level must be positive")
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 2:
        z = z[:, :, None]
    nv, cov = _noise_values(n, z.shape)
    if nv.shape != z.shape:
        raise ScoreError("image and noise dimensions disagree")
    x = z + sigma * nv
    return GradientMap(values=(denoiser(x, sigma) - x) / sigma**2, coverage=cov)


def paas_score(
    z: np.ndarray,
    sigma: float,
    denoiser: Denoiser,
    num_samples: int,
    rng: np.random.Generator,
) -> GradientMap:
    """Monte-Carlo mean of gradient maps over i.i.d. standard-normal noise."""
    if num_samples < 1:
        raise ScoreError("num_samples must be >= 1")
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 2:
        z = z[:, :, None]
    acc = np.zeros_like(z)
    for _ in range(num_samples):
        acc += gradient_map(z, rng.standard_normal(z.shape), sigma, denoiser).values
    return GradientMap(values=acc / num_samples, coverage=np.ones(z.shape[:2], dtype=bool))


@dataclass
class ColorPointCloud:
    """Toy optimizable scene: fixed positions, per-point colors and opacities."""

    positions: np.ndarray
    colors: np.ndarray
    opacity: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = self.positions.shape[0]
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(n, -1)
        if self.opacity is None:
            self.opacity = np.ones(n)
        self.opacity = np.asarray(self.opacity, dtype=np.float64).reshape(n)
        if not np.isfinite(self.colors).all():
            raise ScoreError("colors must be finite")

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def cloud(self) -> PointCloud:
        return PointCloud(positions=self.positions)


@dataclass
class RenderResult:
    """Rendered image/depth plus the explicit linear render weights.

    image[p] = sum_k weight(p, k) * colors[k] with the (pixel, point,
    weight) triplets stored in COO form, so d image[p] / d colors[k] is the
    stored weight and gradient chaining is a bincount.
    """

    image: np.ndarray
    depth: DepthMap
    pixel_index: np.ndarray
    point_index: np.ndarray
    weights: np.ndarray

    @property
    def coverage(self) -> np.ndarray:
        return self.depth.validity

    def chain_gradient(self, grad_image: np.ndarray, num_points: int) -> np.ndarray:
        """grad_colors[k] = sum_p grad_image[p] * weight(p, k)."""
        g = np.asarray(grad_image, dtype=np.float64)
        flat = g.reshape(-1, g.shape[-1])
        out = np.zeros((num_points, flat.shape[1]))
        contrib = flat[self.pixel_index] * self.weights[:, None]
        np.add.at(out, self.point_index, contrib)
        return out


def render_color(
    rep: ColorPointCloud,
    intrinsics: CameraIntrinsics,
    pose: CameraPose,
    splat_radius: float = 1.0,
    blend_tolerance: float = 1e-3,
) -> RenderResult:
    """Opacity-weighted average of front-surface point colors per pixel.

    A point contributes to a pixel when its splat covers it and its depth is
    within blend_tolerance of the pixel's z-buffer minimum. Weights are
    opacity / (total opacity at the pixel), making the image linear in the
    colors with explicit coefficients.
    """
    if len(rep) == 0:
        raise ScoreError("cannot render an empty representation")
    h, w = intrinsics.height, intrinsics.width
    pixels, z, inside = project_points(rep.positions, intrinsics, pose)
    pt_idx_all = np.flatnonzero(inside)
    u0 = np.round(pixels[inside, 0]).astype(np.int64)
    v0 = np.round(pixels[inside, 1]).astype(np.int64)
    zi = z[inside]

    offs = _disc_offsets(splat_radius)
    pix_list, pt_list, z_list = [], [], []
    for dx, dy in offs:
        uu = u0 + dx
        vv = v0 + dy
        ok = (uu >= 0) & (uu < w) & (vv >= 0) & (vv < h)
        pix_list.append(vv[ok] * w + uu[ok])
        pt_list.append(pt_idx_all[ok])
        z_list.append(zi[ok])
    pix = np.concatenate(pix_list)
    pts = np.concatenate(pt_list)
    zs = np.concatenate(z_list)

    zbuf = np.full(h * w, DEPTH_INVALID)
    np.minimum.at(zbuf, pix, zs)
    keep = zs <= zbuf[pix] + blend_tolerance
    pix, pts, zs = pix[keep], pts[keep], zs[keep]

    opac = rep.opacity[pts]
    denom = np.bincount(pix, weights=opac, minlength=h * w)
    weights = opac / denom[pix]

    channels = rep.colors.shape[1]
    image = np.zeros((h * w, channels))
    for ch in range(channels):
        image[:, ch] = np.bincount(pix, weights=weights * rep.colors[pts, ch], minlength=h * w)
    validity = np.isfinite(zbuf).reshape(h, w)
    depth = DepthMap(values=zbuf.reshape(h, w), validity=validity)
    return RenderResult(
        image=image.reshape(h, w, channels),
        depth=depth,
        pixel_index=pix,
        point_index=pts,
        weights=weights,
    )


def _iid_noise_map(shape, rng: np.random.Generator) -> NoiseMap2D:
    return NoiseMap2D(
        values=rng.standard_normal(shape),
        coverage=np.ones(shape[:2], dtype=bool),
    )


def sds_step(
    rep: ColorPointCloud,
    cameras: Sequence[CameraPose],
    intrinsics: CameraIntrinsics,
    schedule: NoiseSchedule,
    denoisers,
    noising: str = "consistent",
    params: NoisingParams | None = None,
    rng: np.random.Generator | None = None,
    splat_radius: float = 1.0,
) -> tuple[np.ndarray, dict]:
    """One score-distillation update direction for the colors.

    For each camera: render, draw noise per the strategy ("consistent"
    shares one 3D field across all cameras, "iid" draws per view, "zero"
    disables noise), form the gradient map, and chain it through the render
    weights. The denoiser is treated as a constant residual source (no
    differentiation through it). `denoisers` is one Denoiser or one per
    camera. Returns (summed color gradient, diagnostics).
    """
    if len(cameras) == 0:
        raise ScoreError("need at least one camera")
    if rng is None:
        rng = np.random.default_rng(0)
    if not isinstance(denoisers, (list, tuple)):
        denoisers = [denoisers] * len(cameras)
    sigma = schedule.sample(rng)
    channels = rep.colors.shape[1]
    h, w = intrinsics.height, intrinsics.width

    sampler = None
    if noising == "consistent":
        if params is None:
            params = NoisingParams()
        center = rep.positions.mean(axis=0)
        dist = float(np.linalg.norm(cameras[0].center - center))
        sampler = ConsistentNoiseSampler(
            rep.cloud, intrinsics, params, rng, channels=channels,
            camera_distance=dist, scene_center=center,
        )
    elif noising not in ("iid", "zero"):
        raise ScoreError(f"unknown noising strategy {noising!r}")

    grad = np.zeros_like(rep.colors)
    view_residuals = []
    grad_maps = []
    for cam, den in zip(cameras, denoisers):
        render = render_color(rep, intrinsics, cam, splat_radius=splat_radius)
        if noising == "consistent":
            noise = sampler.noise_map(cam, depth=render.depth)
        elif noising == "iid":
            noise = _iid_noise_map((h, w, channels), rng)
        else:
            noise = NoiseMap2D(
                values=np.zeros((h, w, channels)),
                coverage=np.ones((h, w), dtype=bool),
            )
        g = gradient_map(render.image, noise, sigma, den)
        grad += render.chain_gradient(g.values, len(rep))
        view_residuals.append(float(np.linalg.norm(g.values)))
        grad_maps.append(g)
    info = {"sigma": sigma, "view_residuals": view_residuals, "gradient_maps": grad_maps}
    return grad, info


def multiview_warped_sds(
    z_i: np.ndarray,
    depth_i: DepthMap,
    pose_i: CameraPose,
    neighbor_poses: Sequence[CameraPose],
    intrinsics: CameraIntrinsics,
    sigma: float,
    denoiser: Denoiser,
    rng: np.random.Generator | None = None,
    noise_maps: Sequence[np.ndarray] | None = None,
) -> GradientMap:
    """Sum of gradient maps at the anchor view under warped neighbor noise.

    Each neighbor contributes a gradient map computed on z_i noised with its
    own noise warped into the anchor view (nearest inverse warp driven by
    the anchor's depth). This is the explicit warped-noise construction; the
    shared-3D-field sampler is the production path.
    """
    if len(neighbor_poses) == 0:
        raise ScoreError("neighbor set must be non-empty")
    z = np.asarray(z_i, dtype=np.float64)
    if z.ndim == 2:
        z = z[:, :, None]
    if noise_maps is None:
        if rng is None:
            raise ScoreError("need an rng when noise maps are not supplied")
        noise_maps = [rng.standard_normal(z.shape) for _ in neighbor_poses]
    total = np.zeros_like(z)
    cov = np.zeros(z.shape[:2], dtype=bool)
    for pose_j, n_j in zip(neighbor_poses, noise_maps):
        warp = compute_warp(depth_i, pose_i, pose_j, intrinsics)
        warped = inverse_warp(np.asarray(n_j, dtype=np.float64), warp)
        g = gradient_map(z, warped, sigma, denoiser)
        total += g.values
        cov |= warp.valid
    return GradientMap(values=total, coverage=cov)


def _pixel_cosine(a: np.ndarray, b: np.ndarray, eps: float = COSINE_NORM_EPS):
    """Per-pixel channel cosine; returns (cos, defined) with defined=False on tiny norms."""
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    defined = (na >= eps) & (nb >= eps)
    dot = np.einsum("...c,...c->...", a, b)
    denom = np.where(defined, na * nb, 1.0)
    return np.where(defined, dot / denom, 1.0), defined


def consistency_loss(
    g_i: GradientMap,
    g_j_warped: GradientMap,
    mask: OcclusionMask,
    eps_norm: float = COSINE_NORM_EPS,
) -> float:
    """L = sum_p mask(p) * (1 - cos(g_i(p), g_warped(p))) over channels.

    Pixels where either vector norm is below eps_norm contribute 0.
    """
    if g_i.values.shape != g_j_warped.values.shape:
        raise ScoreError("gradient map dimensions disagree")
    if mask.weights.shape != g_i.values.shape[:2]:
        raise ScoreError("mask dimensions disagree")
    cos, defined = _pixel_cosine(g_i.values, g_j_warped.values, eps_norm)
    return float(np.sum(mask.weights * np.where(defined, 1.0 - cos, 0.0)))


def _loss_per_pixel_for_depth(
    depth_values: np.ndarray,
    depth_validity: np.ndarray,
    g_i_vals: np.ndarray,
    g_j_vals: np.ndarray,
    pose_i: CameraPose,
    pose_j: CameraPose,
    intrinsics: CameraIntrinsics,
    mask_weights: np.ndarray,
) -> np.ndarray:
    """Per-pixel masked (1 - cos) terms with bilinear sampling on the warp."""
    depth = DepthMap(values=np.where(depth_validity, depth_values, DEPTH_INVALID),
                     validity=depth_validity)
    warp = compute_warp(depth, pose_i, pose_j, intrinsics)
    warped, covered = sample_bilinear(g_j_vals, warp)
    cos, defined = _pixel_cosine(g_i_vals, warped)
    term = np.where(defined & covered, 1.0 - cos, 0.0)
    return mask_weights * term


def consistency_loss_depth_gradient(
    g_i: GradientMap,
    g_j: GradientMap,
    depth_i: DepthMap,
    pose_i: CameraPose,
    pose_j: CameraPose,
    intrinsics: CameraIntrinsics,
    mask: OcclusionMask,
    h: float = 1e-3,
) -> np.ndarray:
    """Central finite-difference gradient of the consistency loss w.r.t. depth_i.

    The loss path resamples g_j bilinearly through the warp recomputed from
    the perturbed depth; gradient maps and the mask are held fixed. Each
    pixel's warp target depends only on its own depth, so all pixels are
    perturbed simultaneously. Invalid depth pixels get gradient 0.
    """
    if h <= 0:
        raise ScoreError("finite-difference step must be positive")
    args = (depth_i.validity, g_i.values, g_j.values, pose_i, pose_j, intrinsics, mask.weights)
    plus = _loss_per_pixel_for_depth(depth_i.values + h, *args)
    minus = _loss_per_pixel_for_depth(depth_i.values - h, *args)
    grad = (plus - minus) / (2.0 * h)
    grad[~depth_i.validity] = 0.0
    return grad
