"""Statistical verification of noising strategies.

Reproduces the property matrix that separates the strategies: pixelwise
normality and i.i.d. structure (patch covariance), and cross-view
correlation at geometrically corresponding pixels. Random noise is normal
but carries no cross-view correlation; warped noise is correlated but
breaks normality or independence; the shared-3D-field strategy satisfies
both sets of bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
from scipy import stats

from .geometry import CameraIntrinsics, CameraPose, render_depth, sample_hemisphere_pose
from .noising import (
    ConsistentNoiseSampler,
    NoisingParams,
    resolve_params,
)
from .scenes import Scene
from .warping import compute_warp, inverse_warp, occlusion_mask, sample_bilinear, sample_nearest


class NoiseStrategy(str, Enum):
    RANDOM = "random"
    BILINEAR_WARP = "bilinear_warp"
    NEAREST_WARP = "nearest_warp"
    CONSISTENT_3D = "consistent_3d"


@dataclass
class StatsReport:
    """Pooled diagnostics for one strategy."""

    strategy: str
    mean: float
    variance: float
    skewness: float
    excess_kurtosis: float
    ks_statistic: float
    ks_pvalue: float
    patch_covariance: np.ndarray
    corr_corresponding: float
    corr_noncorresponding: float
    duplicate_rate: float
    value_count: int
    pair_sample_count: int

    @property
    def max_offdiag(self) -> float:
        c = self.patch_covariance
        off = c - np.diag(np.diag(c))
        return float(np.abs(off).max()) if c.size else 0.0

    @property
    def min_diag(self) -> float:
        return float(np.diag(self.patch_covariance).min()) if self.patch_covariance.size else 1.0


def pass_normal(report: StatsReport, patch_offdiag_bound: float = 0.06) -> bool:
    """Standard-normality + pixel-independence verdict (estimator-derived bounds)."""
    n = report.value_count
    mean_ok = abs(report.mean) < 4.0 / math.sqrt(n)
    var_ok = abs(report.variance - 1.0) < 4.0 * math.sqrt(2.0 / n)
    kurt_ok = abs(report.excess_kurtosis) < 4.0 * math.sqrt(24.0 / n)
    ks_ok = report.ks_pvalue > 0.01
    iid_ok = report.max_offdiag < patch_offdiag_bound and report.min_diag > 0.9
    return bool(mean_ok and var_ok and kurt_ok and ks_ok and iid_ok)


def pass_crossview(report: StatsReport) -> bool:
    """Corresponding-pixel correlation both substantial and specific."""
    return bool(
        report.corr_corresponding > 0.3
        and report.corr_corresponding > 10.0 * abs(report.corr_noncorresponding)
    )


class StrategyContext:
    """Fixed scene/pose machinery shared by all per-seed noise draws."""

    def __init__(
        self,
        scene: Scene,
        intrinsics: CameraIntrinsics,
        pose_i: CameraPose,
        pose_j: CameraPose,
        params: NoisingParams | None = None,
        occlusion_delta: float = 0.05,
    ):
        self.scene = scene
        self.intrinsics = intrinsics
        self.pose_i = pose_i
        self.pose_j = pose_j
        base = params if params is not None else NoisingParams()
        self.params = resolve_params(base, scene.cloud)
        self.center = scene.cloud.positions.mean(axis=0)
        self.camera_distance = float(np.linalg.norm(pose_i.center - self.center))
        self.depth_i = render_depth(scene.cloud, intrinsics, pose_i, base.splat_radius)
        self.depth_j = render_depth(scene.cloud, intrinsics, pose_j, base.splat_radius)
        self.warp_ij = compute_warp(self.depth_i, pose_i, pose_j, intrinsics)
        self.mask_ij = occlusion_mask(self.warp_ij, self.depth_j, occlusion_delta)
        # Freeze the background point count so every draw shares it.
        if self.params.sphere_points is None:
            probe = ConsistentNoiseSampler(
                scene.cloud, intrinsics, self.params, np.random.default_rng(0),
                camera_distance=self.camera_distance, scene_center=self.center,
            )
            self.params = replace(self.params, sphere_points=len(probe.background.sphere))

    def sample_pair(
        self, strategy: NoiseStrategy, rng: np.random.Generator
    ) -> tuple[np.ndarray, np.ndarray]:
        """One (map at pose_i, map at pose_j) draw; HxW arrays."""
        h, w = self.intrinsics.height, self.intrinsics.width
        strategy = NoiseStrategy(strategy)
        if strategy is NoiseStrategy.RANDOM:
            return rng.standard_normal((h, w)), rng.standard_normal((h, w))
        if strategy is NoiseStrategy.CONSISTENT_3D:
            sampler = ConsistentNoiseSampler(
                self.scene.cloud, self.intrinsics, self.params, rng,
                camera_distance=self.camera_distance, scene_center=self.center,
            )
            m_i = sampler.noise_map(self.pose_i, depth=self.depth_i)
            m_j = sampler.noise_map(self.pose_j, depth=self.depth_j)
            return m_i.values[:, :, 0], m_j.values[:, :, 0]
        # Warp baselines: noise lives at view j, map at view i is its warp,
        # with warp-invalid pixels falling back to fresh i.i.d. noise.
        n_j = rng.standard_normal((h, w))
        sampler = sample_bilinear if strategy is NoiseStrategy.BILINEAR_WARP else sample_nearest
        warped, covered = sampler(n_j[:, :, None], self.warp_ij)
        fill = rng.standard_normal((h, w))
        n_i = np.where(covered, warped[:, :, 0], fill)
        return n_i, n_j

    def correspondences(self, max_pairs: int, rng: np.random.Generator):
        """(pixels in i, matching pixels in j) where the occlusion mask is 1."""
        ok = self.mask_ij.weights > 0.5
        ys, xs = np.nonzero(ok)
        if ys.size == 0:
            raise ValueError("no valid correspondences between the two poses")
        if ys.size > max_pairs:
            sel = rng.choice(ys.size, size=max_pairs, replace=False)
            ys, xs = ys[sel], xs[sel]
        t = self.warp_ij.targets[ys, xs]
        tx = np.clip(np.floor(t[:, 0] + 0.5).astype(np.int64), 0, self.intrinsics.width - 1)
        ty = np.clip(np.floor(t[:, 1] + 0.5).astype(np.int64), 0, self.intrinsics.height - 1)
        return (ys, xs), (ty, tx)


def covariance_diag(
    ctx: StrategyContext,
    strategy: NoiseStrategy,
    patch: tuple[int, int, int],
    num_samples: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Empirical covariance of the flattened patch across seeds.

    patch is (row0, col0, size); the patch must lie inside the image.
    """
    if num_samples < 100:
        raise ValueError("need at least 100 samples")
    y0, x0, size = patch
    h, w = ctx.intrinsics.height, ctx.intrinsics.width
    if y0 < 0 or x0 < 0 or y0 + size > h or x0 + size > w:
        raise ValueError("patch outside image")
    data = np.empty((num_samples, size * size))
    for s in range(num_samples):
        m_i, _ = ctx.sample_pair(strategy, rng)
        data[s] = m_i[y0 : y0 + size, x0 : x0 + size].reshape(-1)
    return np.cov(data, rowvar=False)


def cross_covariance(
    ctx: StrategyContext,
    strategy: NoiseStrategy,
    num_samples: int,
    rng: np.random.Generator,
    max_pairs: int = 256,
) -> tuple[float, float, float, int]:
    """Pooled correlation at corresponding vs non-corresponding pixel pairs.

    Returns (corr_corresponding, corr_noncorresponding, duplicate_rate,
    pooled sample count). Values are standard normal per pixel, so the
    pooled mean of products estimates the correlation directly.
    """
    if num_samples < 100:
        raise ValueError("need at least 100 samples")
    (ys, xs), (ty, tx) = ctx.correspondences(max_pairs, rng)
    npairs = ys.size
    ry = rng.permutation(ty)
    rx = rng.permutation(tx)
    corr_sum = 0.0
    rand_sum = 0.0
    dup = 0
    for _ in range(num_samples):
        m_i, m_j = ctx.sample_pair(strategy, rng)
        a = m_i[ys, xs]
        b = m_j[ty, tx]
        corr_sum += float((a * b).mean())
        rand_sum += float((a * m_j[ry, rx]).mean())
        dup += int((a == b).sum())
    count = num_samples * npairs
    return corr_sum / num_samples, rand_sum / num_samples, dup / count, count


def normality_report(
    ctx: StrategyContext,
    strategy: NoiseStrategy,
    num_samples: int,
    rng: np.random.Generator,
    patch: tuple[int, int, int] | None = None,
    cov_samples: int | None = None,
) -> StatsReport:
    """Pooled distribution statistics plus the covariance/cross-view diagnostics."""
    if num_samples < 100:
        raise ValueError("need at least 100 samples")
    strategy = NoiseStrategy(strategy)
    if patch is None:
        h, w = ctx.intrinsics.height, ctx.intrinsics.width
        patch = (h // 2 - 4, w // 2 - 4, 8)
    values = []
    for _ in range(num_samples):
        m_i, _ = ctx.sample_pair(strategy, rng)
        values.append(m_i.reshape(-1))
    pooled = np.concatenate(values)
    ks = stats.kstest(pooled, "norm")
    cov = covariance_diag(ctx, strategy, patch, cov_samples or num_samples, rng)
    corr, rand_corr, dup, pair_count = cross_covariance(ctx, strategy, num_samples, rng)
    return StatsReport(
        strategy=strategy.value,
        mean=float(pooled.mean()),
        variance=float(pooled.var()),
        skewness=float(stats.skew(pooled)),
        excess_kurtosis=float(stats.kurtosis(pooled)),
        ks_statistic=float(ks.statistic),
        ks_pvalue=float(ks.pvalue),
        patch_covariance=cov,
        corr_corresponding=corr,
        corr_noncorresponding=rand_corr,
        duplicate_rate=dup,
        value_count=pooled.size,
        pair_sample_count=pair_count,
    )


def strategy_comparison(
    ctx: StrategyContext,
    num_samples: int,
    rng: np.random.Generator,
    strategies: list[NoiseStrategy] | None = None,
    cov_samples: int | None = None,
) -> dict[str, StatsReport]:
    """normality_report for each requested strategy (all four by default)."""
    if strategies is None:
        strategies = list(NoiseStrategy)
    return {
        NoiseStrategy(s).value: normality_report(ctx, s, num_samples, rng, cov_samples=cov_samples)
        for s in strategies
    }


def default_context(
    scene: Scene,
    image_size: int = 32,
    separation_deg: float = 5.0,
    elevation_deg: float = 15.0,
    camera_radius: float = 2.5,
    params: NoisingParams | None = None,
) -> StrategyContext:
    """Context with two hemisphere poses separated in azimuth."""
    intr = CameraIntrinsics(
        fx=float(image_size), fy=float(image_size),
        cx=image_size / 2.0, cy=image_size / 2.0,
        width=image_size, height=image_size,
    )
    pose_i = sample_hemisphere_pose(0.0, math.radians(elevation_deg), camera_radius)
    pose_j = sample_hemisphere_pose(
        math.radians(separation_deg), math.radians(elevation_deg), camera_radius
    )
    return StrategyContext(scene, intr, pose_i, pose_j, params=params)
