"""Geometry-aware score distillation toolkit.

3D-consistent Gaussian noise anchored to a point cloud, depth-based
gradient warping with occlusion masking, a correspondence-aware gradient
consistency loss, and a closed-loop score-distillation optimizer with an
analytic denoiser oracle.
"""

from .geometry import (
    CameraIntrinsics,
    CameraPose,
    DepthMap,
    PointCloud,
    look_at_pose,
    project,
    project_points,
    render_depth,
    sample_hemisphere_pose,
    unproject,
)
from .noising import (
    ConsistentNoiseSampler,
    NoiseField3D,
    NoiseMap2D,
    NoisingParams,
    UpsampledNoiseField,
    composite_noise,
    conditional_upsample,
    consistent_noise_map,
    discrete_noise_integral,
    sample_noise_field,
    spherical_background_noise,
)
from .ply import read_ply, write_ply
from .scenes import Scene, builtin_scene
from .score import (
    AnalyticGaussianDenoiser,
    ColorPointCloud,
    GradientMap,
    NoiseSchedule,
    consistency_loss,
    consistency_loss_depth_gradient,
    gradient_map,
    multiview_warped_sds,
    paas_score,
    render_color,
    sds_step,
)
from .warping import OcclusionMask, WarpField, compute_warp, inverse_warp, occlusion_mask

__version__ = "0.1.0"

__all__ = [
    "AnalyticGaussianDenoiser",
    "CameraIntrinsics",
    "CameraPose",
    "ColorPointCloud",
    "ConsistentNoiseSampler",
    "DepthMap",
    "GradientMap",
    "NoiseField3D",
    "NoiseMap2D",
    "NoiseSchedule",
    "NoisingParams",
    "OcclusionMask",
    "PointCloud",
    "Scene",
    "UpsampledNoiseField",
    "WarpField",
    "builtin_scene",
    "composite_noise",
    "conditional_upsample",
    "consistency_loss",
    "consistency_loss_depth_gradient",
    "consistent_noise_map",
    "discrete_noise_integral",
    "gradient_map",
    "inverse_warp",
    "look_at_pose",
    "multiview_warped_sds",
    "occlusion_mask",
    "paas_score",
    "project",
    "project_points",
    "read_ply",
    "render_color",
    "render_depth",
    "sample_hemisphere_pose",
    "sample_noise_field",
    "sds_step",
    "spherical_background_noise",
    "unproject",
    "write_ply",
]
