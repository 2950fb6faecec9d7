"""Voting-based keypoint localization and uncertainty-driven 6DoF pose estimation.

Pipeline: per-pixel unit vectors pointing at keypoints (``field``), RANSAC-style
hypothesis voting into 2D keypoint distributions (``voting``), covariance-
weighted PnP (``pnp``), plus synthetic scenes (``synth``), metrics, and a
benchmark harness (``bench``).
"""

from .errors import (
    BehindCamera,
    ConfigError,
    DegenerateConfiguration,
    DimensionMismatch,
    FileFormatError,
    InvalidRotation,
    KTooLarge,
    NoValidHypotheses,
    ObjectNotVisible,
    PlyParseError,
    TooFewPixels,
    TooFewPoints,
    VotePoseError,
    ZeroTotalWeight,
)
from .geometry import (
    CameraIntrinsics,
    Pose,
    compose,
    inverse,
    project,
    rotation_angle_between,
    rotation_exp,
    rotation_log,
    transform_points,
)
from .models import (
    KeypointScheme,
    KeypointSet,
    ObjectModel,
    bbox_corners,
    fps_select,
    load_keypoints,
    load_model,
    model_diameter,
    save_keypoints,
    save_ply,
)
from .field import (
    NoiseConfig,
    corrupt_field,
    gt_vector_field,
    load_field,
    load_mask_pgm,
    save_field,
    save_mask_pgm,
    smooth_l1_loss,
)
from .voting import (
    Instance,
    KeypointDistribution,
    VotingConfig,
    estimate_distribution,
    find_instances,
    generate_hypotheses,
    intersect_rays,
    localize_keypoints,
    score_hypotheses,
)
from .pnp import (
    Correspondence,
    PnPResult,
    epnp_init,
    epnp_pose,
    mahalanobis_cost,
    make_correspondences,
    refine_pose,
    solve_pose,
)
from .metrics import MetricReport, metric_2d_projection, metric_add, metric_auc
from .synth import (
    PoseSamplerConfig,
    SceneSample,
    TruncationConfig,
    make_blob_model,
    make_cube_model,
    occlude_mask,
    render_mask,
    sample_pose,
    save_scene,
    synth_scene,
    truncate_scene,
)
from .bench import load_config, run_bench, validate_config, write_results

__version__ = "0.1.0"

__all__ = [
    "BehindCamera",
    "CameraIntrinsics",
    "ConfigError",
    "Correspondence",
    "DegenerateConfiguration",
    "DimensionMismatch",
    "FileFormatError",
    "Instance",
    "InvalidRotation",
    "KTooLarge",
    "KeypointDistribution",
    "KeypointScheme",
    "KeypointSet",
    "MetricReport",
    "NoValidHypotheses",
    "NoiseConfig",
    "ObjectModel",
    "ObjectNotVisible",
    "PlyParseError",
    "PnPResult",
    "Pose",
    "PoseSamplerConfig",
    "SceneSample",
    "TooFewPixels",
    "TooFewPoints",
    "TruncationConfig",
    "VotePoseError",
    "VotingConfig",
    "ZeroTotalWeight",
    "bbox_corners",
    "compose",
    "corrupt_field",
    "epnp_init",
    "epnp_pose",
    "estimate_distribution",
    "find_instances",
    "fps_select",
    "generate_hypotheses",
    "gt_vector_field",
    "intersect_rays",
    "inverse",
    "load_config",
    "load_field",
    "load_keypoints",
    "load_mask_pgm",
    "load_model",
    "localize_keypoints",
    "mahalanobis_cost",
    "make_blob_model",
    "make_correspondences",
    "make_cube_model",
    "metric_2d_projection",
    "metric_add",
    "metric_auc",
    "model_diameter",
    "occlude_mask",
    "project",
    "refine_pose",
    "render_mask",
    "rotation_angle_between",
    "rotation_exp",
    "rotation_log",
    "run_bench",
    "sample_pose",
    "save_field",
    "save_keypoints",
    "save_mask_pgm",
    "save_ply",
    "save_scene",
    "score_hypotheses",
    "smooth_l1_loss",
    "solve_pose",
    "synth_scene",
    "transform_points",
    "truncate_scene",
    "validate_config",
    "write_results",
]
