"""Flow-matching 3D pose lifting with reprojection-weighted hypothesis aggregation."""

from ._flowlift import (
    Camera,
    Dataset,
    Error,
    FlowModel,
    Skeleton,
    auc,
    best_select,
    evaluate,
    flip_2d,
    flip_3d,
    generate,
    joint_errors,
    joint_uncertainty,
    mean_aggregate,
    mpjpe,
    p_mpjpe,
    pck,
    procrustes_align,
    project,
    reprojection_loss,
    rpea,
)

__all__ = [
    "Camera",
    "Dataset",
    "Error",
    "FlowModel",
    "Skeleton",
    "auc",
    "best_select",
    "evaluate",
    "flip_2d",
    "flip_3d",
    "generate",
    "joint_errors",
    "joint_uncertainty",
    "mean_aggregate",
    "mpjpe",
    "p_mpjpe",
    "pck",
    "procrustes_align",
    "project",
    "reprojection_loss",
    "rpea",
]
