"""Unsupervised feedforward feature learning for 3D point clouds."""

from .geometry import farthest_point_sample, knn, knn_indices, octant_of, quadrant_mean_stack
from .pipeline import (
    LayerRecord,
    PipelineConfig,
    UFFModel,
    aggregate,
    encode,
    extract,
    fit_encoder,
    fit_uff,
    point_features,
    shape_feature,
)
from .saab import KeepPolicy, SaabStats, SaabTransform, saab_accumulate, saab_apply, saab_fit, saab_merge

__version__ = "0.1.0"
