"""Instance-matting evaluation, layered-scene synthesis, and tri-matte algebra."""

from .compositing import (
    Layer,
    LayeredScene,
    PlacementError,
    PlacementPolicy,
    SparsityReport,
    composite_step,
    compose_scene,
    effective_alphas,
    sparsity_audit,
    tri_layer_colors,
)
from .core import (
    AlphaPlane,
    BinaryMask,
    DimensionError,
    ErrorKind,
    ImqConfig,
    InstanceMatteSet,
    iou,
    quantize,
    union_support,
)
from .matching import (
    DatasetReport,
    ImageReport,
    ImqRow,
    MatchResult,
    assign,
    classify,
    decompose,
    evaluate_dataset,
    evaluate_image,
    imq,
    imq_from_components,
    iou_matrix,
    match_instances,
    pair_errors,
)
from .metrics import ErrorField, RegionMean, error_field, region_error, similarity
from .refinement import (
    LossBreakdown,
    Patch,
    TriStack,
    constraint_losses,
    cycle_refine,
    error_map,
    parallel_refine,
    pyramid_loss,
    refine,
    select_patches,
    splice_patches,
    stack_constraint_losses,
    tri_reduce,
)
from .trimask import (
    TriMask,
    TriMatte,
    TrimaskAugmentOptions,
    augment_trimask,
    morph,
    partial_band,
    trimask_from_masks,
    trimatte_gt,
)

__version__ = "0.1.0"

__all__ = [
    "AlphaPlane",
    "BinaryMask",
    "DatasetReport",
    "DimensionError",
    "ErrorField",
    "ErrorKind",
    "ImageReport",
    "ImqConfig",
    "ImqRow",
    "InstanceMatteSet",
    "Layer",
    "LayeredScene",
    "LossBreakdown",
    "MatchResult",
    "Patch",
    "PlacementError",
    "PlacementPolicy",
    "RegionMean",
    "SparsityReport",
    "TriMask",
    "TriMatte",
    "TriStack",
    "TrimaskAugmentOptions",
    "assign",
    "augment_trimask",
    "classify",
    "compose_scene",
    "composite_step",
    "constraint_losses",
    "cycle_refine",
    "decompose",
    "effective_alphas",
    "error_field",
    "error_map",
    "evaluate_dataset",
    "evaluate_image",
    "imq",
    "imq_from_components",
    "iou",
    "iou_matrix",
    "match_instances",
    "morph",
    "pair_errors",
    "parallel_refine",
    "partial_band",
    "pyramid_loss",
    "quantize",
    "refine",
    "region_error",
    "select_patches",
    "similarity",
    "sparsity_audit",
    "splice_patches",
    "stack_constraint_losses",
    "tri_layer_colors",
    "tri_reduce",
    "trimask_from_masks",
    "trimatte_gt",
    "union_support",
]
