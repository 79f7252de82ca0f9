"""Channel-independence scoring and filter-pruning toolkit."""

from .accounting import (
    ArchDescriptor,
    ConvSpec,
    FCSpec,
    LayerSchedule,
    ModelStats,
    count_stats,
    layer_stats,
    load_builtin_arch,
    load_builtin_schedule,
    parse_schedule,
    ratio_to_kappa,
    reduction_report,
)
from .ci import (
    CIValue,
    RowMask,
    brute_force_min_subset,
    ci_all,
    ci_combined_approx,
    ci_combined_exact,
    ci_single,
    nuclear_norm,
    rank_change,
)
from .errors import ChipError
from .scoring import (
    CIScoreVector,
    PearsonMatrix,
    PruneMask,
    score_layer,
    score_model,
    select_mask,
    stability_analysis,
)
from .tensor_io import (
    ActivationMatrix,
    DumpManifest,
    FeatureMapSet,
    dematricize,
    load_feature_maps,
    load_sample,
    matricize,
    write_feature_maps,
)

__version__ = "0.1.0"

__all__ = [
    "ActivationMatrix", "ArchDescriptor", "CIScoreVector", "CIValue", "ChipError",
    "ConvSpec", "DumpManifest", "FCSpec", "FeatureMapSet", "LayerSchedule",
    "ModelStats", "PearsonMatrix", "PruneMask", "RowMask",
    "brute_force_min_subset", "ci_all", "ci_combined_approx", "ci_combined_exact",
    "ci_single", "count_stats", "dematricize", "layer_stats", "load_builtin_arch",
    "load_builtin_schedule", "load_feature_maps", "load_sample", "matricize",
    "nuclear_norm", "parse_schedule", "rank_change", "ratio_to_kappa",
    "reduction_report", "score_layer", "score_model", "select_mask",
    "stability_analysis", "write_feature_maps",
]
