"""Structure-aware refinement of retinal artery/vein classification maps.

The pipeline takes per-pixel vessel and artery/vein probability maps,
extracts a vessel graph from multi-threshold skeletons, unifies labels
within segments, propagates confident predictions between compatible
segments, and paints the refined labels back onto pixels.  A metrics
module implements the matching evaluation protocol.
"""

from .raster import (
    BinaryMap,
    FormatError,
    Label,
    LabelMap,
    ProbabilityMaps,
    binarize,
    load_probability_map,
    save_overlay,
)
from .skeleton import SkeletonMap, fuse_multiscale, thin
from .vessel_graph import (
    CupRegion,
    KeyPoint,
    KeyPointKind,
    Segment,
    VesselGraph,
    build_graph,
    extract_segments,
    find_keypoints,
    graph_to_json,
    mean_thickness,
)
from .refine import (
    ConfigError,
    PropagationTrace,
    RefineConfig,
    coefficient,
    propagate,
    refine_pipeline,
    synthesize_labels,
    unify_labels,
)
from .metrics import EvalReport, evaluate, roc_auc, vessel_discovery
from .synth import InfeasibleSpecError, SplitMix64, SynthSpec, chain_instance, generate

__version__ = "0.1.0"

__all__ = [
    "BinaryMap", "FormatError", "Label", "LabelMap", "ProbabilityMaps",
    "binarize", "load_probability_map", "save_overlay",
    "SkeletonMap", "fuse_multiscale", "thin",
    "CupRegion", "KeyPoint", "KeyPointKind", "Segment", "VesselGraph",
    "build_graph", "extract_segments", "find_keypoints", "graph_to_json",
    "mean_thickness",
    "ConfigError", "PropagationTrace", "RefineConfig", "coefficient",
    "propagate", "refine_pipeline", "synthesize_labels", "unify_labels",
    "EvalReport", "evaluate", "roc_auc", "vessel_discovery",
    "InfeasibleSpecError", "SplitMix64", "SynthSpec", "chain_instance", "generate",
    "__version__",
]
