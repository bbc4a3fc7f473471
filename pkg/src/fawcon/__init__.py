"""fawcon: streaming 3D point-cloud engine.

Per-axis coordinate interval trees for global spatial organization,
per-point direction-aware octrees for surface-aware neighborhoods, and a
fusion-aware point convolution pipeline with uncertainty-gated
frame-to-frame feature fusion.
"""

from .conv import (
    ClassDistribution,
    ClassificationHead,
    ConstantWeight,
    GaussianWeight,
    MlpWeight,
    WeightFunction,
    classify,
    fpc,
    frame_fuse,
    load_params,
    save_params,
    weight_from_spec,
)
from .errors import (
    DimensionError,
    DomainError,
    DuplicatePointError,
    FawconError,
    FrameOrderError,
    FrameParseError,
    ParamFormatError,
    UnknownPointError,
)
from .global_tree import CoordinateIntervalTree, GlobalIndex, IntervalNode
from .octree import OctreeIndex, PointOctree, RingSet, quadrant_of
from .store import HEAD_FEATURE_DIM, PointRecord, SceneStore
from .stream import (
    Frame,
    IngestReport,
    Pipeline,
    PipelineConfig,
    read_frame,
    read_labels,
    read_manifest,
    write_frame,
    write_manifest,
)

__version__ = "0.1.0"

__all__ = [
    "ClassDistribution",
    "ClassificationHead",
    "ConstantWeight",
    "CoordinateIntervalTree",
    "DimensionError",
    "DomainError",
    "DuplicatePointError",
    "FawconError",
    "Frame",
    "FrameOrderError",
    "FrameParseError",
    "GaussianWeight",
    "GlobalIndex",
    "HEAD_FEATURE_DIM",
    "IngestReport",
    "IntervalNode",
    "MlpWeight",
    "OctreeIndex",
    "ParamFormatError",
    "Pipeline",
    "PipelineConfig",
    "PointOctree",
    "PointRecord",
    "RingSet",
    "SceneStore",
    "UnknownPointError",
    "WeightFunction",
    "classify",
    "fpc",
    "frame_fuse",
    "load_params",
    "quadrant_of",
    "read_frame",
    "read_labels",
    "read_manifest",
    "save_params",
    "weight_from_spec",
    "write_frame",
    "write_manifest",
]
