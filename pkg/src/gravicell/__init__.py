"""Gravitational force-field cell detection, segmentation and tracking.

Per frame the pipeline brightens and smooths the image, treats intensity
as mass to compute an attraction field, partitions the frame into basins
of attraction whose significant minima are the detected cells, and grows
instance masks from those centers.  A bidirectional matching pass links
instances over time into a tracklet forest with mitosis support, and a
hysteresis filter prunes unstable tracklets.

Entry points: :func:`run_pipeline` for directories of frames,
:func:`detect_frame` / :func:`process_frame` for single images, and the
``gravicell`` console script (see :mod:`gravicell.cli`).
"""
from .basins import (
    BasinExtraction,
    CriticalPoint,
    IntegratorConfig,
    adapt_step,
    classify_jacobian,
    descend,
    drop_of_water_oracle,
    extract_basins,
    find_critical_points,
    integrate_step,
    significant_minima,
    trace_separatrix,
)
from .config import PipelineConfig, load_config, parse_config, serialize_config
from .errors import ConfigError, DataError, FormatError, GravicellError, ParameterError
from .evaluate import EvalReport, evaluate_sequences, match_frame, read_track_file
from .gravity import ForceField, GravityKernels, build_kernels, force_field, potential_field
from .pipeline import (
    FrameResult,
    StageFailure,
    detect_frame,
    dump_field,
    process_frame,
    run_pipeline,
    track_frames,
)
from .preprocess import (
    ClaheParams,
    KuwaharaParams,
    clahe,
    fill_dark_spots,
    kuwahara_anisotropic,
    log_brighten,
)
from .segmentation import (
    CellMaskSet,
    SegParams,
    chan_vese_refine,
    region_grow,
    segment_frame,
    split_mask,
)
from .synth import SynthResult, SynthSpec, generate, write_sequence
from .tracking import (
    TrackGraph,
    Tracklet,
    TrackParams,
    associate,
    filter_tracklets,
    interpolate_gap,
    merge_basins,
    recover_missing,
    track_sequence,
    tracklet_label_map,
    write_track_file,
)

__version__ = "0.1.0"

__all__ = [
    "BasinExtraction",
    "CellMaskSet",
    "ClaheParams",
    "ConfigError",
    "CriticalPoint",
    "DataError",
    "EvalReport",
    "ForceField",
    "FormatError",
    "FrameResult",
    "GravicellError",
    "GravityKernels",
    "IntegratorConfig",
    "KuwaharaParams",
    "ParameterError",
    "PipelineConfig",
    "SegParams",
    "StageFailure",
    "SynthResult",
    "SynthSpec",
    "TrackGraph",
    "TrackParams",
    "Tracklet",
    "adapt_step",
    "associate",
    "build_kernels",
    "chan_vese_refine",
    "clahe",
    "classify_jacobian",
    "descend",
    "detect_frame",
    "drop_of_water_oracle",
    "dump_field",
    "evaluate_sequences",
    "extract_basins",
    "fill_dark_spots",
    "filter_tracklets",
    "find_critical_points",
    "force_field",
    "generate",
    "integrate_step",
    "interpolate_gap",
    "kuwahara_anisotropic",
    "load_config",
    "log_brighten",
    "match_frame",
    "merge_basins",
    "parse_config",
    "potential_field",
    "process_frame",
    "read_track_file",
    "recover_missing",
    "region_grow",
    "run_pipeline",
    "segment_frame",
    "serialize_config",
    "significant_minima",
    "split_mask",
    "trace_separatrix",
    "track_frames",
    "track_sequence",
    "tracklet_label_map",
    "write_sequence",
    "write_track_file",
]
