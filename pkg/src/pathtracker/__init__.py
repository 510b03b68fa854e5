"""Pathtracker: generate, encode, track and score the appearance-free tracking challenge."""

from .assignment import hungarian_assign
from .dataio import DatasetManifest, export_png, read_dataset, write_dataset
from .errors import (
    BadMagicError,
    ChecksumError,
    ConfigError,
    DataError,
    DimensionMismatchError,
    GenerationError,
    MalformedSampleError,
    MissingIndexError,
    PathtrackerError,
    PredictionFileError,
    TrackingError,
    TruncatedShardError,
)
from .flow import FlowField, TvL1Params, encode_flow_video, tv_l1, warp_image
from .harness import SweepReport, SweepSpec, evaluate, run_sweep, score_external
from .scene import Label, Marker, VideoSample, crossing_stats, generate_fold
from .tracker import classify_sample, detect_dots, step_tracks
from .trajgen import GenConfig, Trajectory, sample_base_walk, subsample_speed

__version__ = "0.1.0"
