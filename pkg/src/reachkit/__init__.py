"""Pointwise normal reach estimation for autoencoder decoders."""

from .diagnosis import ReachDiagnosis, diagnose, pct_within_reach
from .errors import (
    ConfigError,
    DimensionMismatch,
    DuplicatePoint,
    EmptySampleSet,
    InsufficientSamples,
    NoConvergence,
    NonFiniteLoss,
    ParseError,
    RaggedRows,
    RankDeficient,
)
from .geometry import (
    ReachEstimate,
    global_reach_over_samples,
    lemma_lower_bound_check,
    normal_projection,
    pointwise_reach_over_samples,
    reach_ratio,
)
from .manifolds import Circle, FlatAffine, QuadraticSurface
from .network import MLP, Autoencoder, loss_gradients
from .projection import ProjectionResult, project
from .sampling import SamplerConfig, estimate_reach, estimate_reach_at, sample_ball
from .training import EpochReport, TrainingConfig, reach_penalty, train

__version__ = "0.1.0"
