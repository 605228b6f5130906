"""VBx: Bayesian-HMM clustering of x-vector sequences for speaker diarization."""

from .ahc import AHCConfig, CosineAHC, cluster, cosine_similarity_matrix
from .exceptions import (
    DegenerateInputError, EmptyInputError, EstimationError, InputError,
    InstanceTooLargeError, ModelError, NumericalError, UndefinedMetricError, VBxError,
)
from .pipeline import diarize_recording
from .plda import (
    DiarSpace, PLDAModel, PLDATransformer, derive_space, estimate_plda, length_normalize, project,
)
from .scoring import ScoreSetup, Segment, Timeline, build_reference, der, jer, optimal_mapping
from .synth import SynthConfig, labels_to_timeline, sample_conversation
from .vbx import VBx, VBxConfig, VBxState, run

__version__ = "0.1.0"
