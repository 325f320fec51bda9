"""Balance swap-sampling engine.

Fuses two text concepts into one image: swap prompt-embedding columns at
random, generate a candidate pool, keep the candidates whose similarities to
the two originals are balanced and low, and pick the winner by comparing
segmented components against both anchors.
"""

from .backend import (
    Backend,
    BackendHandle,
    BackendInfo,
    CachingBackend,
    GeneratedImage,
    HttpBackend,
    ImageRef,
    RetryPolicy,
    make_backend,
)
from .embedding import (
    MixStrategy,
    PromptEmbedding,
    SwapVector,
    complement,
    embedding_from_bytes,
    embedding_to_bytes,
    generate_swap_set,
    mix,
    swap_columns,
)
from .errors import (
    BackendError,
    BassError,
    ConfigError,
    DegenerateFeatureError,
    EncoderMismatchError,
    InfeasibleCountError,
    ProtocolError,
    SerializationError,
    ShapeMismatchError,
)
from .metrics import BalanceReport, FeatureVector, balance_report, cosine
from .mockbackend import MockBackend
from .pipeline import run_bass
from .runstore import (
    EvalReport,
    RunManifest,
    audit_run,
    eval_report,
    export_training_triples,
    read_run,
    read_training_triples,
    write_run,
)
from .sampler import (
    Candidate,
    CandidateScores,
    FilterTrace,
    PipelineConfig,
    coarse_filter,
    component_score,
    fine_filter,
    pairwise_mean_similarity,
    select_optimal,
)

__version__ = "0.1.0"
