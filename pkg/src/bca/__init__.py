"""Streaming Bayesian class adaptation over embedding streams.

A prototype classifier whose class embeddings and per-embedding class
priors both adapt online via count-weighted running means, plus the
synthetic-stream generation, binary file formats, evaluation harness and
CLI around it.
"""

from .core import (
    AdapterConfig,
    AdapterState,
    DegenerateUpdateWarning,
    InvariantViolationError,
    StepOutcome,
    ValidationError,
    frozen_posterior,
    init_state,
    membership_probs,
    one_hot_priors,
    posterior_from_membership,
    select,
    step,
    update_class_embedding,
    update_prior,
)
from .embio import (
    FormatError,
    load_state,
    read_embeddings,
    save_state,
    write_embeddings,
)
from .harness import (
    AblationMode,
    CountBased,
    MomentumBased,
    RunReport,
    run_stream,
    sweep,
    time_phases,
)
from .synthgen import (
    ConfusionShift,
    LabelSkew,
    MeanRotation,
    StreamSpec,
    make_class_means,
    make_text_embeddings,
    sample_stream,
    stream_bundle,
)

__version__ = "0.1.0"
