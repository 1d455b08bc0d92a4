"""evoopt: evolve deep-learning optimizers encoded as genomes.

The library decomposes into: `genome` (data model, presets, file format),
`interpreter` (genome -> concrete update rule), `tasks` (trainable problems
and the training loop), `fitness` (scoring), `evolution` (the genetic
algorithm), and `cli` (command-line driver).
"""

from .evolution import (
    GaConfig,
    GenerationRecord,
    MutationRates,
    MutationScales,
    count_primitives,
    crossover,
    evolve,
    init_population,
    load_checkpoint,
    mutate,
    mutation_rates,
    save_checkpoint,
    tournament_select,
)
from .fitness import FitnessBreakdown, genome_fitness, run_fitness
from .genome import (
    DEFAULT_BOUNDS,
    Genome,
    GenomeFormatError,
    HyperBounds,
    PrimitiveKind,
    Term,
    Violation,
    canonicalize,
    decode,
    digest,
    encode,
    preset,
    random_genome,
    validate,
)
from .interpreter import (
    DivergenceError,
    OptimizerState,
    ScheduleContext,
    compute_term,
    init_state,
    scheduled_lr,
    step,
    update_moments,
)
from .tasks import (
    BlobsSource,
    Dataset,
    IdxFormatError,
    IdxSource,
    MlpModel,
    TaskSpec,
    TrainRun,
    accuracy,
    backward,
    forward_loss,
    init_mlp,
    load_idx,
    make_blobs,
    subsample,
    train,
)

__all__ = [
    "BlobsSource",
    "DEFAULT_BOUNDS",
    "Dataset",
    "DivergenceError",
    "FitnessBreakdown",
    "GaConfig",
    "GenerationRecord",
    "Genome",
    "GenomeFormatError",
    "HyperBounds",
    "IdxFormatError",
    "IdxSource",
    "MlpModel",
    "MutationRates",
    "MutationScales",
    "OptimizerState",
    "PrimitiveKind",
    "ScheduleContext",
    "TaskSpec",
    "Term",
    "TrainRun",
    "Violation",
    "accuracy",
    "backward",
    "canonicalize",
    "compute_term",
    "count_primitives",
    "crossover",
    "decode",
    "digest",
    "encode",
    "evolve",
    "forward_loss",
    "genome_fitness",
    "init_mlp",
    "init_population",
    "init_state",
    "load_checkpoint",
    "load_idx",
    "make_blobs",
    "mutate",
    "mutation_rates",
    "preset",
    "random_genome",
    "run_fitness",
    "save_checkpoint",
    "scheduled_lr",
    "step",
    "subsample",
    "tournament_select",
    "train",
    "update_moments",
    "validate",
]
