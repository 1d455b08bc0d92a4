"""Genetic algorithm over optimizer genomes.

Tournament selection, elitism, single-point term crossover with uniform
scalar/flag crossover, adaptive (linearly decaying) mutation rates, content-
digest fitness caching, per-generation logging of primitive occurrence
counts, and resumable checkpoints.

Runs are bitwise deterministic for a given config: all breeding randomness
comes from one master-seeded stream, and evaluation is a pure function of
(genome, task, seed), so the level of evaluation parallelism cannot change
any result.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import fitness as fitness_mod
from .fitness import FitnessBreakdown, assemble_breakdown
from .genome import (
    DEFAULT_BOUNDS,
    Genome,
    HyperBounds,
    PrimitiveKind,
    Term,
    canonicalize,
    decode,
    digest,
    encode,
    preset,
    random_genome,
)
from .serialize import canonical_json
from .tasks import BlobsSource, IdxSource, TaskSpec

CHECKPOINT_FORMAT_VERSION = 1
SEED_PRESETS = ("sgd", "adam", "adamw", "rmsprop")


class CheckpointError(ValueError):
    """Raised when a checkpoint file cannot be used."""


@dataclass(frozen=True)
class MutationScales:
    """Gaussian noise scale per numeric field group."""

    log10: float = 0.25
    beta: float = 0.02
    coeff: float = 0.25


@dataclass(frozen=True)
class MutationRates:
    numeric: float
    structural: float
    flag: float


@dataclass(frozen=True)
class GaConfig:
    """Everything that determines an evolution run."""

    tasks: tuple[TaskSpec, ...]
    population_size: int = 50
    generations: int = 50
    tournament_k: int = 4
    elite_count: int = 3
    numeric_rate: tuple[float, float] = (0.30, 0.10)
    structural_rate: tuple[float, float] = (0.20, 0.05)
    flag_rate: tuple[float, float] = (0.10, 0.02)
    scales: MutationScales = MutationScales()
    bounds: HyperBounds = DEFAULT_BOUNDS
    eval_seeds: tuple[int, ...] = (0, 1)
    master_seed: int = 0

    def validate(self) -> None:
        if not self.tasks:
            raise ValueError("config.tasks must be non-empty")
        names = [t.name for t in self.tasks]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate task names in config: {names}")
        if self.population_size < self.elite_count + 1:
            raise ValueError("population_size must exceed elite_count")
        if not 1 <= self.tournament_k <= self.population_size:
            raise ValueError("tournament_k must be in [1, population_size]")
        if self.generations < 1:
            raise ValueError("generations must be >= 1")
        for name in ("numeric_rate", "structural_rate", "flag_rate"):
            r0, r1 = getattr(self, name)
            if not (0.0 <= r0 <= 1.0 and 0.0 <= r1 <= 1.0):
                raise ValueError(f"{name} values must lie in [0, 1]")
        if not self.eval_seeds:
            raise ValueError("eval_seeds must be non-empty")


@dataclass(frozen=True)
class GenerationRecord:
    """One log entry: fitness summary and population composition."""

    generation: int
    best_fitness: float
    mean_fitness: float
    primitive_counts: dict[PrimitiveKind, int]
    best_genome: Genome


@dataclass
class EvolutionState:
    """Mutable progress of a run; checkpoints serialize exactly this."""

    generation: int
    population: list[Genome]
    rng: np.random.Generator
    fitness_cache: dict[str, FitnessBreakdown] = field(default_factory=dict)
    records: list[GenerationRecord] = field(default_factory=list)
    best_genome: Genome | None = None
    best_fitness: float = float("-inf")


def init_population(config: GaConfig, rng: np.random.Generator) -> list[Genome]:
    """Seed presets (sgd, adam, adamw, rmsprop) plus random genomes, all canonical."""
    n = config.population_size
    if n < 4:
        raise ValueError(f"population_size must be >= 4 to seat the preset seeds, got {n}")
    members = [canonicalize(preset(name), config.bounds) for name in SEED_PRESETS]
    members += [random_genome(rng, config.bounds) for _ in range(n - 4)]
    return members


def tournament_select(
    population: Sequence[Genome],
    fitnesses: Sequence[float],
    k: int,
    rng: np.random.Generator,
) -> int:
    """Index of the fittest of k members sampled without replacement;
    ties go to the smallest index."""
    if not 1 <= k <= len(population):
        raise ValueError(f"k must be in [1, {len(population)}], got {k}")
    candidates = rng.choice(len(population), size=k, replace=False)
    return int(min(candidates, key=lambda i: (-fitnesses[i], i)))


def crossover(
    p1: Genome, p2: Genome, rng: np.random.Generator, bounds: HyperBounds = DEFAULT_BOUNDS
) -> Genome:
    """Cut-and-splice the term lists; every scalar, flag and schedule field
    comes from one parent or the other by an independent fair coin."""
    while True:
        i = int(rng.integers(0, len(p1.terms) + 1))
        j = int(rng.integers(0, len(p2.terms) + 1))
        terms = p1.terms[:i] + p2.terms[j:]
        if 1 <= len(terms) <= 4:
            break

    def pick(a, b):
        return a if rng.integers(2) == 0 else b

    child = Genome(
        terms=terms,
        log10_lr=pick(p1.log10_lr, p2.log10_lr),
        beta1=pick(p1.beta1, p2.beta1),
        beta2=pick(p1.beta2, p2.beta2),
        log10_eps=pick(p1.log10_eps, p2.log10_eps),
        log10_wd=pick(p1.log10_wd, p2.log10_wd),
        use_momentum=pick(p1.use_momentum, p2.use_momentum),
        use_second_moment=pick(p1.use_second_moment, p2.use_second_moment),
        bias_correction=pick(p1.bias_correction, p2.bias_correction),
        grad_clip=pick(p1.grad_clip, p2.grad_clip),
        warmup_steps=pick(p1.warmup_steps, p2.warmup_steps),
        cosine_decay=pick(p1.cosine_decay, p2.cosine_decay),
    )
    return canonicalize(child, bounds)


def mutation_rates(generation: int, config: GaConfig) -> MutationRates:
    """Linear interpolation from initial to final rates across the run."""
    G = config.generations
    frac = 0.0 if G == 1 else generation / (G - 1)

    def interp(pair):
        r0, r1 = pair
        return r0 + (r1 - r0) * frac

    return MutationRates(
        numeric=interp(config.numeric_rate),
        structural=interp(config.structural_rate),
        flag=interp(config.flag_rate),
    )


def _clamp(x, lo, hi):
    return min(max(x, lo), hi)


def mutate(
    genome: Genome,
    rates: MutationRates,
    rng: np.random.Generator,
    bounds: HyperBounds = DEFAULT_BOUNDS,
    scales: MutationScales = MutationScales(),
) -> Genome:
    """Numeric, structural, and flag mutation, each applied independently."""
    kinds = list(PrimitiveKind)
    terms = list(genome.terms)
    for i, term in enumerate(terms):
        if rng.random() < rates.numeric:
            coeff = _clamp(term.coeff + rng.normal(0.0, scales.coeff), *bounds.coeff)
            terms[i] = Term(term.kind, float(coeff))

    def maybe_perturb(value, scale, lo, hi):
        if rng.random() < rates.numeric:
            return float(_clamp(value + rng.normal(0.0, scale), lo, hi))
        return value

    log10_lr = maybe_perturb(genome.log10_lr, scales.log10, *bounds.log10_lr)
    beta1 = maybe_perturb(genome.beta1, scales.beta, *bounds.beta1)
    beta2 = maybe_perturb(genome.beta2, scales.beta, *bounds.beta2)
    log10_eps = maybe_perturb(genome.log10_eps, scales.log10, *bounds.log10_eps)
    log10_wd = maybe_perturb(genome.log10_wd, scales.log10, *bounds.log10_wd)

    if rng.random() < rates.structural:
        actions = []
        if len(terms) < 4:
            actions.append("add")
        if len(terms) > 1:
            actions.append("remove")
        actions.append("replace")
        action = actions[int(rng.integers(len(actions)))]
        if action == "add":
            kind = kinds[int(rng.integers(len(kinds)))]
            terms.append(Term(kind, float(rng.uniform(*bounds.coeff))))
        elif action == "remove":
            del terms[int(rng.integers(len(terms)))]
        else:
            i = int(rng.integers(len(terms)))
            terms[i] = Term(kinds[int(rng.integers(len(kinds)))], terms[i].coeff)

    def maybe_flip(value):
        return (not value) if rng.random() < rates.flag else value

    use_momentum = maybe_flip(genome.use_momentum)
    use_second_moment = maybe_flip(genome.use_second_moment)
    bias_correction = maybe_flip(genome.bias_correction)
    grad_clip = maybe_flip(genome.grad_clip)
    cosine_decay = maybe_flip(genome.cosine_decay)
    warmup_steps = genome.warmup_steps
    if rng.random() < rates.flag:
        warmup_steps = int(bounds.warmup_choices[int(rng.integers(len(bounds.warmup_choices)))])

    child = Genome(
        terms=tuple(terms),
        log10_lr=log10_lr,
        beta1=beta1,
        beta2=beta2,
        log10_eps=log10_eps,
        log10_wd=log10_wd,
        use_momentum=use_momentum,
        use_second_moment=use_second_moment,
        bias_correction=bias_correction,
        grad_clip=grad_clip,
        warmup_steps=warmup_steps,
        cosine_decay=cosine_decay,
    )
    return canonicalize(child, bounds)


def count_primitives(population: Sequence[Genome]) -> dict[PrimitiveKind, int]:
    """Occurrences of each primitive kind over all members' term lists."""
    counts = {kind: 0 for kind in PrimitiveKind}
    for member in population:
        for term in member.terms:
            counts[term.kind] += 1
    return counts


def initial_state(config: GaConfig) -> EvolutionState:
    """Fresh run state: master-seeded stream and the seeded population."""
    rng = np.random.default_rng(config.master_seed)
    return EvolutionState(generation=0, population=init_population(config, rng), rng=rng)


def _evaluate_generation(
    state: EvolutionState,
    config: GaConfig,
    executor,
    generation: int,
) -> list[float]:
    """Fill the fitness cache for every uncached member, in member order."""
    pending: list[tuple[str, Genome]] = []
    seen = set(state.fitness_cache)
    for member in state.population:
        key = digest(member)
        if key not in seen:
            seen.add(key)
            pending.append((key, member))
    if pending:
        tasks, seeds = config.tasks, config.eval_seeds
        items = [(genome, task, seed) for _, genome in pending for task in tasks for seed in seeds]
        per_genome = len(tasks) * len(seeds)
        if executor is None:
            values = []
            for n, item in enumerate(items):
                try:
                    values.append(fitness_mod.evaluate_run(*item))
                except Exception as exc:
                    raise RuntimeError(
                        f"evaluation failed at generation {generation}, "
                        f"genome {pending[n // per_genome][0][:12]}, "
                        f"task {item[1].name!r}, seed {item[2]}"
                    ) from exc
        else:
            try:
                values = list(executor.map(fitness_mod._evaluate_run_args, items))
            except Exception as exc:
                raise RuntimeError(f"evaluation failed at generation {generation}") from exc
        for n, (key, _) in enumerate(pending):
            chunk = values[n * per_genome:(n + 1) * per_genome]
            state.fitness_cache[key] = assemble_breakdown(tasks, seeds, chunk)
    return [state.fitness_cache[digest(m)].aggregate for m in state.population]


def evolve(
    config: GaConfig,
    jobs: int = 1,
    state: EvolutionState | None = None,
    on_generation: Callable[[EvolutionState, GenerationRecord], None] | None = None,
) -> tuple[Genome, list[GenerationRecord]]:
    """Run (or resume) the generation loop; returns the best genome ever
    observed and the full per-generation log."""
    config.validate()
    if state is None:
        state = initial_state(config)
    executor = ProcessPoolExecutor(max_workers=jobs) if jobs > 1 else None
    try:
        for gen in range(state.generation, config.generations):
            fits = _evaluate_generation(state, config, executor, gen)
            n = len(state.population)
            best_i = min(range(n), key=lambda i: (-fits[i], i))
            record = GenerationRecord(
                generation=gen,
                best_fitness=fits[best_i],
                mean_fitness=math.fsum(fits) / n,
                primitive_counts=count_primitives(state.population),
                best_genome=state.population[best_i],
            )
            state.records.append(record)
            if fits[best_i] > state.best_fitness:
                state.best_fitness = fits[best_i]
                state.best_genome = state.population[best_i]

            if gen < config.generations - 1:
                rates = mutation_rates(gen, config)
                order = sorted(range(n), key=lambda i: (-fits[i], i))
                next_pop = [state.population[i] for i in order[:config.elite_count]]
                while len(next_pop) < n:
                    a = tournament_select(state.population, fits, config.tournament_k, state.rng)
                    b = tournament_select(state.population, fits, config.tournament_k, state.rng)
                    child = crossover(
                        state.population[a], state.population[b], state.rng, config.bounds
                    )
                    next_pop.append(mutate(child, rates, state.rng, config.bounds, config.scales))
                state.population = next_pop
            state.generation = gen + 1
            if on_generation is not None:
                on_generation(state, record)
    finally:
        if executor is not None:
            executor.shutdown()
    assert state.best_genome is not None
    return state.best_genome, state.records


CSV_HEADER = (
    "generation,best_fitness,mean_fitness,"
    + ",".join(f"count_{kind.value}" for kind in PrimitiveKind)
)


def log_to_csv(records: Sequence[GenerationRecord]) -> str:
    """Render the log in the plot-ready CSV export format (LF endings)."""
    from .serialize import format_float

    lines = [CSV_HEADER]
    for rec in records:
        counts = ",".join(str(rec.primitive_counts[kind]) for kind in PrimitiveKind)
        lines.append(
            f"{rec.generation},{format_float(rec.best_fitness)},"
            f"{format_float(rec.mean_fitness)},{counts}"
        )
    return "\n".join(lines) + "\n"


def config_digest(config: GaConfig) -> str:
    """Stable content digest of a GA configuration."""
    import dataclasses
    import hashlib

    obj = dataclasses.asdict(config)
    for task, task_obj in zip(config.tasks, obj["tasks"]):
        task_obj["source_kind"] = type(task.source).__name__
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def _breakdown_to_obj(b: FitnessBreakdown) -> dict:
    return {
        "per_task": {name: list(vals) for name, vals in b.per_task.items()},
        "per_task_mean": dict(b.per_task_mean),
        "aggregate": b.aggregate,
    }


def _breakdown_from_obj(obj: dict) -> FitnessBreakdown:
    return FitnessBreakdown(
        per_task={name: tuple(vals) for name, vals in obj["per_task"].items()},
        per_task_mean=dict(obj["per_task_mean"]),
        aggregate=obj["aggregate"],
    )


def _record_to_obj(rec: GenerationRecord) -> dict:
    return {
        "generation": rec.generation,
        "best_fitness": rec.best_fitness,
        "mean_fitness": rec.mean_fitness,
        "counts": {kind.value: n for kind, n in rec.primitive_counts.items()},
        "best_genome": encode(rec.best_genome),
    }


def _record_from_obj(obj: dict) -> GenerationRecord:
    return GenerationRecord(
        generation=obj["generation"],
        best_fitness=obj["best_fitness"],
        mean_fitness=obj["mean_fitness"],
        primitive_counts={PrimitiveKind(name): n for name, n in obj["counts"].items()},
        best_genome=decode(obj["best_genome"]),
    )


def save_checkpoint(state: EvolutionState, config: GaConfig, path: str) -> None:
    """Write a resumable snapshot; embeds the config digest for safety."""
    obj = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config_digest": config_digest(config),
        "generation": state.generation,
        "population": [encode(g) for g in state.population],
        "rng_state": state.rng.bit_generator.state,
        "cache": {key: _breakdown_to_obj(b) for key, b in state.fitness_cache.items()},
        "records": [_record_to_obj(r) for r in state.records],
        "best_genome": None if state.best_genome is None else encode(state.best_genome),
        "best_fitness": None if state.best_genome is None else state.best_fitness,
    }
    with open(path, "w", encoding="utf-8") as f:
        f.write(canonical_json(obj) + "\n")


def load_checkpoint(path: str, config: GaConfig) -> EvolutionState:
    """Load a snapshot written by save_checkpoint; rejects checkpoints whose
    config digest does not match the supplied config."""
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    try:
        obj = json.loads(text)
        if not isinstance(obj, dict):
            raise ValueError("top level is not an object")
        version = obj["format_version"]
        saved_digest = obj["config_digest"]
        generation = obj["generation"]
        population = [decode(g) for g in obj["population"]]
        rng_state = obj["rng_state"]
        cache = {key: _breakdown_from_obj(b) for key, b in obj["cache"].items()}
        records = [_record_from_obj(r) for r in obj["records"]]
        best_text = obj["best_genome"]
        best_fitness = obj["best_fitness"]
    except (KeyError, ValueError, TypeError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version!r}")
    if saved_digest != config_digest(config):
        raise CheckpointError(
            "config digest mismatch: checkpoint was written by a different configuration"
        )
    rng = np.random.default_rng(0)
    rng.bit_generator.state = rng_state
    return EvolutionState(
        generation=generation,
        population=population,
        rng=rng,
        fitness_cache=cache,
        records=records,
        best_genome=None if best_text is None else decode(best_text),
        best_fitness=float("-inf") if best_fitness is None else best_fitness,
    )
