"""Scalar fitness for training runs and multi-task aggregation.

A stable run scores its final test accuracy plus a small bonus for low
training loss near the end; divergent runs score -1. Genome-level fitness is
the unweighted mean over seeds, then over tasks.
"""

from __future__ import annotations

import math
from concurrent.futures import Executor
from dataclasses import dataclass
from typing import Sequence

from .genome import Genome
from .serialize import canonical_json
from .tasks import TaskSpec, TrainRun, train

DIVERGED_FITNESS = -1.0
LOSS_BONUS_WEIGHT = 0.05
LOSS_BONUS_CAP = 0.05
LOSS_WINDOW = 50


@dataclass(frozen=True)
class FitnessBreakdown:
    """Per-seed, per-task and aggregate fitness for one genome."""

    per_task: dict[str, tuple[float, ...]]
    per_task_mean: dict[str, float]
    aggregate: float

    def to_json(self) -> str:
        return canonical_json({
            "per_task": {name: list(vals) for name, vals in self.per_task.items()},
            "per_task_mean": dict(self.per_task_mean),
            "aggregate": self.aggregate,
        }) + "\n"


def run_fitness(run: TrainRun) -> float:
    """Score one run: accuracy plus the capped training-loss bonus, or -1."""
    if run.diverged:
        return DIVERGED_FITNESS
    if not run.loss_trace:
        raise ValueError("non-diverged run with an empty loss trace")
    tail = run.loss_trace[-LOSS_WINDOW:]
    mean_loss = math.fsum(tail) / len(tail)
    bonus = min(LOSS_BONUS_CAP, LOSS_BONUS_WEIGHT * max(0.0, 1.0 - mean_loss))
    return run.test_accuracy + bonus


def evaluate_run(genome: Genome, task: TaskSpec, seed: int) -> float:
    """Train one (genome, task, seed) combination and score it."""
    return run_fitness(train(genome, task, seed))


def _evaluate_run_args(args: tuple[Genome, TaskSpec, int]) -> float:
    return evaluate_run(*args)


def assemble_breakdown(
    tasks: Sequence[TaskSpec], seeds: Sequence[int], values: Sequence[float]
) -> FitnessBreakdown:
    """Group a flat (task-major, seed-minor) list of run fitness values.

    Means use exactly rounded summation, so permuting task or seed order
    cannot change the aggregate.
    """
    if len(values) != len(tasks) * len(seeds):
        raise ValueError(f"expected {len(tasks) * len(seeds)} values, got {len(values)}")
    per_task: dict[str, tuple[float, ...]] = {}
    per_task_mean: dict[str, float] = {}
    for i, task in enumerate(tasks):
        vals = tuple(values[i * len(seeds):(i + 1) * len(seeds)])
        if task.name in per_task:
            raise ValueError(f"duplicate task name {task.name!r}")
        per_task[task.name] = vals
        per_task_mean[task.name] = math.fsum(vals) / len(vals)
    aggregate = math.fsum(per_task_mean.values()) / len(per_task_mean)
    return FitnessBreakdown(per_task, per_task_mean, aggregate)


def genome_fitness(
    genome: Genome,
    tasks: Sequence[TaskSpec],
    seeds: Sequence[int],
    executor: Executor | None = None,
) -> FitnessBreakdown:
    """Run every (task, seed) pair and aggregate.

    The grid may be evaluated concurrently through `executor`; results are
    assembled in (task, seed) order, so the outcome is schedule-independent.
    """
    if not tasks or not seeds:
        raise ValueError("tasks and seeds must be non-empty")
    items = [(genome, task, seed) for task in tasks for seed in seeds]
    if executor is None:
        values = [evaluate_run(*item) for item in items]
    else:
        values = list(executor.map(_evaluate_run_args, items))
    return assemble_breakdown(tasks, seeds, values)
