"""Command-line interface.

Subcommands: evolve (run/resume a GA search), eval (score one genome file),
compare (baseline table over presets), export-preset (write a preset genome).
Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass

from .evolution import (
    CheckpointError,
    EvolutionState,
    GaConfig,
    MutationScales,
    config_digest,
    evolve,
    initial_state,
    load_checkpoint,
    log_to_csv,
    save_checkpoint,
)
from .fitness import genome_fitness
from .genome import (
    GenomeFormatError,
    HyperBounds,
    PRESET_NAMES,
    decode,
    digest,
    encode,
    preset,
)
from .serialize import format_float
from .tasks import BlobsSource, IdxSource, TaskSpec

DATA_DIR_ENV = "EVOOPT_DATA_DIR"
DEFAULT_CHECKPOINT_EVERY = 5

BUILTIN_TASK_NAMES = ("blobs", "mnist")


class CliError(Exception):
    """Configuration or usage problem; maps to exit code 2."""


@dataclass(frozen=True)
class RunConfig:
    ga: GaConfig
    out_dir: str | None
    checkpoint_every: int


def _check_keys(obj: dict, required: set[str], optional: set[str], where: str) -> None:
    unknown = set(obj) - required - optional
    if unknown:
        raise CliError(f"{where}: unknown key {sorted(unknown)[0]!r}")
    missing = required - set(obj)
    if missing:
        raise CliError(f"{where}: missing key {sorted(missing)[0]!r}")


def _pair(obj, where: str) -> tuple[float, float]:
    if not (isinstance(obj, list) and len(obj) == 2):
        raise CliError(f"{where}: expected a [low, high] pair")
    return float(obj[0]), float(obj[1])


def _parse_task(obj: dict, config_dir: str, index: int) -> TaskSpec:
    where = f"tasks[{index}]"
    if not isinstance(obj, dict):
        raise CliError(f"{where}: expected an object")
    common_req = {"name", "kind", "hidden_width", "batch_size", "steps"}
    common_opt = {"subset_size", "subset_seed"}
    kind = obj.get("kind")
    if kind == "blobs":
        _check_keys(
            obj,
            common_req | {"seed", "n_per_class", "d", "classes", "sigma"},
            common_opt,
            where,
        )
        source = BlobsSource(
            seed=int(obj["seed"]),
            n_per_class=int(obj["n_per_class"]),
            d=int(obj["d"]),
            classes=int(obj["classes"]),
            sigma=float(obj["sigma"]),
        )
    elif kind == "idx":
        _check_keys(
            obj,
            common_req | {"train_images", "train_labels", "test_images", "test_labels"},
            common_opt,
            where,
        )

        def resolve(p):
            return p if os.path.isabs(p) else os.path.join(config_dir, p)

        source = IdxSource(
            train_images=resolve(obj["train_images"]),
            train_labels=resolve(obj["train_labels"]),
            test_images=resolve(obj["test_images"]),
            test_labels=resolve(obj["test_labels"]),
        )
    else:
        raise CliError(f"{where}.kind: expected 'blobs' or 'idx', got {kind!r}")
    subset = obj.get("subset_size")
    return TaskSpec(
        name=str(obj["name"]),
        source=source,
        hidden_width=int(obj["hidden_width"]),
        batch_size=int(obj["batch_size"]),
        steps=int(obj["steps"]),
        subset_size=None if subset is None else int(subset),
        subset_seed=int(obj.get("subset_seed", 0)),
    )


def parse_run_config(path: str) -> RunConfig:
    """Parse and validate the run-configuration file (strict keys)."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            obj = json.load(f)
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"config {path}: invalid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise CliError(f"config {path}: top level must be an object")
    _check_keys(
        obj,
        {"tasks"},
        {
            "population_size", "generations", "tournament_k", "elite_count",
            "eval_seeds", "master_seed", "mutation_rates", "mutation_scales",
            "bounds", "out_dir", "checkpoint_every",
        },
        "config",
    )
    if not isinstance(obj["tasks"], list) or not obj["tasks"]:
        raise CliError("config: tasks must be a non-empty array")
    config_dir = os.path.dirname(os.path.abspath(path))
    tasks = tuple(_parse_task(t, config_dir, i) for i, t in enumerate(obj["tasks"]))

    kwargs: dict = {"tasks": tasks}
    for key in ("population_size", "generations", "tournament_k", "elite_count", "master_seed"):
        if key in obj:
            kwargs[key] = int(obj[key])
    if "eval_seeds" in obj:
        kwargs["eval_seeds"] = tuple(int(s) for s in obj["eval_seeds"])
    if "mutation_rates" in obj:
        rates = obj["mutation_rates"]
        _check_keys(rates, set(), {"numeric", "structural", "flag"}, "config.mutation_rates")
        for name in ("numeric", "structural", "flag"):
            if name in rates:
                kwargs[f"{name}_rate"] = _pair(rates[name], f"config.mutation_rates.{name}")
    if "mutation_scales" in obj:
        scales = obj["mutation_scales"]
        _check_keys(scales, set(), {"log10", "beta", "coeff"}, "config.mutation_scales")
        kwargs["scales"] = MutationScales(**{k: float(v) for k, v in scales.items()})
    if "bounds" in obj:
        bounds = obj["bounds"]
        bound_keys = {"coeff", "log10_lr", "beta1", "beta2", "log10_eps", "log10_wd"}
        _check_keys(bounds, set(), bound_keys | {"warmup_choices"}, "config.bounds")
        bkwargs = {k: _pair(bounds[k], f"config.bounds.{k}") for k in bound_keys if k in bounds}
        if "warmup_choices" in bounds:
            bkwargs["warmup_choices"] = tuple(int(w) for w in bounds["warmup_choices"])
        kwargs["bounds"] = HyperBounds(**bkwargs)

    try:
        ga = GaConfig(**kwargs)
        ga.validate()
    except ValueError as exc:
        raise CliError(f"config {path}: {exc}") from exc
    out_dir = obj.get("out_dir")
    every = int(obj.get("checkpoint_every", DEFAULT_CHECKPOINT_EVERY))
    return RunConfig(ga=ga, out_dir=out_dir, checkpoint_every=every)


def builtin_task(name: str, steps: int) -> TaskSpec:
    """Named tasks available to eval/compare without a config file."""
    if name == "blobs":
        return TaskSpec(
            name="blobs",
            source=BlobsSource(seed=7, n_per_class=250, d=2, classes=4, sigma=0.3),
            hidden_width=16,
            batch_size=64,
            steps=steps,
        )
    if name == "mnist":
        data_dir = os.environ.get(DATA_DIR_ENV)
        if not data_dir:
            raise CliError(f"task 'mnist' needs {DATA_DIR_ENV} pointing at the IDX files")
        return TaskSpec(
            name="mnist",
            source=IdxSource(
                train_images=os.path.join(data_dir, "train-images-idx3-ubyte"),
                train_labels=os.path.join(data_dir, "train-labels-idx1-ubyte"),
                test_images=os.path.join(data_dir, "t10k-images-idx3-ubyte"),
                test_labels=os.path.join(data_dir, "t10k-labels-idx1-ubyte"),
            ),
            hidden_width=64,
            batch_size=64,
            steps=steps,
            subset_size=2000,
        )
    raise CliError(f"unknown task {name!r}; known tasks: {', '.join(BUILTIN_TASK_NAMES)}")


def _parse_names(spec: str) -> list[str]:
    names = [n.strip() for n in spec.split(",") if n.strip()]
    if not names:
        raise CliError("expected a comma-separated list of names")
    return names


def cmd_evolve(args) -> int:
    run_cfg = parse_run_config(args.config)
    out_dir = args.out or run_cfg.out_dir
    if not out_dir:
        raise CliError("no output directory: pass --out or set out_dir in the config")
    os.makedirs(out_dir, exist_ok=True)

    if args.resume:
        try:
            state = load_checkpoint(args.resume, run_cfg.ga)
        except (OSError, CheckpointError) as exc:
            raise CliError(str(exc)) from exc
    else:
        state = initial_state(run_cfg.ga)

    every = run_cfg.checkpoint_every

    def on_generation(st: EvolutionState, record) -> None:
        if every > 0 and st.generation % every == 0:
            path = os.path.join(out_dir, f"checkpoint_gen{st.generation:04d}.json")
            save_checkpoint(st, run_cfg.ga, path)

    best, records = evolve(run_cfg.ga, jobs=args.jobs, state=state, on_generation=on_generation)

    with open(os.path.join(out_dir, "log.csv"), "w", encoding="utf-8", newline="") as f:
        f.write(log_to_csv(records))
    with open(os.path.join(out_dir, "best_genome.json"), "w", encoding="utf-8", newline="") as f:
        f.write(encode(best))

    breakdown = state.fitness_cache[digest(best)]
    print(f"best fitness: {format_float(state.best_fitness)}")
    for task_name, mean in breakdown.per_task_mean.items():
        print(f"  {task_name}: {format_float(mean)}")
    print(f"artifacts written to {out_dir}")
    return 0


def cmd_eval(args) -> int:
    try:
        with open(args.genome, "r", encoding="utf-8") as f:
            genome = decode(f.read())
    except OSError as exc:
        raise CliError(f"cannot read genome {args.genome}: {exc}") from exc
    except GenomeFormatError as exc:
        raise CliError(f"genome {args.genome}: {exc}") from exc
    tasks = [builtin_task(name, args.steps) for name in _parse_names(args.tasks)]
    seeds = list(range(args.seeds))
    breakdown = genome_fitness(genome, tasks, seeds)
    sys.stdout.write(breakdown.to_json())
    return 0


def cmd_compare(args) -> int:
    names = _parse_names(args.presets)
    for name in names:
        if name not in PRESET_NAMES:
            raise CliError(f"unknown preset {name!r}; valid: {', '.join(PRESET_NAMES)}")
    tasks = [builtin_task(task, args.steps) for task in _parse_names(args.tasks)]
    seeds = list(range(args.seeds))
    lines = ["optimizer," + ",".join(t.name for t in tasks) + ",overall"]
    for name in names:
        breakdown = genome_fitness(preset(name), tasks, seeds)
        cells = [format_float(breakdown.per_task_mean[t.name]) for t in tasks]
        lines.append(f"{name},{','.join(cells)},{format_float(breakdown.aggregate)}")
    text = "\n".join(lines) + "\n"
    with open(args.out, "w", encoding="utf-8", newline="") as f:
        f.write(text)
    print(f"wrote {args.out}")
    return 0


def cmd_export_preset(args) -> int:
    try:
        genome = preset(args.name)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    with open(args.out, "w", encoding="utf-8", newline="") as f:
        f.write(encode(genome))
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evoopt",
        description="Evolve optimizer update rules with a genetic algorithm.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evolve", help="run (or resume) an evolution search")
    p.add_argument("--config", required=True, help="run configuration file (JSON)")
    p.add_argument("--out", help="output directory (overrides config out_dir)")
    p.add_argument("--resume", help="checkpoint file to resume from")
    p.add_argument("--jobs", type=int, default=1, help="concurrent evaluations")
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("eval", help="evaluate one genome file")
    p.add_argument("--genome", required=True, help="genome file (JSON)")
    p.add_argument("--tasks", default="blobs", help="comma-separated task names")
    p.add_argument("--seeds", type=int, default=3, help="number of seeds")
    p.add_argument("--steps", type=int, default=200, help="training steps per run")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="baseline comparison table over presets")
    p.add_argument("--presets", required=True, help="comma-separated preset names")
    p.add_argument("--tasks", default="blobs", help="comma-separated task names")
    p.add_argument("--seeds", type=int, default=3, help="number of seeds")
    p.add_argument("--steps", type=int, default=200, help="training steps per run")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("export-preset", help="write a built-in preset genome file")
    p.add_argument("name", help=f"one of: {', '.join(PRESET_NAMES)}")
    p.add_argument("--out", required=True, help="output genome path")
    p.set_defaults(func=cmd_export_preset)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
