"""Optimizer genomes: an evolvable encoding of gradient-based update rules.

A genome is a weighted list of primitive update terms plus the scalar
hyperparameters, boolean flags and schedule settings needed to run them.
This module owns the data model, validation, canonicalization, the built-in
presets, random generation, and the JSON file format.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .serialize import canonical_json

FORMAT_VERSION = 1

# log10 weight decay at (or below) this value means "decay disabled": the
# interpreter treats the effective decay coefficient as exactly 0.0 so that
# presets without decay match their textbook counterparts bit for bit.
LOG10_WD_OFF = -12.0


class PrimitiveKind(enum.Enum):
    """The closed catalog of primitive update terms.

    Member order is the canonical total order used when sorting term lists
    and serializing genomes.
    """

    GRAD = "grad"
    MOMENTUM = "momentum"
    RMSNORM = "rmsnorm"
    ADAMTERM = "adamterm"
    SIGNGRAD = "signgrad"
    UNITGRAD = "unitgrad"
    NESTEROV = "nesterov"

    @property
    def order(self) -> int:
        return _KIND_ORDER[self]

    @property
    def needs_first_moment(self) -> bool:
        return self in (PrimitiveKind.MOMENTUM, PrimitiveKind.ADAMTERM, PrimitiveKind.NESTEROV)

    @property
    def needs_second_moment(self) -> bool:
        return self in (PrimitiveKind.RMSNORM, PrimitiveKind.ADAMTERM)


_KIND_ORDER = {kind: i for i, kind in enumerate(PrimitiveKind)}
_KIND_BY_NAME = {kind.value: kind for kind in PrimitiveKind}

MAX_TERMS = 4


@dataclass(frozen=True)
class Term:
    """One primitive term together with its linear weight."""

    kind: PrimitiveKind
    coeff: float


@dataclass(frozen=True)
class Genome:
    """Complete heritable description of an optimizer.

    Immutable; derive modified copies with :func:`dataclasses.replace`.
    """

    terms: tuple[Term, ...]
    log10_lr: float
    beta1: float
    beta2: float
    log10_eps: float
    log10_wd: float
    use_momentum: bool
    use_second_moment: bool
    bias_correction: bool
    grad_clip: bool
    warmup_steps: int
    cosine_decay: bool

    @property
    def learning_rate(self) -> float:
        return 10.0 ** self.log10_lr

    @property
    def epsilon(self) -> float:
        return 10.0 ** self.log10_eps

    @property
    def weight_decay(self) -> float:
        """Effective decay coefficient; exactly 0.0 when decay is disabled."""
        if self.log10_wd <= LOG10_WD_OFF:
            return 0.0
        return 10.0 ** self.log10_wd


@dataclass(frozen=True)
class HyperBounds:
    """Per-field (low, high) ranges used for sampling, mutation and clamping.

    The log10 weight-decay range deliberately reaches down to LOG10_WD_OFF so
    that "decay off" is representable, survives canonicalization, and is
    reachable by mutation.
    """

    coeff: tuple[float, float] = (0.0, 5.0)
    log10_lr: tuple[float, float] = (-5.0, -1.0)
    beta1: tuple[float, float] = (0.5, 0.9999)
    beta2: tuple[float, float] = (0.5, 0.9999)
    log10_eps: tuple[float, float] = (-10.0, -4.0)
    log10_wd: tuple[float, float] = (LOG10_WD_OFF, -2.0)
    warmup_choices: tuple[int, ...] = (0, 50, 100, 200, 500)

    def __post_init__(self) -> None:
        for name in ("coeff", "log10_lr", "beta1", "beta2", "log10_eps", "log10_wd"):
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
                raise ValueError(f"bounds.{name}: invalid range ({lo}, {hi})")
        for name in ("beta1", "beta2"):
            lo, hi = getattr(self, name)
            if not (0.0 < lo and hi < 1.0):
                raise ValueError(f"bounds.{name}: must lie strictly inside (0, 1)")
        if not self.warmup_choices or any(w < 0 for w in self.warmup_choices):
            raise ValueError("bounds.warmup_choices: need at least one non-negative entry")


DEFAULT_BOUNDS = HyperBounds()


@dataclass(frozen=True)
class Violation:
    """A single validation failure: which field, and which constraint broke."""

    field: str
    constraint: str

    def __str__(self) -> str:
        return f"{self.field}: {self.constraint}"


class GenomeFormatError(ValueError):
    """Raised when genome text cannot be decoded."""


def validate(genome: Genome, bounds: HyperBounds = DEFAULT_BOUNDS) -> list[Violation]:
    """Check every genome invariant; returns an empty list iff all hold."""
    out: list[Violation] = []
    n = len(genome.terms)
    if not 1 <= n <= MAX_TERMS:
        out.append(Violation("terms", f"length must be in [1, {MAX_TERMS}], got {n}"))
    lo, hi = bounds.coeff
    for i, term in enumerate(genome.terms):
        if not isinstance(term.kind, PrimitiveKind):
            out.append(Violation(f"terms[{i}].kind", f"not a primitive kind: {term.kind!r}"))
            continue
        if not math.isfinite(term.coeff):
            out.append(Violation(f"terms[{i}].coeff", "must be finite"))
        elif not lo <= term.coeff <= hi:
            out.append(Violation(f"terms[{i}].coeff", f"must be in [{lo}, {hi}], got {term.coeff}"))
    for name in ("log10_lr", "log10_eps", "log10_wd"):
        if not math.isfinite(getattr(genome, name)):
            out.append(Violation(name, "must be finite"))
    for name in ("beta1", "beta2"):
        value = getattr(genome, name)
        if not (math.isfinite(value) and 0.0 < value < 1.0):
            out.append(Violation(name, f"must be in the open interval (0, 1), got {value}"))
    if not (isinstance(genome.warmup_steps, int) and genome.warmup_steps >= 0):
        out.append(Violation("warmup_steps", "must be a non-negative integer"))
    kinds = {t.kind for t in genome.terms if isinstance(t.kind, PrimitiveKind)}
    if any(k.needs_first_moment for k in kinds) and not genome.use_momentum:
        out.append(Violation("use_momentum", "required by a term that consumes the first moment"))
    if any(k.needs_second_moment for k in kinds) and not genome.use_second_moment:
        out.append(Violation("use_second_moment", "required by a term that consumes the second moment"))
    return out


def _clamp(x: float, lo: float, hi: float) -> float:
    return min(max(x, lo), hi)


def canonicalize(genome: Genome, bounds: HyperBounds = DEFAULT_BOUNDS) -> Genome:
    """Return the canonical form: duplicate kinds merged by summing their
    coefficients, terms sorted in catalog order, scalars clamped to bounds,
    and moment flags switched on where the surviving terms require them.

    Idempotent. Raises ValueError on an empty term list.
    """
    if not genome.terms:
        raise ValueError("cannot canonicalize a genome with no terms")
    summed: dict[PrimitiveKind, float] = {}
    for term in genome.terms:
        if term.kind in summed:
            summed[term.kind] = summed[term.kind] + term.coeff
        else:
            summed[term.kind] = term.coeff
    terms = tuple(
        Term(kind, _clamp(summed[kind], *bounds.coeff))
        for kind in sorted(summed, key=lambda k: k.order)
    )
    return replace(
        genome,
        terms=terms,
        log10_lr=_clamp(genome.log10_lr, *bounds.log10_lr),
        beta1=_clamp(genome.beta1, *bounds.beta1),
        beta2=_clamp(genome.beta2, *bounds.beta2),
        log10_eps=_clamp(genome.log10_eps, *bounds.log10_eps),
        log10_wd=_clamp(genome.log10_wd, *bounds.log10_wd),
        use_momentum=genome.use_momentum or any(t.kind.needs_first_moment for t in terms),
        use_second_moment=genome.use_second_moment or any(t.kind.needs_second_moment for t in terms),
        warmup_steps=max(0, int(genome.warmup_steps)),
    )


PRESET_NAMES = ("sgd", "sgd_momentum", "adam", "adamw", "rmsprop", "evolved")


def preset(name: str) -> Genome:
    """Return the built-in genome for a known optimizer.

    Valid names: sgd, sgd_momentum, adam, adamw, rmsprop, evolved.
    """
    if name == "sgd":
        return Genome(
            terms=(Term(PrimitiveKind.GRAD, 1.0),),
            log10_lr=-1.0,
            beta1=0.9,
            beta2=0.999,
            log10_eps=-8.0,
            log10_wd=LOG10_WD_OFF,
            use_momentum=False,
            use_second_moment=False,
            bias_correction=False,
            grad_clip=False,
            warmup_steps=0,
            cosine_decay=False,
        )
    if name == "sgd_momentum":
        return replace(
            preset("sgd"),
            terms=(Term(PrimitiveKind.MOMENTUM, 1.0),),
            use_momentum=True,
        )
    if name == "adam":
        return Genome(
            terms=(Term(PrimitiveKind.ADAMTERM, 1.0),),
            log10_lr=-3.0,
            beta1=0.9,
            beta2=0.999,
            log10_eps=-8.0,
            log10_wd=LOG10_WD_OFF,
            use_momentum=True,
            use_second_moment=True,
            bias_correction=True,
            grad_clip=False,
            warmup_steps=0,
            cosine_decay=False,
        )
    if name == "adamw":
        return replace(preset("adam"), log10_wd=-2.0)
    if name == "rmsprop":
        return Genome(
            terms=(Term(PrimitiveKind.RMSNORM, 1.0),),
            log10_lr=-3.0,
            beta1=0.9,
            beta2=0.99,
            log10_eps=-8.0,
            log10_wd=LOG10_WD_OFF,
            use_momentum=False,
            use_second_moment=True,
            bias_correction=False,
            grad_clip=False,
            warmup_steps=0,
            cosine_decay=False,
        )
    if name == "evolved":
        return Genome(
            terms=(
                Term(PrimitiveKind.ADAMTERM, 3.63),
                Term(PrimitiveKind.SIGNGRAD, 0.73),
            ),
            log10_lr=math.log10(1.2e-3),
            beta1=0.855,
            beta2=0.936,
            log10_eps=-8.0,
            log10_wd=math.log10(9.7e-4),
            use_momentum=True,
            use_second_moment=True,
            bias_correction=False,
            grad_clip=False,
            warmup_steps=100,
            cosine_decay=True,
        )
    raise ValueError(f"unknown preset {name!r}; valid names: {', '.join(PRESET_NAMES)}")


def random_genome(rng: np.random.Generator, bounds: HyperBounds = DEFAULT_BOUNDS) -> Genome:
    """Sample a uniformly random genome within bounds and canonicalize it."""
    kinds = list(PrimitiveKind)
    n_terms = int(rng.integers(1, MAX_TERMS + 1))
    terms = tuple(
        Term(kinds[int(rng.integers(len(kinds)))], float(rng.uniform(*bounds.coeff)))
        for _ in range(n_terms)
    )
    raw = Genome(
        terms=terms,
        log10_lr=float(rng.uniform(*bounds.log10_lr)),
        beta1=float(rng.uniform(*bounds.beta1)),
        beta2=float(rng.uniform(*bounds.beta2)),
        log10_eps=float(rng.uniform(*bounds.log10_eps)),
        log10_wd=float(rng.uniform(*bounds.log10_wd)),
        use_momentum=bool(rng.integers(2)),
        use_second_moment=bool(rng.integers(2)),
        bias_correction=bool(rng.integers(2)),
        grad_clip=bool(rng.integers(2)),
        warmup_steps=int(bounds.warmup_choices[int(rng.integers(len(bounds.warmup_choices)))]),
        cosine_decay=bool(rng.integers(2)),
    )
    return canonicalize(raw, bounds)


def encode(genome: Genome) -> str:
    """Serialize a genome to deterministic JSON text (the genome file format)."""
    doc = {
        "format_version": FORMAT_VERSION,
        "terms": [{"kind": t.kind.value, "coeff": float(t.coeff)} for t in genome.terms],
        "log10_lr": float(genome.log10_lr),
        "beta1": float(genome.beta1),
        "beta2": float(genome.beta2),
        "log10_eps": float(genome.log10_eps),
        "log10_wd": float(genome.log10_wd),
        "flags": {
            "use_momentum": genome.use_momentum,
            "use_second_moment": genome.use_second_moment,
            "bias_correction": genome.bias_correction,
            "grad_clip": genome.grad_clip,
        },
        "schedule": {
            "warmup_steps": int(genome.warmup_steps),
            "cosine_decay": genome.cosine_decay,
        },
    }
    return canonical_json(doc) + "\n"


_TOP_KEYS = {
    "terms", "log10_lr", "beta1", "beta2", "log10_eps", "log10_wd",
    "flags", "schedule", "format_version",
}
_FLAG_KEYS = {"use_momentum", "use_second_moment", "bias_correction", "grad_clip"}
_SCHEDULE_KEYS = {"warmup_steps", "cosine_decay"}


def _reject_constant(name: str) -> float:
    raise GenomeFormatError(f"non-finite JSON constant {name!r} is not allowed")


def _check_keys(obj: dict, expected: set[str], where: str) -> None:
    unknown = set(obj) - expected
    if unknown:
        raise GenomeFormatError(f"{where}: unknown key {sorted(unknown)[0]!r}")
    missing = expected - set(obj)
    if missing:
        raise GenomeFormatError(f"{where}: missing key {sorted(missing)[0]!r}")


def _as_float(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise GenomeFormatError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _as_bool(value, where: str) -> bool:
    if not isinstance(value, bool):
        raise GenomeFormatError(f"{where}: expected a boolean, got {value!r}")
    return value


def decode(text: str) -> Genome:
    """Parse genome file text; rejects malformed or out-of-range documents."""
    try:
        doc = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise GenomeFormatError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise GenomeFormatError("top level: expected an object")
    _check_keys(doc, _TOP_KEYS, "top level")
    if doc["format_version"] != FORMAT_VERSION:
        raise GenomeFormatError(
            f"format_version: expected {FORMAT_VERSION}, got {doc['format_version']!r}"
        )
    if not isinstance(doc["terms"], list):
        raise GenomeFormatError("terms: expected an array")
    terms = []
    for i, entry in enumerate(doc["terms"]):
        where = f"terms[{i}]"
        if not isinstance(entry, dict):
            raise GenomeFormatError(f"{where}: expected an object")
        _check_keys(entry, {"kind", "coeff"}, where)
        kind_name = entry["kind"]
        if not isinstance(kind_name, str) or kind_name not in _KIND_BY_NAME:
            raise GenomeFormatError(
                f"{where}.kind: unknown primitive {kind_name!r}; "
                f"valid kinds: {', '.join(k.value for k in PrimitiveKind)}"
            )
        terms.append(Term(_KIND_BY_NAME[kind_name], _as_float(entry["coeff"], f"{where}.coeff")))
    flags = doc["flags"]
    if not isinstance(flags, dict):
        raise GenomeFormatError("flags: expected an object")
    _check_keys(flags, _FLAG_KEYS, "flags")
    schedule = doc["schedule"]
    if not isinstance(schedule, dict):
        raise GenomeFormatError("schedule: expected an object")
    _check_keys(schedule, _SCHEDULE_KEYS, "schedule")
    warmup = schedule["warmup_steps"]
    if isinstance(warmup, bool) or not isinstance(warmup, int):
        raise GenomeFormatError(f"schedule.warmup_steps: expected an integer, got {warmup!r}")
    genome = Genome(
        terms=tuple(terms),
        log10_lr=_as_float(doc["log10_lr"], "log10_lr"),
        beta1=_as_float(doc["beta1"], "beta1"),
        beta2=_as_float(doc["beta2"], "beta2"),
        log10_eps=_as_float(doc["log10_eps"], "log10_eps"),
        log10_wd=_as_float(doc["log10_wd"], "log10_wd"),
        use_momentum=_as_bool(flags["use_momentum"], "flags.use_momentum"),
        use_second_moment=_as_bool(flags["use_second_moment"], "flags.use_second_moment"),
        bias_correction=_as_bool(flags["bias_correction"], "flags.bias_correction"),
        grad_clip=_as_bool(flags["grad_clip"], "flags.grad_clip"),
        warmup_steps=warmup,
        cosine_decay=_as_bool(schedule["cosine_decay"], "schedule.cosine_decay"),
    )
    violations = validate(genome)
    if violations:
        raise GenomeFormatError("; ".join(str(v) for v in violations))
    return genome


def digest(genome: Genome) -> str:
    """Content digest of a genome (stable across processes and runs)."""
    return hashlib.sha256(encode(genome).encode("utf-8")).hexdigest()
