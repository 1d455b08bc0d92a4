"""Execute a genome as a concrete optimizer over flat parameter vectors.

The update applied at step t is

    delta = lr_t * sum_k coeff_k * term_k(g, m_hat, v_hat)
    params <- (1 - lr_t * wd) * params - delta

where lr_t is the warmup/cosine scheduled learning rate, g is the (optionally
clipped) gradient, and m_hat/v_hat are the moment estimates after this step's
update, bias-corrected when the genome asks for it.

Contributions are accumulated per distinct primitive kind in catalog order,
with duplicate kinds' coefficients summed first, so a genome and its
canonical form produce bitwise identical trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .genome import Genome, PrimitiveKind

DEFAULT_CLIP_THRESHOLD = 1.0


class DivergenceError(RuntimeError):
    """Numeric failure inside an optimizer step (non-finite values)."""


@dataclass(frozen=True)
class OptimizerState:
    """First/second moment buffers and the step counter for one run.

    Buffers are allocated only when the genome's flags demand them; t is 0
    before the first step and increments by exactly 1 per step.
    """

    m: np.ndarray | None
    v: np.ndarray | None
    t: int


@dataclass(frozen=True)
class ScheduleContext:
    """Planned run length and the current 1-indexed step."""

    total_steps: int
    step: int = 0


def init_state(genome: Genome, param_count: int) -> OptimizerState:
    """Zero-initialized state sized for `param_count` parameters."""
    if param_count < 1:
        raise ValueError(f"param_count must be >= 1, got {param_count}")
    m = np.zeros(param_count) if genome.use_momentum else None
    v = np.zeros(param_count) if genome.use_second_moment else None
    return OptimizerState(m=m, v=v, t=0)


def scheduled_lr(genome: Genome, ctx: ScheduleContext) -> float:
    """Learning rate at ctx.step: base rate times warmup ramp times cosine factor."""
    lr = genome.learning_rate
    if genome.warmup_steps > 0:
        lr *= min(1.0, ctx.step / genome.warmup_steps)
    if genome.cosine_decay:
        lr *= 0.5 * (1.0 + math.cos(math.pi * (ctx.step / ctx.total_steps)))
    return lr


def update_moments(
    state: OptimizerState, g: np.ndarray, beta1: float, beta2: float
) -> OptimizerState:
    """Advance the step counter and both exponential moving averages.

    m' = beta1 * m + (1 - beta1) * g
    v' = beta2 * v + (1 - beta2) * g**2
    """
    if not np.all(np.isfinite(g)):
        raise DivergenceError("non-finite gradient")
    m = state.m if state.m is None else beta1 * state.m + (1.0 - beta1) * g
    v = state.v if state.v is None else beta2 * state.v + (1.0 - beta2) * (g * g)
    return OptimizerState(m=m, v=v, t=state.t + 1)


def compute_term(
    kind: PrimitiveKind,
    g: np.ndarray,
    m_hat: np.ndarray | None,
    v_hat: np.ndarray | None,
    beta1: float,
    eps: float,
) -> np.ndarray:
    """Evaluate one primitive term of the update catalog."""
    if kind.needs_first_moment and m_hat is None:
        raise ValueError(f"term {kind.value!r} requires the first moment (use_momentum flag)")
    if kind.needs_second_moment and v_hat is None:
        raise ValueError(f"term {kind.value!r} requires the second moment (use_second_moment flag)")
    if kind is PrimitiveKind.GRAD:
        return g
    if kind is PrimitiveKind.MOMENTUM:
        return m_hat
    if kind is PrimitiveKind.RMSNORM:
        return g / (np.sqrt(v_hat) + eps)
    if kind is PrimitiveKind.ADAMTERM:
        return m_hat / (np.sqrt(v_hat) + eps)
    if kind is PrimitiveKind.SIGNGRAD:
        return np.sign(g)
    if kind is PrimitiveKind.UNITGRAD:
        return g / (np.abs(g) + eps)
    if kind is PrimitiveKind.NESTEROV:
        return m_hat + beta1 * (g - m_hat)
    raise ValueError(f"unhandled primitive kind {kind!r}")


def step(
    genome: Genome,
    state: OptimizerState,
    params: np.ndarray,
    grads: np.ndarray,
    ctx: ScheduleContext,
    clip_threshold: float = DEFAULT_CLIP_THRESHOLD,
) -> tuple[np.ndarray, OptimizerState]:
    """Apply one optimizer step; returns (new params, new state).

    Inputs are never mutated. Raises DivergenceError when the update or the
    resulting parameters are non-finite.
    """
    if params.shape != grads.shape:
        raise ValueError(f"shape mismatch: params {params.shape} vs grads {grads.shape}")
    g = np.clip(grads, -clip_threshold, clip_threshold) if genome.grad_clip else grads
    new_state = update_moments(state, g, genome.beta1, genome.beta2)
    t = new_state.t
    if genome.bias_correction:
        m_hat = None if new_state.m is None else new_state.m / (1.0 - genome.beta1 ** t)
        v_hat = None if new_state.v is None else new_state.v / (1.0 - genome.beta2 ** t)
    else:
        m_hat, v_hat = new_state.m, new_state.v
    lr_t = scheduled_lr(genome, ScheduleContext(total_steps=ctx.total_steps, step=t))

    # Sum duplicate kinds' coefficients in term order, then accumulate
    # contributions in catalog order (see module docstring).
    coeff_sum: dict[PrimitiveKind, float] = {}
    for term in genome.terms:
        if term.kind in coeff_sum:
            coeff_sum[term.kind] = coeff_sum[term.kind] + term.coeff
        else:
            coeff_sum[term.kind] = term.coeff
    eps = genome.epsilon
    # Overflow here is expected for divergent genomes; it surfaces as the
    # DivergenceError below rather than a warning.
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        update = np.zeros_like(params)
        for kind in sorted(coeff_sum, key=lambda k: k.order):
            update += coeff_sum[kind] * compute_term(kind, g, m_hat, v_hat, genome.beta1, eps)
        delta = lr_t * update

        wd = genome.weight_decay
        if wd != 0.0:
            new_params = (1.0 - lr_t * wd) * params - delta
        else:
            new_params = params - delta
    if not (np.all(np.isfinite(delta)) and np.all(np.isfinite(new_params))):
        raise DivergenceError(f"non-finite update at step {t}")
    return new_params, new_state
