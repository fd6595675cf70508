# app/services/optimizer.py
# Adam with decoupled weight decay, driven by a cosine 1-cycle learning-rate schedule.

import math
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from app.core.exceptions import ContractViolation, NumericError
from app.schemas.optimizer import OptimizerConfig
from app.services.autodiff import Tensor


def _cosine(start: float, end: float, pct: float) -> float:
    return end + (start - end) / 2.0 * (math.cos(math.pi * pct) + 1.0)


def one_cycle_lr(step: int, config: OptimizerConfig) -> float:
    if step < 0 or step > config.total_steps:
        raise ContractViolation(f"schedule step {step} outside [0, {config.total_steps}]")
    initial = config.max_lr / config.div_factor
    final = config.max_lr / config.final_div_factor
    peak = config.warmup_steps
    if step <= peak:
        return _cosine(initial, config.max_lr, step / peak)
    anneal = config.total_steps - peak
    return _cosine(config.max_lr, final, (step - peak) / anneal)


@dataclass
class OptimizerState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    t: int = 0
    history: List[float] = field(default_factory=list)  # learning rates used, one per step


def init_state(params: Sequence[Tensor]) -> OptimizerState:
    return OptimizerState(m=[np.zeros(p.shape) for p in params], v=[np.zeros(p.shape) for p in params])


def adam_step(
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray],
    state: OptimizerState,
    lr: float,
    config: OptimizerConfig,
) -> OptimizerState:
    """In-place Adam update of params.data; weight decay is applied outside the adaptive scaling."""
    if len(grads) != len(params):
        raise ContractViolation(f"{len(grads)} gradients for {len(params)} parameters")
    for p, g in zip(params, grads):
        if g is None:
            raise ContractViolation(f"missing gradient for parameter {p.name or p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {p.name or p.shape} at step {state.t + 1}", step=state.t + 1)

    state.t += 1
    bias1 = 1.0 - config.beta1 ** state.t
    bias2 = 1.0 - config.beta2 ** state.t
    for idx, (p, g) in enumerate(zip(params, grads)):
        state.m[idx] = config.beta1 * state.m[idx] + (1.0 - config.beta1) * g
        state.v[idx] = config.beta2 * state.v[idx] + (1.0 - config.beta2) * g * g
        m_hat = state.m[idx] / bias1
        v_hat = state.v[idx] / bias2
        p.data = p.data - lr * (m_hat / (np.sqrt(v_hat) + config.eps) + config.weight_decay * p.data)
    state.history.append(lr)
    return state
