"""SGD and AdamW with full-matrix and partial-column update paths.

Optimizer state is allocated at the trainable shape only: for partial
connection training that is d_out x r, which is where the optimizer-state
memory saving comes from. The partial path computes the same per-element
arithmetic as the full path, so training the full index set reproduces
full fine-tuning bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import IndexSet, scatter_cols_add


@dataclass(frozen=True)
class AdamWConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ValueError("betas must lie in [0, 1)")
        if self.eps <= 0:
            raise ValueError(f"eps must be > 0, got {self.eps}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")


@dataclass
class OptimState:
    """AdamW moment buffers shaped exactly like the trainable parameter."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, param: np.ndarray) -> "OptimState":
        return cls(m=np.zeros_like(param), v=np.zeros_like(param))

    @property
    def nbytes(self) -> int:
        return self.m.nbytes + self.v.nbytes


def sgd_step(param: np.ndarray, grad: np.ndarray, lr: float) -> None:
    """In place: param -= lr * grad."""
    if param.shape != grad.shape:
        raise ShapeError(f"param {param.shape} vs grad {grad.shape}")
    param -= lr * grad


def adamw_delta(
    state: OptimState, param: np.ndarray, grad: np.ndarray, cfg: AdamWConfig,
    lr_mult: float = 1.0,
) -> np.ndarray:
    """One AdamW step's subtractive update, with decoupled weight decay.

    Advances the moment buffers and returns
    lr * lr_mult * (m_hat / (sqrt(v_hat) + eps) + weight_decay * param);
    the caller subtracts it, either from the full matrix or through a
    column scatter. ``param`` is read only (pre-update values).
    """
    if not (state.m.shape == param.shape == grad.shape):
        raise ShapeError(
            f"state {state.m.shape}, param {param.shape}, grad {grad.shape} must match"
        )
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grad
    state.v *= b2
    state.v += (1.0 - b2) * np.square(grad)
    m_hat = state.m / (1.0 - b1 ** state.step)
    v_hat = state.v / (1.0 - b2 ** state.step)
    lr = cfg.lr * lr_mult
    return lr * (m_hat / (np.sqrt(v_hat) + cfg.eps) + cfg.weight_decay * param)


def adamw_step(
    state: OptimState, param: np.ndarray, grad: np.ndarray, cfg: AdamWConfig,
    lr_mult: float = 1.0,
) -> None:
    """In-place AdamW update of a full parameter matrix."""
    param -= adamw_delta(state, param, grad, cfg, lr_mult)


def paca_apply_update(w: np.ndarray, idx: IndexSet, update: np.ndarray) -> None:
    """Subtract an optimizer update from the selected columns of w.

    Unselected columns are never touched, so they stay bitwise frozen.
    """
    scatter_cols_add(w, idx, update, -1.0)


def lr_multiplier(schedule: str, step: int, total_steps: int, warmup_steps: int = 0) -> float:
    """Step-indexed learning-rate factor in [0, 1].

    ``step`` is 0-based. Warmup ramps linearly from 1/warmup_steps to 1,
    then ``constant`` holds 1, ``cosine`` decays as (1+cos(pi*p))/2 and
    ``linear`` as 1-p, with p the post-warmup progress through training.
    """
    if schedule not in ("constant", "cosine", "linear"):
        raise ValueError(f"unknown schedule {schedule!r}")
    if warmup_steps < 0 or total_steps < 1:
        raise ValueError("need warmup_steps >= 0 and total_steps >= 1")
    if warmup_steps > 0 and step < warmup_steps:
        return (step + 1) / warmup_steps
    if schedule == "constant":
        return 1.0
    span = max(total_steps - warmup_steps, 1)
    progress = min((step - warmup_steps) / span, 1.0)
    if schedule == "cosine":
        return 0.5 * (1.0 + math.cos(math.pi * progress))
    return 1.0 - progress
