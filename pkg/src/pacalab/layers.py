"""Forward/backward passes for the three linear-layer training regimes.

* full fine-tuning: train every weight, cache the whole input batch;
* low-rank adapters (LoRA): train two small factors beside the frozen
  weight, cache the input batch plus the adapter midpoint;
* partial-connection training (PaCA): train r columns of the weight
  itself, cache only the r matching input rows.

Each forward returns an ``ActivationCache`` recording exactly the tensors
the backward pass needs, with an exact byte count; that record is what the
memory accounting in the harness is checked against. The partial-connection
forward is the plain dense product, so its output is bit-identical to the
full layer's, and its weight gradient equals the corresponding columns of
the full weight gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, StateError
from .tensor import IndexSet, gather_rows, matmul, transpose


@dataclass
class LinearParams:
    w: np.ndarray  # d_out x d_in


@dataclass
class LoRAParams:
    a: np.ndarray  # r x d_in
    b: np.ndarray  # d_out x r, zeros at fresh construction
    scale: float   # alpha / r

    def __post_init__(self):
        if self.a.shape[0] != self.b.shape[1]:
            raise ShapeError(
                f"adapter rank mismatch: a is {self.a.shape}, b is {self.b.shape}"
            )
        if self.scale <= 0:
            raise ValueError(f"scale must be > 0, got {self.scale}")

    @property
    def rank(self) -> int:
        return self.a.shape[0]


@dataclass
class PaCAParams:
    w: np.ndarray   # d_out x d_in
    idx: IndexSet   # fixed for the lifetime of training

    def __post_init__(self):
        if self.idx.domain != self.w.shape[1]:
            raise ShapeError(
                f"index domain {self.idx.domain} does not match {self.w.shape[1]} columns"
            )


@dataclass
class ActivationCache:
    """Tensors a train-mode forward stored for the backward pass."""

    tag: str
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def bytes(self) -> int:
        return sum(t.nbytes for t in self.tensors.values())

    def require(self, name: str) -> np.ndarray:
        if name not in self.tensors:
            raise StateError(
                f"{self.tag} backward without train-mode forward: cache missing {name!r}"
            )
        return self.tensors[name]


def activation_bytes(cache: ActivationCache) -> int:
    return cache.bytes


def _check_x(w: np.ndarray, x_in: np.ndarray) -> None:
    if x_in.ndim != 2 or w.shape[1] != x_in.shape[0]:
        raise ShapeError(f"weight {w.shape} cannot consume input {x_in.shape}")


def linear_forward(p: LinearParams, x_in: np.ndarray, train: bool = True):
    """x_out = w @ x_in; cache x_in when training."""
    _check_x(p.w, x_in)
    x_out = matmul(p.w, x_in)
    cache = ActivationCache("linear")
    if train:
        cache.tensors["x_in"] = x_in
    return x_out, cache


def linear_backward(p: LinearParams, g_out: np.ndarray, cache: ActivationCache):
    """Input gradient w^T @ g_out and weight gradient g_out @ x_in^T."""
    x_in = cache.require("x_in")
    if g_out.shape != (p.w.shape[0], x_in.shape[1]):
        raise ShapeError(f"g_out {g_out.shape} vs expected {(p.w.shape[0], x_in.shape[1])}")
    g_in = matmul(transpose(p.w), g_out)
    g_w = matmul(g_out, transpose(x_in))
    return g_in, g_w


def lora_forward(base: LinearParams, lp: LoRAParams, x_in: np.ndarray, train: bool = True):
    """x_out = w @ x_in + scale * b @ (a @ x_in); cache x_in and the midpoint."""
    _check_x(base.w, x_in)
    if lp.a.shape[1] != base.w.shape[1] or lp.b.shape[0] != base.w.shape[0]:
        raise ShapeError(
            f"adapters a {lp.a.shape} / b {lp.b.shape} do not fit base {base.w.shape}"
        )
    x_mid = matmul(lp.a, x_in)
    x_out = matmul(base.w, x_in) + lp.scale * matmul(lp.b, x_mid)
    cache = ActivationCache("lora")
    if train:
        cache.tensors["x_in"] = x_in
        cache.tensors["x_mid"] = x_mid
    return x_out, cache


def lora_backward(base: LinearParams, lp: LoRAParams, g_out: np.ndarray, cache: ActivationCache):
    """Gradients for the input and both adapter factors; none for the frozen base."""
    x_in = cache.require("x_in")
    x_mid = cache.require("x_mid")
    g_mid = matmul(transpose(lp.b), g_out)  # shared by the input and factor-a paths
    g_in = matmul(transpose(base.w), g_out) + lp.scale * matmul(transpose(lp.a), g_mid)
    g_b = lp.scale * matmul(g_out, transpose(x_mid))
    g_a = lp.scale * matmul(g_mid, transpose(x_in))
    return g_in, g_a, g_b


def lora_merge(base: LinearParams, lp: LoRAParams) -> LinearParams:
    """Fold the adapter into the base weight: w + scale * b @ a."""
    return LinearParams(w=base.w + lp.scale * matmul(lp.b, lp.a))


def paca_forward(pp: PaCAParams, x_in: np.ndarray, train: bool = True):
    """Plain dense product; cache only the input rows matching the selected columns."""
    _check_x(pp.w, x_in)
    x_out = matmul(pp.w, x_in)
    cache = ActivationCache("paca")
    if train:
        cache.tensors["x_in_partial"] = gather_rows(x_in, pp.idx)
    return x_out, cache


def paca_backward(pp: PaCAParams, g_out: np.ndarray, cache: ActivationCache):
    """Full input gradient, but a weight gradient only for the selected columns."""
    x_part = cache.require("x_in_partial")
    if g_out.shape != (pp.w.shape[0], x_part.shape[1]):
        raise ShapeError(f"g_out {g_out.shape} vs expected {(pp.w.shape[0], x_part.shape[1])}")
    g_in = matmul(transpose(pp.w), g_out)
    g_p = matmul(g_out, transpose(x_part))
    return g_in, g_p


def kaiming_uniform(rows: int, cols: int, rng: np.random.Generator, dtype=np.float64) -> np.ndarray:
    """Uniform fan-in init on (-1/sqrt(cols), 1/sqrt(cols))."""
    bound = 1.0 / np.sqrt(cols)
    return rng.uniform(-bound, bound, size=(rows, cols)).astype(dtype)


def init_lora(d_out: int, d_in: int, rank: int, scale: float,
              rng: np.random.Generator, dtype=np.float64) -> LoRAParams:
    """Fresh adapter pair: fan-in uniform a, zero b, so the model starts unchanged."""
    return LoRAParams(
        a=kaiming_uniform(rank, d_in, rng, dtype),
        b=np.zeros((d_out, rank), dtype=dtype),
        scale=scale,
    )
