"""Dense matrix kernels and column/row gather-scatter primitives.

Matrices are plain 2-D numpy arrays (row-major, float64 by default,
float32 for memory experiments). All kernels are pure except
``scatter_cols_add``, which mutates its target in place. ``matmul``
normalizes both operands to contiguous layout before multiplying so that
results depend only on operand values, never on stride tricks upstream;
this is what makes the bit-identity guarantees elsewhere in the package
well defined.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

SUPPORTED_DTYPES = (np.float64, np.float32)


def as_matrix(data, dtype=np.float64) -> np.ndarray:
    """Validate and normalize input into a 2-D, C-contiguous float array.

    Raises ShapeError for non-2-D input and ValueError for non-finite
    entries. This is the boundary check; the kernels themselves assume
    validated inputs.
    """
    a = np.ascontiguousarray(data, dtype=dtype)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={a.ndim}")
    if not np.isfinite(a).all():
        raise ValueError("matrix contains NaN or Inf entries")
    return a


def dtype_size(dtype) -> int:
    return np.dtype(dtype).itemsize


@dataclass(frozen=True)
class IndexSet:
    """Sorted, unique column indices into a dimension of size ``domain``.

    Holds the selected-column positions used throughout partial-connection
    training. Invariants are enforced at construction: strictly increasing,
    all in ``[0, domain)``, and ``1 <= len <= domain``.
    """

    indices: tuple[int, ...]
    domain: int

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        object.__setattr__(self, "indices", idx)
        if self.domain < 1:
            raise ValueError(f"domain must be >= 1, got {self.domain}")
        if not 1 <= len(idx) <= self.domain:
            raise ValueError(
                f"need 1 <= |indices| <= domain, got {len(idx)} of {self.domain}"
            )
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("indices must be strictly increasing (sorted, unique)")
        if idx[0] < 0 or idx[-1] >= self.domain:
            raise ValueError(f"indices must lie in [0, {self.domain})")

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.indices, dtype=np.intp)

    @classmethod
    def full(cls, domain: int) -> "IndexSet":
        """The identity-ordered full set {0, ..., domain-1}."""
        return cls(tuple(range(domain)), domain)

    def complement(self) -> np.ndarray:
        """Positions NOT in the set, ascending (empty if the set is full)."""
        mask = np.ones(self.domain, dtype=bool)
        mask[self.array] = False
        return np.nonzero(mask)[0]

    def is_full(self) -> bool:
        return len(self.indices) == self.domain


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with deterministic, layout-independent results."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.ndim}-D and {b.ndim}-D")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return np.ascontiguousarray(a) @ np.ascontiguousarray(b)


def transpose(a: np.ndarray) -> np.ndarray:
    return a.T


def gather_rows(x: np.ndarray, idx: IndexSet) -> np.ndarray:
    """Copy of the rows of ``x`` at the selected positions (r x n)."""
    if idx.domain != x.shape[0]:
        raise IndexError(
            f"index domain {idx.domain} does not match row count {x.shape[0]}"
        )
    return x[idx.array, :]


def gather_cols(w: np.ndarray, idx: IndexSet) -> np.ndarray:
    """Copy of the columns of ``w`` at the selected positions (d_out x r)."""
    if idx.domain != w.shape[1]:
        raise IndexError(
            f"index domain {idx.domain} does not match column count {w.shape[1]}"
        )
    return w[:, idx.array]


def scatter_cols_add(w: np.ndarray, idx: IndexSet, delta: np.ndarray, coeff: float) -> None:
    """In place: w[:, idx[j]] += coeff * delta[:, j]. Other columns untouched."""
    if idx.domain != w.shape[1]:
        raise ShapeError(
            f"index domain {idx.domain} does not match column count {w.shape[1]}"
        )
    if delta.shape != (w.shape[0], len(idx)):
        raise ShapeError(
            f"delta shape {delta.shape} does not match ({w.shape[0]}, {len(idx)})"
        )
    w[:, idx.array] += coeff * delta
