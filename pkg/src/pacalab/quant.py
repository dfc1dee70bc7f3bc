"""4-bit NormalFloat weight compression for partial-connection training.

The selected (trainable) columns of a weight matrix stay in full precision;
every other column is quantized blockwise down its entries: each block of
``block_size`` values stores one float32 absmax scale and one 4-bit code
per value, the code indexing a 16-level NormalFloat table.

Codebook
--------
The 16 levels are the quantiles of the standard normal at evenly spaced
probabilities with tail margin (1/32 + 1/30)/2, normalized to [-1, 1]:
eight negative levels, an exact zero, and seven positive levels. The table
below is that computation frozen to float64 constants (the verification
suite recomputes it from the quantile function).

Packed binary format (little-endian), version "QPW1"
----------------------------------------------------
    magic      4 bytes  b"QPW1"
    d_out      u32
    d_in       u32
    r          u32      number of selected (full-precision) columns
    block_size u32
    codebook   u8       1 = the NormalFloat table above
    dtype      u8       itemsize of the full-precision payload (8=f64, 4=f32)
    indices    u32 * r  selected column positions, ascending
    scales     f32 * (n_unsel * blocks_per_col), unselected columns in
               ascending order, blocks in order down each column
    codes      u8 * (n_unsel * ceil(d_out/2)), two 4-bit codes per byte,
               low nibble = earlier element, pad nibble 0 for odd d_out
    selected   dtype * (d_out * r), row-major d_out x r matrix

Scales are float32 from the moment of quantization, not just on disk, so a
serialize/deserialize round trip reconstructs the exact same matrix.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DecodeError
from .tensor import IndexSet, gather_cols

NF4_CODEBOOK_ID = 1

# Quantile construction frozen to constants; see module docstring.
_NF4_LEVELS = np.array([
    -1.0,
    -0.7229566441594738,
    -0.562616887969985,
    -0.4407097318642165,
    -0.33791513671312806,
    -0.24611225134745954,
    -0.1609301443802908,
    -0.07958031495840913,
    0.0,
    0.09104997598578048,
    0.1847734028004558,
    0.2844413089210822,
    0.39491742591990725,
    0.5250729594465007,
    0.6961928056323434,
    1.0,
])
_ZERO_CODE = 8  # index of the exact-zero level


def nf4_codebook() -> np.ndarray:
    """The 16 NormalFloat levels, ascending. Read-only copy."""
    return _NF4_LEVELS.copy()


def max_adjacent_gap() -> float:
    """Largest spacing between neighbouring codebook levels."""
    return float(np.diff(_NF4_LEVELS).max())


def quantize_block(vals: np.ndarray) -> tuple[np.ndarray, np.float32]:
    """Quantize one block of values against the codebook.

    Returns (codes, absmax): codes are uint8 level indices (nearest level
    to val/absmax, ties to the lower index), absmax is the float32 scale.
    An all-zero block stores absmax 0 and all-zero-level codes.
    """
    vals = np.asarray(vals, dtype=np.float64)
    if vals.size == 0:
        raise ValueError("block must be nonempty")
    absmax = np.float32(np.abs(vals).max())
    if absmax == 0:
        return np.full(vals.shape, _ZERO_CODE, dtype=np.uint8), absmax
    scaled = vals / np.float64(absmax)
    codes = np.argmin(np.abs(scaled[:, None] - _NF4_LEVELS[None, :]), axis=1)
    return codes.astype(np.uint8), absmax


def dequantize_block(codes: np.ndarray, absmax) -> np.ndarray:
    """Map codes back to values: codebook[code] * absmax, in float64."""
    codes = np.asarray(codes)
    if codes.size and (codes.min() < 0 or codes.max() > 15):
        raise DecodeError(f"code out of range 0..15: {codes.min()}..{codes.max()}")
    return _NF4_LEVELS[codes] * np.float64(absmax)


def pack_nibbles(codes: np.ndarray) -> np.ndarray:
    """Pack 4-bit codes two per byte, low nibble = earlier element."""
    codes = np.asarray(codes, dtype=np.uint8)
    if codes.size % 2:
        codes = np.concatenate([codes, np.zeros(1, dtype=np.uint8)])
    return (codes[0::2] | (codes[1::2] << 4)).astype(np.uint8)


def unpack_nibbles(packed: np.ndarray, count: int) -> np.ndarray:
    """Inverse of pack_nibbles, truncated to ``count`` codes."""
    packed = np.asarray(packed, dtype=np.uint8)
    out = np.empty(packed.size * 2, dtype=np.uint8)
    out[0::2] = packed & 0x0F
    out[1::2] = packed >> 4
    return out[:count]


@dataclass
class QuantizedColumns:
    """Compressed payload for the unselected columns of one weight matrix."""

    codes: np.ndarray       # n_unsel x ceil(d_out/2), packed uint8
    scales: np.ndarray      # n_unsel x blocks_per_col, float32
    block_size: int
    column_map: np.ndarray  # original positions of the quantized columns, ascending
    d_out: int

    @property
    def nbytes(self) -> int:
        return self.codes.nbytes + self.scales.nbytes


@dataclass
class QPaCAWeights:
    """A weight matrix split into quantized frozen columns and trainable ones."""

    quantized: QuantizedColumns
    selected: np.ndarray  # d_out x r, full precision, the trainable part
    idx: IndexSet

    @property
    def d_out(self) -> int:
        return self.selected.shape[0]

    @property
    def d_in(self) -> int:
        return self.idx.domain

    def payload_bytes(self) -> int:
        return self.quantized.nbytes + self.selected.nbytes

    def payload_hash(self) -> str:
        """SHA-256 over the quantized payload; must not change during training."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.quantized.codes).tobytes())
        h.update(np.ascontiguousarray(self.quantized.scales).tobytes())
        return h.hexdigest()


def _blocks_per_col(d_out: int, block_size: int) -> int:
    return (d_out + block_size - 1) // block_size


def qpaca_pack(w: np.ndarray, idx: IndexSet, block_size: int = 64) -> QPaCAWeights:
    """Split w into verbatim selected columns and blockwise-quantized rest."""
    if block_size < 1:
        raise ValueError(f"block_size must be >= 1, got {block_size}")
    d_out = w.shape[0]
    unsel = idx.complement()
    n_blocks = _blocks_per_col(d_out, block_size)
    codes = np.zeros((len(unsel), (d_out + 1) // 2), dtype=np.uint8)
    scales = np.zeros((len(unsel), n_blocks), dtype=np.float32)
    for j, col in enumerate(unsel):
        col_codes = np.empty(d_out, dtype=np.uint8)
        for b in range(n_blocks):
            lo, hi = b * block_size, min((b + 1) * block_size, d_out)
            col_codes[lo:hi], scales[j, b] = quantize_block(w[lo:hi, col])
        codes[j] = pack_nibbles(col_codes)
    return QPaCAWeights(
        quantized=QuantizedColumns(
            codes=codes, scales=scales, block_size=block_size,
            column_map=unsel, d_out=d_out,
        ),
        selected=gather_cols(w, idx),
        idx=idx,
    )


def qpaca_materialize(qw: QPaCAWeights) -> np.ndarray:
    """Reconstruct the full matrix: selected columns verbatim, rest dequantized."""
    q = qw.quantized
    dtype = qw.selected.dtype
    w = np.empty((qw.d_out, qw.d_in), dtype=dtype)
    w[:, qw.idx.array] = qw.selected
    bs = q.block_size
    for j, col in enumerate(q.column_map):
        col_codes = unpack_nibbles(q.codes[j], q.d_out)
        out = np.empty(q.d_out, dtype=np.float64)
        for b in range(q.scales.shape[1]):
            lo, hi = b * bs, min((b + 1) * bs, q.d_out)
            out[lo:hi] = dequantize_block(col_codes[lo:hi], q.scales[j, b])
        w[:, col] = out.astype(dtype)
    return w


def qpaca_packed_bytes(d_out: int, d_in: int, r: int, block_size: int = 64,
                       itemsize: int = 8) -> int:
    """Analytical payload size: selected + packed codes + per-block scales."""
    n_unsel = d_in - r
    codes = n_unsel * ((d_out + 1) // 2)
    scales = n_unsel * _blocks_per_col(d_out, block_size) * 4
    return d_out * r * itemsize + codes + scales


_MAGIC = b"QPW1"
_HEADER = struct.Struct("<4sIIIIBB")


def serialize_qpaca(qw: QPaCAWeights) -> bytes:
    q = qw.quantized
    parts = [
        _HEADER.pack(_MAGIC, qw.d_out, qw.d_in, len(qw.idx), q.block_size,
                     NF4_CODEBOOK_ID, qw.selected.dtype.itemsize),
        qw.idx.array.astype("<u4").tobytes(),
        np.ascontiguousarray(q.scales, dtype="<f4").tobytes(),
        np.ascontiguousarray(q.codes).tobytes(),
        np.ascontiguousarray(qw.selected, dtype=qw.selected.dtype.newbyteorder("<")).tobytes(),
    ]
    return b"".join(parts)


def deserialize_qpaca(data: bytes) -> QPaCAWeights:
    if len(data) < _HEADER.size:
        raise DecodeError("truncated header")
    magic, d_out, d_in, r, block_size, cb_id, itemsize = _HEADER.unpack_from(data, 0)
    if magic != _MAGIC:
        raise DecodeError(f"bad magic {magic!r}")
    if cb_id != NF4_CODEBOOK_ID:
        raise DecodeError(f"unknown codebook id {cb_id}")
    if itemsize == 8:
        dtype = np.dtype("<f8")
    elif itemsize == 4:
        dtype = np.dtype("<f4")
    else:
        raise DecodeError(f"unsupported dtype itemsize {itemsize}")
    n_unsel = d_in - r
    n_blocks = _blocks_per_col(d_out, block_size)
    sizes = [4 * r, 4 * n_unsel * n_blocks, n_unsel * ((d_out + 1) // 2),
             itemsize * d_out * r]
    if len(data) != _HEADER.size + sum(sizes):
        raise DecodeError(
            f"payload length {len(data)} does not match header "
            f"(expected {_HEADER.size + sum(sizes)})"
        )
    off = _HEADER.size
    idx_arr = np.frombuffer(data, dtype="<u4", count=r, offset=off)
    off += sizes[0]
    scales = np.frombuffer(data, dtype="<f4", count=n_unsel * n_blocks, offset=off)
    off += sizes[1]
    codes = np.frombuffer(data, dtype=np.uint8, count=n_unsel * ((d_out + 1) // 2), offset=off)
    off += sizes[2]
    selected = np.frombuffer(data, dtype=dtype, count=d_out * r, offset=off)
    idx = IndexSet(tuple(int(i) for i in idx_arr), d_in)
    return QPaCAWeights(
        quantized=QuantizedColumns(
            codes=codes.reshape(n_unsel, (d_out + 1) // 2).copy(),
            scales=scales.reshape(n_unsel, n_blocks).astype(np.float32),
            block_size=block_size,
            column_map=idx.complement(),
            d_out=d_out,
        ),
        selected=selected.reshape(d_out, r).astype(dtype.newbyteorder("=")),
        idx=idx,
    )
