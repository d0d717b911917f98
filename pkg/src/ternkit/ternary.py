"""Ternary codes, the staircase quantizer and the packed 2-bit matrix format.

Layout of a packed row (little-endian lanes inside each byte)::

    byte k of row r holds columns 4k .. 4k+3
    column c sits in bits 2*(c % 4) .. 2*(c % 4) + 1

    00 -> 0
    01 -> +1
    11 -> -1
    10 -> reserved, always rejected

Padding lanes past ``cols`` in the last byte of a row are 00, so kernels can
walk whole bytes without masking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CorruptDataError, DimensionError

CODE_ZERO = 0b00
CODE_PLUS = 0b01
CODE_MINUS = 0b11
CODE_INVALID = 0b10

# 2-bit pattern -> ternary value; index 2 is never produced by pack_matrix
_DECODE = np.array([0, 1, 0, -1], dtype=np.int8)
_SHIFTS = np.array([0, 2, 4, 6], dtype=np.uint8)


def tern(x: float) -> int:
    """Staircase ternarization of a single finite real.

    >>> tern(-0.7), tern(-0.5), tern(0.0), tern(0.5)
    (-1, 0, 0, 1)
    """
    if not math.isfinite(x):
        raise ValueError(f"tern() needs a finite value, got {x!r}")
    if x < -0.5:
        return -1
    if x < 0.5:
        return 0
    return 1


def tern_array(x: np.ndarray) -> np.ndarray:
    """Elementwise :func:`tern`, returned as int8."""
    x = np.asarray(x)
    out = np.zeros(x.shape, dtype=np.int8)
    out[x >= 0.5] = 1
    out[x < -0.5] = -1
    return out


def as_dense(a, name: str = "matrix") -> np.ndarray:
    """Validate a 2-D real matrix and return it as C-contiguous float32."""
    arr = np.ascontiguousarray(a, dtype=np.float32)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def row_stride(cols: int) -> int:
    return (cols + 3) // 4


@dataclass(frozen=True, eq=False)
class PackedTernaryMatrix:
    """Row-major 2-bit ternary matrix with one positive scale per output row.

    ``data`` has shape ``(rows, row_stride)`` and dtype uint8. Both arrays are
    made read-only on construction. Code validity is not checked here (that
    would cost a full decode); call :meth:`validate` or unpack to check.
    """

    rows: int
    cols: int
    data: np.ndarray
    scales: np.ndarray

    def __post_init__(self):
        if self.rows < 0 or self.cols < 0:
            raise DimensionError("rows and cols must be non-negative")
        data = np.ascontiguousarray(self.data, dtype=np.uint8)
        if data.size != self.rows * self.row_stride:
            raise DimensionError(
                f"expected {self.rows * self.row_stride} code bytes, got {data.size}"
            )
        data = data.reshape(self.rows, self.row_stride)
        scales = np.ascontiguousarray(self.scales, dtype=np.float32).reshape(-1)
        if scales.size != self.rows:
            raise DimensionError(f"expected {self.rows} scales, got {scales.size}")
        if not (np.all(np.isfinite(scales)) and np.all(scales > 0)):
            raise ValueError("scales must be finite and strictly positive")
        data.flags.writeable = False
        scales.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "scales", scales)

    @property
    def row_stride(self) -> int:
        return row_stride(self.cols)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def nbytes(self) -> int:
        """Stored size: code bytes plus 4-byte scales."""
        return self.rows * self.row_stride + 4 * self.rows

    def validate(self) -> None:
        _decode_checked(self.data, self.cols)

    def codes(self) -> np.ndarray:
        return unpack_matrix(self)[0]

    def dequantize(self) -> np.ndarray:
        """Dense float32 weights ``scales[r] * code(r, c)``."""
        codes = self.codes()
        return (self.scales[:, None] * codes).astype(np.float32)

    def __eq__(self, other):
        if not isinstance(other, PackedTernaryMatrix):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.data, other.data)
            and np.array_equal(self.scales.view(np.uint32), other.scales.view(np.uint32))
        )

    def __repr__(self):
        return f"PackedTernaryMatrix(rows={self.rows}, cols={self.cols})"


def _encode(codes: np.ndarray) -> np.ndarray:
    enc = np.zeros(codes.shape, dtype=np.uint8)
    enc[codes == 1] = CODE_PLUS
    enc[codes == -1] = CODE_MINUS
    return enc


def pack_matrix(codes, scales) -> PackedTernaryMatrix:
    """Pack a ``rows x cols`` grid of {-1, 0, +1} codes with per-row scales.

    >>> pack_matrix([[0, 1, -1, 0]], [1.0]).data[0, 0] == 0x34
    True
    """
    codes = np.asarray(codes)
    if codes.ndim != 2:
        raise DimensionError(f"codes must be 2-D, got shape {codes.shape}")
    if not np.all(np.isin(codes, (-1, 0, 1))):
        raise ValueError("codes must only contain -1, 0 and +1")
    rows, cols = codes.shape
    scales = np.asarray(scales, dtype=np.float32).reshape(-1)
    if scales.size != rows:
        raise DimensionError(f"{rows} rows but {scales.size} scales")
    if not np.all(scales > 0):
        raise ValueError("scales must be strictly positive")

    stride = row_stride(cols)
    lanes = np.zeros((rows, stride * 4), dtype=np.uint8)
    lanes[:, :cols] = _encode(codes)
    lanes = lanes.reshape(rows, stride, 4)
    data = np.bitwise_or.reduce(lanes << _SHIFTS, axis=2).astype(np.uint8)
    return PackedTernaryMatrix(rows, cols, data, scales)


def _decode_checked(data: np.ndarray, cols: int) -> np.ndarray:
    rows = data.shape[0]
    lanes = ((data[:, :, None] >> _SHIFTS) & 0b11).reshape(rows, -1)
    body = lanes[:, :cols]
    bad = np.argwhere(body == CODE_INVALID)
    if bad.size:
        r, c = bad[0]
        raise CorruptDataError(f"reserved pattern 0b10 at row {r}, column {c}")
    if np.any(lanes[:, cols:]):
        raise CorruptDataError("non-zero padding lanes in packed data")
    return _DECODE[body]


def unpack_matrix(p: PackedTernaryMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`pack_matrix`; returns ``(codes int8, scales float32)``."""
    return _decode_checked(p.data, p.cols), p.scales.copy()


def sparsity(p: PackedTernaryMatrix) -> float:
    """Fraction of (unpadded) codes equal to zero."""
    n = p.rows * p.cols
    if n == 0:
        return 0.0
    codes = unpack_matrix(p)[0]
    return float(np.count_nonzero(codes == 0)) / n
