"""Matrix products against packed ternary weights.

Four variants compute the same function ``Y = diag(scales) @ codes @ X``:

``reference_dense``
    dequantize with plain numpy ops, then the dense reference product
    (generic-operator baseline).
``unpack_then_multiply``
    native unpack kernel writes a float32 copy of the weights, then the dense
    reference product.
``direct_ternary``
    add/sub straight from the packed bytes, one multiply by the row scale at
    the end. Allocates no weight-sized buffer.
``direct_ternary_parallel``
    same kernel with output rows split across a thread pool.

Accumulators are float64 and the result is rounded to float32 once per
output element. Dense products sum in ascending column order so that
``unpack_then_multiply`` reproduces ``matvec_reference`` bit for bit.
"""

from __future__ import annotations

import enum
import os
import statistics
import time
from concurrent.futures import ThreadPoolExecutor

import numba
import numpy as np

from .errors import CorruptDataError, DimensionError
from .ternary import PackedTernaryMatrix, as_dense

DEFAULT_WORKERS = 4


class KernelVariant(str, enum.Enum):
    REFERENCE_DENSE = "reference_dense"
    UNPACK_THEN_MULTIPLY = "unpack_then_multiply"
    DIRECT_TERNARY = "direct_ternary"
    DIRECT_TERNARY_PARALLEL = "direct_ternary_parallel"


def default_workers() -> int:
    env = os.environ.get("TERNKIT_THREADS")
    if env:
        n = int(env)
        if n < 1:
            raise ValueError("TERNKIT_THREADS must be >= 1")
        return n
    return DEFAULT_WORKERS


class Workspace:
    """Scratch allocator that tracks the high-water mark of live bytes."""

    def __init__(self):
        self.current_bytes = 0
        self.peak_bytes = 0
        self.buffer: np.ndarray | None = None

    def alloc(self, shape, dtype=np.float32) -> np.ndarray:
        buf = np.empty(shape, dtype=dtype)
        self.current_bytes += buf.nbytes
        self.peak_bytes = max(self.peak_bytes, self.current_bytes)
        self.buffer = buf
        return buf

    def release(self, buf: np.ndarray) -> None:
        self.current_bytes -= buf.nbytes
        if self.buffer is buf:
            self.buffer = None


# --------------------------------------------------------------------------
# numba kernels
# --------------------------------------------------------------------------


@numba.njit(cache=True, nogil=True)
def _dense_rows(W, XT, out, r0, r1):
    # out[r, j] = sum_c W[r, c] * XT[j, c], ascending c
    cols = W.shape[1]
    for r in range(r0, r1):
        for j in range(XT.shape[0]):
            acc = 0.0
            for c in range(cols):
                acc += np.float64(W[r, c]) * np.float64(XT[j, c])
            out[r, j] = acc


@numba.njit(cache=True, nogil=True)
def _unpack_into(data, scales, cols, W):
    # returns the first corrupt row index, or -1
    rows = data.shape[0]
    for r in range(rows):
        s = scales[r]
        for c in range(cols):
            code = (data[r, c >> 2] >> ((c & 3) << 1)) & 3
            if code == 0:
                W[r, c] = 0.0
            elif code == 1:
                W[r, c] = s
            elif code == 3:
                W[r, c] = -s
            else:
                return r
        for c in range(cols, data.shape[1] * 4):
            if (data[r, c >> 2] >> ((c & 3) << 1)) & 3:
                return r
    return -1


@numba.njit(cache=True, nogil=True, fastmath={"reassoc", "nsz"})
def _ternary_rows(data, scales, cols, XT, out, r0, r1):
    # Inner loop is select + add only; reassoc lets LLVM vectorize the
    # reduction. Returns the first corrupt row index in [r0, r1), or -1.
    stride = data.shape[1]
    for r in range(r0, r1):
        bad = 0
        for c in range(cols):
            bad |= ((data[r, c >> 2] >> ((c & 3) << 1)) & 3) == 2
        for c in range(cols, stride * 4):
            bad |= ((data[r, c >> 2] >> ((c & 3) << 1)) & 3) != 0
        if bad:
            return r
        for j in range(XT.shape[0]):
            x = XT[j]
            acc = 0.0
            for c in range(cols):
                code = (data[r, c >> 2] >> ((c & 3) << 1)) & 3
                xv = np.float64(x[c])
                signed = -xv if code >> 1 else xv
                acc += signed if code & 1 else 0.0
            out[r, j] = scales[r] * acc
    return -1


# --------------------------------------------------------------------------
# public API
# --------------------------------------------------------------------------


def _as_vector(x, n: int) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float32).reshape(-1)
    if x.size != n:
        raise DimensionError(f"expected input of length {n}, got {x.size}")
    return x


def _check_corrupt(bad_row: int) -> None:
    if bad_row >= 0:
        raise CorruptDataError(f"invalid ternary code in row {bad_row}")


def _dense_product(W: np.ndarray, XT: np.ndarray) -> np.ndarray:
    out = np.empty((W.shape[0], XT.shape[0]), dtype=np.float32)
    _dense_rows(W, XT, out, 0, W.shape[0])
    return out


def matvec_reference(W, x) -> np.ndarray:
    """Dense reference product ``W @ x`` summed in ascending column order."""
    W = as_dense(W, "W")
    x = _as_vector(x, W.shape[1])
    return _dense_product(W, x[None, :])[:, 0]


def _unpack(p: PackedTernaryMatrix, ws: Workspace) -> np.ndarray:
    W = ws.alloc((p.rows, p.cols), np.float32)
    _check_corrupt(_unpack_into(p.data, p.scales, p.cols, W))
    return W


def _numpy_dequantize(p: PackedTernaryMatrix, ws: Workspace) -> np.ndarray:
    # generic-ops path: shifts/masks/lookup in numpy, no custom kernel
    lanes = ((p.data[:, :, None] >> np.array([0, 2, 4, 6], np.uint8)) & 3).reshape(p.rows, -1)
    if np.any(lanes[:, : p.cols] == 2) or np.any(lanes[:, p.cols :]):
        bad = int(np.argmax(np.any(lanes[:, : p.cols] == 2, axis=1) | np.any(lanes[:, p.cols :] != 0, axis=1)))
        _check_corrupt(bad)
    W = ws.alloc((p.rows, p.cols), np.float32)
    lut = np.array([0.0, 1.0, 0.0, -1.0], dtype=np.float32)
    np.multiply(lut[lanes[:, : p.cols]], p.scales[:, None], out=W)
    return W


def matvec_unpack(p: PackedTernaryMatrix, x, ws: Workspace | None = None) -> np.ndarray:
    ws = ws if ws is not None else Workspace()
    x = _as_vector(x, p.cols)
    W = _unpack(p, ws)
    try:
        return _dense_product(W, x[None, :])[:, 0]
    finally:
        ws.release(W)


def matvec_ternary(p: PackedTernaryMatrix, x, ws: Workspace | None = None) -> np.ndarray:
    """Add/sub product straight from packed codes with delayed scaling."""
    x = _as_vector(x, p.cols)
    out = np.empty((p.rows, 1), dtype=np.float32)
    _check_corrupt(_ternary_rows(p.data, p.scales, p.cols, x[None, :], out, 0, p.rows))
    return out[:, 0]


def _row_chunks(rows: int, workers: int) -> list[tuple[int, int]]:
    bounds = np.linspace(0, rows, min(workers, max(rows, 1)) + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


_POOLS: dict[int, ThreadPoolExecutor] = {}


def _pool(workers: int) -> ThreadPoolExecutor:
    pool = _POOLS.get(workers)
    if pool is None:
        pool = _POOLS[workers] = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="ternkit")
    return pool


def matmul_batch(
    p: PackedTernaryMatrix,
    X,
    variant: KernelVariant | str = KernelVariant.DIRECT_TERNARY,
    workers: int = 1,
    ws: Workspace | None = None,
) -> np.ndarray:
    """``diag(scales) @ codes @ X`` for ``X`` of shape ``(cols, batch)``.

    Only the parallel variant uses ``workers``; each worker owns a disjoint
    block of output rows, so per-row summation order never depends on it.
    """
    variant = KernelVariant(variant)
    if workers < 1:
        raise ValueError("workers must be >= 1")
    X = as_dense(X, "X")
    if X.shape[0] != p.cols:
        raise DimensionError(f"X has {X.shape[0]} rows, weights have {p.cols} columns")
    ws = ws if ws is not None else Workspace()
    XT = np.ascontiguousarray(X.T)

    if variant in (KernelVariant.REFERENCE_DENSE, KernelVariant.UNPACK_THEN_MULTIPLY):
        W = _numpy_dequantize(p, ws) if variant is KernelVariant.REFERENCE_DENSE else _unpack(p, ws)
        try:
            return _dense_product(W, XT)
        finally:
            ws.release(W)

    out = np.empty((p.rows, XT.shape[0]), dtype=np.float32)
    if variant is KernelVariant.DIRECT_TERNARY or workers == 1:
        _check_corrupt(_ternary_rows(p.data, p.scales, p.cols, XT, out, 0, p.rows))
        return out
    futures = [
        _pool(workers).submit(_ternary_rows, p.data, p.scales, p.cols, XT, out, r0, r1)
        for r0, r1 in _row_chunks(p.rows, workers)
    ]
    for bad in [f.result() for f in futures]:
        _check_corrupt(bad)
    return out


def measure_throughput(
    p: PackedTernaryMatrix,
    X,
    variant: KernelVariant | str,
    workers: int = 1,
    repetitions: int = 10,
    warmup: int = 1,
) -> tuple[float, int, list[float]]:
    """Time ``matmul_batch`` and report ``(ops_per_second, peak_workspace_bytes, samples)``.

    One "op" is a multiply-add against one weight, counted as 2 flops, so the
    rate is ``2 * rows * cols * batch / median_seconds``. ``samples`` holds
    per-repetition rates.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    X = as_dense(X, "X")
    ws = Workspace()
    for _ in range(warmup):
        matmul_batch(p, X, variant, workers, ws)
    times = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        matmul_batch(p, X, variant, workers, ws)
        times.append(time.perf_counter() - t0)
    ops = 2.0 * p.rows * p.cols * X.shape[1]
    rate = ops / max(statistics.median(times), 1e-12)
    return rate, ws.peak_bytes, [ops / max(t, 1e-12) for t in times]
