"""Constrained k-means initialization for ternary layers, plus int8 quantization.

The ternary initializer fits a 1-D, 3-cluster k-means per neuron where the
centroids are pinned to ``{-mu, 0, +mu}``. Only ``mu`` is free, so each
iteration reduces to: assign the weights whose magnitude is closer to ``mu``
than to 0, then move ``mu`` to the mean magnitude of that set. Scaling the
row by ``s = 1/mu`` puts the cluster boundary at 0.5, which is exactly where
:func:`ternkit.ternary.tern` switches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ternary import as_dense, pack_matrix, tern_array

DEFAULT_ITERATIONS = 10


@dataclass(frozen=True)
class QuantizerConfig:
    iterations: int = DEFAULT_ITERATIONS
    zero_fallback_scale: float = 1.0

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not self.zero_fallback_scale > 0:
            raise ValueError("zero_fallback_scale must be positive")


@dataclass(frozen=True, eq=False)
class InitResult:
    s: float
    mu: float
    latent: np.ndarray


def _check_weights(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.size == 0 or w.shape[-1] == 0:
        raise ValueError("weight vector must be non-empty")
    if not np.all(np.isfinite(w)):
        raise ValueError("weight vector contains NaN or Inf")
    return w


def kmeans_centroids(W: np.ndarray, iters: int = DEFAULT_ITERATIONS, *, trace=None) -> np.ndarray:
    """Run the constrained k-means on every row of ``W`` at once.

    Returns the free centroid per row, with 0 marking degenerate rows (no
    weight left in the outer clusters, or an all-zero row). ``trace`` may be
    a list; the centroid vector after init and after every iteration is
    appended to it.
    """
    if iters < 0:
        raise ValueError("iters must be >= 0")
    a = np.abs(_check_weights(np.atleast_2d(W)))
    n = a.shape[1]
    mu = a.sum(axis=1) / n
    degenerate = ~(mu > 0)
    if trace is not None:
        trace.append(np.where(degenerate, 0.0, mu))
    for _ in range(iters):
        e = a - mu[:, None]
        member = e > -0.5 * mu[:, None]
        count = member.sum(axis=1)
        total = np.where(member, a, 0.0).sum(axis=1)
        degenerate |= count == 0
        mu = np.where(count > 0, total / np.maximum(count, 1), 0.0)
        degenerate |= ~(mu > 0)
        if trace is not None:
            trace.append(np.where(degenerate, 0.0, mu))
    return np.where(degenerate, 0.0, mu)


def kmeans_init_layer(W, iters: int = DEFAULT_ITERATIONS, config: QuantizerConfig | None = None) -> list[InitResult]:
    """Per-row initialization of a weight matrix (rows are output neurons)."""
    config = config or QuantizerConfig(iterations=iters)
    W = _check_weights(np.atleast_2d(W))
    mu = kmeans_centroids(W, iters)
    results = []
    for r in range(W.shape[0]):
        if mu[r] > 0:
            s = 1.0 / mu[r]
            m = float(mu[r])
        else:
            s = float(config.zero_fallback_scale)
            m = 1.0 / s
        results.append(InitResult(s=float(s), mu=m, latent=W[r] * s))
    return results


def kmeans_init_neuron(w, iters: int = DEFAULT_ITERATIONS, config: QuantizerConfig | None = None) -> InitResult:
    """Initialize one neuron: returns the scale ``s = 1/mu``, ``mu`` and ``w * s``.

    >>> r = kmeans_init_neuron([0.1, 0.9, -0.8, 0.05])
    >>> round(r.mu, 12), round(r.s, 6)
    (0.85, 1.176471)
    """
    w = _check_weights(w)
    if w.ndim != 1:
        raise ValueError("expected a 1-D weight vector")
    return kmeans_init_layer(w[None, :], iters, config)[0]


def kmeans_objective(w, mu: float) -> float:
    """Quantization error of ``w`` against centroids ``{-mu, 0, +mu}``.

    Points exactly at ``|w| = mu/2`` count toward the outer clusters.
    """
    if mu < 0:
        raise ValueError("mu must be >= 0")
    w = np.asarray(w, dtype=np.float64)
    half = 0.5 * mu
    upper = w >= half
    lower = w <= -half
    # mu == 0 puts every point in both outer sets; the error is w^2 either way
    if mu == 0:
        return float(np.sum(w * w))
    middle = ~(upper | lower)
    return float(
        np.sum((w[upper] - mu) ** 2) + np.sum((w[lower] + mu) ** 2) + np.sum(w[middle] ** 2)
    )


def quantization_error(w, res: InitResult) -> float:
    """Mean squared error between ``tern(w * s) * mu`` and ``w``."""
    w = np.asarray(w, dtype=np.float64)
    recon = tern_array(w * res.s) * res.mu
    return float(np.mean((recon - w) ** 2))


def layer_quantization_error(W, results: list[InitResult]) -> float:
    """Mean of the per-weight squared residual over a whole layer."""
    W = np.asarray(W, dtype=np.float64)
    total = sum(quantization_error(W[r], res) * W.shape[1] for r, res in enumerate(results))
    return total / W.size


def ternarize_layer(W, iters: int = DEFAULT_ITERATIONS, config: QuantizerConfig | None = None):
    """Initialize and pack a layer.

    Returns ``(packed, latent)`` where ``latent`` is ``W`` scaled row-wise by
    ``s`` (float32) and the packed codes are ``tern(latent)`` with ``mu`` as
    the per-row scale.
    """
    W = as_dense(W, "W")
    results = kmeans_init_layer(W, iters, config)
    latent = np.stack([r.latent for r in results]).astype(np.float32) if results else W.copy()
    mus = np.array([r.mu for r in results], dtype=np.float32)
    packed = pack_matrix(tern_array(latent), mus)
    return packed, latent


@dataclass(frozen=True, eq=False)
class Int8Tensor:
    rows: int
    cols: int
    q: np.ndarray
    scale: np.float32

    def __post_init__(self):
        q = np.ascontiguousarray(self.q, dtype=np.int8).reshape(self.rows, self.cols)
        if np.any(q == -128):
            raise ValueError("int8 values must lie in [-127, 127]")
        q.flags.writeable = False
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "scale", np.float32(self.scale))

    @property
    def nbytes(self) -> int:
        return self.rows * self.cols + 4

    def __eq__(self, other):
        if not isinstance(other, Int8Tensor):
            return NotImplemented
        return (
            self.q.shape == other.q.shape
            and np.array_equal(self.q, other.q)
            and self.scale.view(np.uint32) == other.scale.view(np.uint32)
        )


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def int8_quantize(W) -> Int8Tensor:
    """Symmetric per-tensor int8: ``scale = max|W| / 127``."""
    W = np.atleast_2d(np.asarray(W, dtype=np.float32))
    if not np.all(np.isfinite(W)):
        raise ValueError("W contains NaN or Inf")
    amax = float(np.max(np.abs(W))) if W.size else 0.0
    scale = np.float32(amax / 127.0) if amax > 0 else np.float32(1.0)
    if not scale > 0:
        # max|W| so small that amax/127 underflows float32
        scale = np.float32(np.finfo(np.float32).smallest_subnormal)
    q = _round_half_away(W.astype(np.float64) / np.float64(scale))
    q = np.clip(q, -127, 127).astype(np.int8)
    return Int8Tensor(W.shape[0], W.shape[1], q, scale)


def int8_dequantize(t: Int8Tensor) -> np.ndarray:
    return (t.q.astype(np.float64) * np.float64(t.scale)).astype(np.float32)
