"""A fixed-context MLP language model whose interior layers can be ternary.

Architecture::

    tokens (B, C) -> embedding (B, C, d) -> concat (B, C*d)
      -> FC -> ReLU/clip -> FC -> ReLU/clip -> ... -> FC -> logits (B, V)

Quantized layers compute with ``w* = scale * tern(latent)`` (or ``sign`` for
the binary baseline) and back-propagate through the quantizer as if it were
the identity.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .quantizer import DEFAULT_ITERATIONS, kmeans_init_layer
from .ternary import tern_array

FULL_PRECISION = "full_precision"
TERNARY = "ternary"
BINARY = "binary"
MODES = (FULL_PRECISION, TERNARY, BINARY)

MIN_SCALE = 1e-6


def sign_nonzero(x: np.ndarray) -> np.ndarray:
    """``sign`` with ``sign(0) = +1``, as int8."""
    return np.where(np.asarray(x) < 0, -1, 1).astype(np.int8)


@dataclass
class LayerState:
    latent: np.ndarray
    bias: np.ndarray
    mode: str = FULL_PRECISION
    scale: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown layer mode {self.mode!r}")
        if self.scale is None:
            self.scale = np.ones(self.latent.shape[0], dtype=self.latent.dtype)
        if np.any(self.scale <= 0):
            raise ValueError("layer scales must be positive")

    @property
    def quantized(self) -> bool:
        return self.mode != FULL_PRECISION

    @property
    def shape(self) -> tuple[int, int]:
        return self.latent.shape

    def codes(self) -> np.ndarray:
        if self.mode == TERNARY:
            return tern_array(self.latent)
        if self.mode == BINARY:
            return sign_nonzero(self.latent)
        raise ValueError("full-precision layers have no codes")

    def effective_weights(self) -> np.ndarray:
        if self.mode == FULL_PRECISION:
            return self.latent
        return self.scale[:, None] * self.codes().astype(self.latent.dtype)


def effective_weights(layer: LayerState) -> np.ndarray:
    return layer.effective_weights()


@dataclass
class Grads:
    embedding: np.ndarray
    latent: list[np.ndarray]
    scale: list[np.ndarray]
    bias: list[np.ndarray]


@dataclass
class ForwardCache:
    tokens: np.ndarray
    inputs: list[np.ndarray] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)
    weights: list[np.ndarray] = field(default_factory=list)
    logits: np.ndarray | None = None


class TinyLM:
    def __init__(self, vocab_size, context, embed_dim, embedding, layers, activation_clip=10.0):
        self.vocab_size = int(vocab_size)
        self.context = int(context)
        self.embed_dim = int(embed_dim)
        self.embedding = embedding
        self.layers: list[LayerState] = list(layers)
        self.activation_clip = float(activation_clip)
        self._check()

    def _check(self):
        if self.embedding.shape != (self.vocab_size, self.embed_dim):
            raise ValueError("embedding shape does not match vocab_size x embed_dim")
        if not self.layers:
            raise ValueError("TinyLM needs at least one layer")
        width = self.context * self.embed_dim
        for i, layer in enumerate(self.layers):
            if layer.latent.shape[1] != width:
                raise ValueError(f"layer {i} expects {layer.latent.shape[1]} inputs, gets {width}")
            width = layer.latent.shape[0]
        if width != self.vocab_size:
            raise ValueError("last layer must produce vocab_size logits")
        if self.layers[0].quantized or self.layers[-1].quantized:
            raise ValueError("first and last layers must stay full precision")

    @classmethod
    def init(cls, vocab_size=128, context=8, embed_dim=16, hidden=(128, 128, 128),
             activation_clip=10.0, seed=0, dtype=np.float32):
        """He-initialized full-precision model; ``hidden`` lists hidden widths."""
        rng = np.random.default_rng(seed)
        emb = rng.normal(0.0, 1.0, (vocab_size, embed_dim)).astype(dtype)
        dims = [context * embed_dim, *hidden, vocab_size]
        layers = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), (fan_out, fan_in)).astype(dtype)
            layers.append(LayerState(w, np.zeros(fan_out, dtype=dtype)))
        return cls(vocab_size, context, embed_dim, emb, layers, activation_clip)

    @property
    def dtype(self):
        return self.embedding.dtype

    @property
    def interior(self) -> range:
        return range(1, len(self.layers) - 1)

    def copy(self) -> "TinyLM":
        return copy.deepcopy(self)

    def astype(self, dtype) -> "TinyLM":
        m = self.copy()
        m.embedding = m.embedding.astype(dtype)
        for layer in m.layers:
            layer.latent = layer.latent.astype(dtype)
            layer.bias = layer.bias.astype(dtype)
            layer.scale = layer.scale.astype(dtype)
        return m

    def parameters(self) -> list[np.ndarray]:
        out = [self.embedding]
        for layer in self.layers:
            out += [layer.latent, layer.scale, layer.bias]
        return out

    # ------------------------------------------------------------------
    # forward / backward
    # ------------------------------------------------------------------

    def _check_tokens(self, tokens) -> np.ndarray:
        tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
        if tokens.shape[1] != self.context:
            raise ValueError(f"context windows must have length {self.context}")
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.vocab_size):
            raise ValueError("token id out of range")
        return tokens

    def forward(self, tokens, cache: bool = False):
        tokens = self._check_tokens(tokens)
        fc = ForwardCache(tokens)
        h = self.embedding[tokens].reshape(tokens.shape[0], -1)
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            W = layer.effective_weights()
            z = h @ W.T + layer.bias
            if cache:
                fc.inputs.append(h)
                fc.pre.append(z)
                fc.weights.append(W)
            h = z if i == last else np.minimum(np.maximum(z, 0), self.activation_clip)
        fc.logits = h
        return (h, fc) if cache else h

    __call__ = forward

    def backward(self, fc: ForwardCache, dlogits: np.ndarray) -> Grads:
        """Gradients for every trainable given the gradient w.r.t. the logits."""
        dz = np.asarray(dlogits, dtype=self.dtype)
        g_latent, g_scale, g_bias = [], [], []
        for i in reversed(range(len(self.layers))):
            layer = self.layers[i]
            dW = dz.T @ fc.inputs[i]
            g_bias.append(dz.sum(axis=0))
            if layer.quantized:
                # identity straight-through: d w*/d latent := scale
                g_latent.append(layer.scale[:, None] * dW)
                g_scale.append((layer.codes() * dW).sum(axis=1))
            else:
                g_latent.append(dW)
                g_scale.append(np.zeros_like(layer.scale))
            dh = dz @ fc.weights[i]
            if i > 0:
                z = fc.pre[i - 1]
                dz = dh * ((z > 0) & (z < self.activation_clip))
        g_emb = np.zeros_like(self.embedding)
        np.add.at(g_emb, fc.tokens.reshape(-1), dh.reshape(-1, self.embed_dim))
        return Grads(g_emb, g_latent[::-1], g_scale[::-1], g_bias[::-1])

    def loss_and_grads(self, tokens, targets) -> tuple[float, Grads]:
        logits, fc = self.forward(tokens, cache=True)
        targets = np.asarray(targets, dtype=np.int64)
        loss, dlogits = cross_entropy(logits, targets)
        return loss, self.backward(fc, dlogits)

    def loss(self, tokens, targets) -> float:
        return cross_entropy(self.forward(tokens), np.asarray(targets, dtype=np.int64))[0]

    def log_probs(self, tokens, targets) -> np.ndarray:
        """Natural-log probability of each target token."""
        logits = self.forward(tokens).astype(np.float64)
        return log_softmax(logits)[np.arange(len(targets)), targets]

    # ------------------------------------------------------------------
    # quantization of interior layers
    # ------------------------------------------------------------------

    def quantize(self, mode: str = TERNARY, iters: int = DEFAULT_ITERATIONS, layers=None,
                 trace: list | None = None) -> "TinyLM":
        """Copy with the selected interior layers switched to ``mode``.

        Ternary layers get the constrained k-means init: latent ``w * s`` and
        learned scale ``mu``. Binary layers start from the raw weights with
        unit scales. Layers already quantized are left untouched. When
        ``trace`` is a list, ``(layer_index, init_results)`` pairs are
        appended for every newly ternarized layer.
        """
        if mode not in (TERNARY, BINARY):
            raise ValueError("mode must be 'ternary' or 'binary'")
        layers = list(self.interior) if layers is None else list(layers)
        bad = [i for i in layers if i not in self.interior]
        if bad:
            raise ValueError(f"only interior layers {list(self.interior)} can be quantized, got {bad}")
        m = self.copy()
        for i in layers:
            layer = m.layers[i]
            if layer.quantized:
                continue
            dtype = layer.latent.dtype
            if mode == TERNARY:
                results = kmeans_init_layer(layer.latent, iters)
                latent = np.stack([r.latent for r in results])
                scale = np.array([r.mu for r in results])
                if trace is not None:
                    trace.append((i, results))
            else:
                latent = layer.latent
                scale = np.ones(layer.latent.shape[0])
            m.layers[i] = LayerState(
                np.clip(latent, -1.0, 1.0).astype(dtype), layer.bias.copy(), mode, scale.astype(dtype)
            )
        return m


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    lp = log_softmax(logits)
    n = logits.shape[0]
    loss = -float(lp[np.arange(n), targets].mean())
    d = np.exp(lp)
    d[np.arange(n), targets] -= 1.0
    return loss, (d / n).astype(logits.dtype)
