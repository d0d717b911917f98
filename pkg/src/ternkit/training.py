"""SGD fine-tuning with cosine annealing and gradient accumulation."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .corpus import corpus_windows, encode, windows
from .model import MIN_SCALE, Grads, TinyLM

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 1e-3
    min_lr: float = 0.0
    epochs: int = 2
    batch_size: int = 8
    grad_accumulation: int = 2
    seed: int = 0

    def __post_init__(self):
        if not self.base_lr > 0:
            raise ValueError("base_lr must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1 or self.grad_accumulation < 1:
            raise ValueError("batch_size and grad_accumulation must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class StepLog:
    step: int
    lr: float
    loss: float

    def line(self) -> str:
        return f"{self.step},{self.lr!r},{self.loss!r}"


def cosine_lr(step: int, total_steps: int, base_lr: float, min_lr: float = 0.0) -> float:
    if not 0 <= step <= total_steps:
        raise ValueError("step must lie in [0, total_steps]")
    if total_steps == 0:
        return base_lr
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + math.cos(math.pi * step / total_steps))


def sgd_step(m: TinyLM, grads: Grads, lr: float) -> TinyLM:
    """In-place SGD update; quantized latents are clipped to [-1, 1] afterwards."""
    pairs = [(m.embedding, grads.embedding)]
    for layer, gl, gs, gb in zip(m.layers, grads.latent, grads.scale, grads.bias):
        pairs += [(layer.latent, gl), (layer.bias, gb)]
        if layer.quantized:
            pairs.append((layer.scale, gs))
    for param, grad in pairs:
        if param.shape != grad.shape:
            raise ValueError(f"gradient shape {grad.shape} does not match parameter {param.shape}")
    if lr == 0:
        return m
    for param, grad in pairs:
        param -= param.dtype.type(lr) * grad
    for layer in m.layers:
        if layer.quantized:
            np.clip(layer.latent, -1.0, 1.0, out=layer.latent)
            np.maximum(layer.scale, MIN_SCALE, out=layer.scale)
    return m


def _mean_grads(acc: list[Grads]) -> Grads:
    k = len(acc)
    if k == 1:
        return acc[0]

    def avg(items):
        return sum(items[1:], items[0].copy()) / k

    return Grads(
        avg([g.embedding for g in acc]),
        [avg(list(t)) for t in zip(*(g.latent for g in acc))],
        [avg(list(t)) for t in zip(*(g.scale for g in acc))],
        [avg(list(t)) for t in zip(*(g.bias for g in acc))],
    )


def train(m: TinyLM, docs: list[str], cfg: TrainConfig = TrainConfig(), max_steps: int | None = None):
    """Fine-tune a copy of ``m`` on ``docs``; returns ``(model, step_logs)``.

    Each optimizer step averages the gradients of ``grad_accumulation``
    micro-batches of ``batch_size`` windows. ``max_steps`` caps the run and
    also defines the length of the cosine schedule when given.
    """
    if not docs:
        raise ValueError("empty corpus")
    m = m.copy()
    if cfg.epochs == 0:
        return m, []
    X, Y = corpus_windows(docs, m.context, m.vocab_size)
    per_step = cfg.batch_size * cfg.grad_accumulation
    steps_per_epoch = math.ceil(len(X) / per_step)
    total = cfg.epochs * steps_per_epoch
    if max_steps is not None:
        total = min(total, max_steps)
    rng = np.random.default_rng(cfg.seed)
    logs: list[StepLog] = []
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(X))
        for start in range(0, len(X), per_step):
            if step >= total:
                break
            chunk = order[start:start + per_step]
            lr = cosine_lr(step, total, cfg.base_lr, cfg.min_lr)
            acc, losses = [], []
            for b in range(0, len(chunk), cfg.batch_size):
                idx = chunk[b:b + cfg.batch_size]
                loss, g = m.loss_and_grads(X[idx], Y[idx])
                acc.append(g)
                losses.append(loss)
            sgd_step(m, _mean_grads(acc), lr)
            logs.append(StepLog(step, lr, float(np.mean(losses))))
            step += 1
        log.debug("epoch %d done, last loss %.4f", epoch, logs[-1].loss if logs else float("nan"))
    return m, logs


def write_loss_log(logs: list[StepLog], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("step,lr,loss\n")
        for entry in logs:
            f.write(entry.line() + "\n")


def perplexity_from_log_probs(log_probs) -> float:
    lp = np.asarray(log_probs, dtype=np.float64)
    if lp.size == 0:
        raise ValueError("empty document")
    return float(np.exp(-lp.mean()))


def document_perplexity(m: TinyLM, doc: str) -> float:
    tokens = encode(doc, m.vocab_size)
    if tokens.size == 0:
        raise ValueError("empty document")
    x, y = windows(tokens, m.context)
    return perplexity_from_log_probs(m.log_probs(x, y))


def eval_perplexity(m: TinyLM, docs: list[str]) -> tuple[float, float]:
    """Mean and sample standard deviation of per-document perplexity."""
    if not docs:
        raise ValueError("empty corpus")
    ppl = np.array([document_perplexity(m, d) for d in docs])
    std = float(ppl.std(ddof=1)) if ppl.size > 1 else 0.0
    return float(ppl.mean()), std


def eval_loss(m: TinyLM, docs: list[str]) -> float:
    """Token-averaged cross-entropy over all documents."""
    X, Y = corpus_windows(docs, m.context, m.vocab_size)
    return -float(m.log_probs(X, Y).mean())
