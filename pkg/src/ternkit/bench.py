"""Greedy token generation over packed models, and kernel benchmarks."""

from __future__ import annotations

import json
import math
import statistics
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .corpus import PAD, decode, encode
from .kernels import KernelVariant, Workspace
from .model import TinyLM
from .ternary import PackedTernaryMatrix, pack_matrix

# top-2 logit gaps below this (relative to max(1, |top|)) are reported as
# near ties: variant rounding differences could flip them
TIE_TOLERANCE = 1e-5


def _stats(values) -> dict:
    values = [float(v) for v in values]
    std = statistics.stdev(values) if len(values) > 1 else 0.0
    return {"mean": statistics.fmean(values), "std": std}


@dataclass
class BenchReport:
    """One JSON-able record per benchmark invocation.

    Throughput fields are ``{"mean", "std"}`` with a sample standard
    deviation over ``run_count`` runs. Fields that do not apply are None.
    """

    variant: str
    run_count: int
    peak_workspace_bytes: int
    tokens_per_second: dict | None = None
    ops_per_second: dict | None = None
    resident_model_bytes: int | None = None
    file_size_bytes: int | None = None
    perplexity: dict | None = None
    near_tie_steps: int = 0
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.run_count < 1:
            raise ValueError("run_count must be >= 1")

    @property
    def memory_bytes(self) -> int:
        return self.peak_workspace_bytes + (self.resident_model_bytes or 0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["memory_bytes"] = self.memory_bytes
        return d

    def to_json(self) -> str:
        d = self.to_dict()
        _check_finite(d)
        return json.dumps(d, sort_keys=True)


def _check_finite(obj) -> None:
    if isinstance(obj, float) and not math.isfinite(obj):
        raise ValueError("report contains a non-finite number")
    if isinstance(obj, dict):
        for v in obj.values():
            _check_finite(v)
    elif isinstance(obj, (list, tuple)):
        for v in obj:
            _check_finite(v)


class RuntimeModel:
    """Inference-only view of a TinyLM with quantized layers packed.

    Quantized layers run through :func:`kernels.matmul_batch` with the chosen
    variant; full-precision layers use a plain float32 product, identical for
    every variant.
    """

    def __init__(self, m: TinyLM):
        self.vocab_size = m.vocab_size
        self.context = m.context
        self.activation_clip = np.float32(m.activation_clip)
        self.embedding = np.ascontiguousarray(m.embedding, dtype=np.float32)
        self.layers: list[tuple[object, np.ndarray]] = []
        for layer in m.layers:
            bias = np.asarray(layer.bias, dtype=np.float32)
            if layer.quantized:
                self.layers.append((pack_matrix(layer.codes(), layer.scale), bias))
            else:
                self.layers.append((np.ascontiguousarray(layer.latent, dtype=np.float32), bias))

    @property
    def resident_bytes(self) -> int:
        total = self.embedding.nbytes
        for w, b in self.layers:
            total += w.nbytes + b.nbytes
        return total

    def logits(self, context_ids, variant=KernelVariant.DIRECT_TERNARY, workers=1, ws=None) -> np.ndarray:
        ws = ws if ws is not None else Workspace()
        h = self.embedding[np.asarray(context_ids, dtype=np.int64)].reshape(-1)
        last = len(self.layers) - 1
        for i, (w, bias) in enumerate(self.layers):
            if isinstance(w, PackedTernaryMatrix):
                z = kernels.matmul_batch(w, h[:, None], variant, workers, ws)[:, 0] + bias
            else:
                z = w @ h + bias
            h = z if i == last else np.minimum(np.maximum(z, 0), self.activation_clip)
        return h


@dataclass
class Generation:
    token_ids: list[int]
    text: str
    seconds: float
    peak_workspace_bytes: int
    near_tie_steps: int


def greedy_argmax(logits: np.ndarray) -> int:
    # np.argmax returns the first maximum, i.e. the lowest token id on ties
    return int(np.argmax(logits))


def generate(rt: RuntimeModel, prompt: str, n_tokens: int = 50,
             variant=KernelVariant.DIRECT_TERNARY, workers: int = 1) -> Generation:
    """Greedy decoding of exactly ``n_tokens`` tokens after ``prompt``."""
    if n_tokens < 1:
        raise ValueError("n_tokens must be >= 1")
    history = [PAD] * rt.context + list(encode(prompt, rt.vocab_size))
    ws = Workspace()
    out, ties = [], 0
    t0 = time.perf_counter()
    for _ in range(n_tokens):
        logits = rt.logits(history[-rt.context:], variant, workers, ws)
        tok = greedy_argmax(logits)
        top2 = np.partition(logits, -2)[-2:] if logits.size > 1 else logits
        if logits.size > 1 and abs(top2[1] - top2[0]) <= TIE_TOLERANCE * max(1.0, abs(float(top2[1]))):
            ties += 1
        out.append(tok)
        history.append(tok)
    seconds = time.perf_counter() - t0
    return Generation(out, decode(out), seconds, ws.peak_bytes, ties)


def generation_benchmark(m: TinyLM, prompt: str, n_tokens: int = 50, variant=KernelVariant.DIRECT_TERNARY,
                         workers: int = kernels.DEFAULT_WORKERS, runs: int = 1, warmup: int = 1,
                         file_size_bytes: int | None = None, perplexity=None, seed: int = 0):
    """Run :func:`generate` ``runs`` times; returns ``(Generation, BenchReport)``.

    The first measured run's text is returned; all runs produce the same
    tokens since decoding is greedy.
    """
    variant = KernelVariant(variant)
    if runs < 1:
        raise ValueError("runs must be >= 1")
    rt = RuntimeModel(m)
    for _ in range(warmup):
        generate(rt, prompt, 1, variant, workers)
    gens = [generate(rt, prompt, n_tokens, variant, workers) for _ in range(runs)]
    rates = [n_tokens / max(g.seconds, 1e-12) for g in gens]
    report = BenchReport(
        variant=variant.value,
        run_count=runs,
        peak_workspace_bytes=max(g.peak_workspace_bytes for g in gens),
        tokens_per_second=_stats(rates),
        resident_model_bytes=rt.resident_bytes,
        file_size_bytes=file_size_bytes,
        perplexity=None if perplexity is None else {"mean": perplexity[0], "std": perplexity[1]},
        near_tie_steps=max(g.near_tie_steps for g in gens),
        config={"threads": workers, "tokens": n_tokens, "seed": seed, "prompt_bytes": len(prompt.encode())},
    )
    return gens[0], report


def random_packed(rows: int, cols: int, seed: int = 0) -> PackedTernaryMatrix:
    rng = np.random.default_rng(seed)
    codes = rng.integers(-1, 2, size=(rows, cols))
    scales = rng.uniform(0.5, 1.5, size=rows)
    return pack_matrix(codes, scales)


def bench_matmul(rows: int, cols: int, batch: int = 1, variant=KernelVariant.DIRECT_TERNARY,
                 threads: int = 1, reps: int = 10, seed: int = 0) -> BenchReport:
    if min(rows, cols, batch) < 1:
        raise ValueError("rows, cols and batch must be >= 1")
    variant = KernelVariant(variant)
    p = random_packed(rows, cols, seed)
    X = np.random.default_rng(seed + 1).uniform(-1, 1, size=(cols, batch)).astype(np.float32)
    _, peak, samples = kernels.measure_throughput(p, X, variant, threads, reps)
    return BenchReport(
        variant=variant.value,
        run_count=reps,
        peak_workspace_bytes=peak,
        ops_per_second=_stats(samples),
        resident_model_bytes=p.nbytes,
        config={"rows": rows, "cols": cols, "batch": batch, "threads": threads, "reps": reps, "seed": seed},
    )
