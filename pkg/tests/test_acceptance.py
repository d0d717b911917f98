"""Acceptance criteria 1-9, one PASS/FAIL line each.

Run ``pytest tests/test_acceptance.py -s`` to see the summary lines; they are
also written when output is captured, through ``capsys.disabled()``.
"""

import contextlib
import itertools
import json
import time

import numpy as np
import pytest

from ternkit import modelio, recipes
from ternkit.bench import random_packed
from ternkit.cli import main
from ternkit.corpus import bundled_path
from ternkit.errors import CorruptDataError
from ternkit.kernels import KernelVariant, matmul_batch, measure_throughput
from ternkit.model import BINARY, TERNARY, LayerState, TinyLM, cross_entropy
from ternkit.quantizer import (
    kmeans_centroids,
    kmeans_init_neuron,
    kmeans_objective,
    quantization_error,
)
from ternkit.ternary import PackedTernaryMatrix, pack_matrix, row_stride, unpack_matrix
from ternkit.training import eval_loss, eval_perplexity


@contextlib.contextmanager
def criterion(capsys, number, title):
    t0 = time.perf_counter()
    detail = {}
    try:
        yield detail
    except BaseException:
        with capsys.disabled():
            print(f"\nFAIL  criterion {number}: {title} ({time.perf_counter() - t0:.1f}s) {detail}")
        raise
    with capsys.disabled():
        print(f"\nPASS  criterion {number}: {title} ({time.perf_counter() - t0:.1f}s) {detail}")


# 1 ------------------------------------------------------------------------


def test_kernel_oracle_equivalence(capsys):
    with criterion(capsys, 1, "kernel variants match the dense oracle") as d:
        rng = np.random.default_rng(2024)
        t0 = time.perf_counter()
        worst = 0.0
        for case in range(200):
            rows, cols = (int(v) for v in rng.integers(1, 513, 2))
            b = int(rng.integers(1, 9))
            p = random_packed(rows, cols, seed=case)
            X = rng.normal(size=(cols, b)).astype(np.float32)
            codes, scales = unpack_matrix(p)
            ref = (scales.astype(np.float64)[:, None] * codes) @ X.astype(np.float64)
            for v in KernelVariant:
                got = matmul_batch(p, X, v, workers=3)
                excess = np.abs(got - ref) - (1e-5 * np.abs(ref) + 1e-6)
                worst = max(worst, float((np.abs(got - ref) / np.maximum(np.abs(ref), 1e-6)).max()))
                assert (excess <= 0).all(), (case, v, rows, cols, b)
        elapsed = time.perf_counter() - t0
        d.update(worst_rel=f"{worst:.2e}", seconds=round(elapsed, 1))
        assert elapsed < 60


# 2 ------------------------------------------------------------------------


def test_pack_roundtrip(capsys):
    with criterion(capsys, 2, "pack/unpack round trip and 0b10 rejection") as d:
        seqs = np.array(list(itertools.product((-1, 0, 1), repeat=8)), dtype=np.int8)
        assert len(seqs) == 3**8
        p = pack_matrix(seqs, np.ones(len(seqs)))
        assert np.array_equal(unpack_matrix(p)[0], seqs)
        rng = np.random.default_rng(7)
        for _ in range(1000):
            rows, cols = (int(v) for v in rng.integers(1, 65, 2))
            codes = rng.integers(-1, 2, (rows, cols)).astype(np.int8)
            scales = rng.uniform(0.01, 10, rows).astype(np.float32)
            back_codes, back_scales = unpack_matrix(pack_matrix(codes, scales))
            assert np.array_equal(back_codes, codes)
            assert back_scales.tobytes() == scales.tobytes()
        rejected = 0
        for lane in range(4):
            for byte_index in range(2):
                data = np.zeros(2, np.uint8)
                data[byte_index] = 0b10 << (2 * lane)
                bad = PackedTernaryMatrix(1, 8, data, np.ones(1, np.float32))
                for fn in (unpack_matrix, lambda q: matmul_batch(q, np.ones((8, 1), np.float32),
                                                                  KernelVariant.DIRECT_TERNARY)):
                    with pytest.raises(CorruptDataError):
                        fn(bad)
                    rejected += 1
        d.update(exhaustive=len(seqs), random=1000, rejected=rejected)


# 3 ------------------------------------------------------------------------


def test_kmeans_initializer(capsys):
    with criterion(capsys, 3, "k-means initializer fixture, monotone objective, plateau") as d:
        w = np.array([0.1, 0.9, -0.8, 0.05], np.float32)
        res = kmeans_init_neuron(w, 10)
        assert res.mu == pytest.approx(0.85, abs=1e-6)
        assert res.s == pytest.approx(1.176471, abs=1e-6)
        assert quantization_error(w, res) == pytest.approx(0.004375, abs=1e-9)

        rng = np.random.default_rng(11)
        W = rng.normal(size=(1000, 64))
        trace: list = []
        kmeans_centroids(W, 10, trace=trace)
        objs = np.array([[kmeans_objective(W[i], mu[i]) for i in range(len(W))] for mu in trace])
        assert (np.diff(objs, axis=0) <= 1e-12 * np.maximum(objs[:-1], 1)).all()

        gaps = []
        for seed in range(5):
            v = np.random.default_rng(seed).normal(size=10_000)
            e10 = quantization_error(v, kmeans_init_neuron(v, 10))
            e50 = quantization_error(v, kmeans_init_neuron(v, 50))
            gaps.append(abs(e10 - e50))
        d.update(mu=round(res.mu, 7), max_plateau_gap=f"{max(gaps):.1e}")
        assert max(gaps) <= 1e-6


# 4 ------------------------------------------------------------------------


def test_initialization_benefit(capsys, split, pretrained):
    with criterion(capsys, 4, "iters=10 ternary eval loss <= iters=0") as d:
        loss0 = eval_loss(pretrained.quantize(TERNARY, 0), split.test)
        loss10 = eval_loss(pretrained.quantize(TERNARY, 10), split.test)
        d.update(loss_iters0=round(loss0, 4), loss_iters10=round(loss10, 4))
        assert loss10 <= loss0


# 5 ------------------------------------------------------------------------


def _fd_worst(m, x, y, rng, eps=1e-6, probes=30):
    _, g = m.loss_and_grads(x, y)
    pairs = [(m.embedding, g.embedding)]
    for layer, gl, gb in zip(m.layers, g.latent, g.bias):
        pairs += [(layer.latent, gl), (layer.bias, gb)]
    worst = 0.0
    for p, gp in pairs:
        flat = p.reshape(-1)
        for k in rng.choice(flat.size, size=min(probes, flat.size), replace=False):
            old = flat[k]
            flat[k] = old + eps
            up = cross_entropy(m.forward(x), y)[0]
            flat[k] = old - eps
            down = cross_entropy(m.forward(x), y)[0]
            flat[k] = old
            fd = (up - down) / (2 * eps)
            worst = max(worst, abs(fd - gp.reshape(-1)[k]) / max(abs(fd), abs(gp.reshape(-1)[k]), 1e-7))
    return worst


def test_ste_gradients(capsys):
    with criterion(capsys, 5, "finite differences and STE shadow-network gradients") as d:
        rng = np.random.default_rng(5)
        m = TinyLM.init(vocab_size=16, context=4, embed_dim=8, hidden=(16, 16, 16), seed=0, dtype=np.float64)
        x = rng.integers(0, 16, (8, 4))
        y = rng.integers(0, 16, 8)
        fd = _fd_worst(m, x, y, rng)
        assert fd <= 1e-4

        worst = 0.0
        for mode in (TERNARY, BINARY):
            q = m.quantize(mode, 10)
            _, g = q.loss_and_grads(x, y)
            # shadow network: a full-precision copy holding the effective weights
            shadow = q.copy()
            for i in q.interior:
                shadow.layers[i] = LayerState(q.layers[i].effective_weights().copy(), q.layers[i].bias)
            _, gs = shadow.loss_and_grads(x, y)
            for i in q.interior:
                expected = q.layers[i].scale[:, None] * gs.latent[i]
                assert np.allclose(g.latent[i], expected, rtol=1e-12, atol=1e-15)
                worst = max(worst, float(np.abs(g.latent[i] - expected).max()))
        d.update(fd_worst_rel=f"{fd:.1e}", shadow_max_abs=f"{worst:.1e}")


# 6 ------------------------------------------------------------------------


def test_pareto_ordering(capsys, tmp_path, split, pretrained):
    with criterion(capsys, 6, "perplexity full <= ternary <= binary; size ternary < int8 < dense") as d:
        models = recipes.finetune_variants(pretrained, split)
        ppl = {k: eval_perplexity(m, split.test)[0] for k, m in models.items()}
        sizes = {
            "ternary": modelio.save(models[TERNARY], tmp_path / "t", modelio.DEPLOY),
            "int8": modelio.save(models["full"], tmp_path / "i", modelio.DEPLOY),
            "dense": modelio.save(models["full"], tmp_path / "d", modelio.CHECKPOINT),
        }
        d.update(ppl={k: round(v, 3) for k, v in ppl.items()}, bytes=sizes)
        assert ppl["full"] <= ppl[TERNARY] <= ppl[BINARY]
        assert sizes["ternary"] < sizes["int8"] < sizes["dense"]


# 7 ------------------------------------------------------------------------


def test_compression_arithmetic(capsys, tmp_path):
    with criterion(capsys, 7, "1024x1024 layout sizes and >= 15x ratio") as d:
        p = random_packed(1024, 1024, seed=3)
        modelio.save([p], tmp_path / "t")
        rep = modelio.file_size_report(tmp_path / "t")
        assert row_stride(1024) == 256
        assert rep["ternary_codes"] == 1024 * 256
        assert rep["ternary_scales"] == 4096
        modelio.save([np.zeros((1024, 1024), np.float32)], tmp_path / "d")
        dense = modelio.file_size_report(tmp_path / "d")["dense"]
        ratio = dense / (rep["ternary_codes"] + rep["ternary_scales"])
        d.update(ratio=round(ratio, 3))
        assert ratio >= 15


# 8 ------------------------------------------------------------------------


def test_performance_ordering(capsys):
    with criterion(capsys, 8, "direct_ternary faster and leaner than unpack_then_multiply") as d:
        p = random_packed(1024, 1024, seed=0)
        X = np.random.default_rng(1).uniform(-1, 1, (1024, 1)).astype(np.float32)
        direct, direct_peak, _ = measure_throughput(p, X, KernelVariant.DIRECT_TERNARY, 1, 50)
        unpack, unpack_peak, _ = measure_throughput(p, X, KernelVariant.UNPACK_THEN_MULTIPLY, 1, 50)
        d.update(direct_gflops=round(direct / 1e9, 3), unpack_gflops=round(unpack / 1e9, 3),
                 direct_peak=direct_peak, unpack_peak=unpack_peak)
        assert direct >= unpack
        assert direct_peak < unpack_peak / 16


# 9 ------------------------------------------------------------------------


def test_generation_determinism(capsys):
    with criterion(capsys, 9, "generate --tokens 50 identical across variants and runs") as d:
        texts = set()
        for v in KernelVariant:
            for _ in range(2):
                assert main(["generate", str(bundled_path("tiny_ternary.tq2f")),
                             "--tokens", "50", "--variant", v.value]) == 0
                res = json.loads(capsys.readouterr().out)
                assert len(res["token_ids"]) == 50
                texts.add(res["text"])
        d.update(text=next(iter(texts)) if len(texts) == 1 else sorted(texts))
        assert len(texts) == 1
