"""Desk-scale pipeline: pretrain a full-precision TinyLM, ternarize, fine-tune.

``python -m ternkit.recipes`` rebuilds the bundled test model.
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass

from . import modelio
from .corpus import bundled_corpus, bundled_path
from .model import BINARY, TERNARY, TinyLM
from .training import TrainConfig, train

TRAIN_DOCS = 200

# pretraining is not part of the fine-tuning protocol; a large step size
# gets a usable "pre-trained" model in seconds
PRETRAIN = TrainConfig(base_lr=0.1, epochs=3, seed=0)
FINETUNE = TrainConfig(seed=1)

MODEL_SHAPE = dict(vocab_size=128, context=8, embed_dim=8, hidden=(64, 64, 64))


@dataclass
class Split:
    train: list[str]
    test: list[str]


def bundled_split() -> Split:
    docs = bundled_corpus()
    return Split(docs[:TRAIN_DOCS], docs[TRAIN_DOCS:])


def pretrain_full(split: Split | None = None, seed: int = 0) -> TinyLM:
    split = split or bundled_split()
    m = TinyLM.init(seed=seed, **MODEL_SHAPE)
    return train(m, split.train, PRETRAIN)[0]


def finetune_variants(full: TinyLM, split: Split, cfg: TrainConfig = FINETUNE, iters: int = 10) -> dict:
    """Fine-tune the full, ternary and binary versions with the same budget."""
    start = {
        "full": full,
        TERNARY: full.quantize(TERNARY, iters),
        BINARY: full.quantize(BINARY),
    }
    return {name: train(m, split.train, cfg)[0] for name, m in start.items()}


def build_bundled_model(path=None) -> TinyLM:
    split = bundled_split()
    full = pretrain_full(split)
    tern = train(full.quantize(TERNARY, 10), split.train, FINETUNE)[0]
    modelio.save(tern, path or bundled_path("tiny_ternary.tq2f"), modelio.DEPLOY)
    return tern


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description="rebuild the bundled ternary test model")
    ap.add_argument("--out")
    build_bundled_model(ap.parse_args().out)
