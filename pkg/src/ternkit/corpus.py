"""Plain-text corpora: blank-line separated documents, byte-level tokens."""

from __future__ import annotations

import random
import re
from importlib import resources
from pathlib import Path

import numpy as np

PAD = 0
_DOC_SPLIT = re.compile(r"\n[ \t]*\n")


def split_documents(text: str) -> list[str]:
    docs = [d.strip() for d in _DOC_SPLIT.split(text.replace("\r\n", "\n"))]
    return [d for d in docs if d]


def load_corpus(path) -> list[str]:
    docs = split_documents(Path(path).read_text(encoding="utf-8"))
    if not docs:
        raise ValueError(f"corpus {path} contains no documents")
    return docs


def encode(text: str, vocab_size: int = 256) -> np.ndarray:
    """UTF-8 bytes as token ids; every byte must be below ``vocab_size``."""
    ids = np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.int64)
    if ids.size and ids.max() >= vocab_size:
        raise ValueError(f"byte {ids.max()} does not fit a vocabulary of {vocab_size}")
    return ids


def decode(ids) -> str:
    return bytes(int(i) & 0xFF for i in ids).decode("utf-8", errors="replace")


def windows(tokens: np.ndarray, context: int) -> tuple[np.ndarray, np.ndarray]:
    """Every position of a document with its left context, padded with PAD."""
    tokens = np.asarray(tokens, dtype=np.int64)
    padded = np.concatenate([np.full(context, PAD, dtype=np.int64), tokens])
    idx = np.arange(tokens.size)[:, None] + np.arange(context)[None, :]
    return padded[idx], tokens.copy()


def corpus_windows(docs: list[str], context: int, vocab_size: int) -> tuple[np.ndarray, np.ndarray]:
    xs, ys = [], []
    for doc in docs:
        x, y = windows(encode(doc, vocab_size), context)
        xs.append(x)
        ys.append(y)
    if not xs:
        raise ValueError("empty corpus")
    return np.concatenate(xs), np.concatenate(ys)


# --------------------------------------------------------------------------
# bundled synthetic corpus
# --------------------------------------------------------------------------

_ADJ = ["small", "red", "quiet", "old", "bright", "cold", "green", "heavy"]
_NOUN = ["cat", "robot", "river", "garden", "lamp", "stone", "bird", "ship"]
_VERB = ["sees", "moves", "finds", "holds", "follows", "likes"]
_PLACE = ["near the hill", "in the house", "by the sea", "under the tree"]


def synthetic_corpus(n_docs: int = 240, seed: int = 0) -> str:
    """Deterministic toy corpus from a tiny sentence grammar."""
    rng = random.Random(seed)
    docs = []
    for _ in range(n_docs):
        sentences = []
        for _ in range(rng.randint(2, 4)):
            s = (
                f"the {rng.choice(_ADJ)} {rng.choice(_NOUN)} {rng.choice(_VERB)} "
                f"the {rng.choice(_NOUN)}"
            )
            if rng.random() < 0.5:
                s += " " + rng.choice(_PLACE)
            sentences.append(s + ".")
        docs.append(" ".join(sentences))
    return "\n\n".join(docs) + "\n"


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("ternkit") / "data" / name))


def bundled_corpus() -> list[str]:
    return load_corpus(bundled_path("synthetic.txt"))
