"""TQ2F container: bit-exact storage for dense, int8 and packed ternary tensors.

All integers are little-endian::

    header   magic b"TQ2F" | u32 version (=1) | u32 layer_count
    record   u32 kind | u32 rows | u32 cols | u64 payload_length | payload

    kind 0  dense    rows*cols float32
    kind 1  int8     rows*cols int8, then one float32 scale
    kind 2  ternary  rows*ceil(cols/4) code bytes, then rows float32 scales
    kind 3  metadata UTF-8 JSON (rows = cols = 0)

``layer_count`` counts tensor records (kinds 0-2). At most one metadata
record may follow them; it is what turns a bag of tensors into a TinyLM.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    CorruptDataError,
    ModelFormatError,
    TruncatedFileError,
    UnsupportedVersionError,
)
from .model import LayerState, TinyLM
from .quantizer import Int8Tensor, int8_dequantize, int8_quantize
from .ternary import PackedTernaryMatrix, pack_matrix, row_stride

MAGIC = b"TQ2F"
VERSION = 1
KIND_DENSE, KIND_INT8, KIND_TERNARY, KIND_METADATA = 0, 1, 2, 3

_HEADER = struct.Struct("<4sII")
_RECORD = struct.Struct("<IIIQ")

CHECKPOINT = "checkpoint"
DEPLOY = "deploy"


@dataclass
class ModelFile:
    records: list = field(default_factory=list)
    metadata: dict | None = None

    def __eq__(self, other):
        if not isinstance(other, ModelFile):
            return NotImplemented
        if self.metadata != other.metadata or len(self.records) != len(other.records):
            return False
        return all(_record_equal(a, b) for a, b in zip(self.records, other.records))


def _record_equal(a, b) -> bool:
    if isinstance(a, np.ndarray) and isinstance(b, np.ndarray):
        return a.shape == b.shape and a.tobytes() == b.tobytes()
    return type(a) is type(b) and a == b


def _kind(rec) -> int:
    if isinstance(rec, PackedTernaryMatrix):
        return KIND_TERNARY
    if isinstance(rec, Int8Tensor):
        return KIND_INT8
    if isinstance(rec, np.ndarray):
        return KIND_DENSE
    raise TypeError(f"cannot serialize {type(rec).__name__}")


def _payload(rec) -> tuple[int, int, int, bytes]:
    kind = _kind(rec)
    if kind == KIND_TERNARY:
        body = rec.data.tobytes() + rec.scales.astype("<f4").tobytes()
        return kind, rec.rows, rec.cols, body
    if kind == KIND_INT8:
        body = rec.q.astype(np.int8).tobytes() + np.float32(rec.scale).astype("<f4").tobytes()
        return kind, rec.rows, rec.cols, body
    arr = np.asarray(rec, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError("dense records must be 2-D")
    return kind, arr.shape[0], arr.shape[1], arr.astype("<f4").tobytes()


def dumps(mf: ModelFile) -> bytes:
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, VERSION, len(mf.records)))
    for rec in mf.records:
        kind, rows, cols, body = _payload(rec)
        buf.write(_RECORD.pack(kind, rows, cols, len(body)))
        buf.write(body)
    if mf.metadata is not None:
        body = json.dumps(mf.metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
        buf.write(_RECORD.pack(KIND_METADATA, 0, 0, len(body)))
        buf.write(body)
    return buf.getvalue()


def _expected_length(kind: int, rows: int, cols: int) -> int:
    if kind == KIND_DENSE:
        return 4 * rows * cols
    if kind == KIND_INT8:
        return rows * cols + 4
    if kind == KIND_TERNARY:
        return rows * row_stride(cols) + 4 * rows
    raise ModelFormatError(f"unknown record kind {kind}")


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if n > len(self.blob) - self.pos:
            raise TruncatedFileError(
                f"{what}: need {n} bytes at offset {self.pos}, only {len(self.blob) - self.pos} left"
            )
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out


def _decode_record(kind, rows, cols, body):
    if kind == KIND_DENSE:
        return np.frombuffer(body, dtype="<f4").astype(np.float32).reshape(rows, cols)
    if kind == KIND_INT8:
        q = np.frombuffer(body[:-4], dtype=np.int8).reshape(rows, cols)
        scale = np.frombuffer(body[-4:], dtype="<f4")[0]
        try:
            return Int8Tensor(rows, cols, q, scale)
        except ValueError as e:
            raise ModelFormatError(str(e)) from None
    n_codes = rows * row_stride(cols)
    data = np.frombuffer(body[:n_codes], dtype=np.uint8)
    scales = np.frombuffer(body[n_codes:], dtype="<f4").astype(np.float32)
    try:
        p = PackedTernaryMatrix(rows, cols, data, scales)
    except ValueError as e:
        raise ModelFormatError(f"bad ternary record: {e}") from None
    p.validate()
    return p


def loads(blob: bytes) -> ModelFile:
    r = _Reader(blob)
    magic, version, count = _HEADER.unpack(r.take(_HEADER.size, "header"))
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported TQ2F version {version}")
    mf = ModelFile()
    for i in range(count):
        kind, rows, cols, length = _RECORD.unpack(r.take(_RECORD.size, f"record {i} header"))
        if kind == KIND_METADATA:
            raise ModelFormatError(f"record {i}: metadata inside the tensor section")
        expected = _expected_length(kind, rows, cols)
        if length != expected:
            if length > len(blob) - r.pos:
                raise TruncatedFileError(f"record {i}: payload_length {length} exceeds file")
            raise ModelFormatError(f"record {i}: payload_length {length}, layout needs {expected}")
        mf.records.append(_decode_record(kind, rows, cols, r.take(length, f"record {i} payload")))
    if r.pos < len(blob):
        kind, rows, cols, length = _RECORD.unpack(r.take(_RECORD.size, "metadata header"))
        if kind != KIND_METADATA:
            raise ModelFormatError(f"trailing record of kind {kind}; only metadata may follow")
        body = r.take(length, "metadata payload")
        try:
            mf.metadata = json.loads(body.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ModelFormatError(f"metadata is not valid JSON: {e}") from None
        if r.pos != len(blob):
            raise ModelFormatError(f"{len(blob) - r.pos} unexpected trailing bytes")
    return mf


# --------------------------------------------------------------------------
# TinyLM <-> ModelFile
# --------------------------------------------------------------------------


def to_model_file(m: TinyLM, form: str = CHECKPOINT) -> ModelFile:
    """Lay out a TinyLM as records.

    ``checkpoint`` keeps every float (latents and learned scales included) so
    training can resume exactly. ``deploy`` packs quantized layers and stores
    the embedding and full-precision weights as int8; biases stay float32.
    """
    if form not in (CHECKPOINT, DEPLOY):
        raise ValueError(f"unknown form {form!r}")
    recs: list = []
    meta_layers = []
    if form == DEPLOY:
        recs.append(int8_quantize(m.embedding))
        emb_storage = "int8"
    else:
        recs.append(np.asarray(m.embedding, dtype=np.float32))
        emb_storage = "dense"
    for layer in m.layers:
        rows, cols = layer.shape
        if form == CHECKPOINT:
            recs.append(np.asarray(layer.latent, dtype=np.float32))
            storage = "latent" if layer.quantized else "dense"
            if layer.quantized:
                recs.append(np.asarray(layer.scale, dtype=np.float32).reshape(1, rows))
        elif layer.quantized:
            recs.append(pack_matrix(layer.codes(), layer.scale))
            storage = "packed"
        else:
            recs.append(int8_quantize(layer.latent))
            storage = "int8"
        recs.append(np.asarray(layer.bias, dtype=np.float32).reshape(1, rows))
        meta_layers.append({"rows": rows, "cols": cols, "mode": layer.mode, "storage": storage})
    meta = {
        "format": "ternkit-tinylm",
        "form": form,
        "vocab_size": m.vocab_size,
        "context": m.context,
        "embed_dim": m.embed_dim,
        "activation_clip": m.activation_clip,
        "embedding_storage": emb_storage,
        "layers": meta_layers,
    }
    return ModelFile(recs, meta)


def _as_float(rec) -> np.ndarray:
    if isinstance(rec, Int8Tensor):
        return int8_dequantize(rec)
    if isinstance(rec, PackedTernaryMatrix):
        raise ModelFormatError("expected a dense or int8 record, found packed ternary")
    return np.array(rec, dtype=np.float32)


def model_from_file(mf: ModelFile) -> TinyLM:
    meta = mf.metadata
    if not isinstance(meta, dict) or meta.get("format") != "ternkit-tinylm":
        raise ModelFormatError("file has no TinyLM metadata")
    try:
        recs = iter(mf.records)
        embedding = _as_float(next(recs))
        layers = []
        for spec in meta["layers"]:
            weight = next(recs)
            mode = spec["mode"]
            scale = None
            if isinstance(weight, PackedTernaryMatrix):
                latent = weight.codes().astype(np.float32)
                scale = weight.scales.copy()
            else:
                latent = _as_float(weight)
                if spec["storage"] == "latent":
                    scale = _as_float(next(recs)).reshape(-1)
            bias = _as_float(next(recs)).reshape(-1)
            layers.append(LayerState(latent, bias, mode, scale))
        if next(recs, None) is not None:
            raise ModelFormatError("more records than the metadata describes")
        return TinyLM(meta["vocab_size"], meta["context"], meta["embed_dim"], embedding,
                      layers, meta["activation_clip"])
    except StopIteration:
        raise ModelFormatError("fewer records than the metadata describes") from None
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, ModelFormatError):
            raise
        raise ModelFormatError(f"inconsistent TinyLM metadata: {e}") from None


# --------------------------------------------------------------------------
# file API
# --------------------------------------------------------------------------


def save(obj, path, form: str = CHECKPOINT) -> int:
    """Write a TinyLM, ModelFile or list of records; returns bytes written."""
    if isinstance(obj, TinyLM):
        obj = to_model_file(obj, form)
    elif not isinstance(obj, ModelFile):
        obj = ModelFile(list(obj))
    blob = dumps(obj)
    Path(path).write_bytes(blob)
    return len(blob)


def load(path) -> ModelFile:
    return loads(Path(path).read_bytes())


def load_model(path) -> TinyLM:
    return model_from_file(load(path))


def file_size_report(path) -> dict:
    """Bytes of the file attributed to each storage category.

    ``metadata`` covers the file header, record headers and the metadata
    record, so the categories always sum to ``total``.
    """
    blob = Path(path).read_bytes()
    mf = loads(blob)
    rep = {"ternary_codes": 0, "ternary_scales": 0, "int8": 0, "dense": 0}
    for rec in mf.records:
        if isinstance(rec, PackedTernaryMatrix):
            rep["ternary_codes"] += rec.rows * rec.row_stride
            rep["ternary_scales"] += 4 * rec.rows
        elif isinstance(rec, Int8Tensor):
            rep["int8"] += rec.nbytes
        else:
            rep["dense"] += rec.nbytes
    rep["metadata"] = len(blob) - sum(rep.values())
    rep["total"] = len(blob)
    return rep


__all__ = [
    "CHECKPOINT", "DEPLOY", "ModelFile", "save", "load", "load_model", "dumps", "loads",
    "to_model_file", "model_from_file", "file_size_report", "CorruptDataError",
]
