import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ternkit import modelio
from ternkit.errors import (
    BadMagicError,
    CorruptDataError,
    ModelFormatError,
    TernkitError,
    TruncatedFileError,
    UnsupportedVersionError,
)
from ternkit.model import BINARY, TERNARY, TinyLM
from ternkit.quantizer import int8_quantize
from ternkit.ternary import pack_matrix


def random_records(rng):
    return [
        pack_matrix(rng.integers(-1, 2, (5, 9)), rng.uniform(0.1, 2, 5)),
        int8_quantize(rng.normal(size=(3, 4))),
        rng.normal(size=(2, 6)).astype(np.float32),
        pack_matrix(rng.integers(-1, 2, (1, 1)), [0.5]),
    ]


def test_ternary_record_layout(tmp_path):
    p = pack_matrix([[0, 1, -1, 0]], [0.25])
    n = modelio.save([p], tmp_path / "t.tq2f")
    blob = (tmp_path / "t.tq2f").read_bytes()
    assert n == len(blob) == 12 + 20 + 5
    assert blob[:4] == b"TQ2F"
    assert struct.unpack("<II", blob[4:12]) == (1, 1)
    assert struct.unpack("<IIIQ", blob[12:32]) == (2, 1, 4, 5)
    assert blob[32] == 0x34
    assert blob[33:] == np.float32(0.25).tobytes()


def test_int8_and_dense_layout(tmp_path):
    t = int8_quantize([[-1.0, 0.0, 1.0]])
    d = np.array([[1.5, -2.0]], np.float32)
    modelio.save([t, d], tmp_path / "m.tq2f")
    blob = (tmp_path / "m.tq2f").read_bytes()
    assert struct.unpack("<IIIQ", blob[12:32]) == (1, 1, 3, 7)
    assert blob[32:35] == np.array([-127, 0, 127], np.int8).tobytes()
    assert struct.unpack("<IIIQ", blob[39:59]) == (0, 1, 2, 8)
    assert blob[59:] == d.astype("<f4").tobytes()


def test_empty_file_is_header_only(tmp_path):
    assert modelio.save([], tmp_path / "e.tq2f") == 12
    assert modelio.load(tmp_path / "e.tq2f").records == []


def test_roundtrip_records(tmp_path, rng):
    recs = random_records(rng)
    path = tmp_path / "r.tq2f"
    modelio.save(recs, path)
    assert modelio.load(path) == modelio.ModelFile(recs)


def test_save_is_deterministic(tmp_path, rng):
    m = TinyLM.init(vocab_size=32, context=3, embed_dim=4, hidden=(8, 8, 8), seed=1).quantize(TERNARY)
    for form in (modelio.CHECKPOINT, modelio.DEPLOY):
        modelio.save(m, tmp_path / "a", form)
        modelio.save(m, tmp_path / "b", form)
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


@pytest.mark.parametrize("mode", [TERNARY, BINARY])
def test_checkpoint_roundtrip_is_exact(tmp_path, mode):
    m = TinyLM.init(vocab_size=32, context=3, embed_dim=4, hidden=(8, 8, 8), seed=2).quantize(mode)
    modelio.save(m, tmp_path / "m")
    back = modelio.load_model(tmp_path / "m")
    assert [l.mode for l in back.layers] == [l.mode for l in m.layers]
    for a, b in zip(m.parameters(), back.parameters()):
        assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("mode", [TERNARY, BINARY])
def test_deploy_roundtrip_keeps_codes(tmp_path, mode):
    m = TinyLM.init(vocab_size=32, context=3, embed_dim=4, hidden=(8, 8, 8), seed=2).quantize(mode)
    modelio.save(m, tmp_path / "d", modelio.DEPLOY)
    mf = modelio.load(tmp_path / "d")
    kinds = [modelio._kind(r) for r in mf.records]
    assert kinds.count(modelio.KIND_TERNARY) == 2
    back = modelio.model_from_file(mf)
    for i in m.interior:
        assert np.array_equal(back.layers[i].codes(), m.layers[i].codes())
        assert back.layers[i].scale.tobytes() == m.layers[i].scale.tobytes()
    # re-exporting a loaded deploy file reproduces the packed records
    again = modelio.to_model_file(back, modelio.DEPLOY)
    for a, b in zip(again.records, mf.records):
        if modelio._kind(a) == modelio.KIND_TERNARY:
            assert a == b


def test_bad_magic(tmp_path, rng):
    path = tmp_path / "m"
    modelio.save(random_records(rng), path)
    blob = bytearray(path.read_bytes())
    blob[0:4] = b"XXXX"
    with pytest.raises(BadMagicError):
        modelio.loads(bytes(blob))


def test_bad_version():
    with pytest.raises(UnsupportedVersionError):
        modelio.loads(b"TQ2F" + struct.pack("<II", 2, 0))


def test_payload_longer_than_file():
    blob = b"TQ2F" + struct.pack("<II", 1, 1) + struct.pack("<IIIQ", 0, 1, 1, 4) + b"\x00\x00"
    with pytest.raises(TruncatedFileError):
        modelio.loads(blob)
    blob = b"TQ2F" + struct.pack("<II", 1, 1) + struct.pack("<IIIQ", 2, 1, 4, 50) + b"\x00" * 5
    with pytest.raises(TruncatedFileError):
        modelio.loads(blob)


def test_invalid_ternary_code():
    body = bytes([0b10]) + np.float32(1).tobytes()
    blob = b"TQ2F" + struct.pack("<II", 1, 1) + struct.pack("<IIIQ", 2, 1, 4, 5) + body
    with pytest.raises(CorruptDataError):
        modelio.loads(blob)


def test_non_positive_scale_rejected():
    body = bytes([0b01]) + np.float32(0).tobytes()
    blob = b"TQ2F" + struct.pack("<II", 1, 1) + struct.pack("<IIIQ", 2, 1, 4, 5) + body
    with pytest.raises(ModelFormatError):
        modelio.loads(blob)


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_fuzzed_files_raise_typed_errors(data):
    rng = np.random.default_rng(data.draw(st.integers(0, 2**16)))
    m = TinyLM.init(vocab_size=16, context=2, embed_dim=2, hidden=(4, 4, 4), seed=0).quantize(TERNARY)
    blob = bytearray(modelio.dumps(modelio.to_model_file(m, data.draw(st.sampled_from(["checkpoint", "deploy"])))))
    action = data.draw(st.sampled_from(["truncate", "flip", "both"]))
    if action in ("flip", "both"):
        for _ in range(data.draw(st.integers(1, 8))):
            blob[int(rng.integers(len(blob)))] = int(rng.integers(256))
    if action in ("truncate", "both"):
        blob = blob[: data.draw(st.integers(0, len(blob) - 1))]
    try:
        mf = modelio.loads(bytes(blob))
        modelio.model_from_file(mf)
    except TernkitError:
        pass


def test_file_size_report(tmp_path):
    W = np.zeros((1024, 1024), int)
    p = pack_matrix(W, np.ones(1024))
    path = tmp_path / "big"
    modelio.save([p], path)
    rep = modelio.file_size_report(path)
    assert rep["ternary_codes"] == 1024 * 256 == 262144
    assert rep["ternary_scales"] == 4096
    assert sum(v for k, v in rep.items() if k != "total") == rep["total"] == path.stat().st_size
    dense_path = tmp_path / "dense"
    modelio.save([np.zeros((1024, 1024), np.float32)], dense_path)
    dense = modelio.file_size_report(dense_path)
    assert dense["ternary_codes"] == 0
    ratio = dense["dense"] / (rep["ternary_codes"] + rep["ternary_scales"])
    assert ratio == pytest.approx(4 * 1024 * 1024 / (262144 + 4096))
    assert 15.7 < ratio < 15.8
