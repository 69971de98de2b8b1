import json
import struct

import numpy as np
import pytest

from intmamba.errors import ParseError
from intmamba.mamba import (
    MambaConfig, init_weights, load_model, load_tensor, model_forward_q, quantize_model,
    save_model, save_tensor,
)
from intmamba.mamba.container import MAGIC
from intmamba.qnum import QTensor

HEADER = struct.Struct("<8sIQ")


@pytest.fixture(scope="module")
def model_and_frames():
    cfg = MambaConfig(D=4, E=2, P=2, N=3, M=2, in_channels=2, in_height=4, in_width=4, out_dim=5)
    rng = np.random.default_rng(0)
    frames = rng.normal(size=(6,) + cfg.frame_shape)
    return quantize_model(cfg, init_weights(cfg, rng), frames), frames


def split(path):
    data = path.read_bytes()
    _, version, mlen = HEADER.unpack_from(data)
    manifest = json.loads(data[HEADER.size:HEADER.size + mlen])
    return manifest, data[HEADER.size + mlen:]


def join(path, manifest, blob, magic=MAGIC, version=1):
    text = json.dumps(manifest).encode()
    path.write_bytes(HEADER.pack(magic, version, len(text)) + text + blob)


def test_model_roundtrip_bit_exact(tmp_path, model_and_frames):
    model, frames = model_and_frames
    path = tmp_path / "m.bin"
    save_model(path, model)
    back = load_model(path)
    assert back.config == model.config
    assert back.weights.act_scales == model.weights.act_scales
    assert set(back.weights.quant) == set(model.weights.quant)
    for name, q in model.weights.quant.items():
        assert back.weights.quant[name].equals(q), name
    for name, r in model.weights.real.items():
        assert np.array_equal(back.weights.real[name], r.astype(np.float32)), name
    assert back.silu == model.silu and back.exp == model.exp
    for f in frames:
        assert model_forward_q(f, back).equals(model_forward_q(f, model))


def test_save_is_deterministic(tmp_path, model_and_frames):
    model, _ = model_and_frames
    save_model(tmp_path / "a.bin", model)
    save_model(tmp_path / "b.bin", model)
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


@pytest.mark.parametrize("bits", [2, 8, 17, 32])
def test_tensor_roundtrip_widths(tmp_path, bits):
    lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    q = QTensor(np.array([[lo, hi, 0], [-1, 1, lo + 1]]), bits, -3)
    save_tensor(tmp_path / "t.bin", q)
    assert load_tensor(tmp_path / "t.bin").equals(q)


def test_real_tensor_roundtrip(tmp_path):
    x = np.random.default_rng(1).normal(size=(3, 1, 4, 4)).astype(np.float32)
    save_tensor(tmp_path / "x.bin", x)
    assert np.array_equal(load_tensor(tmp_path / "x.bin"), x)


def test_truncated_file(tmp_path, model_and_frames):
    path = tmp_path / "m.bin"
    save_model(path, model_and_frames[0])
    data = path.read_bytes()
    path.write_bytes(data[:-10])
    with pytest.raises(ParseError, match="truncated"):
        load_model(path)
    path.write_bytes(data[:5])
    with pytest.raises(ParseError):
        load_model(path)


def test_shape_length_mismatch_names_tensor(tmp_path, model_and_frames):
    path = tmp_path / "m.bin"
    save_model(path, model_and_frames[0])
    manifest, blob = split(path)
    entry = next(e for e in manifest["tensors"] if e["name"] == "quant/blocks.1.A")
    entry["shape"] = [entry["shape"][0] + 1, entry["shape"][1]]
    join(path, manifest, blob)
    with pytest.raises(ParseError) as info:
        load_model(path)
    assert info.value.tensor == "quant/blocks.1.A"
    assert "quant/blocks.1.A" in str(info.value)


def test_out_of_range_value_names_tensor(tmp_path):
    path = tmp_path / "t.bin"
    save_tensor(path, QTensor(np.array([100, -100]), 8, 0), name="acts")
    manifest, blob = split(path)
    manifest["tensors"][0]["bits"] = 4  # same byte width, values no longer fit
    join(path, manifest, blob)
    with pytest.raises(ParseError) as info:
        load_tensor(path)
    assert info.value.tensor == "acts"


def test_bad_magic_and_version(tmp_path):
    path = tmp_path / "t.bin"
    save_tensor(path, np.zeros(3))
    manifest, blob = split(path)
    join(path, manifest, blob, magic=b"NOTMAMBA")
    with pytest.raises(ParseError, match="magic"):
        load_tensor(path)
    join(path, manifest, blob, version=9)
    with pytest.raises(ParseError, match="version"):
        load_tensor(path)


def test_wrong_container_kind(tmp_path):
    save_tensor(tmp_path / "t.bin", np.zeros(3))
    with pytest.raises(ParseError):
        load_model(tmp_path / "t.bin")
