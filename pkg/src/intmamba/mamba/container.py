"""Binary model and frame containers.

Layout: ``MAGIC`` (8 bytes), format version (u32 LE), manifest length (u64 LE),
the UTF-8 JSON manifest, then one little-endian blob holding every tensor.
Integer tensors are two's complement packed at ``ceil(bits / 8)`` bytes per
element; real tensors are float32.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..approx import PiecewiseLinearFn
from ..errors import ConfigError, IntMambaError, ParseError
from ..qnum import QTensor
from .config import MambaConfig
from .model import Model
from .weights import MambaWeights

MAGIC = b"INTMAMBA"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIQ")


def _int_width(bits: int) -> int:
    return (bits + 7) // 8


def _pack_int(data: np.ndarray, bits: int) -> bytes:
    width = _int_width(bits)
    raw = np.ascontiguousarray(data, dtype="<i8").view(np.uint8).reshape(-1, 8)
    return raw[:, :width].tobytes()


def _unpack_int(buf: bytes, bits: int, count: int) -> np.ndarray:
    width = _int_width(bits)
    raw = np.frombuffer(buf, dtype=np.uint8).reshape(count, width)
    full = np.zeros((count, 8), dtype=np.uint8)
    full[:, :width] = raw
    if width < 8:
        negative = raw[:, width - 1] >= 0x80 if count else np.zeros(0, dtype=bool)
        full[negative, width:] = 0xFF
    return full.reshape(-1).view("<i8").astype(np.int64)


class _Writer:
    def __init__(self):
        self.entries: list[dict] = []
        self.chunks: list[bytes] = []
        self.offset = 0

    def _push(self, entry: dict, payload: bytes) -> None:
        entry.update(offset=self.offset, length=len(payload))
        self.entries.append(entry)
        self.chunks.append(payload)
        self.offset += len(payload)

    def add_int(self, name: str, q: QTensor) -> None:
        self._push(
            {"name": name, "kind": "int", "shape": list(q.shape), "bits": q.bits,
             "scale_exp": q.scale_exp},
            _pack_int(q.data, q.bits),
        )

    def add_real(self, name: str, value: np.ndarray) -> None:
        arr = np.ascontiguousarray(value, dtype="<f4")
        self._push({"name": name, "kind": "real", "shape": list(arr.shape)}, arr.tobytes())

    def write(self, path, header: dict) -> None:
        manifest = dict(header, format_version=FORMAT_VERSION, tensors=self.entries)
        text = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, len(text)))
            fh.write(text)
            for chunk in self.chunks:
                fh.write(chunk)


def _read(path) -> tuple[dict, dict[str, np.ndarray | QTensor]]:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ParseError(f"{path}: file too short for a container header")
    magic, version, mlen = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ParseError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ParseError(f"{path}: unsupported format version {version}")
    start = _HEADER.size
    if len(data) < start + mlen:
        raise ParseError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(data[start:start + mlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: manifest is not valid JSON ({exc})") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ParseError(f"{path}: manifest format_version disagrees with header")
    blob = data[start + mlen:]
    tensors: dict[str, np.ndarray | QTensor] = {}
    for entry in manifest.get("tensors", []):
        name = entry.get("name", "?")
        try:
            shape = tuple(int(v) for v in entry["shape"])
            offset, length, kind = int(entry["offset"]), int(entry["length"]), entry["kind"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"tensor {name!r}: malformed directory entry ({exc})", name) from exc
        count = int(np.prod(shape, dtype=np.int64))
        if kind == "int":
            bits = int(entry["bits"])
            expected = count * _int_width(bits)
        elif kind == "real":
            expected = count * 4
        else:
            raise ParseError(f"tensor {name!r}: unknown kind {kind!r}", name)
        if length != expected:
            raise ParseError(
                f"tensor {name!r}: shape {list(shape)} needs {expected} bytes, directory says {length}",
                name,
            )
        if offset < 0 or offset + length > len(blob):
            raise ParseError(f"tensor {name!r}: data runs past end of file (truncated?)", name)
        buf = blob[offset:offset + length]
        try:
            if kind == "int":
                values = _unpack_int(buf, bits, count).reshape(shape)
                tensors[name] = QTensor(values, bits, int(entry["scale_exp"]))
            else:
                tensors[name] = np.frombuffer(buf, dtype="<f4").reshape(shape).astype(np.float32)
        except (IntMambaError, ValueError, KeyError) as exc:
            raise ParseError(f"tensor {name!r}: {exc}", name) from exc
    return manifest, tensors


def save_model(path, model: Model) -> None:
    """Write config, real and quantized tensors, scales and approximations."""
    w = _Writer()
    for name in sorted(model.weights.real):
        w.add_real("real/" + name, model.weights.real[name])
    for name in sorted(model.weights.quant):
        w.add_int("quant/" + name, model.weights.quant[name])
    header = {
        "kind": "model",
        "config": model.config.to_dict(),
        "act_scales": dict(sorted(model.weights.act_scales.items())),
        "approximations": {"silu": model.silu.to_dict(), "exp": model.exp.to_dict()},
    }
    w.write(path, header)


def load_model(path) -> Model:
    """Inverse of :func:`save_model`; raises :class:`ParseError` on any defect."""
    manifest, tensors = _read(path)
    if manifest.get("kind") != "model":
        raise ParseError(f"{path}: container does not hold a model")
    try:
        config = MambaConfig.from_dict(manifest["config"])
    except (KeyError, TypeError, ConfigError) as exc:
        raise ParseError(f"{path}: bad config ({exc})") from exc
    real = {k[5:]: v for k, v in tensors.items() if k.startswith("real/")}
    quant = {k[6:]: v for k, v in tensors.items() if k.startswith("quant/")}
    weights = MambaWeights(real=real, quant=quant,
                           act_scales={k: int(v) for k, v in manifest.get("act_scales", {}).items()})
    try:
        weights.validate(config)
    except ConfigError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    approx = manifest.get("approximations", {})
    extra = {k: PiecewiseLinearFn.from_dict(approx[k]) for k in ("silu", "exp") if k in approx}
    return Model(config, weights, **extra)


def save_tensor(path, value, name: str = "data") -> None:
    """Single-tensor container for frames or labels (real array or QTensor)."""
    w = _Writer()
    if isinstance(value, QTensor):
        w.add_int(name, value)
    else:
        w.add_real(name, np.asarray(value))
    w.write(path, {"kind": "tensor"})


def load_tensor(path) -> np.ndarray | QTensor:
    manifest, tensors = _read(path)
    if manifest.get("kind") != "tensor" or len(tensors) != 1:
        raise ParseError(f"{path}: expected a single-tensor container")
    return next(iter(tensors.values()))
