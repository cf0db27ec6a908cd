"""The model container.

Little-endian layout: magic ``OSM1``, a u16 version, a u32-length JSON block
(model config, seed, optimizer step count, training history) and a tensor
table. Each table entry is a u16-length name, a dtype code, the rank, the
dimensions as u32 and the raw payload. The table holds every parameter, the
running batchnorm statistics and the optimizer moments, in a fixed order,
so saving a loaded model reproduces the file byte for byte.
"""

import json
import struct

import numpy as np

from ..tensor import DTYPE
from .config import McnConfig
from .network import MCN
from .training import TrainingHistory

MAGIC = b"OSM1"
VERSION = 1
_DTYPES = {0: np.dtype("<f4")}
_CODES = {v: k for k, v in _DTYPES.items()}


class ModelFormatError(ValueError):
    """A model file that is truncated, from another format or version, or inconsistent."""


def _tensor_table(model):
    p = model.params
    table = [(name, t.data) for name, t in p]
    for k, state in enumerate(model.bn_states):
        table.append((f"bn/{k}/mean", state.running_mean))
        table.append((f"bn/{k}/var", state.running_var))
    for name in p.names():
        if name in p.first_moment:
            table.append((f"adam/m/{name}", p.first_moment[name]))
            table.append((f"adam/v/{name}", p.second_moment[name]))
    return table


def model_bytes(model):
    history = getattr(model, "history", None)
    header = {
        "config": model.config.to_dict(),
        "seed": model.seed,
        "step_count": model.params.step_count,
        "history": history.to_dict() if history is not None else None,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<HI", VERSION, len(blob)), blob]
    table = _tensor_table(model)
    parts.append(struct.pack("<I", len(table)))
    for name, arr in table:
        arr = np.ascontiguousarray(arr, dtype=_DTYPES[0])
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def save_model(model, path):
    data = model_bytes(model)
    with open(path, "wb") as fh:
        fh.write(data)
    return path


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise ModelFormatError(f"model file truncated while reading {what} "
                                   f"(needed {n} bytes at offset {self.pos}, file has {len(self.data)})")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size, what))


def model_from_bytes(data):
    r = _Reader(memoryview(data).tobytes() if not isinstance(data, bytes) else data)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise ModelFormatError(f"not a model file: magic {magic!r}, expected {MAGIC!r}")
    version, n = r.unpack("<HI", "header")
    if version != VERSION:
        raise ModelFormatError(f"unsupported model file version {version} (this build reads {VERSION})")
    try:
        header = json.loads(r.take(n, "config block"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"corrupt config block: {exc}") from None
    model = MCN(McnConfig.from_dict(header["config"]), header["seed"])
    hist = header.get("history")
    model.history = TrainingHistory.from_dict(hist) if hist is not None else None

    (count,) = r.unpack("<I", "tensor count")
    tensors = {}
    for _ in range(count):
        (ln,) = r.unpack("<H", "tensor name length")
        name = r.take(ln, "tensor name").decode()
        code, ndim = r.unpack("<BB", f"tensor {name} header")
        if code not in _DTYPES:
            raise ModelFormatError(f"tensor {name}: unknown dtype code {code}")
        shape = r.unpack(f"<{ndim}I", f"tensor {name} shape")
        nbytes = int(np.prod(shape, dtype=np.int64)) * _DTYPES[code].itemsize
        tensors[name] = np.frombuffer(r.take(nbytes, f"tensor {name}"), _DTYPES[code]).reshape(shape)
    if r.pos != len(r.data):
        raise ModelFormatError(f"{len(r.data) - r.pos} trailing bytes after the tensor table")

    p = model.params
    for name, t in p:
        if name not in tensors:
            raise ModelFormatError(f"model file lacks parameter {name}")
        if tensors[name].shape != t.shape:
            raise ModelFormatError(f"parameter {name}: stored shape {tensors[name].shape} does not match {t.shape}")
        t.data[...] = tensors[name]
    for k, state in enumerate(model.bn_states):
        try:
            state.running_mean[:] = tensors[f"bn/{k}/mean"]
            state.running_var[:] = tensors[f"bn/{k}/var"]
        except KeyError as exc:
            raise ModelFormatError(f"model file lacks batchnorm statistic {exc.args[0]}") from None
    for name in p.names():
        if f"adam/m/{name}" in tensors:
            p.first_moment[name] = tensors[f"adam/m/{name}"].astype(DTYPE)
            p.second_moment[name] = tensors[f"adam/v/{name}"].astype(DTYPE)
    p.step_count = int(header.get("step_count", 0))
    return model


def load_model(path):
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
