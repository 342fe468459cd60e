"""Binary checkpoint format (``.ufck``).

Layout, all integers little-endian::

    b"UFCK"                      magic
    u32 version                  currently 1
    u32 n_widths, u32 * n_widths layer widths
    u32 activation id            0 = relu, 1 = tanh
    repeated until EOF:
        u32 name length, utf-8 name bytes
        u64 rows, u64 cols
        f64 * rows * cols        row-major

Values are written verbatim, so a save/load round trip is bit-exact.
"""

from __future__ import annotations

import io
import os
import struct
from pathlib import Path

import numpy as np

from .errors import ArtifactNotFoundError, InvalidInputError
from .nn import ACTIVATIONS, MlpArchitecture, ParamSet, check_arch

MAGIC = b"UFCK"
VERSION = 1


def dumps(params: ParamSet, arch: MlpArchitecture) -> bytes:
    check_arch(params, arch)
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(struct.pack("<I", len(arch.layer_widths)))
    buf.write(struct.pack(f"<{len(arch.layer_widths)}I", *arch.layer_widths))
    buf.write(struct.pack("<I", ACTIVATIONS.index(arch.activation)))
    for name, tensor in params.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        rows, cols = tensor.shape
        buf.write(struct.pack("<QQ", rows, cols))
        buf.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes())
    return buf.getvalue()


def loads(data: bytes) -> tuple[ParamSet, MlpArchitecture]:
    view = memoryview(data)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise InvalidInputError("truncated checkpoint")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise InvalidInputError("not a UFCK checkpoint (bad magic)")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise InvalidInputError(f"unsupported checkpoint version {version}")
    (n_widths,) = struct.unpack("<I", take(4))
    widths = struct.unpack(f"<{n_widths}I", take(4 * n_widths))
    (act_id,) = struct.unpack("<I", take(4))
    if act_id >= len(ACTIVATIONS):
        raise InvalidInputError(f"unknown activation id {act_id}")
    arch = MlpArchitecture(widths, ACTIVATIONS[act_id])
    params: ParamSet = {}
    while pos < len(view):
        (name_len,) = struct.unpack("<I", take(4))
        name = bytes(take(name_len)).decode("utf-8")
        rows, cols = struct.unpack("<QQ", take(16))
        arr = np.frombuffer(bytes(take(8 * rows * cols)), dtype="<f8").astype(np.float64)
        params[name] = arr.reshape(rows, cols)
    check_arch(params, arch)
    return params, arch


def save(path: str | os.PathLike, params: ParamSet, arch: MlpArchitecture) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(params, arch))
    return path


def load(path: str | os.PathLike) -> tuple[ParamSet, MlpArchitecture]:
    path = Path(path)
    if not path.exists():
        raise ArtifactNotFoundError(f"checkpoint not found: {path}")
    return loads(path.read_bytes())
