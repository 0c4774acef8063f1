"""Binary model files.

Layout (little-endian): the 5-byte magic ``ISNN1``; eleven u32 fields
``L, L', N_c, p, n_K, N_t, N_d, M, N_1, N_2, pad_mode`` (pad_mode 0 periodic,
1 zero; N_2 is 0 when L' = 1); f64 ``mu``; f64 ``sigma0``; then every
parameter array in model order, each written as a u32 rank, that many u32
dimensions, and the C-ordered f64 payload.
"""

import struct
from pathlib import Path

import numpy as np

from .model import CnnArch, CnnModel

MAGIC = b"ISNN1"
_HEADER = struct.Struct("<11I2d")
_PAD_CODES = {"periodic": 0, "zero": 1}


class ModelFormatError(ValueError):
    """The file is not a valid model file."""


def to_bytes(model: CnnModel) -> bytes:
    a = model.arch
    if a.n_fc > 2:
        raise ValueError("the model format stores at most two fully connected widths")
    widths = list(a.fc_widths) + [0] * (2 - a.n_fc)
    chunks = [MAGIC, _HEADER.pack(a.n_conv, a.n_fc, a.n_c, a.p, a.n_k, a.n_t, a.n_d, a.M,
                                  widths[0], widths[1], _PAD_CODES[a.pad_mode],
                                  model.mu, model.sigma0)]
    for P in model.params:
        chunks.append(struct.pack(f"<I{P.ndim}I", P.ndim, *P.shape))
        chunks.append(np.ascontiguousarray(P, dtype="<f8").tobytes())
    return b"".join(chunks)


def from_bytes(buf: bytes) -> CnnModel:
    if buf[: len(MAGIC)] != MAGIC:
        raise ModelFormatError("bad magic")
    pos = len(MAGIC)
    try:
        L, Lp, n_c, p, n_k, n_t, n_d, M, n1, n2, pad, mu, sigma0 = _HEADER.unpack_from(buf, pos)
    except struct.error as exc:
        raise ModelFormatError("truncated header") from exc
    pos += _HEADER.size
    if n_k != 2 * p + 1 or Lp not in (1, 2) or pad not in (0, 1):
        raise ModelFormatError("inconsistent header")
    arch = CnnArch(n_t, n_d, M, n_c=n_c, p=p, n_conv=L, fc_widths=(n1, n2)[:Lp],
                   pad_mode="periodic" if pad == 0 else "zero")
    params = []
    try:
        for shape in arch.param_shapes():
            (ndim,) = struct.unpack_from("<I", buf, pos)
            dims = struct.unpack_from(f"<{ndim}I", buf, pos + 4)
            pos += 4 + 4 * ndim
            if tuple(dims) != shape:
                raise ModelFormatError(f"parameter shape {dims} does not match header ({shape})")
            size = int(np.prod(shape))
            if pos + 8 * size > len(buf):
                raise ModelFormatError("truncated parameter payload")
            params.append(np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape).astype(float))
            pos += 8 * size
    except struct.error as exc:
        raise ModelFormatError("truncated parameter header") from exc
    if pos != len(buf):
        raise ModelFormatError("trailing bytes after the last parameter")
    return CnnModel(arch, params, mu, sigma0)


def save_model(model: CnnModel, path) -> None:
    Path(path).write_bytes(to_bytes(model))


def load_model(path) -> CnnModel:
    return from_bytes(Path(path).read_bytes())
