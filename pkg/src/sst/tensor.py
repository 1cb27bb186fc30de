"""Dense array helpers and the ``SSTT`` binary tensor format.

Video tensors are plain numpy arrays laid out ``(C, T, H, W)``, row-major.
The file format is::

    magic   b"SSTT"
    version u32 (currently 1)
    dtype   u32 (0 = float32, 1 = float64)
    ndim    u32
    dims    ndim x u32
    payload row-major scalars

All integers and scalars are little-endian.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"SSTT"
VERSION = 1

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class TensorFileError(ValueError):
    """Malformed tensor file. ``code`` names the failure."""

    def __init__(self, code: str, detail: str = ""):
        self.code = code
        super().__init__(f"{code}: {detail}" if detail else code)


def softmax_rows(m) -> np.ndarray:
    """Row-wise softmax of a 2-axis array, stabilized by the row max."""
    m = np.asarray(m, dtype=np.float64)
    if not np.all(np.isfinite(m)):
        raise ValueError("non-finite input")
    if m.ndim == 1:
        m = m[None, :]
    e = np.exp(m - m.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def softmax(v: np.ndarray) -> np.ndarray:
    # 1-d fast path used inside the per-cell kernels; no validation
    e = np.exp(v - v.max())
    return e / e.sum()


def check_video(x: np.ndarray, name: str = "tensor") -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 4 or min(x.shape) < 1:
        raise ValueError(f"{name} must have shape (C, T, H, W) with all axes >= 1, got {x.shape}")
    return x


def flat_cells(x: np.ndarray) -> np.ndarray:
    """``(C, T, H, W)`` -> ``(S, C)`` with cells in (t, y, x) row-major order."""
    c = x.shape[0]
    return np.ascontiguousarray(x.reshape(c, -1).T)


def unflatten_cells(f: np.ndarray, dims: tuple[int, int, int]) -> np.ndarray:
    return np.ascontiguousarray(f.T.reshape((f.shape[1],) + tuple(dims)))


def write_tensor(t) -> bytes:
    a = np.asarray(t)
    if a.dtype not in _CODES:
        a = a.astype(np.float64)
    code = _CODES[a.dtype]
    header = MAGIC + struct.pack("<III", VERSION, code, a.ndim)
    header += struct.pack(f"<{a.ndim}I", *a.shape)
    return header + np.ascontiguousarray(a, dtype=_DTYPES[code]).tobytes()


def read_tensor(b: bytes) -> np.ndarray:
    b = bytes(b)
    if len(b) < 4 or b[:4] != MAGIC:
        raise TensorFileError("bad magic", repr(b[:4]))
    if len(b) < 16:
        raise TensorFileError("truncated header")
    version, code, ndim = struct.unpack_from("<III", b, 4)
    if version != VERSION:
        raise TensorFileError("unsupported version", str(version))
    if code not in _DTYPES:
        raise TensorFileError("unknown dtype", str(code))
    off = 16 + 4 * ndim
    if len(b) < off:
        raise TensorFileError("truncated header")
    dims = struct.unpack_from(f"<{ndim}I", b, 16)
    dtype = _DTYPES[code]
    need = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    have = len(b) - off
    if have < need:
        raise TensorFileError("truncated payload", f"expected {need} bytes, found {have}")
    if have > need:
        raise TensorFileError("trailing data", f"{have - need} extra bytes")
    a = np.frombuffer(b, dtype=dtype, count=need // dtype.itemsize, offset=off)
    return a.reshape(dims).astype(dtype.newbyteorder("="))


def save(path, t) -> None:
    with open(path, "wb") as f:
        f.write(write_tensor(t))


def load(path) -> np.ndarray:
    with open(path, "rb") as f:
        return read_tensor(f.read())
