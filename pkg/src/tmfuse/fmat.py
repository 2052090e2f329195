"""FMAT1 binary and CSV storage for ``channels x frames`` matrices.

Binary layout: ``b"FMAT1"``, little-endian ``u32`` channels, ``u32`` frames,
``u8`` dtype code (0 = f64, 1 = f32), then the row-major payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"FMAT1"
_HEADER = struct.Struct("<IIB")
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}


class FormatError(ValueError):
    pass


def as_feature_matrix(x, dtype=np.float64) -> np.ndarray:
    """Validate and copy into a finite, C-ordered 2-D array."""
    arr = np.array(x, dtype=dtype)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise FormatError(f"feature matrix must be 2-D with positive sides, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise FormatError("feature matrix contains non-finite values")
    return arr


def write_fmat(path, x, dtype=np.float64) -> None:
    arr = as_feature_matrix(x, dtype)
    code = 1 if arr.dtype == np.float32 else 0
    payload = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
    Path(path).write_bytes(MAGIC + _HEADER.pack(arr.shape[0], arr.shape[1], code) + payload)


def read_fmat(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:5] != MAGIC:
        raise FormatError(f"{path}: magic is {raw[:5]!r}, expected {MAGIC!r}")
    if len(raw) < 5 + _HEADER.size:
        raise FormatError(f"{path}: header truncated ({len(raw)} bytes)")
    channels, frames, code = _HEADER.unpack_from(raw, 5)
    if code not in _DTYPES:
        raise FormatError(f"{path}: dtype={code} is not 0 (f64) or 1 (f32)")
    dt = _DTYPES[code]
    start = 5 + _HEADER.size
    expected = channels * frames * dt.itemsize
    if len(raw) - start != expected:
        raise FormatError(f"{path}: payload is {len(raw) - start} bytes, channels={channels} frames={frames} "
                          f"needs {expected}")
    data = np.frombuffer(raw, dtype=dt, count=channels * frames, offset=start)
    return data.reshape(channels, frames).astype(dt.newbyteorder("="))


def write_csv(path, x) -> None:
    arr = as_feature_matrix(x)
    np.savetxt(path, arr, delimiter=",", fmt="%.17g")


def read_csv(path) -> np.ndarray:
    try:
        arr = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    return as_feature_matrix(arr)


def read_matrix(path) -> np.ndarray:
    """Dispatch on extension: ``.csv`` is text, anything else FMAT1."""
    return read_csv(path) if str(path).lower().endswith(".csv") else read_fmat(path)
