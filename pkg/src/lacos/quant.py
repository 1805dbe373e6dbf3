"""Blockwise 8-bit absmax quantization.

A matrix is flattened row-major and cut into blocks of ``block_size``
elements; each block stores one float32 scale (its absolute maximum) and one
8-bit code per element. The last block may be shorter.

The inner loops live in ``lacos._kernels`` (Cython) when it is built, else in
``lacos._kernels_py`` (numpy). Set ``LACOS_FORCE_PYTHON=1`` to force the
fallback. ``BACKEND`` names the one in use.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointFormatError, DomainError, NonFiniteError, ShapeError
from .tensor import Tensor, matmul

if os.environ.get("LACOS_FORCE_PYTHON") == "1":
    from . import _kernels_py as _k
    BACKEND = "python"
else:
    try:
        from . import _kernels as _k
        BACKEND = "cython"
    except ImportError:
        from . import _kernels_py as _k
        BACKEND = "python"

SIGNED = "linear_symmetric"
UNSIGNED = "linear_unsigned"
_CODEBOOK_IDS = {SIGNED: 0, UNSIGNED: 1}
_CODEBOOK_NAMES = {v: k for k, v in _CODEBOOK_IDS.items()}

MAGIC = b"LQ8\0"
VERSION = 1
HEADER_SIZE = 32
_HEADER = struct.Struct("<4sIIIIB11x")
assert _HEADER.size == HEADER_SIZE


@dataclass(frozen=True)
class QuantConfig:
    block_size: int = 64
    codebook: str = SIGNED

    def __post_init__(self):
        if int(self.block_size) < 1:
            raise DomainError(f"block_size must be >= 1, got {self.block_size}")
        if self.codebook not in _CODEBOOK_IDS:
            raise DomainError(f"unknown codebook {self.codebook!r}")


@dataclass(eq=False)
class QuantizedMatrix:
    shape: tuple
    block_size: int
    codes: np.ndarray
    absmax: np.ndarray
    codebook: str = SIGNED

    def __post_init__(self):
        rows, cols = self.shape
        n = rows * cols
        if self.codes.shape != (n,):
            raise ShapeError(f"{self.codes.shape[0]} codes for a {rows}x{cols} matrix")
        nb = -(-n // self.block_size)
        if self.absmax.shape != (nb,):
            raise ShapeError(f"expected {nb} block scales, got {self.absmax.shape[0]}")

    @property
    def n_blocks(self):
        return self.absmax.shape[0]

    @property
    def size(self):
        return self.shape[0] * self.shape[1]

    def __eq__(self, other):
        if not isinstance(other, QuantizedMatrix):
            return NotImplemented
        return (tuple(self.shape) == tuple(other.shape)
                and self.block_size == other.block_size
                and self.codebook == other.codebook
                and np.array_equal(self.codes, other.codes)
                and np.array_equal(self.absmax, other.absmax))


def _as_array(w):
    return w.data if isinstance(w, Tensor) else np.asarray(w)


def quantize_blockwise(w, cfg=None):
    """Quantize a matrix (Tensor or array) into a ``QuantizedMatrix``."""
    cfg = cfg or QuantConfig()
    arr = _as_array(w)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if not np.isfinite(arr).all():
        raise NonFiniteError("cannot quantize non-finite values")
    flat = np.ascontiguousarray(arr, dtype=np.float32).reshape(-1)
    if cfg.codebook == SIGNED:
        codes, absmax = _k.quantize_signed(flat, cfg.block_size)
    else:
        if (flat < 0).any():
            raise DomainError("unsigned codebook requires non-negative input")
        codes, absmax = _k.quantize_unsigned(flat, cfg.block_size)
    return QuantizedMatrix(tuple(arr.shape), int(cfg.block_size), codes, absmax, cfg.codebook)


def dequantize_array(q):
    """Dense float32 array restored from ``q``."""
    if q.codebook == SIGNED:
        flat = _k.dequantize_signed(q.codes, q.absmax, q.block_size)
    else:
        flat = _k.dequantize_unsigned(q.codes, q.absmax, q.block_size)
    return flat.reshape(q.shape)


def dequantize_blockwise(q):
    return Tensor(dequantize_array(q))


def quantized_matmul(x, q):
    """``x @ dequantize(q)`` with the weight restored just in time.

    Uses the same product as ``matmul`` on the restored weight, so the
    result is bitwise equal to composing the two reference operations.
    """
    if x.shape[1] != q.shape[0]:
        raise ShapeError(f"quantized_matmul: inner dimensions differ for {x.shape} @ {tuple(q.shape)}")
    return matmul(x, dequantize_blockwise(q))


def serialized_size(q):
    return HEADER_SIZE + q.size + 4 * q.n_blocks


def to_bytes(q):
    rows, cols = q.shape
    header = _HEADER.pack(MAGIC, VERSION, rows, cols, q.block_size, _CODEBOOK_IDS[q.codebook])
    codes = np.ascontiguousarray(q.codes).view(np.uint8).tobytes()
    return header + codes + np.asarray(q.absmax, dtype="<f4").tobytes()


def from_bytes(buf):
    buf = bytes(buf)
    if len(buf) < HEADER_SIZE:
        raise CheckpointFormatError("q8 record shorter than its header")
    magic, version, rows, cols, block_size, cb = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise CheckpointFormatError(f"bad q8 magic {magic!r}")
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported q8 version {version}")
    if cb not in _CODEBOOK_NAMES or block_size < 1:
        raise CheckpointFormatError("corrupt q8 header")
    n = rows * cols
    nb = -(-n // block_size)
    if len(buf) != HEADER_SIZE + n + 4 * nb:
        raise CheckpointFormatError(f"q8 record has {len(buf)} bytes, expected {HEADER_SIZE + n + 4 * nb}")
    codebook = _CODEBOOK_NAMES[cb]
    dt = np.int8 if codebook == SIGNED else np.uint8
    codes = np.frombuffer(buf, dtype=dt, count=n, offset=HEADER_SIZE).copy()
    absmax = np.frombuffer(buf, dtype="<f4", count=nb, offset=HEADER_SIZE + n).astype(np.float32)
    return QuantizedMatrix((rows, cols), block_size, codes, absmax, codebook)
