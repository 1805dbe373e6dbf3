"""Pure-numpy blockwise 8-bit kernels.

Reference implementation and import-time fallback for the compiled
``_kernels`` extension. Both must produce bitwise-identical results, so all
arithmetic stays in float32 and follows the same operation order:
``code = round_half_away(x / absmax * 127)`` and ``x = code / 127 * absmax``.
"""
import numpy as np

_F = np.float32


def _blocks(flat, block_size):
    flat = np.ascontiguousarray(flat, dtype=_F).reshape(-1)
    n = flat.size
    nb = -(-n // block_size)
    padded = np.zeros(nb * block_size, dtype=_F)
    padded[:n] = flat
    return padded.reshape(nb, block_size), n


def _round_half_away(q):
    r = np.trunc(q)
    return r + np.sign(q) * (np.abs(q - r) >= _F(0.5))


def _scale(blocks, absmax, levels):
    safe = np.where(absmax == 0, _F(1), absmax).astype(_F)
    return (blocks / safe[:, None]) * _F(levels)


def quantize_signed(flat, block_size):
    blocks, n = _blocks(flat, block_size)
    absmax = np.abs(blocks).max(axis=1).astype(_F)
    q = _round_half_away(_scale(blocks, absmax, 127))
    codes = np.clip(q, -127, 127).astype(np.int8).reshape(-1)[:n]
    return codes, absmax


def quantize_unsigned(flat, block_size):
    blocks, n = _blocks(flat, block_size)
    absmax = blocks.max(axis=1).astype(_F)
    q = _round_half_away(_scale(blocks, absmax, 255))
    codes = np.clip(q, 0, 255).astype(np.uint8).reshape(-1)[:n]
    return codes, absmax


def _dequantize(codes, absmax, block_size, levels):
    n = codes.size
    scales = np.repeat(np.asarray(absmax, dtype=_F), block_size)[:n]
    return codes.astype(_F) / _F(levels) * scales


def dequantize_signed(codes, absmax, block_size):
    return _dequantize(np.asarray(codes, dtype=np.int8), absmax, block_size, 127)


def dequantize_unsigned(codes, absmax, block_size):
    return _dequantize(np.asarray(codes, dtype=np.uint8), absmax, block_size, 255)
