"""Low-rank adapters on frozen (optionally 8-bit) linear weights.

A layer computes ``x @ W + (x @ W_down) @ W_up`` where ``W`` (d×k) is frozen
and only the thin factors ``W_down`` (d×r) and ``W_up`` (r×k) are trained.
"""
from __future__ import annotations

import warnings

import numpy as np

from .errors import ConfigError, ShapeError
from .quant import QuantizedMatrix, dequantize_array, quantized_matmul
from .tensor import Tensor, add, matmul, scale

ATTACH_POINTS = ("ffn_in", "ffn_out", "final_hidden", "attn_q", "attn_v")
DEFAULT_ATTACH = ("ffn_in", "ffn_out", "final_hidden")


def base_shape(base):
    return tuple(base.shape)


def base_forward(x, base):
    if isinstance(base, QuantizedMatrix):
        return quantized_matmul(x, base)
    return matmul(x, base)


def base_dense(base):
    if isinstance(base, QuantizedMatrix):
        return dequantize_array(base)
    return base.data


class FrozenLinear:
    """A linear map with a frozen weight and no adapter."""

    def __init__(self, base):
        if isinstance(base, Tensor):
            base.requires_grad = False
        self.base = base

    @property
    def shape(self):
        return base_shape(self.base)

    def __call__(self, x):
        return base_forward(x, self.base)

    def trainable(self):
        return []


class LoraLinear:
    def __init__(self, base, w_down, w_up, attach_point="ffn_in", scale=1.0):
        d, k = base_shape(base)
        r = w_down.shape[1]
        if w_down.shape != (d, r) or w_up.shape != (r, k):
            raise ShapeError(f"adapter factors {w_down.shape}, {w_up.shape} do not fit base {(d, k)}")
        if attach_point not in ATTACH_POINTS:
            raise ConfigError(f"unknown attach point {attach_point!r}")
        if isinstance(base, Tensor):
            base.requires_grad = False
        w_down.requires_grad = True
        w_up.requires_grad = True
        self.base = base
        self.w_down = w_down
        self.w_up = w_up
        self.attach_point = attach_point
        self.scale = float(scale)

    @property
    def rank(self):
        return self.w_down.shape[1]

    @property
    def shape(self):
        return base_shape(self.base)

    def __call__(self, x):
        return lora_forward(x, self)

    def trainable(self):
        return [self.w_down, self.w_up]


def init_lora(d, k, r, seed, base, attach_point="ffn_in", scale=1.0):
    """Adapter with ``W_down ~ N(0, 1/r)`` and ``W_up = 0`` (a no-op at init)."""
    if base_shape(base) != (d, k):
        raise ShapeError(f"base shape {base_shape(base)} does not match ({d}, {k})")
    if not 1 <= r <= min(d, k):
        raise ConfigError(f"rank {r} outside [1, {min(d, k)}] for a {d}x{k} weight")
    if r > min(d, k) / 4:
        warnings.warn(f"rank {r} is not small relative to min({d}, {k})", stacklevel=2)
    rng = np.random.default_rng(seed)
    w_down = Tensor(rng.normal(0.0, np.sqrt(1.0 / r), size=(d, r)), requires_grad=True)
    w_up = Tensor(np.zeros((r, k)), requires_grad=True)
    return LoraLinear(base, w_down, w_up, attach_point, scale)


def lora_forward(x, layer):
    if x.shape[1] != layer.shape[0]:
        raise ShapeError(f"input {x.shape} does not fit layer of shape {layer.shape}")
    delta = matmul(matmul(x, layer.w_down), layer.w_up)
    if layer.scale != 1.0:
        delta = scale(delta, layer.scale)
    return add(base_forward(x, layer.base), delta)


def merge_adapters(layer):
    """Dense weight ``W + scale * W_down @ W_up`` equivalent to the adapted layer."""
    dense = base_dense(layer.base).astype(layer.w_down.data.dtype)
    delta = layer.w_down.data @ layer.w_up.data
    if layer.scale != 1.0:
        delta = delta * delta.dtype.type(layer.scale)
    return Tensor(dense + delta)


def _numel(w):
    return int(w.shape[0]) * int(w.shape[1])


def parameter_counts(model):
    """(trainable, total) scalar counts over ``model.named_weights()``."""
    trainable = total = 0
    for _, w, is_trainable in model.named_weights():
        n = _numel(w)
        total += n
        if is_trainable:
            trainable += n
    return trainable, total


def trainable_fraction(model):
    trainable, total = parameter_counts(model)
    return trainable / total if total else 0.0
