"""Adam with optional 8-bit blockwise storage of the moment estimates.

With ``quantize_state`` on, the first moment is kept in the signed codebook
and the second moment in the unsigned one. Each step dequantizes both,
applies the dense Adam update, then requantizes; the parameter update uses
the fresh dense moments.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, NonFiniteError
from .quant import (SIGNED, UNSIGNED, QuantConfig, QuantizedMatrix, dequantize_array,
                    quantize_blockwise, serialized_size)

LR_GRID = (1e-4, 2e-5, 5e-5)


@dataclass
class AdamConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    bias_correction: bool = True
    quantize_state: bool = True
    state_block_size: int = 256
    weight_decay: float = 0.0
    clip_norm: float | None = None

    def validate(self):
        if not self.lr >= 0:
            raise ConfigError(f"lr must be non-negative, got {self.lr}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0 <= b < 1:
                raise ConfigError(f"{name} must lie in [0, 1), got {b}")
        if not self.eps > 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        if int(self.state_block_size) < 1:
            raise ConfigError("state_block_size must be >= 1")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ConfigError("clip_norm must be positive when set")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ConfigError(f"unknown adam config keys {sorted(extra)}")
        return cls(**d)


@dataclass
class MomentState:
    """Per-parameter moments, each dense float arrays or ``QuantizedMatrix``."""
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    block_size: int = 256

    @property
    def quantized(self):
        return any(isinstance(x, QuantizedMatrix) for x in self.m.values())


def quantize_moments(state):
    sb = QuantConfig(state.block_size, SIGNED)
    ub = QuantConfig(state.block_size, UNSIGNED)
    m = {k: x if isinstance(x, QuantizedMatrix) else quantize_blockwise(x, sb) for k, x in state.m.items()}
    v = {k: x if isinstance(x, QuantizedMatrix) else quantize_blockwise(x, ub) for k, x in state.v.items()}
    return MomentState(m, v, state.t, state.block_size)


def dequantize_moments(state):
    def dense(x):
        return dequantize_array(x) if isinstance(x, QuantizedMatrix) else x
    return MomentState({k: dense(x) for k, x in state.m.items()},
                       {k: dense(x) for k, x in state.v.items()}, state.t, state.block_size)


def state_nbytes(state):
    """Bytes used by the moments (q8 records, or 4 bytes per element when dense)."""
    total = 0
    for x in list(state.m.values()) + list(state.v.values()):
        total += serialized_size(x) if isinstance(x, QuantizedMatrix) else 4 * x.size
    return total


class Adam:
    def __init__(self, params, cfg=None):
        self.cfg = (cfg or AdamConfig()).validate()
        self.params = [(n, p) for n, p in params if p.requires_grad]
        self.state = MomentState(block_size=int(self.cfg.state_block_size))
        for name, p in self.params:
            zeros = np.zeros(p.shape, dtype=p.data.dtype)
            self.state.m[name] = zeros
            self.state.v[name] = zeros.copy()
        if self.cfg.quantize_state:
            self.state = quantize_moments(self.state)

    def zero_grad(self):
        for _, p in self.params:
            p.zero_grad()

    def step(self):
        cfg = self.cfg
        grads = {}
        for name, p in self.params:
            g = p.grad
            if not np.isfinite(g).all():
                raise NonFiniteError(f"non-finite gradient for {name}; step rejected")
            if cfg.weight_decay:
                g = g + g.dtype.type(cfg.weight_decay) * p.data
            grads[name] = g
        if cfg.clip_norm is not None:
            norm = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
            if norm > cfg.clip_norm:
                factor = cfg.clip_norm / norm
                grads = {k: g * g.dtype.type(factor) for k, g in grads.items()}

        dense = dequantize_moments(self.state)
        t = self.state.t + 1
        b1, b2 = cfg.beta1, cfg.beta2
        c1 = 1.0 - b1 ** t if cfg.bias_correction else 1.0
        c2 = 1.0 - b2 ** t if cfg.bias_correction else 1.0
        for name, p in self.params:
            g = grads[name]
            dt = p.data.dtype.type
            m = dense.m[name].astype(p.data.dtype)
            v = dense.v[name].astype(p.data.dtype)
            m = dt(b1) * m + dt(1.0 - b1) * g
            v = dt(b2) * v + dt(1.0 - b2) * (g * g)
            m_hat = m / dt(c1)
            v_hat = v / dt(c2)
            p.data = p.data - dt(cfg.lr) * m_hat / (np.sqrt(v_hat) + dt(cfg.eps))
            dense.m[name] = m
            dense.v[name] = v
        dense.t = t
        self.state = quantize_moments(dense) if cfg.quantize_state else dense
        return t

    def state_dict(self):
        out = {}
        for name, _ in self.params:
            out[f"opt.m.{name}"] = self.state.m[name]
            out[f"opt.v.{name}"] = self.state.v[name]
        out["opt.t"] = np.array([[self.state.t]], dtype=np.float32)
        return out

    def load_state_dict(self, tensors):
        self.state.t = int(np.asarray(tensors["opt.t"]).reshape(-1)[0])
        for name, _ in self.params:
            for key, store in (("m", self.state.m), ("v", self.state.v)):
                x = tensors[f"opt.{key}.{name}"]
                if self.cfg.quantize_state and not isinstance(x, QuantizedMatrix):
                    cb = SIGNED if key == "m" else UNSIGNED
                    x = quantize_blockwise(x, QuantConfig(self.state.block_size, cb))
                elif not self.cfg.quantize_state and isinstance(x, QuantizedMatrix):
                    x = dequantize_array(x)
                store[name] = x
