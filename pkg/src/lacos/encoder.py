"""Siamese sentence encoder: a small pre-norm causal transformer with LoRA.

Sentences of a batch are packed as ``n*T`` rows so every linear layer is a
single matrix product; attention is the only op that sees the sequence
structure. Frozen weights are drawn from a generator seeded by the config
seed and the weight's name, so an adapter-only checkpoint plus its config
rebuilds the full model.
"""
from __future__ import annotations

import hashlib
import zlib
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .lora import ATTACH_POINTS, DEFAULT_ATTACH, FrozenLinear, LoraLinear, init_lora
from .quant import QuantConfig, QuantizedMatrix, dequantize_array, quantize_blockwise
from .tensor import (Tensor, add, gather_rows, gelu, layer_norm_rows, masked_attention,
                     segment_mean_rows)

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"


@dataclass
class EncoderConfig:
    vocab_size: int = 128
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256
    max_seq_len: int = 32
    lora_rank: int = 4
    lora_attach_points: tuple = DEFAULT_ATTACH
    lora_scale: float = 1.0
    seed: int = 0
    causal: bool = True
    final_hidden: bool = True
    train_embeddings: bool = False
    embed_std: float = 1.0
    pos_std: float = 0.1
    quantize_base: bool = False
    base_block_size: int = 64

    def __post_init__(self):
        self.lora_attach_points = tuple(self.lora_attach_points)

    def validate(self):
        for name in ("vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "max_seq_len",
                     "lora_rank", "base_block_size"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.vocab_size < 3:
            raise ConfigError("vocab_size must leave room for PAD and UNK")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        unknown = set(self.lora_attach_points) - set(ATTACH_POINTS)
        if unknown:
            raise ConfigError(f"unknown attach points {sorted(unknown)}")
        if "final_hidden" in self.lora_attach_points and not self.final_hidden:
            raise ConfigError("final_hidden adapter requested but final_hidden projection disabled")
        dims = {"attn_q": (self.d_model, self.d_model), "attn_v": (self.d_model, self.d_model),
                "ffn_in": (self.d_model, self.d_ff), "ffn_out": (self.d_ff, self.d_model),
                "final_hidden": (self.d_model, self.d_model)}
        for point in self.lora_attach_points:
            if self.lora_rank > min(dims[point]):
                raise ConfigError(f"lora_rank {self.lora_rank} exceeds min dimension of {point}")
        if self.train_embeddings and self.quantize_base:
            raise ConfigError("trainable embeddings cannot be stored quantized")
        if self.lora_scale <= 0 or self.embed_std <= 0 or self.pos_std < 0:
            raise ConfigError("lora_scale and embed_std must be positive, pos_std non-negative")
        return self

    def to_dict(self):
        d = asdict(self)
        d["lora_attach_points"] = list(self.lora_attach_points)
        return d

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown encoder config keys {sorted(extra)}")
        return cls(**d)


# ---------------------------------------------------------------- vocabulary

def split_words(text):
    return text.lower().split()


def build_vocab(texts, vocab_size):
    """Token list indexed by id: PAD, UNK, then words by frequency then lexical order."""
    counts = Counter(w for t in texts for w in split_words(t))
    ranked = sorted(counts, key=lambda w: (-counts[w], w))
    return [PAD_TOKEN, UNK_TOKEN] + ranked[: max(vocab_size - 2, 0)]


def vocab_index(tokens):
    return {w: i for i, w in enumerate(tokens) if i >= 2}


def tokenize(text, vocab, max_seq_len=None):
    if isinstance(vocab, list):
        vocab = vocab_index(vocab)
    ids = [vocab.get(w, UNK_ID) for w in split_words(text)] or [UNK_ID]
    if max_seq_len is not None:
        ids = ids[:max_seq_len]
    return ids


@dataclass
class TokenBatch:
    ids: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.mask = np.asarray(self.mask, dtype=np.int8)
        if self.ids.ndim != 2 or self.ids.shape != self.mask.shape:
            raise ShapeError(f"ids {self.ids.shape} and mask {self.mask.shape} must be equal 2-D shapes")

    @property
    def n(self):
        return self.ids.shape[0]

    @classmethod
    def from_sequences(cls, seqs, width=None):
        width = width or max((len(s) for s in seqs), default=1)
        ids = np.full((len(seqs), width), PAD_ID, dtype=np.int64)
        mask = np.zeros((len(seqs), width), dtype=np.int8)
        for i, s in enumerate(seqs):
            ids[i, :len(s)] = s
            mask[i, :len(s)] = 1
        return cls(ids, mask)

    @classmethod
    def from_texts(cls, texts, vocab, max_seq_len):
        return cls.from_sequences([tokenize(t, vocab, max_seq_len) for t in texts])


# ---------------------------------------------------------------- model

def _rng(seed, name):
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


@dataclass
class Block:
    q: object
    k: object
    v: object
    o: object
    ffn_in: object
    ffn_out: object


@dataclass
class SentenceEncoder:
    config: EncoderConfig
    tok_emb: object
    pos_emb: object
    blocks: list
    final: object = None
    _layers: dict = field(default_factory=dict, repr=False)

    @classmethod
    def create(cls, config):
        config.validate()
        c = config
        attach = set(c.lora_attach_points)
        qcfg = QuantConfig(c.base_block_size) if c.quantize_base else None

        def frozen(name, shape, std, trainable=False):
            w = _rng(c.seed, name).normal(0.0, std, size=shape).astype(np.float32)
            if trainable:
                return Tensor(w, requires_grad=True, name=name)
            if qcfg is not None:
                return quantize_blockwise(w, qcfg)
            return Tensor(w, name=name)

        def linear(name, d, k, point):
            base = frozen(name + ".base", (d, k), np.sqrt(1.0 / d))
            if point in attach:
                seed = int(_rng(c.seed, name + ".lora").integers(2**31))
                return init_lora(d, k, c.lora_rank, seed, base, point, c.lora_scale)
            return FrozenLinear(base)

        d, f = c.d_model, c.d_ff
        tok = frozen("embed.tok", (c.vocab_size, d), c.embed_std, trainable=c.train_embeddings)
        pos = frozen("embed.pos", (c.max_seq_len, d), c.pos_std)
        blocks = []
        for i in range(c.n_layers):
            p = f"layers.{i}"
            blocks.append(Block(
                q=linear(f"{p}.attn.q", d, d, "attn_q"),
                k=linear(f"{p}.attn.k", d, d, None),
                v=linear(f"{p}.attn.v", d, d, "attn_v"),
                o=linear(f"{p}.attn.o", d, d, None),
                ffn_in=linear(f"{p}.ffn.in", d, f, "ffn_in"),
                ffn_out=linear(f"{p}.ffn.out", f, d, "ffn_out"),
            ))
        final = linear("final", d, d, "final_hidden") if c.final_hidden else None
        return cls(config, tok, pos, blocks, final)

    def __post_init__(self):
        self._layers = {}
        for i, b in enumerate(self.blocks):
            for part, layer in (("attn.q", b.q), ("attn.k", b.k), ("attn.v", b.v),
                                ("attn.o", b.o), ("ffn.in", b.ffn_in), ("ffn.out", b.ffn_out)):
                self._layers[f"layers.{i}.{part}"] = layer
        if self.final is not None:
            self._layers["final"] = self.final

    @property
    def layers(self):
        return self._layers

    def named_weights(self):
        """(name, Tensor-or-QuantizedMatrix, trainable) in a fixed order."""
        yield "embed.tok", self.tok_emb, isinstance(self.tok_emb, Tensor) and self.tok_emb.requires_grad
        yield "embed.pos", self.pos_emb, False
        for name, layer in self._layers.items():
            yield name + ".base", layer.base, False
            if isinstance(layer, LoraLinear):
                yield name + ".lora_down", layer.w_down, True
                yield name + ".lora_up", layer.w_up, True

    def named_parameters(self):
        """Trainable tensors by name."""
        return [(n, w) for n, w, t in self.named_weights() if t]

    def adapters(self):
        return {n: l for n, l in self._layers.items() if isinstance(l, LoraLinear)}

    def get_weight(self, name):
        for n, w, _ in self.named_weights():
            if n == name:
                return w
        raise KeyError(name)

    def set_weight(self, name, value):
        """Replace a weight by name; trainable tensors are updated in place."""
        if name == "embed.tok":
            if isinstance(self.tok_emb, Tensor) and self.tok_emb.requires_grad:
                self._assign(self.tok_emb, value, name)
            else:
                self.tok_emb = value
            return
        if name == "embed.pos":
            self.pos_emb = value
            return
        layer_name, _, part = name.rpartition(".")
        layer = self._layers.get(layer_name)
        if layer is None:
            raise KeyError(name)
        if part == "base":
            if tuple(value.shape) != tuple(layer.shape):
                raise ShapeError(f"{name}: shape {tuple(value.shape)} vs {tuple(layer.shape)}")
            layer.base = value
        elif part == "lora_down" and isinstance(layer, LoraLinear):
            self._assign(layer.w_down, value, name)
        elif part == "lora_up" and isinstance(layer, LoraLinear):
            self._assign(layer.w_up, value, name)
        else:
            raise KeyError(name)

    @staticmethod
    def _assign(target, value, name):
        arr = value.data if isinstance(value, Tensor) else np.asarray(value)
        if arr.shape != target.shape:
            raise ShapeError(f"{name}: shape {arr.shape} vs {target.shape}")
        target.data = arr.astype(target.data.dtype)

    def zero_grad(self):
        for _, p in self.named_parameters():
            p.zero_grad()

    def frozen_checksum(self):
        h = hashlib.sha256()
        for name, w, trainable in self.named_weights():
            if trainable:
                continue
            h.update(name.encode())
            if isinstance(w, QuantizedMatrix):
                h.update(w.codes.tobytes())
                h.update(w.absmax.tobytes())
            else:
                h.update(np.ascontiguousarray(w.data).tobytes())
        return h.hexdigest()

    def is_quantized(self):
        return any(isinstance(w, QuantizedMatrix) for _, w, _ in self.named_weights())


def _table(w):
    return Tensor(dequantize_array(w)) if isinstance(w, QuantizedMatrix) else w


def encode(model, batch):
    """Mean-pooled sentence embeddings, one row per sentence (n × d_model)."""
    c = model.config
    n, T = batch.ids.shape
    if T > c.max_seq_len:
        raise ShapeError(f"sequence width {T} exceeds max_seq_len {c.max_seq_len}")
    if batch.ids.size and (batch.ids.min() < 0 or batch.ids.max() >= c.vocab_size):
        raise ShapeError("token id outside the vocabulary")
    positions = np.tile(np.arange(T), n)
    x = add(gather_rows(_table(model.tok_emb), batch.ids.reshape(-1)),
            gather_rows(_table(model.pos_emb), positions))
    for b in model.blocks:
        a = layer_norm_rows(x)
        att = masked_attention(b.q(a), b.k(a), b.v(a), batch.mask, c.n_heads, causal=c.causal)
        x = add(x, b.o(att))
        h = gelu(b.ffn_in(layer_norm_rows(x)))
        x = add(x, b.ffn_out(h))
    x = layer_norm_rows(x)
    if model.final is not None:
        x = model.final(x)
    return segment_mean_rows(x, batch.mask)


def siamese_encode_pair(model, premises, hypotheses):
    """Encode both sides with the same (tied) weights."""
    if premises.n != hypotheses.n:
        raise ShapeError(f"{premises.n} premises vs {hypotheses.n} hypotheses")
    return encode(model, premises), encode(model, hypotheses)
