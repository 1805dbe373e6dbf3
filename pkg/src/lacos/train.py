"""Run configuration and the Siamese MNR training loop."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .data import make_batches
from .encoder import EncoderConfig, SentenceEncoder, TokenBatch, build_vocab, encode, vocab_index
from .errors import ConfigError, NonFiniteError
from .objective import MnrConfig, mnr_accuracy, mnr_loss
from .optim import Adam, AdamConfig
from .tensor import no_grad


@dataclass
class RunConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    mnr: MnrConfig = field(default_factory=MnrConfig)
    adam: AdamConfig = field(default_factory=AdamConfig)
    batch_size: int = 32
    epochs: int = 1
    seed: int = 0
    dedup: bool = True
    val_fraction: float = 0.1
    val_batch_size: int = 32

    def validate(self):
        self.encoder.validate()
        self.adam.validate()
        if not isinstance(self.batch_size, int) or self.batch_size < 2:
            raise ConfigError("batch_size must be an integer >= 2 (in-batch negatives)")
        if not isinstance(self.epochs, int) or self.epochs < 1:
            raise ConfigError("epochs must be a positive integer")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in [0, 1)")
        if not isinstance(self.val_batch_size, int) or self.val_batch_size < 2:
            raise ConfigError("val_batch_size must be an integer >= 2")
        return self

    def to_dict(self):
        return {"encoder": self.encoder.to_dict(),
                "mnr": {"scale": self.mnr.scale, "reduction": self.mnr.reduction},
                "adam": self.adam.to_dict(),
                "batch_size": self.batch_size, "epochs": self.epochs, "seed": self.seed,
                "dedup": self.dedup, "val_fraction": self.val_fraction,
                "val_batch_size": self.val_batch_size}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        try:
            enc = EncoderConfig.from_dict(d.pop("encoder", {}))
            mnr = MnrConfig(**d.pop("mnr", {}))
            adam = AdamConfig.from_dict(d.pop("adam", {}))
            return cls(encoder=enc, mnr=mnr, adam=adam, **d)
        except TypeError as e:
            raise ConfigError(str(e)) from e

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            try:
                return cls.from_dict(json.load(fh))
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}: {e}") from e


def split_validation(pairs, fraction):
    """Hold out the trailing ``fraction`` of pairs (file order) for validation."""
    n_val = int(math.floor(len(pairs) * fraction))
    if n_val == 0:
        return list(pairs), []
    return list(pairs[:-n_val]), list(pairs[-n_val:])


def batch_tokens(texts, vocab, max_seq_len):
    return TokenBatch.from_texts(texts, vocab, max_seq_len)


def embed_texts(model, vocab, texts, batch_size=64):
    index = vocab_index(vocab) if isinstance(vocab, list) else vocab
    out = []
    with no_grad():
        for i in range(0, len(texts), batch_size):
            tb = batch_tokens(texts[i:i + batch_size], index, model.config.max_seq_len)
            out.append(encode(model, tb).data)
    if not out:
        return np.zeros((0, model.config.d_model), dtype=np.float32)
    return np.concatenate(out, axis=0)


def batch_loss(model, index, batch, mnr_cfg):
    c = model.config
    U = encode(model, batch_tokens(batch.premises, index, c.max_seq_len))
    V = encode(model, batch_tokens(batch.hypotheses, index, c.max_seq_len))
    return mnr_loss(U, V, mnr_cfg), U, V


def mean_batch_loss(model, vocab, batches, mnr_cfg):
    """Average loss over ``batches`` without recording gradients."""
    index = vocab_index(vocab)
    if not batches:
        return float("nan")
    with no_grad():
        losses = [batch_loss(model, index, b, mnr_cfg)[0].item() for b in batches]
    return float(np.mean(losses))


def validation_loss(model, vocab, pairs, cfg):
    """Per-pair MNR loss on held-out pairs, at a fixed batch size so runs compare."""
    batches = make_batches(pairs, cfg.val_batch_size, seed=cfg.seed + 10_007, dedup=cfg.dedup)
    return mean_batch_loss(model, vocab, batches, MnrConfig(cfg.mnr.scale, "mean"))


@dataclass
class TrainResult:
    model: SentenceEncoder
    vocab: list
    optimizer: Adam
    metrics: list
    summary: dict


def train(cfg, pairs, on_step=None):
    """Fine-tune adapters on (premise, hypothesis) pairs.

    ``summary`` reports the epoch-mean loss over the first epoch's batches
    both before any update and after training, plus the validation loss when
    a validation split is configured.
    """
    cfg.validate()
    train_pairs, val_pairs = split_validation(pairs, cfg.val_fraction)
    vocab = build_vocab([t for p in train_pairs for t in p], cfg.encoder.vocab_size)
    index = vocab_index(vocab)
    model = SentenceEncoder.create(cfg.encoder)
    opt = Adam(model.named_parameters(), cfg.adam)

    epoch_batches = [make_batches(train_pairs, cfg.batch_size, seed=cfg.seed + e, dedup=cfg.dedup)
                     for e in range(cfg.epochs)]
    if not epoch_batches[0]:
        raise ConfigError(f"{len(train_pairs)} training pairs make no batch of size {cfg.batch_size}")
    initial = mean_batch_loss(model, vocab, epoch_batches[0], cfg.mnr)

    metrics = []
    step = 0
    for batches in epoch_batches:
        for batch in batches:
            opt.zero_grad()
            loss, U, V = batch_loss(model, index, batch, cfg.mnr)
            value = loss.item()
            if not math.isfinite(value):
                raise NonFiniteError(f"non-finite loss at step {step + 1}")
            loss.backward()
            opt.step()
            step += 1
            row = {"step": step, "loss": value, "acc": mnr_accuracy(U, V)}
            metrics.append(row)
            if on_step is not None:
                on_step(row)

    final = mean_batch_loss(model, vocab, epoch_batches[0], cfg.mnr)
    summary = {"steps": step, "initial_epoch_loss": initial, "final_epoch_loss": final,
               "n_train_pairs": len(train_pairs), "n_val_pairs": len(val_pairs)}
    if val_pairs:
        summary["val_loss"] = validation_loss(model, vocab, val_pairs, cfg)
    return TrainResult(model, vocab, opt, metrics, summary)
