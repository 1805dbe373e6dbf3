"""LACS checkpoint container.

Layout: ``b"LACS"``, u32 version, u32 header length, UTF-8 JSON header, then
the payload. The header carries the encoder config, the vocabulary and a
manifest ``name -> {dtype, shape, offset, length}`` with offsets relative to
the payload start. ``f32`` tensors are little-endian float32 row-major;
``q8`` tensors are stored in the quant module's LQ8 record format.
"""
from __future__ import annotations

import json
import struct

import numpy as np

from . import quant
from .encoder import EncoderConfig, SentenceEncoder
from .errors import CheckpointFormatError, ConfigError
from .quant import QuantizedMatrix
from .tensor import Tensor

MAGIC = b"LACS"
VERSION = 1
_PREFIX = struct.Struct("<4sII")


def _encode_tensor(value):
    if isinstance(value, QuantizedMatrix):
        return "q8", list(value.shape), quant.to_bytes(value)
    arr = value.data if isinstance(value, Tensor) else np.asarray(value)
    if arr.ndim != 2:
        arr = arr.reshape(1, -1)
    return "f32", list(arr.shape), np.ascontiguousarray(arr, dtype="<f4").tobytes()


def write_checkpoint(path, config, vocab, tensors, meta=None):
    """Write ``tensors`` (name -> Tensor / array / QuantizedMatrix) in insertion order."""
    manifest, chunks, offset = {}, [], 0
    for name, value in tensors.items():
        dtype, shape, blob = _encode_tensor(value)
        manifest[name] = {"dtype": dtype, "shape": shape, "offset": offset, "length": len(blob)}
        chunks.append(blob)
        offset += len(blob)
    header = {"config": config.to_dict(), "vocab": list(vocab), "tensors": manifest,
              "meta": meta or {}}
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(hbytes)))
        fh.write(hbytes)
        for blob in chunks:
            fh.write(blob)
    return _PREFIX.size + len(hbytes) + offset


def read_checkpoint(path):
    """Return ``(header, tensors)``; tensors map names to arrays or QuantizedMatrix."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < _PREFIX.size:
        raise CheckpointFormatError(f"{path}: file too short for a checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(buf)
    if magic != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise CheckpointFormatError(f"{path}: unsupported checkpoint version {version}")
    start = _PREFIX.size + hlen
    if start > len(buf):
        raise CheckpointFormatError(f"{path}: header length {hlen} exceeds file size")
    try:
        header = json.loads(buf[_PREFIX.size:start].decode("utf-8"))
        manifest = header["tensors"]
        header["config"], header["vocab"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as e:
        raise CheckpointFormatError(f"{path}: corrupt header ({e})") from e

    payload = memoryview(buf)[start:]
    tensors = {}
    for name, entry in manifest.items():
        try:
            off, length, shape, dtype = entry["offset"], entry["length"], entry["shape"], entry["dtype"]
        except (KeyError, TypeError) as e:
            raise CheckpointFormatError(f"{path}: bad manifest entry for {name}") from e
        if off < 0 or off + length > len(payload):
            raise CheckpointFormatError(f"{path}: tensor {name} lies outside the payload")
        blob = payload[off:off + length]
        if dtype == "f32":
            if length != 4 * shape[0] * shape[1]:
                raise CheckpointFormatError(f"{path}: tensor {name} length does not match its shape")
            tensors[name] = np.frombuffer(blob, dtype="<f4").astype(np.float32).reshape(shape)
        elif dtype == "q8":
            q = quant.from_bytes(blob)
            if list(q.shape) != list(shape):
                raise CheckpointFormatError(f"{path}: tensor {name} shape disagrees with its record")
            tensors[name] = q
        else:
            raise CheckpointFormatError(f"{path}: tensor {name} has unknown dtype {dtype!r}")
    return header, tensors


def model_tensors(model, adapter_only=True):
    out = {}
    for name, w, trainable in model.named_weights():
        if trainable or not adapter_only:
            out[name] = w
    return out


def save_model(path, model, vocab, adapter_only=True, extra=None, meta=None):
    tensors = model_tensors(model, adapter_only)
    tensors.update(extra or {})
    meta = dict(meta or {})
    meta["adapter_only"] = adapter_only
    return write_checkpoint(path, model.config, vocab, tensors, meta)


def load_model(path):
    """Rebuild a model from a checkpoint; missing frozen weights are regenerated from the seed."""
    header, tensors = read_checkpoint(path)
    try:
        config = EncoderConfig.from_dict(header["config"])
        model = SentenceEncoder.create(config)
    except (ConfigError, TypeError) as e:
        raise CheckpointFormatError(f"{path}: invalid config in header ({e})") from e
    for name, value in tensors.items():
        if name.startswith("opt."):
            continue
        try:
            if isinstance(value, QuantizedMatrix):
                model.set_weight(name, value)
            elif name.endswith((".lora_down", ".lora_up")) or (
                    name == "embed.tok" and config.train_embeddings):
                model.set_weight(name, value)
            else:
                model.set_weight(name, Tensor(value, name=name))
        except (KeyError, ValueError) as e:
            raise CheckpointFormatError(f"{path}: tensor {name} does not fit the model ({e})") from e
    return model, header["vocab"], header, tensors
