import numpy as np
import pytest

from lacos import checkpoint as ckpt
from lacos.encoder import EncoderConfig, SentenceEncoder, TokenBatch, encode
from lacos.errors import CheckpointFormatError
from lacos.quant import QuantConfig, QuantizedMatrix, quantize_blockwise

CFG = EncoderConfig(vocab_size=24, d_model=8, n_layers=1, n_heads=2, d_ff=16, max_seq_len=6,
                    lora_rank=2, seed=3)


def trained_like(rng, cfg=CFG):
    model = SentenceEncoder.create(cfg)
    for _, p in model.named_parameters():
        p.data = rng.standard_normal(p.shape).astype(np.float32)
    return model


def batch():
    return TokenBatch.from_sequences([[2, 3, 4], [5, 6]])


def test_adapter_only_round_trip(tmp_path, rng):
    model = trained_like(rng)
    path = tmp_path / "m.lacs"
    ckpt.save_model(path, model, ["<pad>", "<unk>", "a"])
    header, tensors = ckpt.read_checkpoint(path)
    assert header["meta"]["adapter_only"] is True
    assert all(n.endswith((".lora_down", ".lora_up")) for n in header["tensors"])
    loaded, vocab, _, _ = ckpt.load_model(path)
    assert vocab == ["<pad>", "<unk>", "a"]
    assert loaded.frozen_checksum() == model.frozen_checksum()
    assert np.array_equal(encode(loaded, batch()).data, encode(model, batch()).data)


def test_full_round_trip_with_quantized_base(tmp_path, rng):
    cfg = EncoderConfig(**{**CFG.to_dict(), "quantize_base": True, "base_block_size": 16})
    model = trained_like(rng, cfg)
    path = tmp_path / "q.lacs"
    ckpt.save_model(path, model, [], adapter_only=False)
    _, tensors = ckpt.read_checkpoint(path)
    assert any(isinstance(t, QuantizedMatrix) for t in tensors.values())
    loaded, _, _, _ = ckpt.load_model(path)
    assert np.array_equal(encode(loaded, batch()).data, encode(model, batch()).data)


def test_raw_tensors(tmp_path, rng):
    a = rng.standard_normal((3, 5)).astype(np.float32)
    q = quantize_blockwise(rng.standard_normal((4, 4)), QuantConfig(8))
    path = tmp_path / "raw.lacs"
    ckpt.write_checkpoint(path, CFG, ["x"], {"a": a, "q": q}, meta={"k": 1})
    header, tensors = ckpt.read_checkpoint(path)
    assert list(header["tensors"]) == ["a", "q"]
    assert np.array_equal(tensors["a"], a) and tensors["q"] == q
    assert header["meta"] == {"k": 1}


@pytest.mark.parametrize("damage", ["magic", "truncate", "header", "version"])
def test_corruption_detected(tmp_path, rng, damage):
    path = tmp_path / "c.lacs"
    ckpt.save_model(path, trained_like(rng), [])
    buf = bytearray(path.read_bytes())
    if damage == "magic":
        buf[:4] = b"NOPE"
    elif damage == "truncate":
        buf = buf[:len(buf) - 10]
    elif damage == "header":
        buf[14] = 0xFF
    else:
        buf[4] = 9
    path.write_bytes(bytes(buf))
    with pytest.raises(CheckpointFormatError):
        ckpt.load_model(path)
