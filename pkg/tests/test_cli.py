import json

import pytest

from lacos.checkpoint import load_model, read_checkpoint
from lacos.cli import main
from lacos.evaluation import EvalReport
from lacos.lora import trainable_fraction
from lacos.quant import QuantizedMatrix

TINY = {
    "encoder": {"vocab_size": 32, "d_model": 8, "n_layers": 1, "n_heads": 2, "d_ff": 16,
                "max_seq_len": 12, "lora_rank": 2, "seed": 0},
    "mnr": {"scale": 20.0},
    "adam": {"lr": 1e-3, "state_block_size": 64},
    "batch_size": 8, "epochs": 1, "seed": 0, "val_fraction": 0.0,
}


def write_config(path, **overrides):
    cfg = json.loads(json.dumps(TINY))
    for k, v in overrides.items():
        if isinstance(v, dict):
            cfg[k].update(v)
        else:
            cfg[k] = v
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    assert main(["synth", "--seed", "1", "--train-pairs", "80", "--eval-pairs", "40",
                 "--vocab", "32", "--out", str(d)]) == 0
    return d


@pytest.fixture(scope="module")
def trained(corpus, tmp_path_factory):
    d = tmp_path_factory.mktemp("trained")
    cfg = write_config(d / "cfg.json")
    assert main(["train", "--config", cfg, "--data", str(corpus / "train.jsonl"),
                 "--out", str(d / "run")]) == 0
    return d / "run"


class TestSynth:
    def test_deterministic(self, tmp_path):
        for name in ("a", "b"):
            assert main(["synth", "--seed", "4", "--train-pairs", "30", "--eval-pairs", "10",
                         "--out", str(tmp_path / name)]) == 0
        for f in ("train.jsonl", "sts.jsonl"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_zero_train_pairs(self, tmp_path):
        assert main(["synth", "--train-pairs", "0", "--eval-pairs", "5", "--out", str(tmp_path)]) == 0
        assert (tmp_path / "train.jsonl").read_text() == ""
        assert len((tmp_path / "sts.jsonl").read_text().splitlines()) == 5


class TestTrain:
    def test_outputs(self, trained):
        for f in ("config.json", "metrics.jsonl", "model.lacs", "summary.json"):
            assert (trained / f).exists()
        rows = [json.loads(x) for x in (trained / "metrics.jsonl").read_text().splitlines()]
        assert [r["step"] for r in rows] == list(range(1, len(rows) + 1))
        assert all(set(r) == {"step", "loss", "acc"} for r in rows)
        header, _ = read_checkpoint(trained / "model.lacs")
        assert header["meta"]["adapter_only"] is True
        assert all(n.endswith((".lora_down", ".lora_up")) or n.startswith("opt.")
                   for n in header["tensors"])

    def test_deterministic(self, corpus, trained, tmp_path):
        cfg = write_config(tmp_path / "cfg.json")
        assert main(["train", "--config", cfg, "--data", str(corpus / "train.jsonl"),
                     "--out", str(tmp_path / "again")]) == 0
        for f in ("metrics.jsonl", "summary.json", "model.lacs"):
            assert (tmp_path / "again" / f).read_bytes() == (trained / f).read_bytes()

    def test_zero_lr_is_noop(self, corpus, tmp_path):
        cfg = write_config(tmp_path / "cfg.json", adam={"lr": 0.0})
        assert main(["train", "--config", cfg, "--data", str(corpus / "train.jsonl"),
                     "--out", str(tmp_path / "run")]) == 0
        s = json.loads((tmp_path / "run" / "summary.json").read_text())
        assert abs(s["final_epoch_loss"] - s["initial_epoch_loss"]) <= 1e-6

    def test_echoes_config(self, corpus, tmp_path, capsys):
        cfg = write_config(tmp_path / "cfg.json")
        main(["train", "--config", cfg, "--data", str(corpus / "train.jsonl"), "--out", str(tmp_path / "r")])
        out = capsys.readouterr().out
        echoed = json.loads(out[:out.rindex("}") + 1])
        assert echoed == json.loads((tmp_path / "r" / "config.json").read_text())

    def test_exit_codes(self, corpus, tmp_path):
        bad_cfg = write_config(tmp_path / "bad.json", batch_size=1)
        assert main(["train", "--config", bad_cfg, "--data", str(corpus / "train.jsonl"),
                     "--out", str(tmp_path / "x")]) == 2
        (tmp_path / "unknown.json").write_text('{"nope": 1}')
        assert main(["train", "--config", str(tmp_path / "unknown.json"),
                     "--data", str(corpus / "train.jsonl"), "--out", str(tmp_path / "x")]) == 2
        bad_data = tmp_path / "bad.jsonl"
        bad_data.write_text('{"premise": "a", "hypothesis": "b", "label": "entails"}\n')
        cfg = write_config(tmp_path / "ok.json")
        assert main(["train", "--config", cfg, "--data", str(bad_data), "--out", str(tmp_path / "x")]) == 3
        assert main(["train", "--config", cfg, "--data", str(tmp_path / "missing.jsonl"),
                     "--out", str(tmp_path / "x")]) == 3


class TestEval:
    def test_report_schema(self, corpus, trained, tmp_path, capsys):
        report = tmp_path / "r.json"
        assert main(["eval", "--model", str(trained / "model.lacs"), "--data", str(corpus / "sts.jsonl"),
                     "--report", str(report)]) == 0
        d = json.loads(report.read_text())
        parsed = EvalReport.from_dict(d)
        assert parsed.n_pairs == 40
        assert parsed.to_dict() == d
        assert "max_rho=" in capsys.readouterr().out

    def test_corrupt_checkpoint(self, corpus, tmp_path):
        bad = tmp_path / "bad.lacs"
        bad.write_bytes(b"XXXX" + bytes(20))
        assert main(["eval", "--model", str(bad), "--data", str(corpus / "sts.jsonl"),
                     "--report", str(tmp_path / "r.json")]) == 5


class TestQuantize:
    def test_quantize_and_noop(self, corpus, trained, tmp_path, capsys, caplog):
        out = tmp_path / "q.lacs"
        assert main(["quantize", "--in", str(trained / "model.lacs"), "--out", str(out),
                     "--block-size", "16"]) == 0
        assert "ratio" in capsys.readouterr().out
        _, tensors = read_checkpoint(out)
        for name, t in tensors.items():
            if name.endswith((".lora_down", ".lora_up")) or name.startswith("opt."):
                assert not isinstance(t, QuantizedMatrix) or name.startswith("opt.")
            else:
                assert isinstance(t, QuantizedMatrix)
        assert main(["eval", "--model", str(out), "--data", str(corpus / "sts.jsonl"),
                     "--report", str(tmp_path / "r.json")]) == 0

        again = tmp_path / "q2.lacs"
        with caplog.at_level("WARNING", logger="lacos"):
            assert main(["quantize", "--in", str(out), "--out", str(again)]) == 0
        assert "already holds quantized" in caplog.text
        assert again.read_bytes() == out.read_bytes()

    def test_block_one_warns(self, trained, tmp_path, capsys, caplog):
        with caplog.at_level("WARNING", logger="lacos"):
            assert main(["quantize", "--in", str(trained / "model.lacs"), "--out",
                         str(tmp_path / "b1.lacs"), "--block-size", "1"]) == 0
        assert "inflates" in caplog.text
        ratio = float(capsys.readouterr().out.rsplit("ratio", 1)[1])
        assert ratio > 1


class TestSweep:
    def test_single_point_matches_train(self, corpus, trained, tmp_path):
        cfg = write_config(tmp_path / "cfg.json", adam={"lr": 0.5})  # overridden by --lr
        assert main(["sweep", "--r", "2", "--batch", "8", "--lr", "0.001", "--config", cfg,
                     "--data", str(corpus / "train.jsonl"), "--out", str(tmp_path / "sw")]) == 0
        run = tmp_path / "sw" / "run_000"
        for f in ("metrics.jsonl", "summary.json"):
            assert (run / f).read_bytes() == (trained / f).read_bytes()
        report = json.loads((tmp_path / "sw" / "sweep_report.json").read_text())
        assert report["best"]["index"] == 0
        assert report["runs"][0]["standardized_loss"] is None  # one point cannot be standardized

    @pytest.mark.filterwarnings("ignore:rank .* is not small")
    def test_default_grid_enumerates_thirty(self, corpus, tmp_path, capsys):
        cfg = write_config(tmp_path / "cfg.json", val_fraction=0.1, encoder={"d_model": 4, "n_heads": 1})
        assert main(["sweep", "--config", cfg, "--data", str(corpus / "train.jsonl"),
                     "--out", str(tmp_path / "sw")]) == 0
        report = json.loads((tmp_path / "sw" / "sweep_report.json").read_text())
        runs = report["runs"]
        assert len(runs) == 30
        assert {(r["r"], r["batch_size"], r["lr"]) for r in runs} == {
            (r, b, lr) for r in (1, 2, 4, 8, 16) for b in (32, 64) for lr in (1e-4, 2e-5, 5e-5)}
        ok = [r for r in runs if r["status"] == "ok"]
        failed = [r for r in runs if r["status"] == "failed"]
        # rank 8 and 16 exceed the tiny model's dimensions: recorded, the sweep continues
        assert failed and all(r["r"] > 4 for r in failed)
        std = [r["standardized_loss"] for r in ok]
        assert min(std) == 0.0 and max(std) == 1.0
        best = min(ok, key=lambda r: r["val_loss"])
        assert report["best"]["index"] == best["index"]

    def test_all_fail_exit(self, corpus, tmp_path):
        cfg = write_config(tmp_path / "cfg.json")
        assert main(["sweep", "--r", "64", "--batch", "8", "--lr", "0.001", "--config", cfg,
                     "--data", str(corpus / "train.jsonl"), "--out", str(tmp_path / "sw")]) == 4

    def test_bad_grid(self, corpus, tmp_path):
        assert main(["sweep", "--r", "x", "--data", str(corpus / "train.jsonl"),
                     "--out", str(tmp_path / "sw")]) == 2


class TestInspect:
    def test_prints_fraction(self, trained, capsys):
        assert main(["inspect", "--model", str(trained / "model.lacs")]) == 0
        out = capsys.readouterr().out
        model, _, _, _ = load_model(trained / "model.lacs")
        assert f"trainable fraction: {trainable_fraction(model):.6f}" in out
        assert "adapter_only: True" in out
        assert ".base " not in out

    def test_corrupt_magic(self, trained, tmp_path):
        bad = tmp_path / "bad.lacs"
        bad.write_bytes(b"JUNK" + (trained / "model.lacs").read_bytes()[4:])
        assert main(["inspect", "--model", str(bad)]) == 5
