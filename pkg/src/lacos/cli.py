"""Command-line entry point: synth, train, eval, quantize, sweep, inspect.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure,
5 checkpoint format error.
"""
from __future__ import annotations

import argparse
import copy
import itertools
import json
import logging
import os
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import checkpoint as ckpt
from .data import filter_entailment, load_records, synth_corpus, write_records
from .errors import CheckpointFormatError, ConfigError, DataError, DegenerateError, NonFiniteError
from .evaluation import standardize_losses, sts_eval
from .lora import parameter_counts
from .optim import LR_GRID
from .quant import QuantConfig, QuantizedMatrix, quantize_blockwise, serialized_size
from .train import RunConfig, train

log = logging.getLogger("lacos")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_CHECKPOINT = 0, 2, 3, 4, 5
R_GRID = (1, 2, 4, 8, 16)
BATCH_GRID = (32, 64)

CHECKPOINT_NAME = "model.lacs"


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _load_pairs(path):
    records = load_records(path, kind="nli")
    pairs = filter_entailment(records)
    log.info("loaded %d records, %d entailment pairs from %s", len(records), len(pairs), path)
    return pairs


def _load_config(path):
    cfg = RunConfig.load(path) if path else RunConfig()
    return cfg.validate()


# ---------------------------------------------------------------- synth

def cmd_synth(args):
    out = Path(args.out)
    train_recs, sts = synth_corpus(args.seed, args.train_pairs, args.eval_pairs, args.vocab)
    out.mkdir(parents=True, exist_ok=True)
    write_records(out / "train.jsonl", train_recs)
    write_records(out / "sts.jsonl", sts)
    print(f"wrote {len(train_recs)} training pairs and {len(sts)} STS pairs to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- train

def run_training(cfg, pairs, out):
    """Train one configuration into ``out``; shared by ``train`` and ``sweep``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _write_text(out / "config.json", _dump(cfg.to_dict()))
    metrics_path = out / "metrics.jsonl"
    metrics_path.write_text("", encoding="utf-8")

    def on_step(row):
        with open(metrics_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(row) + "\n")

    result = train(cfg, pairs, on_step=on_step)
    ckpt.save_model(out / CHECKPOINT_NAME, result.model, result.vocab,
                    extra=result.optimizer.state_dict(), meta={"run": cfg.to_dict()})
    _write_text(out / "summary.json", _dump(result.summary))
    return result


def cmd_train(args):
    cfg = _load_config(args.config)
    print(_dump(cfg.to_dict()), end="")
    pairs = _load_pairs(args.data)
    result = run_training(cfg, pairs, args.out)
    s = result.summary
    print(f"steps={s['steps']} initial_epoch_loss={s['initial_epoch_loss']:.6f} "
          f"final_epoch_loss={s['final_epoch_loss']:.6f}")
    return EXIT_OK


# ---------------------------------------------------------------- eval

def cmd_eval(args):
    model, vocab, _, _ = ckpt.load_model(args.model)
    records = load_records(args.data, kind="sts")
    if len(records) < 2:
        raise DataError("STS evaluation needs at least two records", args.data)
    report = sts_eval(model, records, vocab)
    _write_text(args.report, report.to_json())
    rho = " ".join(f"{k}={'nan' if v is None else f'{v:.4f}'}" for k, v in report.rho.items())
    mx = "none" if report.max_rho is None else f"{report.max_rho:.4f}"
    print(f"n={report.n_pairs} max_rho={mx} {rho}")
    return EXIT_OK


# ---------------------------------------------------------------- quantize

def cmd_quantize(args):
    header, tensors = ckpt.read_checkpoint(args.inp)
    if any(isinstance(t, QuantizedMatrix) and not name.startswith("opt.")
           for name, t in tensors.items()):
        log.warning("%s already holds quantized weights; copying unchanged", args.inp)
        if os.path.abspath(args.inp) != os.path.abspath(args.out):
            shutil.copyfile(args.inp, args.out)
        return EXIT_OK
    if args.block_size < 1:
        raise ConfigError("--block-size must be >= 1")
    model, vocab, _, _ = ckpt.load_model(args.inp)
    qcfg = QuantConfig(args.block_size)
    dense_bytes = q_bytes = 0
    for name, w, trainable in list(model.named_weights()):
        if trainable:
            continue
        q = quantize_blockwise(w, qcfg)
        model.set_weight(name, q)
        dense_bytes += 4 * q.size
        q_bytes += serialized_size(q)
    model.config.quantize_base = True
    model.config.base_block_size = args.block_size
    extra = {k: v for k, v in tensors.items() if k.startswith("opt.")}
    meta = dict(header.get("meta", {}))
    meta["quantized_from"] = os.path.basename(args.inp)
    ckpt.save_model(args.out, model, vocab, adapter_only=False, extra=extra, meta=meta)
    ratio = q_bytes / dense_bytes
    if ratio > 1:
        log.warning("block size %d inflates frozen weights (ratio %.4f > 1)", args.block_size, ratio)
    print(f"frozen tensors: f32 {dense_bytes} bytes -> q8 {q_bytes} bytes, ratio {ratio:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------- sweep

def _sweep_one(job):
    index, cfg_dict, data_path, run_dir = job
    cfg = RunConfig.from_dict(cfg_dict).validate()
    pairs = _load_pairs(data_path)
    result = run_training(cfg, pairs, run_dir)
    s = result.summary
    return {"val_loss": s.get("val_loss", s["final_epoch_loss"]),
            "loss_source": "val_loss" if "val_loss" in s else "final_epoch_loss",
            "final_epoch_loss": s["final_epoch_loss"], "steps": s["steps"]}


def _parse_list(text, cast):
    items = [x for x in text.split(",") if x.strip()]
    if not items:
        raise ConfigError("grid lists must not be empty")
    try:
        return [cast(x) for x in items]
    except ValueError as e:
        raise ConfigError(f"bad grid value in {text!r}") from e


def cmd_sweep(args):
    base = _load_config(args.config)
    r_grid = _parse_list(args.r, int)
    b_grid = _parse_list(args.batch, int)
    lr_grid = _parse_list(args.lr, float)
    _load_pairs(args.data)  # fail fast on bad data
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    jobs, runs = [], []
    for index, (r, b, lr) in enumerate(itertools.product(r_grid, b_grid, lr_grid)):
        cfg = copy.deepcopy(base)
        cfg.encoder.lora_rank = r
        cfg.batch_size = b
        cfg.adam.lr = lr
        run = {"index": index, "r": r, "batch_size": b, "lr": lr,
               "dir": f"run_{index:03d}"}
        try:
            cfg.validate()
        except ConfigError as e:
            run.update(status="failed", error=str(e))
            runs.append(run)
            continue
        runs.append(run)
        jobs.append((index, cfg.to_dict(), str(args.data), str(out / run["dir"])))
    print(f"sweep: {len(runs)} grid points")

    workers = max(1, int(os.environ.get("LACOS_THREADS", "1") or 1))
    by_index = {r["index"]: r for r in runs}
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            futures = [(job[0], pool.submit(_sweep_one, job)) for job in jobs]
            outcomes = []
            for index, fut in futures:
                try:
                    outcomes.append((index, fut.result(), None))
                except Exception as e:  # recorded per run; the sweep continues
                    outcomes.append((index, None, e))
    else:
        outcomes = []
        for job in jobs:
            try:
                outcomes.append((job[0], _sweep_one(job), None))
            except Exception as e:  # recorded per run; the sweep continues
                outcomes.append((job[0], None, e))
    for index, res, err in outcomes:
        run = by_index[index]
        if err is not None:
            run.update(status="failed", error=f"{type(err).__name__}: {err}")
        else:
            run.update(status="ok", **res)
        print(f"  run {index:03d} r={run['r']} batch={run['batch_size']} lr={run['lr']:g}: "
              + (f"val_loss={run['val_loss']:.6f}" if err is None else run["error"]))

    ok = [r for r in runs if r["status"] == "ok"]
    report = {"config": base.to_dict(), "grid": {"r": r_grid, "batch": b_grid, "lr": lr_grid},
              "runs": runs, "best": None}
    if ok:
        try:
            std = standardize_losses([r["val_loss"] for r in ok])
        except DegenerateError:
            std = [None] * len(ok)
        for r, s in zip(ok, std):
            r["standardized_loss"] = s
        best = min(ok, key=lambda r: (r["val_loss"], r["index"]))
        report["best"] = {k: best[k] for k in ("index", "r", "batch_size", "lr", "val_loss", "dir")}
    _write_text(out / "sweep_report.json", _dump(report))
    if not ok:
        print("sweep: every run failed", file=sys.stderr)
        return EXIT_NUMERIC
    b = report["best"]
    print(f"best: run {b['index']:03d} r={b['r']} batch={b['batch_size']} lr={b['lr']:g} "
          f"val_loss={b['val_loss']:.6f}")
    return EXIT_OK


# ---------------------------------------------------------------- inspect

def cmd_inspect(args):
    header, tensors = ckpt.read_checkpoint(args.model)
    model, _, _, _ = ckpt.load_model(args.model)
    meta = header.get("meta", {})
    print(f"checkpoint: {args.model}")
    print(f"adapter_only: {bool(meta.get('adapter_only'))}")
    print(f"{'name':40s} {'dtype':5s} {'shape':>12s} {'bytes':>10s}")
    for name, entry in header["tensors"].items():
        shape = "x".join(str(s) for s in entry["shape"])
        print(f"{name:40s} {entry['dtype']:5s} {shape:>12s} {entry['length']:>10d}")
    trainable, total = parameter_counts(model)
    print(f"trainable parameters: {trainable} / {total}")
    print(f"trainable fraction: {trainable / total:.6f}")
    q = [(n, t) for n, t in tensors.items() if isinstance(t, QuantizedMatrix) and not n.startswith("opt.")]
    if q:
        qb = sum(serialized_size(t) for _, t in q)
        fb = sum(4 * t.size for _, t in q)
        blocks = sorted({t.block_size for _, t in q})
        print(f"quantized tensors: {len(q)}, block sizes {blocks}, "
              f"{qb} bytes vs {fb} f32 bytes (ratio {qb / fb:.4f})")
    else:
        print("quantized tensors: 0")
    return EXIT_OK


# ---------------------------------------------------------------- entry

def build_parser():
    p = argparse.ArgumentParser(prog="lacos", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic paraphrase corpus")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--train-pairs", type=int, default=2000)
    s.add_argument("--eval-pairs", type=int, default=400)
    s.add_argument("--vocab", type=int, default=64)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="fine-tune adapters with the MNR objective")
    s.add_argument("--config")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="STS Spearman evaluation")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--report", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("quantize", help="store frozen weights as blockwise 8-bit")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--block-size", type=int, default=64)
    s.set_defaults(func=cmd_quantize)

    s = sub.add_parser("sweep", help="grid search over rank, batch size and learning rate")
    s.add_argument("--r", default=",".join(map(str, R_GRID)))
    s.add_argument("--batch", default=",".join(map(str, BATCH_GRID)))
    s.add_argument("--lr", default=",".join(map(str, LR_GRID)))
    s.add_argument("--config")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("inspect", help="print a checkpoint's manifest and statistics")
    s.add_argument("--model", required=True)
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NonFiniteError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except CheckpointFormatError as e:
        print(f"checkpoint error: {e}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
