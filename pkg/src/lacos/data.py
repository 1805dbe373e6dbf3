"""NLI / STS records, entailment filtering, mini-batching and a synthetic corpus."""
from __future__ import annotations

import csv
import io
import json
from collections import Counter, deque
from dataclasses import dataclass

import numpy as np

from .errors import DataError

LABELS = ("entailment", "neutral", "contradiction")


@dataclass(frozen=True)
class NliRecord:
    premise: str
    hypothesis: str
    label: str

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"label {self.label!r} not in {LABELS}")
        if not self.premise.strip() or not self.hypothesis.strip():
            raise ValueError("premise and hypothesis must be non-empty")


@dataclass(frozen=True)
class StsRecord:
    sentence1: str
    sentence2: str
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 5.0:
            raise ValueError(f"score {self.score} outside [0, 5]")


@dataclass
class MiniBatch:
    premises: list
    hypotheses: list
    ids: list

    def __len__(self):
        return len(self.premises)


_FIELDS = {"nli": ("premise", "hypothesis", "label"), "sts": ("sentence1", "sentence2", "score")}


def _build(kind, values):
    if kind == "nli":
        premise, hypothesis, label = values
        if not all(isinstance(x, str) for x in values):
            raise ValueError("nli fields must be strings")
        return NliRecord(premise, hypothesis, label)
    s1, s2, score = values
    if not isinstance(s1, str) or not isinstance(s2, str):
        raise ValueError("sentence fields must be strings")
    if isinstance(score, bool):
        raise ValueError("score must be a number")
    return StsRecord(s1, s2, float(score))


def load_records(path, format=None, kind="nli"):
    """Parse a JSONL or TSV file; any malformed row aborts with its line number."""
    path = str(path)
    if kind not in _FIELDS:
        raise ValueError(f"kind must be 'nli' or 'sts', got {kind!r}")
    if format is None:
        format = "tsv" if path.endswith(".tsv") else "jsonl"
    fields = _FIELDS[kind]
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as e:
        raise DataError(str(e), path) from e
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise DataError(f"not valid UTF-8 ({e.reason} at byte {e.start})", path) from e

    records = []
    for lineno, line in enumerate(io.StringIO(text), start=1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        try:
            if format == "jsonl":
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise ValueError("row is not a JSON object")
                missing = [f for f in fields if f not in obj]
                if missing:
                    raise ValueError(f"missing field(s) {missing}")
                values = [obj[f] for f in fields]
            elif format == "tsv":
                values = next(csv.reader([line], delimiter="\t", quoting=csv.QUOTE_NONE))
                if len(values) != 3:
                    raise ValueError(f"expected 3 tab-separated columns, got {len(values)}")
            else:
                raise DataError(f"unknown format {format!r}", path)
            records.append(_build(kind, values))
        except DataError:
            raise
        except (ValueError, TypeError) as e:
            raise DataError(str(e), path, lineno) from e
    return records


def write_records(path, records):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            if isinstance(r, NliRecord):
                obj = {"premise": r.premise, "hypothesis": r.hypothesis, "label": r.label}
            else:
                obj = {"sentence1": r.sentence1, "sentence2": r.sentence2, "score": r.score}
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def filter_entailment(records):
    return [(r.premise, r.hypothesis) for r in records if r.label == "entailment"]


def make_batches(pairs, n, seed=0, dedup=True):
    """Shuffle and cut pairs into batches of ``n``; a trailing batch smaller than 2 is dropped.

    With ``dedup`` a pair whose premise is already in the batch being filled
    is deferred to a later batch, so identical premises never act as each
    other's negatives. Any batch of fewer than two pairs has no negatives and
    is dropped.
    """
    if n < 1:
        raise ValueError("batch size must be >= 1")
    order = np.random.default_rng(seed).permutation(len(pairs))
    queue = deque(int(i) for i in order)
    batches = []
    while queue:
        cur, seen, deferred = [], set(), []
        while queue and len(cur) < n:
            i = queue.popleft()
            premise = pairs[i][0]
            if dedup and premise in seen:
                deferred.append(i)
                continue
            cur.append(i)
            seen.add(premise)
        queue.extendleft(reversed(deferred))
        if len(cur) >= 2:
            batches.append(MiniBatch([pairs[i][0] for i in cur], [pairs[i][1] for i in cur], cur))
    return batches


# ---------------------------------------------------------------- synthetic corpus

def multiset_jaccard(a, b):
    ca, cb = Counter(a), Counter(b)
    union = sum((ca | cb).values())
    if union == 0:
        return 1.0
    return sum((ca & cb).values()) / union


def _words(vocab_size):
    return [f"w{i}" for i in range(vocab_size)]


def _paraphrase(tokens, rng, drop_p=0.1, swap_p=0.2):
    kept = [t for t in tokens if rng.random() >= drop_p] or [tokens[int(rng.integers(len(tokens)))]]
    for i in range(len(kept) - 1):
        if rng.random() < swap_p:
            kept[i], kept[i + 1] = kept[i + 1], kept[i]
    return kept


def synth_corpus(seed, n_train_pairs, n_eval_pairs, vocab_size):
    """Random-token paraphrase pairs for training plus a graded STS set.

    Training premises are uniform token sequences of length 5..12; the
    hypothesis drops each token with p=0.1 and then swaps adjacent tokens
    with p=0.2. Eval pairs replace a random fraction of the first sentence's
    tokens and are scored 5 × multiset-Jaccard. Train and eval use
    independent generator streams.
    """
    if vocab_size < 16:
        raise ValueError("vocab_size must be >= 16")
    words = _words(vocab_size)
    train_rng, eval_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))

    def sentence(rng):
        length = int(rng.integers(5, 13))
        return [words[int(i)] for i in rng.integers(0, vocab_size, size=length)]

    train = []
    for _ in range(n_train_pairs):
        p = sentence(train_rng)
        train.append(NliRecord(" ".join(p), " ".join(_paraphrase(p, train_rng)), "entailment"))

    evals = []
    for _ in range(n_eval_pairs):
        s1 = sentence(eval_rng)
        keep = float(eval_rng.random())
        s2 = [t if eval_rng.random() < keep else words[int(eval_rng.integers(vocab_size))] for t in s1]
        s2 = _paraphrase(s2, eval_rng)
        evals.append(StsRecord(" ".join(s1), " ".join(s2), 5.0 * multiset_jaccard(s1, s2)))
    return train, evals
