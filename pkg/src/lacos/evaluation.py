"""Spearman correlation, STS evaluation and sweep-loss standardization."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateError
from .objective import SimilarityKind, paired_similarities

# report key -> similarity function
REPORT_KINDS = {
    "cosine": SimilarityKind.COSINE,
    "manhattan": SimilarityKind.NEG_MANHATTAN,
    "euclidean": SimilarityKind.NEG_EUCLIDEAN,
    "dot": SimilarityKind.DOT,
}


def average_ranks(x):
    """1-based ranks with ties sharing the mean of the positions they span."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], xs.size]
    ranks = np.empty(x.size, dtype=np.float64)
    ranks[order] = np.repeat((starts + ends + 1) / 2.0, ends - starts)
    return ranks


def spearman(x, y):
    """Pearson correlation of the average-rank vectors of ``x`` and ``y``."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.size != y.size:
        raise ValueError(f"spearman: lengths {x.size} and {y.size} differ")
    if x.size < 2:
        raise DegenerateError("spearman needs at least two observations")
    rx = average_ranks(x)
    ry = average_ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    sxx = (rx * rx).sum()
    syy = (ry * ry).sum()
    if sxx == 0 or syy == 0:
        raise DegenerateError("zero rank variance")
    rho = (rx * ry).sum() / np.sqrt(sxx * syy)
    return float(np.clip(rho, -1.0, 1.0))


@dataclass
class EvalReport:
    rho: dict = field(default_factory=dict)
    n_pairs: int = 0
    degenerate: list = field(default_factory=list)

    @property
    def max_rho(self):
        vals = [v for v in self.rho.values() if v is not None]
        return max(vals) if vals else None

    @property
    def is_degenerate(self):
        return self.max_rho is None

    def to_dict(self):
        return {"spearman": {k: self.rho.get(k) for k in REPORT_KINDS},
                "max": self.max_rho, "n": self.n_pairs, "degenerate": list(self.degenerate)}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d):
        rho = {k: d["spearman"].get(k) for k in REPORT_KINDS}
        report = cls(rho, int(d["n"]), list(d["degenerate"]))
        stored = d.get("max")
        if (stored is None) != (report.max_rho is None) or (
                stored is not None and abs(stored - report.max_rho) > 1e-12):
            raise ValueError("report 'max' disagrees with its per-similarity values")
        return report


def score_embeddings(E1, E2, gold):
    """Spearman of each similarity kind against gold scores; constant lists are flagged."""
    report = EvalReport(n_pairs=len(gold))
    for name, kind in REPORT_KINDS.items():
        sims = paired_similarities(E1, E2, kind)
        try:
            report.rho[name] = spearman(sims, gold)
        except DegenerateError:
            report.rho[name] = None
            report.degenerate.append(name)
    return report


def sts_eval(model, records, vocab=None, batch_size=64):
    """Embed both sides of every record and score against the gold labels.

    ``model`` is a ``SentenceEncoder`` (with ``vocab``) or any callable that
    maps a list of sentences to an embedding array.
    """
    if len(records) < 2:
        raise DegenerateError("STS evaluation needs at least two records")
    if callable(model) and not hasattr(model, "config"):
        embed = model
    else:
        from .train import embed_texts

        def embed(texts):
            return embed_texts(model, vocab, texts, batch_size)
    E1 = np.asarray(embed([r.sentence1 for r in records]))
    E2 = np.asarray(embed([r.sentence2 for r in records]))
    return score_embeddings(E1, E2, [r.score for r in records])


def standardize_losses(losses):
    """Min-max scale a group of losses onto [0, 1]."""
    x = np.asarray(losses, dtype=np.float64)
    if x.size < 2:
        raise DegenerateError("need at least two losses to standardize")
    lo, hi = x.min(), x.max()
    if hi == lo:
        raise DegenerateError("all losses are equal")
    return ((x - lo) / (hi - lo)).tolist()
