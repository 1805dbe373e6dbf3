"""Similarity functions and the multiple-negatives-ranking (MNR) loss."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NonFiniteError, ShapeError, ZeroNormError
from .tensor import (Tensor, diagonal, l2_normalize_rows, log_softmax_rows, matmul, scale,
                     sum_all, transpose)


class SimilarityKind(str, enum.Enum):
    COSINE = "cosine"
    DOT = "dot"
    NEG_EUCLIDEAN = "neg_euclidean"
    NEG_MANHATTAN = "neg_manhattan"


def similarity(u, v, kind=SimilarityKind.COSINE):
    """Larger means more similar for every kind (distances are negated)."""
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if u.shape != v.shape:
        raise ShapeError(f"similarity: dimensions {u.shape[0]} and {v.shape[0]} differ")
    kind = SimilarityKind(kind)
    if kind is SimilarityKind.COSINE:
        nu, nv = np.linalg.norm(u), np.linalg.norm(v)
        if nu == 0 or nv == 0:
            raise ZeroNormError("cosine similarity of a zero vector")
        return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))
    if kind is SimilarityKind.DOT:
        return float(u @ v)
    if kind is SimilarityKind.NEG_EUCLIDEAN:
        return -float(np.sqrt(((u - v) ** 2).sum()))
    return -float(np.abs(u - v).sum())


def paired_similarities(U, V, kind):
    """Row-wise similarity of aligned rows of two (n × d) arrays."""
    U = np.asarray(U, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    kind = SimilarityKind(kind)
    if kind is SimilarityKind.COSINE:
        nu = np.linalg.norm(U, axis=1)
        nv = np.linalg.norm(V, axis=1)
        if (nu == 0).any() or (nv == 0).any():
            raise ZeroNormError("cosine similarity of a zero vector")
        return np.clip((U * V).sum(axis=1) / (nu * nv), -1.0, 1.0)
    if kind is SimilarityKind.DOT:
        return (U * V).sum(axis=1)
    if kind is SimilarityKind.NEG_EUCLIDEAN:
        return -np.sqrt(((U - V) ** 2).sum(axis=1))
    return -np.abs(U - V).sum(axis=1)


@dataclass(frozen=True)
class MnrConfig:
    scale: float = 1.0
    reduction: str = "sum"

    def __post_init__(self):
        if not self.scale > 0:
            raise ConfigError(f"MNR scale must be positive, got {self.scale}")
        if self.reduction not in ("sum", "mean"):
            raise ConfigError(f"reduction must be 'sum' or 'mean', got {self.reduction!r}")


def cosine_matrix(U, V):
    """S[i, j] = cos(U_i, V_j) as a differentiable tensor."""
    if U.shape != V.shape:
        raise ShapeError(f"embedding batches {U.shape} and {V.shape} differ")
    return matmul(l2_normalize_rows(U), transpose(l2_normalize_rows(V)))


def mnr_loss(U, V, cfg=None):
    """Σ_i −log softmax_j(scale·cos(U_i, V_j))[i]; the positive sits in the denominator."""
    cfg = cfg or MnrConfig()
    if U.shape[0] < 1:
        raise ShapeError("MNR loss needs at least one pair")
    S = cosine_matrix(U, V)
    if cfg.scale != 1.0:
        S = scale(S, cfg.scale)
    if not np.isfinite(S.data).all():
        raise NonFiniteError("non-finite similarity scores")
    nll = scale(sum_all(diagonal(log_softmax_rows(S))), -1.0)
    if cfg.reduction == "mean":
        nll = scale(nll, 1.0 / U.shape[0])
    return nll


def mnr_accuracy(U, V):
    """Fraction of rows whose most similar candidate is their own positive."""
    Ud = U.data if isinstance(U, Tensor) else np.asarray(U)
    Vd = V.data if isinstance(V, Tensor) else np.asarray(V)
    Un = Ud / np.linalg.norm(Ud, axis=1, keepdims=True)
    Vn = Vd / np.linalg.norm(Vd, axis=1, keepdims=True)
    S = Un @ Vn.T
    # argmax returns the first maximal index: lowest-index tie-break
    return float((S.argmax(axis=1) == np.arange(S.shape[0])).mean())
