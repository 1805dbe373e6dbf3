"""Dense 2-D tensors with reverse-mode automatic differentiation.

Every value is a ``(rows, cols)`` numpy array. Operations record their
parents and a closure that maps the output gradient to parent gradients;
``backward`` walks the recorded graph once in reverse topological order.

Compute runs in float32. ``float64_mode()`` switches newly created tensors
to float64, which the gradient-check tests use to keep finite-difference
noise well below their tolerances.
"""
from __future__ import annotations

import contextlib
import math
import threading

import numpy as np

from .errors import DegenerateMaskError, NonFiniteError, RankError, ShapeError, ZeroNormError

_state = threading.local()


def get_dtype():
    return getattr(_state, "dtype", np.float32)


def _grad_enabled():
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def float64_mode():
    """Create tensors as float64 inside the block (verification only)."""
    prev = get_dtype()
    _state.dtype = np.float64
    try:
        yield
    finally:
        _state.dtype = prev


@contextlib.contextmanager
def no_grad():
    """Skip graph recording; results never require grad."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, *, name=None, allow_nonfinite=False,
                 _parents=(), _backward=None):
        arr = np.asarray(data, dtype=get_dtype())
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got array of shape {arr.shape}")
        if not allow_nonfinite and not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite values in tensor {name or ''}".rstrip())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._grad = None
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def grad(self):
        """Accumulated gradient; zeros for a trainable tensor never reached."""
        if self._grad is None and self.requires_grad:
            return np.zeros_like(self.data)
        return self._grad

    def zero_grad(self):
        self._grad = None

    @property
    def is_leaf(self):
        return not self._parents

    def numpy(self):
        return self.data.copy()

    def item(self):
        if self.data.size != 1:
            raise RankError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data[0, 0])

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def backward(self):
        backward(self)

    # operator sugar
    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    @property
    def T(self):
        return transpose(self)


def _make(data, parents, backward_fn, **kw):
    parents = tuple(parents)
    track = _grad_enabled() and any(p.requires_grad for p in parents)
    if track:
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn, **kw)
    return Tensor(data, **kw)


def _check_same(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------- arithmetic

def matmul(a, b):
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ for {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def bw(g):
        return (g @ b.data.T if a.requires_grad else None,
                a.data.T @ g if b.requires_grad else None)

    return _make(out, (a, b), bw)


def elementwise(a, b, kind):
    _check_same(a, b, kind)
    if kind == "add":
        return _make(a.data + b.data, (a, b), lambda g: (g, g))
    if kind == "sub":
        return _make(a.data - b.data, (a, b), lambda g: (g, -g))
    if kind == "mul":
        return _make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))
    raise ValueError(f"unknown elementwise kind {kind!r}")


def add(a, b):
    return elementwise(a, b, "add")


def sub(a, b):
    return elementwise(a, b, "sub")


def mul(a, b):
    return elementwise(a, b, "mul")


def add_row(a, bias):
    """a + bias where bias is a 1×cols row broadcast over every row of a."""
    if bias.shape != (1, a.shape[1]):
        raise ShapeError(f"add_row: bias shape {bias.shape} does not match row of {a.shape}")
    return _make(a.data + bias.data, (a, bias),
                 lambda g: (g, g.sum(axis=0, keepdims=True)))


def scale(a, c):
    c = float(c)
    return _make(a.data * a.data.dtype.type(c), (a,), lambda g: (g * g.dtype.type(c),))


def transpose(a):
    return _make(np.ascontiguousarray(a.data.T), (a,), lambda g: (g.T,))


def sum_all(a):
    return _make(a.data.sum(keepdims=True).reshape(1, 1), (a,),
                 lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean_all(a):
    return scale(sum_all(a), 1.0 / a.data.size)


def exp(a):
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    if (a.data <= 0).any():
        raise NonFiniteError("log of non-positive value")
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a):
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1 - out * out),))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a):
    """tanh-approximate GELU."""
    x = a.data
    c = x.dtype.type(_GELU_C)
    k = x.dtype.type(0.044715)
    inner = c * (x + k * x ** 3)
    t = np.tanh(inner)
    out = 0.5 * x * (1 + t)

    def bw(g):
        dinner = c * (1 + 3 * k * x * x)
        return (g * (0.5 * (1 + t) + 0.5 * x * (1 - t * t) * dinner),)

    return _make(out, (a,), bw)


# ---------------------------------------------------------------- row-wise ops

def softmax_rows(a):
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return _make(out, (a,), bw)


def log_softmax_rows(a):
    z = a.data - a.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = z - lse

    def bw(g):
        p = np.exp(out)
        return (g - p * g.sum(axis=1, keepdims=True),)

    return _make(out, (a,), bw)


def masked_mean_rows(h, mask):
    """Mean of the rows of ``h`` whose mask entry is 1, as a 1×d tensor."""
    m = np.asarray(mask).reshape(-1)
    if m.shape[0] != h.shape[0]:
        raise ShapeError(f"masked_mean_rows: mask length {m.shape[0]} vs {h.shape[0]} rows")
    sel = m != 0
    count = int(sel.sum())
    if count == 0:
        raise DegenerateMaskError("mask selects no rows")
    out = h.data[sel].sum(axis=0, keepdims=True) / h.data.dtype.type(count)

    def bw(g):
        gh = np.zeros_like(h.data)
        gh[sel] = g / g.dtype.type(count)
        return (gh,)

    return _make(out, (h,), bw)


def segment_mean_rows(h, mask):
    """Masked mean over consecutive row segments.

    ``h`` holds ``n`` sequences of ``T`` rows stacked (``n*T`` rows) and
    ``mask`` is ``n×T``; the result is ``n×d``, row ``i`` being
    ``masked_mean_rows`` of segment ``i``.
    """
    mask = np.asarray(mask)
    n, T = mask.shape
    if h.shape[0] != n * T:
        raise ShapeError(f"segment_mean_rows: {h.shape[0]} rows for a {n}x{T} mask")
    counts = (mask != 0).sum(axis=1)
    if (counts == 0).any():
        raise DegenerateMaskError(f"sequence {int(np.argmin(counts))} has an all-zero mask")
    w = ((mask != 0) / counts[:, None]).astype(h.data.dtype)
    d = h.shape[1]
    h3 = h.data.reshape(n, T, d)
    out = np.einsum("nt,ntd->nd", w, h3)

    def bw(g):
        return ((w[:, :, None] * g[:, None, :]).reshape(n * T, d),)

    return _make(out, (h,), bw)


def layer_norm_rows(a, eps=1e-5):
    """Normalize each row to zero mean and unit variance (no affine part)."""
    x = a.data
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
    out = xc * inv

    def bw(g):
        gm = g.mean(axis=1, keepdims=True)
        gxm = (g * out).mean(axis=1, keepdims=True)
        return (inv * (g - gm - out * gxm),)

    return _make(out, (a,), bw)


def l2_normalize_rows(a):
    norms = np.sqrt((a.data * a.data).sum(axis=1, keepdims=True))
    if (norms == 0).any():
        raise ZeroNormError(f"row {int(np.argmin(norms[:, 0]))} has zero norm")
    out = a.data / norms

    def bw(g):
        return ((g - out * (g * out).sum(axis=1, keepdims=True)) / norms,)

    return _make(out, (a,), bw)


def diagonal(a):
    """Main diagonal of a square matrix as an n×1 column."""
    n = a.shape[0]
    if a.shape[1] != n:
        raise ShapeError(f"diagonal: expected a square matrix, got {a.shape}")
    out = np.diagonal(a.data).reshape(n, 1).copy()

    def bw(g):
        return (np.diag(g[:, 0]).astype(g.dtype),)

    return _make(out, (a,), bw)


def gather_rows(table, ids):
    """Rows of ``table`` selected by an integer index vector (embedding lookup)."""
    idx = np.asarray(ids, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for table of {table.shape[0]} rows")
    out = table.data[idx]

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _make(out, (table,), bw)


def masked_attention(q, k, v, mask, n_heads, causal=True):
    """Multi-head scaled dot-product attention over packed sequences.

    ``q``, ``k``, ``v`` are ``(n*T)×d`` with ``n`` sequences of ``T`` rows.
    ``mask`` (``n×T``) marks real tokens; padded positions are never used as
    keys. A query with no admissible key (a pad before any real token under
    the causal mask) attends to itself so the softmax stays defined; such
    rows carry no signal to real positions.
    """
    mask = np.asarray(mask) != 0
    n, T = mask.shape
    d = q.shape[1]
    for t in (q, k, v):
        if t.shape != (n * T, d):
            raise ShapeError(f"masked_attention: expected {(n * T, d)}, got {t.shape}")
    if d % n_heads:
        raise ShapeError(f"masked_attention: d={d} not divisible by {n_heads} heads")
    dh = d // n_heads
    dt = q.data.dtype

    def split(x):
        return x.reshape(n, T, n_heads, dh).transpose(0, 2, 1, 3)

    def merge(x):
        return x.transpose(0, 2, 1, 3).reshape(n * T, d)

    Q, K, V = split(q.data), split(k.data), split(v.data)
    allowed = np.broadcast_to(mask[:, None, None, :], (n, 1, T, T)).copy()
    if causal:
        allowed &= np.tril(np.ones((T, T), dtype=bool))[None, None]
    empty = ~allowed.any(axis=-1)
    if empty.any():
        ii = np.nonzero(empty)
        allowed[ii[0], ii[1], ii[2], ii[2]] = True
    inv_sqrt = dt.type(1.0 / math.sqrt(dh))
    scores = (Q @ K.transpose(0, 1, 3, 2)) * inv_sqrt
    scores = np.where(allowed, scores, -np.inf)
    scores = scores - scores.max(axis=-1, keepdims=True)
    P = np.exp(scores)
    P /= P.sum(axis=-1, keepdims=True)
    out = merge(P @ V)

    def bw(g):
        G = split(g)
        dV = P.transpose(0, 1, 3, 2) @ G
        dP = G @ V.transpose(0, 1, 3, 2)
        dS = P * (dP - (dP * P).sum(axis=-1, keepdims=True)) * inv_sqrt
        dQ = dS @ K
        dK = dS.transpose(0, 1, 3, 2) @ Q
        return (merge(dQ) if q.requires_grad else None,
                merge(dK) if k.requires_grad else None,
                merge(dV) if v.requires_grad else None)

    return _make(out, (q, k, v), bw)


# ---------------------------------------------------------------- backward

def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    """Populate ``grad`` on every trainable leaf reachable from ``loss``.

    Leaf gradients accumulate across calls, as with a running sum over
    micro-batches; call ``zero_grad`` between optimizer steps.
    """
    if loss.shape != (1, 1):
        raise RankError(f"backward needs a scalar (1x1) loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node._grad = g.copy() if node._grad is None else node._grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
