"""Memory layer: distances between a reference and a test feature sequence.

A similarity spec is an ordered list of (metric, mode) entries. ``paired``
compares reference row t with test row t. ``cross`` compares test row t with
every reference row, so step t carries one value per reference row. The
per-step outputs of all entries are concatenated in spec order.
"""

from dataclasses import dataclass

import numpy as np

from ..tensor import DTYPE, ShapeError, Tensor, as_tensor

METRICS = ("diff", "absDiff", "sqDiff", "L1", "L2", "cosSim")
MODES = ("paired", "cross")
VECTOR_METRICS = ("diff", "absDiff", "sqDiff")
COS_EPS = 1e-8


@dataclass(frozen=True)
class SimilaritySpec:
    entries: tuple = (("L1", "cross"), ("L2", "cross"))

    def __post_init__(self):
        entries = tuple(tuple(e) for e in self.entries)
        object.__setattr__(self, "entries", entries)
        if not entries:
            raise ValueError("similarity spec needs at least one metric")
        for metric, mode in entries:
            if metric not in METRICS:
                raise ValueError(f"unknown similarity metric {metric!r}; expected one of {METRICS}")
            if mode not in MODES:
                raise ValueError(f"unknown similarity mode {mode!r}; expected 'paired' or 'cross'")

    def width(self, steps, dim):
        """Number of values per step."""
        total = 0
        for metric, mode in self.entries:
            per = dim if metric in VECTOR_METRICS else 1
            total += per * (steps if mode == "cross" else 1)
        return total

    def to_list(self):
        return [list(e) for e in self.entries]

    @classmethod
    def parse(cls, value):
        if isinstance(value, SimilaritySpec):
            return value
        if isinstance(value, str):
            # "L1:cross,L2:cross"
            value = [item.split(":") for item in value.split(",") if item]
        return cls(tuple(tuple(v) for v in value))


DEFAULT_SIMILARITY = SimilaritySpec()


def _metric_forward(metric, d):
    """Values and a closure mapping output grads to grads on the difference d."""
    if metric == "diff":
        return d, lambda g: g
    if metric == "absDiff":
        return np.abs(d), lambda g: g * np.sign(d)
    if metric == "sqDiff":
        return d * d, lambda g: DTYPE(2) * d * g
    if metric == "L1":
        return np.abs(d).sum(axis=-1, keepdims=True, dtype=DTYPE), lambda g: g * np.sign(d)
    if metric == "L2":
        dist = np.sqrt((d * d).sum(axis=-1, keepdims=True, dtype=DTYPE))
        safe = np.where(dist > 0, dist, DTYPE(1))
        return dist, lambda g: np.where(dist > 0, g * d / safe, DTYPE(0))
    raise ValueError(metric)


def _cosine(a, r):
    """Cosine of a and r along the last axis (broadcasting) plus its gradient map."""
    na = np.sqrt((a * a).sum(axis=-1, keepdims=True, dtype=DTYPE))
    nr = np.sqrt((r * r).sum(axis=-1, keepdims=True, dtype=DTYPE))
    denom = na * nr
    ok = denom > COS_EPS
    safe = np.where(ok, denom, DTYPE(1))
    dot = (a * r).sum(axis=-1, keepdims=True, dtype=DTYPE)
    cos = np.where(ok, dot / safe, DTYPE(0))
    na_s = np.where(na > 0, na, DTYPE(1))
    nr_s = np.where(nr > 0, nr, DTYPE(1))

    def grads(g):
        g = np.where(ok, g, DTYPE(0))
        ga = g * (r / safe - cos * a / (na_s * na_s))
        gr = g * (a / safe - cos * r / (nr_s * nr_s))
        return ga, gr

    return cos, grads


def memory_similarity(ref, test, spec=DEFAULT_SIMILARITY):
    """Per-step similarity features.

    ``ref`` and ``test`` are T x E or B x T x E tensors; the result is
    T x F or B x T x F with F = ``spec.width(T, E)``.
    """
    ref, test = as_tensor(ref), as_tensor(test)
    if ref.shape != test.shape:
        raise ShapeError(f"memory_similarity: reference {ref.shape} and test {test.shape} shapes differ")
    if ref.ndim not in (2, 3):
        raise ShapeError(f"memory_similarity: expected T x E or B x T x E, got {ref.shape}")
    squeeze = ref.ndim == 2
    R = ref.data[None] if squeeze else ref.data
    A = test.data[None] if squeeze else test.data
    B, T, E = R.shape
    blocks, backs = [], []
    for metric, mode in spec.entries:
        if mode == "paired":
            a, r = A, R
        else:
            a, r = A[:, :, None, :], R[:, None, :, :]
        if metric == "cosSim":
            vals, grad_fn = _cosine(a, r)
        else:
            vals, dgrad = _metric_forward(metric, a - r)

            def grad_fn(g, dgrad=dgrad):
                gd = dgrad(g)
                return gd, -gd
        vals = np.broadcast_to(vals, vals.shape)
        shape = vals.shape
        blocks.append(vals.reshape(B, T, -1))
        backs.append((shape, mode, grad_fn))
    out = np.concatenate(blocks, axis=-1).astype(DTYPE)

    def backward(g):
        gb = g[None] if squeeze else g
        ga_tot = np.zeros_like(A)
        gr_tot = np.zeros_like(R)
        lo = 0
        for (shape, mode, grad_fn) in backs:
            width = int(np.prod(shape[2:]))
            gpart = gb[:, :, lo:lo + width].reshape(shape)
            lo += width
            ga, gr = grad_fn(gpart)
            if mode == "cross":
                ga = np.broadcast_to(ga, np.broadcast_shapes(ga.shape, (B, T, T, E))).sum(axis=2)
                gr = np.broadcast_to(gr, np.broadcast_shapes(gr.shape, (B, T, T, E))).sum(axis=1)
            ga_tot += np.broadcast_to(ga, A.shape)
            gr_tot += np.broadcast_to(gr, R.shape)
        if squeeze:
            ga_tot, gr_tot = ga_tot[0], gr_tot[0]
        test.accumulate(ga_tot)
        ref.accumulate(gr_tot)

    return Tensor.from_op(out[0] if squeeze else out, (ref, test), backward)
