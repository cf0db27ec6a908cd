"""Named parameter collections and first-order optimizers."""

from collections import OrderedDict

import numpy as np

from .tensor import DTYPE, Tensor

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class ParamSet:
    """Ordered name -> Tensor map with per-parameter optimizer moments.

    Iteration order is insertion order, which fixes the order of every
    reduction that walks the parameters (serialization included).
    """

    def __init__(self):
        self._params = OrderedDict()
        self.first_moment = {}
        self.second_moment = {}
        self.step_count = 0

    def add(self, name, data):
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params.items())

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def count(self):
        return int(sum(t.size for t in self._params.values()))

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None


def optimizer_step(params, kind="adam", lr=1e-4):
    """Update every parameter of ``params`` in place from its gradient.

    Parameters without a gradient (not reached by the last backward pass)
    are treated as having a zero gradient.
    """
    for name, t in params:
        if t.grad is not None and not np.all(np.isfinite(t.grad)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    if kind == "sgd":
        for _, t in params:
            if t.grad is not None:
                t.data -= DTYPE(lr) * t.grad
        return params
    if kind != "adam":
        raise ValueError(f"unknown optimizer {kind!r}; expected 'sgd' or 'adam'")

    params.step_count += 1
    k = params.step_count
    c1 = 1.0 - ADAM_BETA1 ** k
    c2 = 1.0 - ADAM_BETA2 ** k
    for name, t in params:
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        m = params.first_moment.get(name)
        v = params.second_moment.get(name)
        if m is None:
            m = np.zeros_like(t.data)
            v = np.zeros_like(t.data)
        m = (ADAM_BETA1 * m + (1 - ADAM_BETA1) * g).astype(DTYPE)
        v = (ADAM_BETA2 * v + (1 - ADAM_BETA2) * g * g).astype(DTYPE)
        params.first_moment[name] = m
        params.second_moment[name] = v
        t.data -= (DTYPE(lr) * (m / DTYPE(c1)) / (np.sqrt(v / DTYPE(c2)) + DTYPE(ADAM_EPS))).astype(DTYPE)
    return params
