"""Central finite-difference checks for analytic gradients."""

from dataclasses import dataclass, field

import numpy as np

from .tensor import DTYPE, Tensor


@dataclass
class GradCheckReport:
    passed: bool
    tolerance: float
    errors: dict = field(default_factory=dict)  # input index -> relative error
    skipped: dict = field(default_factory=dict)  # input index -> excluded element count

    @property
    def worst(self):
        return max(self.errors.values(), default=0.0)


def relative_error(analytic, numeric, floor=1.0):
    """Norm-wise error ||a - n|| / max(||a||, ||n||, floor).

    Relative for gradients of norm above ``floor``, absolute below it, so a
    gradient that is small by cancellation is not judged by rounding noise.
    """
    a = np.asarray(analytic, np.float64).ravel()
    n = np.asarray(numeric, np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / denom)


def grad_check(fn, inputs, tolerance=1e-3, step=1e-3, exclude=None, seed=0):
    """Compare analytic and finite-difference gradients of ``fn``.

    ``fn`` maps a list of Tensors to a Tensor. The scalar objective is a fixed
    random projection of the output, summed in float64 so that the only float32
    rounding in the difference quotient comes from the op itself. ``exclude``
    may map an input index to a boolean mask of elements to leave out (kinks).
    Failures are reported, never raised.
    """
    arrays = [np.array(x, dtype=DTYPE) for x in inputs]
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = fn(tensors)
    rng = np.random.default_rng(seed)
    weights = rng.standard_normal(size=out.shape).astype(DTYPE)
    out.backward(weights)

    def objective(values):
        res = fn([Tensor(v) for v in values]).data
        return float(np.sum(res.astype(np.float64) * weights.astype(np.float64)))

    report = GradCheckReport(passed=True, tolerance=tolerance)
    for idx, arr in enumerate(arrays):
        analytic = tensors[idx].grad
        if analytic is None:
            analytic = np.zeros_like(arr)
        numeric = np.zeros(arr.shape, np.float64)
        mask = np.ones(arr.shape, bool)
        if exclude and idx in exclude:
            mask &= ~np.asarray(exclude[idx], bool)
        flat = arr.reshape(-1)
        for j in np.flatnonzero(mask.reshape(-1)):
            orig = flat[j]
            hi = orig + DTYPE(step)
            lo = orig - DTYPE(step)
            flat[j] = hi
            plus = objective(arrays)
            flat[j] = lo
            minus = objective(arrays)
            flat[j] = orig
            # divide by the step float32 actually took, not the nominal one
            numeric.reshape(-1)[j] = (plus - minus) / (float(hi) - float(lo))
        err = relative_error(analytic[mask], numeric[mask])
        report.errors[idx] = err
        report.skipped[idx] = int((~mask).sum())
        if not err < tolerance:
            report.passed = False
    return report
