"""Differentiable operations over :class:`Tensor`.

Every forward is pure numpy in float32 with a fixed evaluation order, so
identical inputs give identical bits. Each op records a closure that maps the
output gradient to its parents' gradients.
"""

import numpy as np

from .tensor import DTYPE, Tensor, ShapeError, as_tensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
BCE_CLAMP = 1e-7

# first-layer style inputs (few channels) go through one im2col GEMM;
# wide inputs accumulate nine per-tap GEMMs in kernel row, then column order
_IM2COL_MAX_CHANNELS = 16


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")

    def backward(g):
        a.accumulate(g)
        b.accumulate(g)

    return Tensor.from_op(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} differ")

    def backward(g):
        a.accumulate(g)
        b.accumulate(-g)

    return Tensor.from_op(a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")

    def backward(g):
        a.accumulate(g * b.data)
        b.accumulate(g * a.data)

    return Tensor.from_op(a.data * b.data, (a, b), backward)


def scale(a, factor):
    a = as_tensor(a)
    factor = DTYPE(factor)

    def backward(g):
        a.accumulate(g * factor)

    return Tensor.from_op(a.data * factor, (a,), backward)


def relu(x):
    x = as_tensor(x)
    out = np.maximum(x.data, DTYPE(0))

    def backward(g):
        x.accumulate(g * (x.data > 0))

    return Tensor.from_op(out, (x,), backward)


def _sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


_SIG_LO = np.nextafter(DTYPE(0), DTYPE(1))
_SIG_HI = np.nextafter(DTYPE(1), DTYPE(0))


def sigmoid(x):
    """Logistic function, kept strictly inside (0, 1) even where float32 saturates."""
    x = as_tensor(x)
    y = np.clip(_sigmoid(x.data), _SIG_LO, _SIG_HI)

    def backward(g):
        x.accumulate(g * y * (1 - y))

    return Tensor.from_op(y, (x,), backward)


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)

    def backward(g):
        x.accumulate(g * (1 - y * y))

    return Tensor.from_op(y, (x,), backward)


_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh}


def activation(x, kind):
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}") from None
    return fn(x)


# ---------------------------------------------------------------- structural

def reshape(x, shape):
    x = as_tensor(x)
    old = x.shape

    def backward(g):
        x.accumulate(g.reshape(old))

    return Tensor.from_op(x.data.reshape(shape), (x,), backward)


def flatten(x):
    """Collapse everything after the leading batch axis."""
    return reshape(x, (x.shape[0], -1))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: no inputs")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    ax = axis % data.ndim
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[ax] = slice(lo, hi)
            t.accumulate(g[tuple(idx)])

    return Tensor.from_op(data, tensors, backward)


def take_rows(x, index):
    """Gather along axis 0 with an integer index array of any shape."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.intp)
    if index.size and (index.min() < 0 or index.max() >= x.shape[0]):
        raise ShapeError(f"take_rows: index out of range for leading dimension {x.shape[0]}")

    def backward(g):
        acc = np.zeros_like(x.data)
        np.add.at(acc, index.reshape(-1), g.reshape((-1,) + x.shape[1:]))
        x.accumulate(acc)

    return Tensor.from_op(x.data[index], (x,), backward)


def select(x, key):
    """Basic (slice/int) indexing."""
    x = as_tensor(x)

    def backward(g):
        acc = np.zeros_like(x.data)
        acc[key] = g
        x.accumulate(acc)

    return Tensor.from_op(x.data[key], (x,), backward)


def sum_all(x):
    x = as_tensor(x)

    def backward(g):
        x.accumulate(np.broadcast_to(g.reshape(()), x.shape))

    return Tensor.from_op(np.asarray(x.data.sum(dtype=DTYPE)), (x,), backward)


def mean(x, axis=None):
    x = as_tensor(x)
    if axis is None:
        n = x.size

        def backward(g):
            x.accumulate(np.broadcast_to(g.reshape(()) / DTYPE(n), x.shape))

        return Tensor.from_op(np.asarray(x.data.mean(dtype=DTYPE)), (x,), backward)
    n = x.shape[axis]

    def backward(g):
        x.accumulate(np.broadcast_to(np.expand_dims(g, axis) / DTYPE(n), x.shape))

    return Tensor.from_op(x.data.mean(axis=axis, dtype=DTYPE), (x,), backward)


# ---------------------------------------------------------------- dense

def dense(x, W, b):
    """Affine map ``W x + b`` for an n-vector or a (batch, n) matrix."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if W.ndim != 2:
        raise ShapeError(f"dense: weight must be 2-D, got shape {W.shape}")
    m, n = W.shape
    if x.shape[-1] != n or x.ndim not in (1, 2):
        raise ShapeError(f"dense: input feature dimension {x.shape[-1:]} does not match weight columns {n}")
    if b.shape != (m,):
        raise ShapeError(f"dense: bias length {b.shape} does not match weight rows {m}")
    out = x.data @ W.data.T + b.data

    def backward(g):
        if x.ndim == 1:
            W.accumulate(np.outer(g, x.data))
            b.accumulate(g)
        else:
            W.accumulate(g.T @ x.data)
            b.accumulate(g.sum(axis=0))
        x.accumulate(g @ W.data)

    return Tensor.from_op(out, (x, W, b), backward)


# ---------------------------------------------------------------- conv / pool / norm

def _batched(x, rank, op):
    if x.ndim == rank:
        return x.data[None], True
    if x.ndim == rank + 1:
        return x.data, False
    raise ShapeError(f"{op}: expected {rank}-D or batched {rank + 1}-D input, got shape {x.shape}")


def _pad_flat(x):
    """Lay the batch out channel-major and flat with shared zero padding.

    Each image becomes an (H + 1) x (W + 1) block whose last row and column
    are zero; in row-major order that single zero column pads both the right
    edge of one row and the left edge of the next, and the zero row pads the
    bottom of one image and the top of the next. Row c of the result holds
    the blocks of every image back to back between two zero margins, so a
    3x3 tap at (kr, kc) is a constant column offset and the whole batch goes
    through one GEMM. Outputs landing on the zero row or column are discarded.
    """
    B, C, H, W = x.shape
    Hb, Wb = H + 1, W + 1
    N = B * Hb * Wb
    m = Wb + 1
    flat = np.zeros((C, N + 2 * m), DTYPE)
    grid = flat[:, m:m + N].reshape(C, B, Hb, Wb)
    grid[:, :, :H, :W] = x.transpose(1, 0, 2, 3)
    offsets = [m + (kr - 1) * Wb + (kc - 1) for kr in range(3) for kc in range(3)]
    return flat, offsets, N, (Hb, Wb)


def conv2d(x, kernels, bias):
    """3x3 same-padded convolution (cross-correlation), stride 1.

    ``x`` is C_in x H x W or B x C_in x H x W; ``kernels`` is C_out x C_in x 3 x 3.
    """
    x, kernels, bias = as_tensor(x), as_tensor(kernels), as_tensor(bias)
    xb, squeeze = _batched(x, 3, "conv2d")
    if kernels.ndim != 4 or kernels.shape[2:] != (3, 3):
        raise ShapeError(f"conv2d: kernels must be C_out x C_in x 3 x 3, got {kernels.shape}")
    c_out, c_in = kernels.shape[:2]
    if xb.shape[1] != c_in:
        raise ShapeError(f"conv2d: input channels {xb.shape[1]} do not match kernel input channels {c_in}")
    if bias.shape != (c_out,):
        raise ShapeError(f"conv2d: bias length {bias.shape} does not match output channels {c_out}")
    B, _, H, W = xb.shape
    flat, offsets, N, (Hb, Wb) = _pad_flat(xb)
    use_cols = 1 < c_in < _IM2COL_MAX_CHANNELS
    if use_cols:
        cols = np.empty((9 * c_in, N), DTYPE)
        for k, off in enumerate(offsets):
            cols[k * c_in:(k + 1) * c_in] = flat[:, off:off + N]
        wmat = np.ascontiguousarray(kernels.data.transpose(0, 2, 3, 1).reshape(c_out, 9 * c_in))
        full = wmat @ cols
    else:
        # all nine taps in one GEMM, then shifted partial sums in tap order
        stacked = np.ascontiguousarray(kernels.data.transpose(2, 3, 0, 1).reshape(9 * c_out, c_in))
        per_tap = stacked @ flat
        full = per_tap[:c_out, offsets[0]:offsets[0] + N].copy()
        for k, off in enumerate(offsets[1:], start=1):
            full += per_tap[k * c_out:(k + 1) * c_out, off:off + N]
    full += bias.data[:, None]
    inner = full.reshape(c_out, B, Hb, Wb)[:, :, :H, :W]
    out = np.ascontiguousarray(inner.transpose(1, 0, 2, 3))

    def backward(g):
        gb = g[None] if squeeze else g
        bias.accumulate(gb.sum(axis=(0, 2, 3)))
        gfull = np.zeros((c_out, B, Hb, Wb), DTYPE)
        gfull[:, :, :H, :W] = gb.transpose(1, 0, 2, 3)
        gfull = gfull.reshape(c_out, N)
        if kernels.requires_grad:
            if use_cols:
                gw = gfull @ cols.T
                kernels.accumulate(gw.reshape(c_out, 3, 3, c_in).transpose(0, 3, 1, 2))
            else:
                gw = np.empty_like(kernels.data)
                for k, off in enumerate(offsets):
                    gw[:, :, k // 3, k % 3] = gfull @ flat[:, off:off + N].T
                kernels.accumulate(gw)
        if x.requires_grad:
            stacked_t = np.ascontiguousarray(kernels.data.transpose(2, 3, 1, 0).reshape(9 * c_in, c_out))
            per_tap = stacked_t @ gfull
            gflat = np.zeros_like(flat)
            for k, off in enumerate(offsets):
                gflat[:, off:off + N] += per_tap[k * c_in:(k + 1) * c_in]
            m = offsets[4]
            gx = gflat[:, m:m + N].reshape(c_in, B, Hb, Wb)[:, :, :H, :W].transpose(1, 0, 2, 3)
            gx = np.ascontiguousarray(gx)
            x.accumulate(gx[0] if squeeze else gx)

    return Tensor.from_op(out[0] if squeeze else out, (x, kernels, bias), backward)


def maxpool2x2(x):
    """2x2 max pooling, stride 2, floor mode. Ties go to the first window cell in scan order."""
    x = as_tensor(x)
    xb, squeeze = _batched(x, 3, "maxpool2x2")
    B, C, H, W = xb.shape
    if H < 2 or W < 2:
        raise ShapeError(f"maxpool2x2: spatial size {H}x{W} is smaller than the 2x2 window")
    H2, W2 = H // 2, W // 2
    views = [xb[:, :, r:2 * H2:2, c:2 * W2:2] for r in (0, 1) for c in (0, 1)]
    rows = np.maximum(xb[:, :, 0:2 * H2:2], xb[:, :, 1:2 * H2:2])
    out = np.maximum(rows[..., 0:2 * W2:2], rows[..., 1:2 * W2:2])

    def backward(g):
        gb = g[None] if squeeze else g
        gx = np.zeros_like(xb)
        taken = np.zeros(out.shape, bool)
        for k, (r, c) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
            win = (views[k] == out) & ~taken
            taken |= win
            gx[:, :, r:2 * H2:2, c:2 * W2:2] = np.where(win, gb, DTYPE(0))
        x.accumulate(gx[0] if squeeze else gx)

    return Tensor.from_op(out[0] if squeeze else out, (x,), backward)


class BatchNormState:
    """Running per-channel statistics for :func:`batchnorm2d`."""

    def __init__(self, channels):
        self.running_mean = np.zeros(channels, DTYPE)
        self.running_var = np.ones(channels, DTYPE)

    def copy(self):
        other = BatchNormState(len(self.running_mean))
        other.running_mean[:] = self.running_mean
        other.running_var[:] = self.running_var
        return other


def batchnorm2d(x, gamma, beta, state, training):
    """Per-channel normalization of a B x C x H x W batch.

    Training mode normalizes with batch statistics and folds them into
    ``state`` (momentum 0.1, unbiased variance for the running estimate).
    Inference mode uses ``state`` only and accepts a batch of one.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 4:
        raise ShapeError(f"batchnorm2d: expected B x C x H x W input, got shape {x.shape}")
    B, C, H, W = x.shape
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(f"batchnorm2d: gamma/beta must have length {C} (channels)")
    g4 = gamma.data[None, :, None, None]
    if not training:
        inv = (1.0 / np.sqrt(state.running_var + DTYPE(BN_EPS))).astype(DTYPE)
        mult = (gamma.data * inv).astype(DTYPE)
        shift = (beta.data - state.running_mean * mult).astype(DTYPE)
        out = x.data * mult[None, :, None, None]
        out += shift[None, :, None, None]

        def backward(g):
            xhat = (x.data - state.running_mean[None, :, None, None]) * inv[None, :, None, None]
            gamma.accumulate((g * xhat).sum(axis=(0, 2, 3)))
            beta.accumulate(g.sum(axis=(0, 2, 3)))
            x.accumulate(g * (g4 * inv[None, :, None, None]))

        return Tensor.from_op(out, (x, gamma, beta), backward)

    if B < 2:
        raise ShapeError("batchnorm2d: training mode needs a batch of at least 2 (variance undefined)")
    n = B * H * W
    mu = x.data.mean(axis=(0, 2, 3), dtype=DTYPE)
    centered = x.data - mu[None, :, None, None]
    var = (centered * centered).mean(axis=(0, 2, 3), dtype=DTYPE)
    inv = (1.0 / np.sqrt(var + DTYPE(BN_EPS))).astype(DTYPE)
    xhat = centered * inv[None, :, None, None]
    out = xhat * g4 + beta.data[None, :, None, None]
    state.running_mean[:] = (1 - BN_MOMENTUM) * state.running_mean + BN_MOMENTUM * mu
    state.running_var[:] = (1 - BN_MOMENTUM) * state.running_var + BN_MOMENTUM * var * (n / (n - 1))

    def backward(g):
        gamma.accumulate((g * xhat).sum(axis=(0, 2, 3)))
        beta.accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gx_hat = g * g4
            m1 = gx_hat.mean(axis=(0, 2, 3), dtype=DTYPE)[None, :, None, None]
            m2 = (gx_hat * xhat).mean(axis=(0, 2, 3), dtype=DTYPE)[None, :, None, None]
            x.accumulate((gx_hat - m1 - xhat * m2) * inv[None, :, None, None])

    return Tensor.from_op(out, (x, gamma, beta), backward)


# ---------------------------------------------------------------- recurrent

def lstm_forward(seq, w_input, w_hidden, bias):
    """Run a standard LSTM from zero state.

    seq is T x d or B x T x d. Weights are packed gate-major as
    [input, forget, candidate, output]: w_input d x 4h, w_hidden h x 4h,
    bias 4h. Returns ``(last_hidden, all_hidden)``.
    """
    seq, w_input, w_hidden, bias = (as_tensor(t) for t in (seq, w_input, w_hidden, bias))
    if seq.ndim == 2:
        xs, squeeze = seq.data[None], True
    elif seq.ndim == 3:
        xs, squeeze = seq.data, False
    else:
        raise ShapeError(f"lstm_forward: expected T x d or B x T x d, got shape {seq.shape}")
    B, T, d = xs.shape
    if T < 1:
        raise ShapeError("lstm_forward: empty sequence")
    if w_input.ndim != 2 or w_input.shape[0] != d or w_input.shape[1] % 4:
        raise ShapeError(f"lstm_forward: input weights {w_input.shape} do not match feature size {d}")
    h = w_input.shape[1] // 4
    if w_hidden.shape != (h, 4 * h) or bias.shape != (4 * h,):
        raise ShapeError(f"lstm_forward: hidden weights {w_hidden.shape} / bias {bias.shape} inconsistent with hidden size {h}")

    hs = np.zeros((B, T, h), DTYPE)
    cs = np.zeros((B, T, h), DTYPE)
    gates = np.zeros((B, T, 4 * h), DTYPE)
    h_prev = np.zeros((B, h), DTYPE)
    c_prev = np.zeros((B, h), DTYPE)
    xw = xs @ w_input.data + bias.data
    for t in range(T):
        z = xw[:, t] + h_prev @ w_hidden.data
        i = _sigmoid(z[:, :h])
        f = _sigmoid(z[:, h:2 * h])
        gg = np.tanh(z[:, 2 * h:3 * h])
        o = _sigmoid(z[:, 3 * h:])
        c = f * c_prev + i * gg
        hcur = o * np.tanh(c)
        gates[:, t] = np.concatenate([i, f, gg, o], axis=1)
        cs[:, t] = c
        hs[:, t] = hcur
        h_prev, c_prev = hcur, c

    def backward(g):
        gh_all = g[None] if squeeze else g
        dxw = np.zeros((B, T, 4 * h), DTYPE)
        dh_next = np.zeros((B, h), DTYPE)
        dc_next = np.zeros((B, h), DTYPE)
        for t in range(T - 1, -1, -1):
            i, f, gg, o = (gates[:, t, k * h:(k + 1) * h] for k in range(4))
            c = cs[:, t]
            c_before = cs[:, t - 1] if t > 0 else np.zeros_like(c)
            tc = np.tanh(c)
            dh = gh_all[:, t] + dh_next
            do = dh * tc
            dc = dh * o * (1 - tc * tc) + dc_next
            di = dc * gg
            dg = dc * i
            df = dc * c_before
            dz = np.concatenate([di * i * (1 - i), df * f * (1 - f), dg * (1 - gg * gg), do * o * (1 - o)], axis=1)
            dxw[:, t] = dz
            dh_next = dz @ w_hidden.data.T
            dc_next = dc * f
        h_in = np.concatenate([np.zeros((B, 1, h), DTYPE), hs[:, :-1]], axis=1)
        w_hidden.accumulate(h_in.reshape(-1, h).T @ dxw.reshape(-1, 4 * h))
        w_input.accumulate(xs.reshape(-1, d).T @ dxw.reshape(-1, 4 * h))
        bias.accumulate(dxw.sum(axis=(0, 1)))
        if seq.requires_grad:
            gx = dxw @ w_input.data.T
            seq.accumulate(gx[0] if squeeze else gx)

    all_h = Tensor.from_op(hs[0] if squeeze else hs, (seq, w_input, w_hidden, bias), backward)
    last = select(all_h, (-1,) if squeeze else (slice(None), -1))
    return last, all_h


# ---------------------------------------------------------------- loss

def bce_loss(p, y):
    """Mean binary cross-entropy; probabilities are clamped to [1e-7, 1 - 1e-7]."""
    p = as_tensor(p)
    y = np.asarray(y, dtype=DTYPE).reshape(p.shape)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("bce_loss: labels must be 0 or 1")
    lo, hi = DTYPE(BCE_CLAMP), DTYPE(1 - BCE_CLAMP)
    pc = np.clip(p.data, lo, hi)
    inside = (p.data >= lo) & (p.data <= hi)
    n = max(p.size, 1)
    losses = -(y * np.log(pc) + (1 - y) * np.log(1 - pc))

    def backward(g):
        dp = (-(y / pc) + (1 - y) / (1 - pc)) * inside / DTYPE(n)
        p.accumulate(g.reshape(()) * dp)

    return Tensor.from_op(np.asarray(losses.mean(dtype=DTYPE)), (p,), backward)
