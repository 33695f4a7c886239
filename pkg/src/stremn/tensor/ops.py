"""Differentiable operations over :class:`Tensor`.

Every op computes its forward value with numpy and, when a tape is active,
records a closure mapping the output gradient to input gradients. Broadcasting
is limited to 0-d operands in elementwise ops plus the bias/affine terms of
``conv2d`` and ``group_norm``.
"""

from __future__ import annotations

import builtins
import functools

import numpy as np

from .core import DimensionError, Tensor, record

LEAKY_SLOPE = 0.01


def _t(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x)


def _check_elementwise(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ (only 0-d operands broadcast)")


def _reduce_to(g: np.ndarray, t: Tensor) -> np.ndarray:
    if t.ndim == 0 and g.ndim != 0:
        return np.asarray(g.sum(), dtype=g.dtype)
    return g


# -- elementwise ---------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = (_t(a, b if isinstance(b, Tensor) else None), _t(b, a if isinstance(a, Tensor) else None))
    _check_elementwise(a, b, "add")
    out = a.data + b.data
    return record("add", out, (a, b), lambda g: (_reduce_to(g, a), _reduce_to(g, b)))


def sub(a, b) -> Tensor:
    a, b = (_t(a, b if isinstance(b, Tensor) else None), _t(b, a if isinstance(a, Tensor) else None))
    _check_elementwise(a, b, "sub")
    out = a.data - b.data
    return record("sub", out, (a, b), lambda g: (_reduce_to(g, a), _reduce_to(-g, b)))


def mul(a, b) -> Tensor:
    a, b = (_t(a, b if isinstance(b, Tensor) else None), _t(b, a if isinstance(a, Tensor) else None))
    _check_elementwise(a, b, "mul")
    out = a.data * b.data
    return record("mul", out, (a, b), lambda g: (_reduce_to(g * b.data, a), _reduce_to(g * a.data, b)))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return record("exp", out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return record("log", np.log(x.data), (x,), lambda g: (g / x.data,))


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)
    return record("sigmoid", out, (x,), lambda g: (g * out * (1 - out),))


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return record("tanh", out, (x,), lambda g: (g * (1 - out * out),))


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    pos = x.data > 0
    out = np.where(pos, x.data, slope * x.data)
    return record("leaky_relu", out, (x,), lambda g: (np.where(pos, g, slope * g),))


def detach(x: Tensor) -> Tensor:
    return Tensor(x.data)


def straight_through(x: Tensor, forward_value: np.ndarray) -> Tensor:
    """Emit ``forward_value`` but route gradients to ``x`` unchanged."""
    fv = np.asarray(forward_value, dtype=x.dtype)
    if fv.shape != x.shape:
        raise DimensionError(f"straight_through: forward value {fv.shape} vs input {x.shape}")
    return record("straight_through", fv.copy(), (x,), lambda g: (g,))


# -- shape ---------------------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)
    return record("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inv = np.argsort(axes)
    out = np.transpose(x.data, axes)
    return record("transpose", out, (x,), lambda g: (np.transpose(g, inv),))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat: empty input list")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[d] != ref[d] for d in range(len(ref)) if d != ax):
            raise DimensionError(f"concat along axis {ax}: shapes {ref} and {t.shape} disagree off-axis")
    out = np.concatenate([t.data for t in tensors], axis=ax)
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def back(g):
        sl = [slice(None)] * g.ndim
        grads = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl[ax] = slice(lo, hi)
            grads.append(g[tuple(sl)])
        return grads

    return record("concat", out, tensors, back)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise DimensionError(f"stack: mixed shapes {sorted(shapes)}")
    out = np.stack([t.data for t in tensors], axis=axis)
    return record("stack", out, tensors, lambda g: [np.take(g, i, axis=axis) for i in range(len(tensors))])


def index(x: Tensor, idx) -> Tensor:
    out = np.array(x.data[idx], copy=True)

    def back(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        return (full,)

    return record("index", out, (x,), back)


def scatter(x: Tensor, positions, length: int) -> Tensor:
    """Place the entries of 1-d ``x`` at ``positions`` of a zero vector."""
    positions = np.asarray(positions, dtype=np.int64)
    if x.shape != (len(positions),):
        raise DimensionError(f"scatter: {x.shape} values for {len(positions)} positions")
    out = np.zeros(length, dtype=x.dtype)
    out[positions] = x.data
    return record("scatter", out, (x,), lambda g: (g[positions],))


# -- reductions ----------------------------------------------------------------


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return record("sum", out, (x,), back)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    s = sum(x, axis=axis, keepdims=keepdims)
    return mul(s, 1.0 / n)


def max(x: Tensor, axis: int) -> Tensor:  # noqa: A001
    """Maximum along ``axis``; the gradient goes to the lowest-index argmax."""
    arg = np.argmax(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(arg, axis), axis=axis).squeeze(axis)

    def back(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis=axis)
        return (full,)

    return record("max", out, (x,), back)


# -- linear algebra ------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot contract {a.shape} with {b.shape}")
    out = a.data @ b.data
    return record("matmul", out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return record("softmax", out, (x,), lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def l2_normalize(x: Tensor, axis: int = 0, eps: float = 1e-12) -> Tensor:
    """x / sqrt(sum(x^2) + eps^2) along ``axis``; zero vectors map to zero."""
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True) + eps * eps)
    out = x.data / norm
    return record("l2_normalize", out, (x,), lambda g: ((g - out * (g * out).sum(axis=axis, keepdims=True)) / norm,))


# -- image ops -----------------------------------------------------------------


def _conv_cols(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    c = xp.shape[0]
    cols = np.empty((c, k, k, ho, wo), dtype=xp.dtype)
    for di in range(k):
        for dj in range(k):
            cols[:, di, dj] = xp[:, di : di + stride * ho : stride, dj : dj + stride * wo : stride]
    return cols


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation of a C_in×H×W map with a C_out×C_in×k×k kernel."""
    if x.ndim != 3:
        raise DimensionError(f"conv2d: input must be C×H×W, got {x.shape}")
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise DimensionError(f"conv2d: kernel must be C_out×C_in×k×k, got {weight.shape}")
    c_out, c_in, k, _ = weight.shape
    if x.shape[0] != c_in:
        raise DimensionError(f"conv2d: input channels (axis 0) {x.shape[0]} != kernel C_in (axis 1) {c_in}")
    if k % 2 == 0:
        raise DimensionError(f"conv2d: kernel size {k} must be odd")
    if bias is not None and bias.shape != (c_out,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} != ({c_out},)")
    _, h, w = x.shape
    hp, wp = h + 2 * padding, w + 2 * padding
    if hp < k or wp < k:
        raise DimensionError(f"conv2d: padded input {hp}×{wp} smaller than kernel {k}")
    ho, wo = (hp - k) // stride + 1, (wp - k) // stride + 1
    if padding:
        xp = np.zeros((c_in, hp, wp), dtype=x.dtype)
        xp[:, padding : padding + h, padding : padding + w] = x.data
    else:
        xp = x.data
    cols = _conv_cols(xp, k, stride, ho, wo)
    wmat = weight.data.reshape(c_out, -1)
    out = (wmat @ cols.reshape(-1, ho * wo)).reshape(c_out, ho, wo)
    if bias is not None:
        out += bias.data[:, None, None]

    def back(g):
        g2 = g.reshape(c_out, -1)
        gw = (g2 @ cols.reshape(-1, ho * wo).T).reshape(weight.shape) if weight.requires_grad else None
        gb = g.sum(axis=(1, 2)) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (wmat.T @ g2).reshape(c_in, k, k, ho, wo)
            gxp = np.zeros_like(xp)
            for di in range(k):
                for dj in range(k):
                    gxp[:, di : di + stride * ho : stride, dj : dj + stride * wo : stride] += gcols[:, di, dj]
            gx = gxp[:, padding : padding + h, padding : padding + w] if padding else gxp
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return record("conv2d", out, parents, back)


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    if x.ndim != 3:
        raise DimensionError(f"group_norm: input must be C×H×W, got {x.shape}")
    c = x.shape[0]
    if groups <= 0 or c % groups:
        raise DimensionError(f"group_norm: {c} channels not divisible into {groups} groups")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"group_norm: gamma/beta must have shape ({c},)")
    xg = x.data.reshape(groups, -1)
    mu = xg.mean(axis=1, keepdims=True)
    var = xg.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mu) * inv).reshape(x.shape)
    out = gamma.data[:, None, None] * xhat + beta.data[:, None, None]

    def back(g):
        ggamma = (g * xhat).sum(axis=(1, 2))
        gbeta = g.sum(axis=(1, 2))
        gxhat = (g * gamma.data[:, None, None]).reshape(groups, -1)
        xh = xhat.reshape(groups, -1)
        gx = inv * (gxhat - gxhat.mean(axis=1, keepdims=True) - xh * (gxhat * xh).mean(axis=1, keepdims=True))
        return gx.reshape(x.shape), ggamma, gbeta

    return record("group_norm", out, (x, gamma, beta), back)


@functools.lru_cache(maxsize=64)
def _upsample_matrix(n: int, dtype) -> np.ndarray:
    m = np.zeros((2 * n, n), dtype=dtype)
    for o in range(2 * n):
        src = builtins.max((o + 0.5) / 2.0 - 0.5, 0.0)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, n - 1)
        frac = src - i0
        m[o, i0] += 1.0 - frac
        m[o, i1] += frac
    m.setflags(write=False)
    return m


def upsample2x(x: Tensor) -> Tensor:
    """Bilinear ×2 upsampling (half-pixel centers, edge clamped)."""
    if x.ndim != 3:
        raise DimensionError(f"upsample2x: input must be C×H×W, got {x.shape}")
    ah = _upsample_matrix(x.shape[1], np.dtype(x.dtype))
    aw = _upsample_matrix(x.shape[2], np.dtype(x.dtype))
    out = np.matmul(np.matmul(ah, x.data), aw.T)
    return record("upsample2x", out, (x,), lambda g: (np.matmul(np.matmul(ah.T, g), aw),))


# -- losses --------------------------------------------------------------------


def cross_entropy(logits: Tensor, target: np.ndarray) -> Tensor:
    """Mean per-pixel cross entropy of class logits C×H×W against labels H×W."""
    target = np.asarray(target, dtype=np.int64)
    if logits.ndim != 3 or target.shape != logits.shape[1:]:
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs labels {target.shape}")
    z = logits.data - logits.data.max(axis=0, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=0, keepdims=True))
    logp = z - lse
    picked = np.take_along_axis(logp, target[None], axis=0)
    n = target.size
    out = np.asarray(-picked.sum() / n, dtype=logits.dtype)

    def back(g):
        p = np.exp(logp)
        np.put_along_axis(p, target[None], np.take_along_axis(p, target[None], axis=0) - 1.0, axis=0)
        return (g * p / n,)

    return record("cross_entropy", out, (logits,), back)


def mse(a: Tensor, b: Tensor) -> Tensor:
    d = sub(a, b)
    return mean(mul(d, d))


def mae(a: Tensor, b) -> Tensor:
    b = _t(b, a)
    _check_elementwise(a, b, "mae")
    diff = a.data - b.data
    n = diff.size
    out = np.asarray(np.abs(diff).sum() / n, dtype=a.dtype)
    sign = np.sign(diff)
    return record("mae", out, (a, b), lambda g: (g * sign / n, -g * sign / n))
