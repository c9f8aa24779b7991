"""Differentiable primitives.

Every function takes and returns :class:`Tensor` and supplies its own
vector-Jacobian product. Plain numbers and numpy arrays are accepted wherever
a constant operand makes sense.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf, expit

from ..errors import ConfigurationError, DimensionError, NumericError
from .tensor import Tensor, as_tensor

_SQRT2 = math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _const(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    b = _const(b, a)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._make(a.data + b.data, (a, b), vjp, "add")


def sub(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _const(a, b)
    b = _const(b, a)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._make(a.data - b.data, (a, b), vjp, "sub")


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    b = _const(b, a)

    def vjp(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._make(a.data * b.data, (a, b), vjp, "mul")


def div(a, b) -> Tensor:
    a = as_tensor(a)
    b = _const(b, a)
    out = a.data / b.data

    def vjp(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * out / b.data, b.shape)
        return ga, gb

    return Tensor._make(out, (a, b), vjp, "div")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor._make(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    return Tensor._make(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def abs(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return Tensor._make(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def square(x: Tensor) -> Tensor:
    return Tensor._make(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._make(np.where(mask, x.data, 0.0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    s = expit(x.data)
    return Tensor._make(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def silu(x: Tensor) -> Tensor:
    s = expit(x.data)
    out = x.data * s
    return Tensor._make(out, (x,), lambda g: (g * (s + x.data * s * (1.0 - s)),), "silu")


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))
    out = x.data * cdf

    def vjp(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return Tensor._make(out.astype(x.dtype, copy=False), (x,), vjp, "gelu")


def softplus(x: Tensor) -> Tensor:
    out = np.logaddexp(0.0, x.data)
    return Tensor._make(out, (x,), lambda g: (g * expit(x.data),), "softplus")


_ACTIVATIONS = {"relu": relu, "gelu": gelu, "silu": silu, "sigmoid": sigmoid}


def activation(kind: str, x: Tensor) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ConfigurationError(f"unknown activation {kind!r}") from None
    return fn(x)


# ---------------------------------------------------------------- reductions / shape


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return Tensor._make(np.asarray(out), (x,), vjp, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum(x, axis, keepdims), 1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    return Tensor._make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)
    return Tensor._make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


def index(x: Tensor, idx) -> Tensor:
    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[idx] += g
        return (gx,)

    return Tensor._make(x.data[idx], (x,), vjp, "index")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != ax):
            raise DimensionError(f"cannot concatenate shapes {ref} and {t.shape} on axis {axis}")
    sizes = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, sizes, axis=ax))

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=ax), tensors, vjp, "concat")


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a = as_tensor(a)
    b = _const(b, a)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise DimensionError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return Tensor._make(a.data @ b.data, (a, b), vjp, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Row-wise affine map ``x @ w + b`` for x of shape [L, C_in]."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise DimensionError(f"linear: x {x.shape} incompatible with w {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise DimensionError(f"linear: bias {b.shape} does not match C_out={w.shape[1]}")
    out = x.data @ w.data
    if b is not None:
        out = out + b.data
    parents = (x, w) if b is None else (x, w, b)

    def vjp(g):
        gx = g @ w.data.T if x.requires_grad else None
        gw = x.data.T @ g if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    return Tensor._make(out, parents, vjp, "linear")


# ---------------------------------------------------------------- convolution


def _pad_spatial(x: np.ndarray, pad: int, mode: str) -> np.ndarray:
    if pad == 0:
        return x
    width = ((0, 0), (pad, pad), (pad, pad))
    return np.pad(x, width, mode="constant" if mode == "zeros" else "edge")


def _unpad_spatial(g: np.ndarray, pad: int, mode: str) -> np.ndarray:
    if pad == 0:
        return g
    if mode == "zeros":
        return g[:, pad:-pad, pad:-pad]
    # edge padding clips indices per axis, so fold the margins back onto the border
    g = g.copy()
    g[:, pad, :] += g[:, :pad, :].sum(axis=1)
    g[:, -pad - 1, :] += g[:, -pad:, :].sum(axis=1)
    g = g[:, pad:-pad, :]
    g[:, :, pad] += g[:, :, :pad].sum(axis=2)
    g[:, :, -pad - 1] += g[:, :, -pad:].sum(axis=2)
    return g[:, :, pad:-pad]


def conv_out_extent(n: int, k: int, stride: int, pad: int) -> int:
    span = n + 2 * pad - k
    if span < 0:
        raise ConfigurationError(f"kernel {k} with pad {pad} does not fit extent {n}")
    return span // stride + 1


def conv2d(
    x: Tensor,
    w: Tensor,
    b: Tensor | None = None,
    stride: int = 1,
    pad: int = 0,
    padding_mode: str = "zeros",
) -> Tensor:
    """2-D cross-correlation of x [C_in,H,W] with w [C_out,C_in,k,k]."""
    if x.ndim != 3 or w.ndim != 4:
        raise DimensionError(f"conv2d expects x [C,H,W] and w [O,C,k,k], got {x.shape}, {w.shape}")
    c_out, c_in, k, k2 = w.shape
    if x.shape[0] != c_in:
        raise DimensionError(f"conv2d: input has {x.shape[0]} channels, kernel expects {c_in}")
    if k != k2 or k % 2 == 0:
        raise ConfigurationError(f"conv2d needs a square odd kernel, got {k}x{k2}")
    if pad < 0 or stride < 1:
        raise ConfigurationError(f"invalid stride={stride} / pad={pad}")
    if padding_mode not in ("zeros", "replicate"):
        raise ConfigurationError(f"unknown padding mode {padding_mode!r}")
    _, h, wd = x.shape
    ho, wo = conv_out_extent(h, k, stride, pad), conv_out_extent(wd, k, stride, pad)

    xp = _pad_spatial(x.data, pad, padding_mode)
    if k == 1:
        cols = xp[:, ::stride, ::stride][:, :ho, :wo].reshape(c_in, ho * wo).T
    else:
        win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
        cols = win.transpose(1, 2, 0, 3, 4).reshape(ho * wo, c_in * k * k)
    w2 = w.data.reshape(c_out, -1)
    out = (cols @ w2.T).T.reshape(c_out, ho, wo)
    if b is not None:
        out = out + b.data[:, None, None]
    parents = (x, w) if b is None else (x, w, b)

    def vjp(g):
        g2 = g.reshape(c_out, ho * wo)
        gw = (g2 @ cols).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = g2.T @ w2
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            if k == 1:
                gxp[:, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride] += gcols.T.reshape(
                    c_in, ho, wo
                )
            else:
                gcols = gcols.reshape(ho, wo, c_in, k, k)
                for i in range(k):
                    for j in range(k):
                        gxp[:, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += (
                            gcols[:, :, :, i, j].transpose(2, 0, 1)
                        )
            gx = _unpad_spatial(gxp, pad, padding_mode)
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=1)

    return Tensor._make(out, parents, vjp, "conv2d")


def conv1d_causal(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Depthwise causal 1-D convolution over the sequence axis of x [L, D] with w [D, k]."""
    if x.ndim != 2 or w.ndim != 2 or w.shape[0] != x.shape[1]:
        raise DimensionError(f"conv1d_causal: x {x.shape} incompatible with w {w.shape}")
    length, d = x.shape
    k = w.shape[1]
    xp = np.concatenate([np.zeros((k - 1, d), dtype=x.dtype), x.data], axis=0)
    win = sliding_window_view(xp, k, axis=0)  # [L, D, k]
    out = np.einsum("ldk,dk->ld", win, w.data)
    if b is not None:
        out = out + b.data
    parents = (x, w) if b is None else (x, w, b)

    def vjp(g):
        gw = np.einsum("ld,ldk->dk", g, win)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[j : j + length] += g * w.data[:, j]
        gx = gxp[k - 1 :]
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    return Tensor._make(out, parents, vjp, "conv1d_causal")


# ---------------------------------------------------------------- normalisation


@dataclass
class NormState:
    """Running statistics of one batch-norm layer."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5
    num_updates: int = field(default=0)

    @classmethod
    def create(cls, channels: int, dtype=np.float64) -> "NormState":
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype))


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: NormState,
    training: bool = True,
    update_stats: bool = True,
) -> Tensor:
    """Per-channel normalisation of x [C,H,W] over its spatial extent."""
    if x.ndim != 3:
        raise DimensionError(f"batch_norm expects [C,H,W], got {x.shape}")
    c = x.shape[0]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batch_norm: gamma/beta must have length {c}")
    n = x.shape[1] * x.shape[2]
    if n == 0:
        raise DimensionError("batch_norm over an empty spatial extent")
    eps = state.eps
    if training:
        mu = x.data.mean(axis=(1, 2))
        var = x.data.var(axis=(1, 2))
        if update_stats:
            m = state.momentum
            unbiased = var * n / (n - 1) if n > 1 else var
            state.running_mean[:] = (1 - m) * state.running_mean + m * mu
            state.running_var[:] = (1 - m) * state.running_var + m * unbiased
            state.num_updates += 1
    else:
        mu, var = state.running_mean.astype(x.dtype), state.running_var.astype(x.dtype)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[:, None, None]) * inv[:, None, None]
    out = gamma.data[:, None, None] * xhat + beta.data[:, None, None]

    def vjp(g):
        ggamma = (g * xhat).sum(axis=(1, 2))
        gbeta = g.sum(axis=(1, 2))
        gxhat = g * gamma.data[:, None, None]
        if training:
            gx = (inv[:, None, None] / n) * (
                n * gxhat
                - gxhat.sum(axis=(1, 2), keepdims=True)
                - xhat * (gxhat * xhat).sum(axis=(1, 2), keepdims=True)
            )
        else:
            gx = gxhat * inv[:, None, None]
        return gx, ggamma, gbeta

    return Tensor._make(out.astype(x.dtype, copy=False), (x, gamma, beta), vjp, "batch_norm")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise each row of x [L, C] over its C features."""
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"layer_norm: gamma/beta must have length {c}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gamma.data + beta.data

    def vjp(g):
        gxhat = g * gamma.data
        gx = (inv / c) * (
            c * gxhat - gxhat.sum(axis=-1, keepdims=True) - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True)
        )
        red = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return Tensor._make(out, (x, gamma, beta), vjp, "layer_norm")


# ---------------------------------------------------------------- resampling


def resample(x: Tensor, my: np.ndarray, mx: np.ndarray, op: str = "resample") -> Tensor:
    """Separable linear resampling: out[c] = my @ x[c] @ mx.T."""
    my = my.astype(x.dtype, copy=False)
    mx = mx.astype(x.dtype, copy=False)
    out = (my @ x.data) @ mx.T

    def vjp(g):
        return (my.T @ (g @ mx),)

    return Tensor._make(out, (x,), vjp, op)


def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Interpolation weights for align-corners=False bilinear resizing along one axis."""
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(math.floor(src)), n_in - 1)
        i1 = i0 + 1 if i0 < n_in - 1 else i0
        l1 = src - i0
        m[i, i0] += 1.0 - l1
        m[i, i1] += l1
    return m


def adaptive_pool_matrix(n_in: int, n_out: int) -> np.ndarray:
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        start = (i * n_in) // n_out
        end = -((-(i + 1) * n_in) // n_out)
        m[i, start:end] = 1.0 / (end - start)
    return m


def upsample_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    if x.ndim != 3:
        raise DimensionError(f"upsample_bilinear expects [C,h,w], got {x.shape}")
    _, h, w = x.shape
    if out_h < h or out_w < w:
        raise ConfigurationError(f"upsample_bilinear cannot downscale {h}x{w} -> {out_h}x{out_w}")
    if (out_h, out_w) == (h, w):
        return x
    return resample(x, bilinear_matrix(h, out_h), bilinear_matrix(w, out_w), "upsample_bilinear")


def adaptive_avg_pool(x: Tensor, out_h: int, out_w: int | None = None) -> Tensor:
    out_w = out_h if out_w is None else out_w
    _, h, w = x.shape
    return resample(x, adaptive_pool_matrix(h, out_h), adaptive_pool_matrix(w, out_w), "adaptive_avg_pool")


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean of x [C,H,W] -> [C]."""
    if x.ndim != 3:
        raise DimensionError(f"global_avg_pool expects [C,H,W], got {x.shape}")
    n = x.shape[1] * x.shape[2]
    return Tensor._make(
        x.data.mean(axis=(1, 2)),
        (x,),
        lambda g: (np.broadcast_to(g[:, None, None] / n, x.shape),),
        "global_avg_pool",
    )


# ---------------------------------------------------------------- softmax family


def softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return Tensor._make(s, (x,), vjp, "softmax")


def log_softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse

    def vjp(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return Tensor._make(out, (x,), vjp, "log_softmax")


# ---------------------------------------------------------------- selective scan


def scan(u: Tensor, delta: Tensor, a: Tensor, b: Tensor, c: Tensor) -> Tensor:
    """Input-dependent linear recurrence, one independent state per channel.

    Shapes: u, delta [L, D]; a [D, N]; b, c [L, N]. For each channel d,
    h_t = exp(delta[t,d] * a[d]) * h_{t-1} + delta[t,d] * b[t] * u[t,d] with
    h_0 = 0, and y[t,d] = <c[t], h_t>.
    """
    length, d = u.shape
    n = a.shape[1]
    if delta.shape != (length, d) or a.shape != (d, n) or b.shape != (length, n) or c.shape != (length, n):
        raise DimensionError(
            f"scan shapes disagree: u {u.shape}, delta {delta.shape}, a {a.shape}, b {b.shape}, c {c.shape}"
        )
    dt, ud, bd, cd = delta.data, u.data, b.data, c.data
    decay = np.exp(dt[:, :, None] * a.data[None])  # [L, D, N]
    inject = (dt * ud)[:, :, None] * bd[:, None, :]
    states = np.empty_like(decay)
    h = np.zeros((d, n), dtype=decay.dtype)
    for t in range(length):
        h = decay[t] * h + inject[t]
        states[t] = h
    if not np.all(np.isfinite(states)):
        t_bad, d_bad, _ = np.argwhere(~np.isfinite(states))[0]
        raise NumericError(f"non-finite scan state at step {t_bad}, channel {d_bad}")
    y = np.einsum("ldn,ln->ld", states, cd)

    def vjp(gy):
        gh_direct = gy[:, :, None] * cd[:, None, :]
        gc = np.einsum("ld,ldn->ln", gy, states)
        gstate = np.empty_like(states)
        carry = np.zeros((d, n), dtype=states.dtype)
        for t in range(length - 1, -1, -1):
            carry = gh_direct[t] + carry
            gstate[t] = carry
            carry = carry * decay[t]
        prev = np.concatenate([np.zeros((1, d, n), dtype=states.dtype), states[:-1]], axis=0)
        gdecay = gstate * prev * decay  # d(loss)/d(delta*a)
        gdelta = np.einsum("ldn,dn->ld", gdecay, a.data)
        ga = np.einsum("ldn,ld->dn", gdecay, dt)
        gbu = np.einsum("ldn,ln->ld", gstate, bd)  # d(loss)/d(delta*u)
        gdelta += gbu * ud
        gu = gbu * dt
        gb = np.einsum("ldn,ld->ln", gstate, dt * ud)
        return gu, gdelta, ga, gb, gc

    return Tensor._make(y, (u, delta, a, b, c), vjp, "scan")
