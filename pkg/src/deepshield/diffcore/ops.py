"""Forward operations with reverse-mode gradient rules.

Every function takes and returns :class:`Tensor`; when a tape is active and
any input requires a gradient, a record with the matching vector-Jacobian
product is appended. Convolutions run on an im2col/col2im pair; softmax uses
max-subtraction; BCE clamps probabilities to [1e-7, 1 - 1e-7] so the loss
stays finite at saturated predictions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special as _special

from ..errors import ConfigError, ContractError, DimensionError, InputError
from .tensor import Tensor, record

BCE_EPS = 1e-7


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x), dtype=dtype)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, like=a)
    out = Tensor(a.data + b.data)
    return record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, like=a)
    out = Tensor(a.data - b.data)
    return record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, like=a)
    out = Tensor(a.data * b.data)
    return record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(a.data * np.asarray(c, dtype=a.data.dtype))
    return record(out, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul requires tensors with ndim >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = Tensor(np.matmul(a.data, b.data))

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return record(out, (a, b), vjp)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    out = Tensor(a.data.reshape(shape))
    return record(out, (a,), lambda g: (g.reshape(a.shape),))


def permute(a: Tensor, axes) -> Tensor:
    axes = tuple(int(x) for x in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"permute axes {axes} invalid for ndim {a.ndim}")
    inverse = tuple(np.argsort(axes))
    out = Tensor(a.data.transpose(axes))
    return record(out, (a,), lambda g: (g.transpose(inverse),))


def transpose_last_two(a: Tensor) -> Tensor:
    if a.ndim < 2:
        raise DimensionError("transpose_last_two requires ndim >= 2")
    axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    return permute(a, axes)


def concat(tensors, axis: int) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise InputError("concat of zero tensors")
    axis = axis % tensors[0].ndim
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        slicer = [slice(None)] * g.ndim
        grads = []
        for i in range(len(sizes)):
            slicer[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
            grads.append(g[tuple(slicer)])
        return tuple(grads)

    return record(out, tuple(tensors), vjp)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    axis = axis % a.ndim
    slicer = [slice(None)] * a.ndim
    slicer[axis] = slice(start, stop)
    slicer = tuple(slicer)
    out = Tensor(a.data[slicer])

    def vjp(g):
        ga = np.zeros_like(a.data)
        ga[slicer] = g
        return (ga,)

    return record(out, (a,), vjp)


def broadcast_to(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    out = Tensor(np.broadcast_to(a.data, shape).copy())
    return record(out, (a,), lambda g: (_unbroadcast(g, a.shape),))


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g.reshape((1,) * a.ndim), a.shape).copy(),)
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(ax % a.ndim for ax in axes)
        if not keepdims:
            for ax in sorted(axes):
                g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, a.shape).copy(),)

    return record(out, (a,), vjp)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax % a.ndim] for ax in axes]))
    return scale(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def global_avg_pool2d(a: Tensor) -> Tensor:
    if a.ndim != 4:
        raise DimensionError(f"global_avg_pool2d expects NCHW, got shape {a.shape}")
    return mean(a, axis=(2, 3))


# ---------------------------------------------------------------------------
# affine layers


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map over the last axis: ``y = x @ weight.T + bias``."""
    d_out, d_in = weight.shape
    if x.shape[-1] != d_in:
        raise DimensionError(f"linear: input last dim {x.shape[-1]} != weight in dim {d_in}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, d_in)
    y2 = x2 @ weight.data.T
    if bias is not None:
        if bias.shape != (d_out,):
            raise DimensionError(f"linear: bias shape {bias.shape} != ({d_out},)")
        y2 = y2 + bias.data
    out = Tensor(y2.reshape(*lead, d_out))

    def vjp(g):
        g2 = g.reshape(-1, d_out)
        gx = (g2 @ weight.data).reshape(x.shape)
        gw = g2.T @ x2
        gb = g2.sum(axis=0) if bias is not None else None
        return (gx, gw) if bias is None else (gx, gw, gb)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record(out, inputs, vjp)


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, h_out: int, w_out: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, h_out, w_out), dtype=xp.dtype)
    for u in range(kh):
        for v in range(kw):
            cols[:, :, u, v] = xp[:, :, u : u + stride * h_out : stride, v : v + stride * w_out : stride]
    return cols.reshape(n, c * kh * kw, h_out * w_out)


def _col2im(gcols: np.ndarray, padded_shape, kh, kw, stride, h_out, w_out) -> np.ndarray:
    n, c = padded_shape[:2]
    gxp = np.zeros(padded_shape, dtype=gcols.dtype)
    g6 = gcols.reshape(n, c, kh, kw, h_out, w_out)
    for u in range(kh):
        for v in range(kw):
            gxp[:, :, u : u + stride * h_out : stride, v : v + stride * w_out : stride] += g6[:, :, u, v]
    return gxp


def _conv_geometry(x: Tensor, kh: int, kw: int, stride: int, padding: int):
    if x.ndim != 4:
        raise DimensionError(f"conv input must be NCHW, got shape {x.shape}")
    if stride < 1:
        raise ConfigError(f"conv stride must be positive, got {stride}")
    if padding < 0:
        raise ConfigError(f"conv padding must be non-negative, got {padding}")
    _, _, h, w = x.shape
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise DimensionError(f"kernel {kh}x{kw} larger than padded input {h + 2 * padding}x{w + 2 * padding}")
    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (w + 2 * padding - kw) // stride + 1
    return h_out, w_out


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    k, c_w, kh, kw = weight.shape
    h_out, w_out = _conv_geometry(x, kh, kw, stride, padding)
    n, c, h, w = x.shape
    if c != c_w:
        raise DimensionError(f"conv2d: input has {c} channels, weight expects {c_w}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _im2col(xp, kh, kw, stride, h_out, w_out)  # (N, C*kh*kw, L)
    w2 = weight.data.reshape(k, -1)
    y = np.matmul(w2, cols).reshape(n, k, h_out, w_out)
    if bias is not None:
        if bias.shape != (k,):
            raise DimensionError(f"conv2d: bias shape {bias.shape} != ({k},)")
        y = y + bias.data[:, None, None]
    out = Tensor(y)

    def vjp(g):
        g2 = g.reshape(n, k, -1)
        gw = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(weight.shape)
        gcols = np.matmul(w2.T, g2)
        gxp = _col2im(gcols, xp.shape, kh, kw, stride, h_out, w_out)
        gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record(out, inputs, vjp)


def depthwise_conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    c_w, one, kh, kw = weight.shape
    if one != 1:
        raise DimensionError(f"depthwise weight must be (C,1,kh,kw), got {weight.shape}")
    h_out, w_out = _conv_geometry(x, kh, kw, stride, padding)
    n, c, h, w = x.shape
    if c != c_w:
        raise DimensionError(f"depthwise_conv2d: input has {c} channels, weight has {c_w}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    y = np.zeros((n, c, h_out, w_out), dtype=x.data.dtype)
    for u in range(kh):
        for v in range(kw):
            xs = xp[:, :, u : u + stride * h_out : stride, v : v + stride * w_out : stride]
            y += xs * weight.data[:, 0, u, v][None, :, None, None]
    out = Tensor(y)

    def vjp(g):
        gw = np.zeros_like(weight.data)
        gxp = np.zeros_like(xp)
        for u in range(kh):
            for v in range(kw):
                xs = xp[:, :, u : u + stride * h_out : stride, v : v + stride * w_out : stride]
                gw[:, 0, u, v] = np.einsum("nchw,nchw->c", g, xs)
                gxp[:, :, u : u + stride * h_out : stride, v : v + stride * w_out : stride] += (
                    g * weight.data[:, 0, u, v][None, :, None, None]
                )
        gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        return gx, gw

    return record(out, (x, weight), vjp)


# ---------------------------------------------------------------------------
# normalization


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply the learned affine."""
    if eps <= 0:
        raise ConfigError(f"epsilon must be positive, got {eps}")
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm affine shapes {gamma.shape}/{beta.shape} != ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.data.dtype))
    xhat = xc * inv
    out = Tensor(xhat * gamma.data + beta.data)

    def vjp(g):
        g_xhat = g * gamma.data
        m1 = g_xhat.mean(axis=-1, keepdims=True)
        m2 = (g_xhat * xhat).mean(axis=-1, keepdims=True)
        gx = inv * (g_xhat - m1 - xhat * m2)
        reduce_axes = tuple(range(g.ndim - 1))
        g_gamma = (g * xhat).sum(axis=reduce_axes)
        g_beta = g.sum(axis=reduce_axes)
        return gx, g_gamma, g_beta

    return record(out, (x, gamma, beta), vjp)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    eps: float = 1e-5,
    momentum: float = 0.1,
    train: bool = True,
) -> Tensor:
    """Per-channel normalization over (N, H, W) with running statistics.

    Training mode normalizes by batch statistics and updates the running
    buffers in place; inference mode uses the stored statistics.
    """
    if eps <= 0:
        raise ConfigError(f"epsilon must be positive, got {eps}")
    if x.ndim != 4:
        raise DimensionError(f"batch_norm expects NCHW, got shape {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batch_norm affine shapes {gamma.shape}/{beta.shape} != ({c},)")
    gam = gamma.data[None, :, None, None]
    bet = beta.data[None, :, None, None]
    if train:
        mu = x.data.mean(axis=(0, 2, 3))
        xc = x.data - mu[None, :, None, None]
        var = (xc * xc).mean(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.astype(running_mean.dtype)
        running_var *= 1.0 - momentum
        running_var += momentum * var.astype(running_var.dtype)
        inv = (1.0 / np.sqrt(var + eps)).astype(x.data.dtype)[None, :, None, None]
        xhat = xc * inv
        out = Tensor(xhat * gam + bet)

        def vjp(g):
            g_xhat = g * gam
            m1 = g_xhat.mean(axis=(0, 2, 3), keepdims=True)
            m2 = (g_xhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
            gx = inv * (g_xhat - m1 - xhat * m2)
            g_gamma = (g * xhat).sum(axis=(0, 2, 3))
            g_beta = g.sum(axis=(0, 2, 3))
            return gx, g_gamma, g_beta

        return record(out, (x, gamma, beta), vjp)

    inv = (1.0 / np.sqrt(running_var + eps)).astype(x.data.dtype)[None, :, None, None]
    mu = running_mean.astype(x.data.dtype)[None, :, None, None]
    xhat = (x.data - mu) * inv
    out = Tensor(xhat * gam + bet)

    def vjp_eval(g):
        gx = g * gam * inv
        g_gamma = (g * xhat).sum(axis=(0, 2, 3))
        g_beta = g.sum(axis=(0, 2, 3))
        return gx, g_gamma, g_beta

    return record(out, (x, gamma, beta), vjp_eval)


def normalize(kind: str, x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5, **batch_kwargs) -> Tensor:
    if kind == "layer":
        return layer_norm(x, gamma, beta, eps=eps)
    if kind == "batch":
        return batch_norm(x, gamma, beta, eps=eps, **batch_kwargs)
    raise ConfigError(f"unknown normalization kind {kind!r}")


# ---------------------------------------------------------------------------
# nonlinearities


def sigmoid(x: Tensor) -> Tensor:
    y = _special.expit(x.data)
    out = Tensor(y)
    return record(out, (x,), lambda g: (g * y * (1.0 - y),))


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0))
    return record(out, (x,), lambda g: (g * (x.data > 0),))


def silu(x: Tensor) -> Tensor:
    s = _special.expit(x.data)
    out = Tensor(x.data * s)
    return record(out, (x,), lambda g: (g * (s * (1.0 + x.data * (1.0 - s))),))


_INV_SQRT2 = float(1.0 / np.sqrt(2.0))
_INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))


def gelu(x: Tensor) -> Tensor:
    phi = 0.5 * (1.0 + _special.erf(x.data * _INV_SQRT2))
    out = Tensor(x.data * phi)

    def vjp(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
        return (g * (phi + x.data * pdf),)

    return record(out, (x,), vjp)


_ACTIVATIONS = {"sigmoid": sigmoid, "relu": relu, "silu": silu, "gelu": gelu}


def activation(kind: str, x: Tensor) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ConfigError(f"unknown activation kind {kind!r}") from None
    return fn(x)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if x.ndim == 0 or not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax axis {axis} invalid for shape {x.shape}")
    ax = axis % x.ndim
    shifted = x.data - x.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=ax, keepdims=True)
    out = Tensor(y)

    def vjp(g):
        inner = (g * y).sum(axis=ax, keepdims=True)
        return (y * (g - inner),)

    return record(out, (x,), vjp)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when rate is 0."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0,1), got {rate}")
    if rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    out = Tensor(x.data * keep)
    return record(out, (x,), lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# objective


def bce_loss(prob: Tensor, label: Tensor) -> Tensor:
    """Mean binary cross-entropy over all elements.

    Probabilities are clamped to [BCE_EPS, 1 - BCE_EPS] before the logarithm;
    the gradient is zero outside the clamp interval.
    """
    y = label.data if isinstance(label, Tensor) else np.asarray(label)
    if prob.shape != y.shape:
        raise DimensionError(f"bce_loss shapes differ: {prob.shape} vs {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise InputError("bce_loss labels must be 0 or 1")
    y = y.astype(prob.data.dtype)
    p = np.clip(prob.data, BCE_EPS, 1.0 - BCE_EPS)
    n = p.size
    loss = -(y * np.log(p) + (1.0 - y) * np.log1p(-p)).sum() / n
    out = Tensor(np.asarray(loss, dtype=prob.data.dtype))

    def vjp(g):
        inside = (prob.data > BCE_EPS) & (prob.data < 1.0 - BCE_EPS)
        gp = g * inside * (-(y / p) + (1.0 - y) / (1.0 - p)) / n
        return (gp.astype(prob.data.dtype),)

    return record(out, (prob,), vjp)


# ---------------------------------------------------------------------------
# attention


@dataclass
class AttentionParams:
    """Projection weights for one multi-head attention block."""

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    bq: Tensor | None = None
    bk: Tensor | None = None
    bv: Tensor | None = None
    bo: Tensor | None = None

    def tensors(self) -> list[Tensor]:
        out = [self.wq, self.wk, self.wv, self.wo]
        out += [b for b in (self.bq, self.bk, self.bv, self.bo) if b is not None]
        return out


def multi_head_attention(queries: Tensor, keys_values: Tensor, params: AttentionParams, heads: int) -> Tensor:
    """Scaled dot-product attention; self-attention when both inputs coincide.

    Scale is 1/sqrt(D/heads); heads are concatenated and output-projected.
    """
    if queries.ndim != 3 or keys_values.ndim != 3:
        raise DimensionError("attention expects (N, T, D) tensors")
    n, tq, d = queries.shape
    _, tkv, d_kv = keys_values.shape
    if d != d_kv:
        raise DimensionError(f"attention width mismatch: {d} vs {d_kv}")
    if d % heads != 0:
        raise ConfigError(f"token width {d} not divisible by {heads} heads")
    dh = d // heads

    def split(t: Tensor, length: int) -> Tensor:
        t = reshape(t, (n, length, heads, dh))
        return permute(t, (0, 2, 1, 3))  # (N, H, T, dh)

    q = split(linear(queries, params.wq, params.bq), tq)
    k = split(linear(keys_values, params.wk, params.bk), tkv)
    v = split(linear(keys_values, params.wv, params.bv), tkv)
    logits = scale(matmul(q, transpose_last_two(k)), 1.0 / np.sqrt(dh))
    weights = softmax(logits, axis=-1)
    ctx = matmul(weights, v)  # (N, H, Tq, dh)
    merged = reshape(permute(ctx, (0, 2, 1, 3)), (n, tq, d))
    return linear(merged, params.wo, params.bo)
