"""The differentiable operator set.

Everything the segmentation network needs: dense products, grouped 2-D
cross-correlation, transposed convolution, nearest upsampling, channel layer
norm, softmax, the three activations, and the elementwise/reduction plumbing
that losses are built from.  Broadcasting is deliberately narrow: scalars and
a trailing bias vector, nothing else.

Convolution here is cross-correlation (no kernel flip), the convention of
every modern framework.  Data layout is NHWC row-major throughout; conv
weights are ``(kh, kw, c_in // groups, c_out)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .engine import Tensor, make_op
from .errors import ConfigError, ShapeError, UsageError

# tanh-approximation GELU: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3)))
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


# --- elementwise arithmetic -------------------------------------------------
#
# Engine tensors always have ndim >= 1, so a "scalar" operand is any
# single-element vector (whatever Python number got promoted to).

def _binary_shapes(a, b, op, allow_bias=False):
    """Classify the allowed operand pairings: equal, scalar, or bias."""
    if a.shape == b.shape:
        return "equal"
    if b.size == 1 and b.ndim <= 1:
        return "bscalar"
    if a.size == 1 and a.ndim <= 1:
        return "ascalar"
    if allow_bias and b.ndim == 1 and a.ndim > 1 and a.shape[-1] == b.shape[0]:
        return "bias"
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_for(kind, g, side, shape):
    if kind == "equal":
        return g
    if kind == "bscalar":
        return g.sum().reshape(shape) if side == "b" else g
    if kind == "ascalar":
        return g.sum().reshape(shape) if side == "a" else g
    # bias: b has shape (C,) against a's trailing axis
    return g.reshape(-1, g.shape[-1]).sum(axis=0) if side == "b" else g


def add(a, b):
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    kind = _binary_shapes(a, b, "add", allow_bias=True)
    out = a.data + b.data
    sa, sb = a.shape, b.shape

    def grad(g):
        return _reduce_for(kind, g, "a", sa), _reduce_for(kind, g, "b", sb)

    return make_op("add", out, (a, b), grad)


def sub(a, b):
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    kind = _binary_shapes(a, b, "sub", allow_bias=True)
    out = a.data - b.data
    sa, sb = a.shape, b.shape

    def grad(g):
        return _reduce_for(kind, g, "a", sa), -_reduce_for(kind, g, "b", sb)

    return make_op("sub", out, (a, b), grad)


def mul(a, b):
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    kind = _binary_shapes(a, b, "mul")
    out = a.data * b.data
    ad, bd = a.data, b.data
    sa, sb = a.shape, b.shape

    def grad(g):
        return _reduce_for(kind, g * bd, "a", sa), _reduce_for(kind, g * ad, "b", sb)

    return make_op("mul", out, (a, b), grad)


def div(a, b):
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    kind = _binary_shapes(a, b, "div")
    out = a.data / b.data
    ad, bd = a.data, b.data
    sa, sb = a.shape, b.shape

    def grad(g):
        ga = _reduce_for(kind, g / bd, "a", sa)
        gb = _reduce_for(kind, -g * ad / (bd * bd), "b", sb)
        return ga, gb

    return make_op("div", out, (a, b), grad)


def neg(a):
    a = _as_tensor(a)
    return make_op("neg", -a.data, (a,), lambda g: (-g,))


def sum_(t, axis=None, keepdims=False):
    t = _as_tensor(t)
    out = t.data.sum(axis=axis, keepdims=keepdims)
    shape = t.shape

    def grad(g):
        gx = np.asarray(g)
        if axis is not None and not keepdims:
            gx = np.expand_dims(gx, axis)
        return (np.broadcast_to(gx, shape).astype(t.dtype, copy=False).copy(),)

    return make_op("sum", np.asarray(out), (t,), grad)


def mean(t, axis=None, keepdims=False):
    t = _as_tensor(t)
    count = t.size if axis is None else np.prod(
        [t.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
    )
    s = sum_(t, axis=axis, keepdims=keepdims)
    return mul(s, 1.0 / float(count))


def reshape(t, shape):
    t = _as_tensor(t)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != t.size:
        raise ShapeError(f"cannot reshape {t.shape} to {shape}")
    old = t.shape
    return make_op("reshape", t.data.reshape(shape), (t,),
                   lambda g: (g.reshape(old),))


def transpose(t, axes):
    t = _as_tensor(t)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_op("transpose", np.ascontiguousarray(t.data.transpose(axes)),
                   (t,), lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def concat(tensors, axis):
    ts = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    out = np.concatenate([t.data for t in ts], axis=axis)
    splits = np.cumsum(sizes)[:-1]

    def grad(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return make_op("concat", out, tuple(ts), grad)


# --- dense products ----------------------------------------------------------

def matmul(a, b):
    """Matrix product.

    Supports plain 2-D x 2-D, stacked-batch ``a`` against a 2-D ``b`` (the
    channel-projection case), and equal-batch stacked products (attention).
    """
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ShapeError(f"matmul needs 2-D+ operands, got {a.shape} and {b.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    if bd.ndim == 2:
        out = ad @ bd

        def grad(g):
            ga = g @ bd.T
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return ga, gb

    elif ad.shape[:-2] == bd.shape[:-2]:
        out = np.matmul(ad, bd)

        def grad(g):
            return np.matmul(g, bd.swapaxes(-1, -2)), np.matmul(ad.swapaxes(-1, -2), g)

    else:
        raise ShapeError(f"matmul batch extents differ: {a.shape} x {b.shape}")
    return make_op("matmul", out, (a, b), grad)


# --- convolution family -------------------------------------------------------

@dataclass(frozen=True)
class ConvSpec:
    """Static description of one 2-D convolution.

    ``groups == in_channels`` encodes depthwise convolution; a 1x1 kernel
    with ``groups == 1`` encodes pointwise convolution.  ``padding`` is
    "same" or an explicit symmetric integer.
    """

    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: str | int = "same"
    groups: int = 1

    def __post_init__(self):
        if self.kernel_h < 1 or self.kernel_w < 1:
            raise ConfigError(f"kernel extents must be positive, got "
                              f"{self.kernel_h}x{self.kernel_w}")
        if self.stride < 1:
            raise ConfigError(f"stride must be positive, got {self.stride}")
        if self.groups < 1:
            raise ConfigError(f"groups must be positive, got {self.groups}")
        if self.padding != "same" and int(self.padding) < 0:
            raise ConfigError(f"padding must be 'same' or >= 0, got {self.padding}")


def conv2d(x, w, b=None, spec=None):
    """Grouped 2-D cross-correlation over NHWC input.

    ``x``: (N, H, W, C_in), ``w``: (kh, kw, C_in // groups, C_out),
    optional ``b``: (C_out,).  Output extents follow the explicit-padding
    formula ``(H + 2p - kh) // stride + 1`` or ceil(H / stride) for "same".
    """
    if spec is None:
        raise UsageError("conv2d requires a ConvSpec")
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be NHWC, got {x.shape}")
    if w.ndim != 4:
        raise ShapeError(f"conv2d weight must be (kh, kw, cin/groups, cout), got {w.shape}")
    n, h, wd, cin = x.shape
    kh, kw, cpg, cout = w.shape
    g = spec.groups
    if (kh, kw) != (spec.kernel_h, spec.kernel_w):
        raise ShapeError(f"weight kernel {kh}x{kw} does not match spec "
                         f"{spec.kernel_h}x{spec.kernel_w}")
    if cin % g != 0 or cout % g != 0:
        raise ShapeError(f"channels ({cin} in, {cout} out) not divisible by "
                         f"groups {g}")
    if cpg != cin // g:
        raise ShapeError(f"weight expects {cpg} channels per group, input has "
                         f"{cin} channels over {g} groups")
    pads, _, _ = kernels.resolve_padding(h, wd, kh, kw, spec.stride, spec.padding)
    y = kernels.conv2d_forward(x.data, w.data, spec.stride, pads, g)

    if b is not None:
        b = _as_tensor(b)
        if b.shape != (cout,):
            raise ShapeError(f"bias shape {b.shape} does not match {cout} output channels")
        y = y + b.data

    x_shape = x.shape

    def grad(grads):
        gx = kernels.conv2d_grad_input(grads, w.data, x_shape, spec.stride, pads, g)
        gw = kernels.conv2d_grad_weight(grads, x.data, kh, kw, spec.stride, pads, g)
        if b is None:
            return gx, gw
        return gx, gw, grads.sum(axis=(0, 1, 2))

    inputs = (x, w) if b is None else (x, w, b)
    return make_op("conv2d", y, inputs, grad)


def transpose_conv2d(x, w, b=None, stride=2):
    """Stride-for-stride learned upsampling (kernel size == stride).

    Each input pixel scatters ``value * kernel`` into a disjoint
    ``stride x stride`` output tile, so the output is exactly
    (N, H*stride, W*stride, C_out).  ``w``: (stride, stride, C_in, C_out).
    """
    if stride not in (2, 4):
        raise ConfigError(f"transpose_conv2d stride must be 2 or 4, got {stride}")
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"transpose_conv2d wants NHWC x and 4-D w, got {x.shape}, {w.shape}")
    n, h, wd, cin = x.shape
    kh, kw, wcin, cout = w.shape
    if kh != stride or kw != stride:
        raise ShapeError(f"kernel {kh}x{kw} must equal stride {stride}")
    if wcin != cin:
        raise ShapeError(f"weight expects {wcin} input channels, got {cin}")
    tiles = np.einsum("nhwc,ijco->nhiwjo", x.data, w.data)
    y = tiles.reshape(n, h * stride, wd * stride, cout)
    if b is not None:
        b = _as_tensor(b)
        if b.shape != (cout,):
            raise ShapeError(f"bias shape {b.shape} does not match {cout} output channels")
        y = y + b.data

    def grad(g):
        g6 = g.reshape(n, h, stride, wd, stride, cout)
        gx = np.einsum("nhiwjo,ijco->nhwc", g6, w.data)
        gw = np.einsum("nhwc,nhiwjo->ijco", x.data, g6)
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 1, 2))

    inputs = (x, w) if b is None else (x, w, b)
    return make_op("transpose_conv2d", y, inputs, grad)


def upsample_nearest(x, scale):
    """Replicate each pixel into a ``scale x scale`` block."""
    if int(scale) != scale or scale < 1:
        raise ConfigError(f"upsample scale must be a positive integer, got {scale}")
    scale = int(scale)
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"upsample_nearest input must be NHWC, got {x.shape}")
    n, h, w, c = x.shape
    out = np.repeat(np.repeat(x.data, scale, axis=1), scale, axis=2)

    def grad(g):
        return (g.reshape(n, h, scale, w, scale, c).sum(axis=(2, 4)),)

    return make_op("upsample_nearest", out, (x,), grad)


# --- normalization and activations --------------------------------------------

def layer_norm(x, gamma, beta, eps=1e-6):
    """Normalize over the trailing channel axis, then scale and shift."""
    if eps <= 0:
        raise ConfigError(f"layer_norm eps must be positive, got {eps}")
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layer_norm affine shapes {gamma.shape}/{beta.shape} "
                         f"do not match channel count {c}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat = (x.data - mu) * inv
    out = xhat * gamma.data + beta.data
    gd = gamma.data

    def grad(g):
        lead = tuple(range(g.ndim - 1))
        gbeta = g.sum(axis=lead)
        ggamma = (g * xhat).sum(axis=lead)
        dxhat = g * gd
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        gx = inv * (dxhat - m1 - xhat * m2)
        return gx, ggamma, gbeta

    return make_op("layer_norm", out, (x, gamma, beta), grad)


def softmax(x):
    """Stable softmax over the trailing axis (max-subtraction)."""
    x = _as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def grad(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return make_op("softmax", s, (x,), grad)


def relu(x):
    x = _as_tensor(x)
    out = np.maximum(x.data, 0)
    mask = x.data > 0

    def grad(g):
        return (g * mask,)

    return make_op("relu", out, (x,), grad)


def sigmoid(x):
    x = _as_tensor(x)
    xd = x.data
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    e = np.exp(xd[~pos])
    out[~pos] = e / (1.0 + e)

    def grad(g):
        return (g * out * (1.0 - out),)

    return make_op("sigmoid", out, (x,), grad)


def gelu(x):
    """tanh-approximation GELU with constants sqrt(2/pi) and 0.044715."""
    x = _as_tensor(x)
    xd = x.data
    u = _GELU_C * (xd + _GELU_A * xd ** 3)
    t = np.tanh(u)
    out = 0.5 * xd * (1.0 + t)

    def grad(g):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * xd ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t ** 2) * du),)

    return make_op("gelu", out, (x,), grad)


_ACTIVATIONS = {"gelu": gelu, "relu": relu, "sigmoid": sigmoid}


def activation(x, kind):
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ConfigError(f"unknown activation {kind!r}; expected one of "
                          f"{sorted(_ACTIVATIONS)}") from None
    return fn(x)
