"""Network building blocks.

Three block types drive the architecture: a convolutional token mixer
(pointwise -> depthwise -> pointwise inside a pre-norm residual), a
self-attention block, and the multi-scale upsampling link that merges a
deep decoder feature into one four times shallower.  Both residual blocks
share the same channel MLP: ``x + gelu(norm(x) @ w1) @ w2``.

Activation choices the equations leave open: GELU inside the mixers and
MLP (the MetaFormer lineage), ReLU as the default merge gate in the
upsampling link (configurable to sigmoid).
"""

from __future__ import annotations

from dataclasses import dataclass

from .engine import Tensor
from .errors import ConfigError, ShapeError
from .ops import (
    ConvSpec,
    activation,
    add,
    conv2d,
    gelu,
    layer_norm,
    matmul,
    reshape,
    softmax,
    transpose,
    upsample_nearest,
)


@dataclass
class Affine:
    """Layer-norm scale/shift pair."""

    gamma: Tensor
    beta: Tensor


@dataclass
class Conv:
    """Convolution weight plus optional bias."""

    w: Tensor
    b: Tensor | None = None


@dataclass
class ConvFormerParams:
    """Pointwise/depthwise mixer block: C -> r*C -> (7x7 dw) -> C, plus MLP."""

    norm1: Affine
    pw1: Conv
    dw: Conv
    pw2: Conv
    norm2: Affine
    mlp_w1: Tensor
    mlp_w2: Tensor


@dataclass
class TransformerParams:
    """Self-attention block: C x C projections for q/k/v/out, plus MLP."""

    norm1: Affine
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    heads: int
    norm2: Affine
    mlp_w1: Tensor
    mlp_w2: Tensor


@dataclass
class MUParams:
    """Multi-scale upsampling link: two parallel convs over a 4x upsample."""

    conv3: Conv
    conv7: Conv
    scale: int = 4
    gate: str = "relu"


@dataclass
class UpsampleLinkParams:
    """Ablation variant of the link: plain upsample + 1x1 channel projection."""

    proj: Conv
    scale: int = 4
    gate: str = "relu"


def _pw(x, conv):
    kh, kw = conv.w.shape[0], conv.w.shape[1]
    return conv2d(x, conv.w, conv.b, ConvSpec(kh, kw, 1, "same", 1))


def channel_mlp(x, norm, w1, w2):
    """Residual two-layer channel mixer: ``x + gelu(norm(x) @ w1) @ w2``."""
    c = x.shape[-1]
    if w1.shape[0] != c or w2.shape[-1] != c or w1.shape[-1] != w2.shape[0]:
        raise ShapeError(f"channel_mlp weights {w1.shape} x {w2.shape} do not map "
                         f"{c} channels back to {c}")
    h = layer_norm(x, norm.gamma, norm.beta)
    h = matmul(gelu(matmul(h, w1)), w2)
    return add(x, h)


def conv_former_block(x, p):
    """Token mixing by pointwise -> GELU -> depthwise -> pointwise convs."""
    c = x.shape[-1]
    if p.pw1.w.shape[2] != c or p.pw2.w.shape[3] != c:
        raise ShapeError(f"conv mixer params map {p.pw1.w.shape[2]} -> "
                         f"{p.pw2.w.shape[3]} channels but input has {c}")
    h = layer_norm(x, p.norm1.gamma, p.norm1.beta)
    h = gelu(_pw(h, p.pw1))
    rc = h.shape[-1]
    kh, kw = p.dw.w.shape[0], p.dw.w.shape[1]
    h = conv2d(h, p.dw.w, p.dw.b, ConvSpec(kh, kw, 1, "same", groups=rc))
    h = _pw(h, p.pw2)
    x = add(x, h)
    return channel_mlp(x, p.norm2, p.mlp_w1, p.mlp_w2)


def self_attention(x, p):
    """Scaled dot-product attention over the flattened spatial positions.

    Tokens are the H*W pixels; no positional embedding, so the op is
    equivariant to any permutation of the token axis.
    """
    n, h, w, c = x.shape
    if c % p.heads != 0:
        raise ConfigError(f"heads {p.heads} must divide channels {c}")
    dh = c // p.heads
    t = h * w
    tok = reshape(x, (n, t, c))
    q = _split_heads(matmul(tok, p.wq), n, t, p.heads, dh)
    k = _split_heads(matmul(tok, p.wk), n, t, p.heads, dh)
    v = _split_heads(matmul(tok, p.wv), n, t, p.heads, dh)
    scores = matmul(q, transpose(k, (0, 1, 3, 2))) * (1.0 / dh ** 0.5)
    attn = softmax(scores)
    out = matmul(attn, v)                      # (n, heads, t, dh)
    out = transpose(out, (0, 2, 1, 3))         # (n, t, heads, dh)
    out = reshape(out, (n, t, c))
    out = matmul(out, p.wo)
    return reshape(out, (n, h, w, c))


def _split_heads(tok, n, t, heads, dh):
    return transpose(reshape(tok, (n, t, heads, dh)), (0, 2, 1, 3))


def transformer_block(x, p):
    """Pre-norm residual attention followed by the channel MLP."""
    h = self_attention(layer_norm(x, p.norm1.gamma, p.norm1.beta), p)
    x = add(x, h)
    return channel_mlp(x, p.norm2, p.mlp_w1, p.mlp_w2)


def mu_block(x_deep, x_shallow, p):
    """Merge a deep decoder feature into one 4x shallower.

    The deep feature is nearest-upsampled by 4, passed through the link's
    convs (3x3 + 7x7 summed, or the plain 1x1 projection variant), added to
    the shallow feature, and gated by the link activation.
    """
    n, hd, wd, cd = x_deep.shape
    ns, hs, ws, cs = x_shallow.shape
    if (hs, ws) != (hd * p.scale, wd * p.scale) or ns != n:
        raise ShapeError(f"shallow feature {x_shallow.shape} is not {p.scale}x "
                         f"the deep feature {x_deep.shape}")
    u = upsample_nearest(x_deep, p.scale)
    if isinstance(p, UpsampleLinkParams):
        m = _pw(u, p.proj)
    else:
        m3 = conv2d(u, p.conv3.w, p.conv3.b,
                    ConvSpec(p.conv3.w.shape[0], p.conv3.w.shape[1], 1, "same", 1))
        m7 = conv2d(u, p.conv7.w, p.conv7.b,
                    ConvSpec(p.conv7.w.shape[0], p.conv7.w.shape[1], 1, "same", 1))
        m = add(m3, m7)
    if m.shape[-1] != cs:
        raise ShapeError(f"link maps {cd} -> {m.shape[-1]} channels but the "
                         f"shallow feature has {cs}")
    return activation(add(x_shallow, m), p.gate)
