"""Model assembly: encoder, decoder, cross-scale links, and head.

The encoder is a four-stage pyramid: a stride-4 stem, then stride-2
transition convs between stages, with convolutional mixer blocks in the
first two stages and attention blocks in the last two.  For input W x H the
stage features measure (W/4, H/4, F1) .. (W/32, H/32, F4).

The decoder climbs back in five stride-2 transposed-conv steps.  The first
three fuse the matching encoder skip (concatenate, then 3x3 conv to the
step's channel count); the last two, where no skip exists, use a plain 3x3
refinement conv.  Up to two multi-scale links re-inject a deep decoder
feature into the step two levels shallower (an exact 4x resolution gap):
link A from step-1 output into step-3 output, link B from step-2 into
step-4.  With one link enabled, only the deeper link A runs.  Decoder convs
are linear; the only nonlinearities after the encoder are the link gates
and the final sigmoid.

Five-step reading of the decoder: the feature is upsampled 2x per step, the
cross link jumps 4x over a two-step gap, and W/32 -> W requires five
doublings; this also makes exactly two 4x links possible, matching the
two-link ablation ladder.  This is the largest architectural inference in
the module and is centralized here.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import engine
from .blocks import (
    Affine,
    Conv,
    ConvFormerParams,
    MUParams,
    TransformerParams,
    UpsampleLinkParams,
    conv_former_block,
    mu_block,
    transformer_block,
)
from .engine import Tensor
from .errors import ConfigError, ShapeError
from .ops import ConvSpec, concat, conv2d, sigmoid, transpose_conv2d

MU_MODES = ("none", "plain_upsample", "mu")
STAGE_KINDS = ("conv", "attn")


@dataclass
class ModelConfig:
    """Everything that determines the network, desk-scale friendly.

    ``mu_mode`` selects the cross-link flavor ("mu" = the two-conv
    multi-scale link, "plain_upsample" = the 1x1-projection ablation) and
    ``mu_count`` how many links exist (1 enables the deeper link only).
    """

    image_size: tuple[int, int] = (352, 352)      # (W, H)
    in_channels: int = 3
    filters: tuple[int, ...] = (64, 128, 320, 512)
    stage_depths: tuple[int, ...] = (2, 2, 2, 2)
    stage_kinds: tuple[str, ...] = ("conv", "conv", "attn", "attn")
    stage_heads: tuple[int, ...] = (1, 1, 4, 8)
    mixer_expansion: int = 2
    dw_kernel: int = 7
    mlp_expansion: int = 4
    mu_mode: str = "none"
    mu_count: int = 0
    mu_gate: str = "relu"
    head_channels: int = 64

    def validate(self):
        w, h = self.image_size
        if w % 32 != 0 or h % 32 != 0:
            raise ConfigError(f"image_size {self.image_size} must be divisible by 32")
        if len(self.filters) != 4 or any(f < 1 for f in self.filters):
            raise ConfigError(f"filters {self.filters} must be four positive counts")
        if any(a >= b for a, b in zip(self.filters, self.filters[1:])):
            raise ConfigError(f"filters {self.filters} must be strictly increasing")
        if len(self.stage_depths) != 4 or any(d < 1 for d in self.stage_depths):
            raise ConfigError(f"stage_depths {self.stage_depths} must be four positive counts")
        if len(self.stage_kinds) != 4 or any(k not in STAGE_KINDS for k in self.stage_kinds):
            raise ConfigError(f"stage_kinds {self.stage_kinds} must be four of {STAGE_KINDS}")
        if len(self.stage_heads) != 4:
            raise ConfigError(f"stage_heads {self.stage_heads} must list four counts")
        for kind, heads, f in zip(self.stage_kinds, self.stage_heads, self.filters):
            if kind == "attn" and (heads < 1 or f % heads != 0):
                raise ConfigError(f"heads {heads} must divide stage width {f}")
        if self.mu_mode not in MU_MODES:
            raise ConfigError(f"mu_mode {self.mu_mode!r} must be one of {MU_MODES}")
        if self.mu_count not in (0, 1, 2):
            raise ConfigError(f"mu_count {self.mu_count} must be 0, 1, or 2")
        if self.mu_count > 0 and self.mu_mode == "none":
            raise ConfigError("mu_count > 0 requires mu_mode 'plain_upsample' or 'mu'")
        if self.mu_gate not in ("relu", "sigmoid"):
            raise ConfigError(f"mu_gate {self.mu_gate!r} must be 'relu' or 'sigmoid'")
        if self.in_channels < 1 or self.head_channels < 1:
            raise ConfigError("channel counts must be positive")
        if self.mixer_expansion < 1 or self.mlp_expansion < 1 or self.dw_kernel < 1:
            raise ConfigError("expansions and kernel sizes must be positive")
        return self


@dataclass
class FeaturePyramid:
    """Encoder stage outputs; x_i has extents (H / 2^(i+1), W / 2^(i+1), F_i)."""

    x1: Tensor
    x2: Tensor
    x3: Tensor
    x4: Tensor

    def as_list(self):
        return [self.x1, self.x2, self.x3, self.x4]


@dataclass
class DecoderStep:
    up: Conv               # transposed conv, stride 2
    fuse: Conv             # 3x3 conv after skip concat (or plain refinement)


@dataclass
class ModelParams:
    cfg: ModelConfig
    stem: Conv
    stages: list
    downs: list
    steps: list
    head: Conv
    link_a: object = None
    link_b: object = None


class _Init:
    """Deterministic initializer drawing in a fixed traversal order.

    He-uniform on weights an activation follows (its gain-2 is exactly the
    compensation for the activation); Glorot-uniform on linear positions,
    where He would double variance per layer and, stacked over the encoder
    trunk plus ten decoder convs, saturate the output sigmoid at init.
    """

    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)

    def conv(self, kh, kw, cin_per_group, cout, bias=True, fan_in=None,
             fan_out=None, linear=False):
        fan_in = fan_in if fan_in is not None else kh * kw * cin_per_group
        if linear:
            fan_out = fan_out if fan_out is not None else kh * kw * cout
            limit = np.sqrt(6.0 / (fan_in + fan_out))
        else:
            limit = np.sqrt(6.0 / fan_in)
        w = self.rng.uniform(-limit, limit, size=(kh, kw, cin_per_group, cout))
        w = Tensor(w.astype(engine.default_dtype()), requires_grad=True)
        b = Tensor(np.zeros(cout, dtype=engine.default_dtype()), requires_grad=True) if bias else None
        return Conv(w, b)

    def dense(self, cin, cout, linear=False):
        limit = np.sqrt(6.0 / (cin + cout)) if linear else np.sqrt(6.0 / cin)
        w = self.rng.uniform(-limit, limit, size=(cin, cout))
        return Tensor(w.astype(engine.default_dtype()), requires_grad=True)

    def zero_conv(self, kh, kw, cin, cout):
        dt = engine.default_dtype()
        return Conv(Tensor(np.zeros((kh, kw, cin, cout), dtype=dt), requires_grad=True),
                    Tensor(np.zeros(cout, dtype=dt), requires_grad=True))

    def affine(self, c):
        dt = engine.default_dtype()
        return Affine(Tensor(np.ones(c, dtype=dt), requires_grad=True),
                      Tensor(np.zeros(c, dtype=dt), requires_grad=True))


def build_model(cfg, rng_seed):
    """Deterministically initialized parameter set for ``cfg``.

    Weights followed by an activation are He-uniform over fan-in; linear
    positions are Glorot-uniform; biases and norm shifts start at zero,
    norm scales at one; the 1x1 head starts at zero so the untrained model
    predicts 0.5 everywhere instead of saturated noise.  Link parameters
    are drawn after everything else so configurations that differ only in
    links share all common parameter values for a given seed.
    """
    cfg.validate()
    init = _Init(rng_seed)
    f = cfg.filters
    e = cfg.mlp_expansion

    stem = init.conv(7, 7, cfg.in_channels, f[0], linear=True)

    stages = []
    for i in range(4):
        blocks = []
        for _ in range(cfg.stage_depths[i]):
            c = f[i]
            if cfg.stage_kinds[i] == "conv":
                rc = c * cfg.mixer_expansion
                blocks.append(ConvFormerParams(
                    norm1=init.affine(c),
                    pw1=init.conv(1, 1, c, rc),
                    dw=init.conv(cfg.dw_kernel, cfg.dw_kernel, 1, rc, linear=True,
                                 fan_out=cfg.dw_kernel ** 2),
                    pw2=init.conv(1, 1, rc, c, linear=True),
                    norm2=init.affine(c),
                    mlp_w1=init.dense(c, e * c),
                    mlp_w2=init.dense(e * c, c, linear=True),
                ))
            else:
                blocks.append(TransformerParams(
                    norm1=init.affine(c),
                    wq=init.dense(c, c, linear=True),
                    wk=init.dense(c, c, linear=True),
                    wv=init.dense(c, c, linear=True),
                    wo=init.dense(c, c, linear=True),
                    heads=cfg.stage_heads[i],
                    norm2=init.affine(c),
                    mlp_w1=init.dense(c, e * c),
                    mlp_w2=init.dense(e * c, c, linear=True),
                ))
        stages.append(blocks)

    downs = [init.conv(3, 3, f[i], f[i + 1], linear=True) for i in range(3)]

    hc = cfg.head_channels
    step_channels = _decoder_channels(cfg)
    steps = []
    for cin, cout, has_skip in step_channels:
        # scatter semantics: each output pixel sees exactly cin weights
        up = init.conv(2, 2, cin, cout, fan_in=cin, fan_out=cout, linear=True)
        fuse_in = 2 * cout if has_skip else cout
        steps.append(DecoderStep(up=up, fuse=init.conv(3, 3, fuse_in, cout, linear=True)))

    head = init.zero_conv(1, 1, hc, 1)

    params = ModelParams(cfg=cfg, stem=stem, stages=stages, downs=downs,
                         steps=steps, head=head)
    if cfg.mu_count >= 1:
        params.link_a = _init_link(init, cfg, deep_c=step_channels[0][1], out_c=hc)
    if cfg.mu_count == 2:
        params.link_b = _init_link(init, cfg, deep_c=step_channels[1][1], out_c=hc)
    return params


def _decoder_channels(cfg):
    """(cin, cout, has_skip) per decoder step, deepest first."""
    f = cfg.filters
    hc = cfg.head_channels
    return [
        (f[3], f[2], True),    # to W/16, fuse x3
        (f[2], f[1], True),    # to W/8, fuse x2
        (f[1], hc, True),      # to W/4, fuse x1
        (hc, hc, False),       # to W/2
        (hc, hc, False),       # to W
    ]


def _init_link(init, cfg, deep_c, out_c):
    if cfg.mu_mode == "plain_upsample":
        return UpsampleLinkParams(proj=init.conv(1, 1, deep_c, out_c, linear=True),
                                  gate=cfg.mu_gate)
    return MUParams(conv3=init.conv(3, 3, deep_c, out_c, linear=True),
                    conv7=init.conv(7, 7, deep_c, out_c, linear=True),
                    gate=cfg.mu_gate)


def encoder_forward(x, params):
    """Stage features for NHWC input matching the configured image size."""
    cfg = params.cfg
    w, h = cfg.image_size
    if x.ndim != 4 or x.shape[1] != h or x.shape[2] != w or x.shape[3] != cfg.in_channels:
        raise ShapeError(f"encoder input {x.shape} does not match configured "
                         f"(N, {h}, {w}, {cfg.in_channels})")
    feats = []
    t = conv2d(x, params.stem.w, params.stem.b, ConvSpec(7, 7, 4, "same", 1))
    for i in range(4):
        for blk in params.stages[i]:
            if cfg.stage_kinds[i] == "conv":
                t = conv_former_block(t, blk)
            else:
                t = transformer_block(t, blk)
        feats.append(t)
        if i < 3:
            d = params.downs[i]
            t = conv2d(t, d.w, d.b, ConvSpec(3, 3, 2, "same", 1))
    return FeaturePyramid(*feats)


def decoder_forward(pyr, params, return_intermediates=False):
    """Decode the pyramid to a full-resolution feature map.

    Returns the (N, H, W, head_channels) tensor, or additionally the list
    of per-step outputs (post-link) when ``return_intermediates`` is set.
    """
    cfg = params.cfg
    skips = [pyr.x3, pyr.x2, pyr.x1, None, None]
    t = pyr.x4
    outs = []
    for i, step in enumerate(params.steps):
        t = transpose_conv2d(t, step.up.w, step.up.b, stride=2)
        if skips[i] is not None:
            skip = skips[i]
            if skip.shape[:3] != t.shape[:3]:
                raise ShapeError(f"skip {skip.shape} does not align with "
                                 f"decoder feature {t.shape}")
            t = concat([t, skip], axis=3)
        t = conv2d(t, step.fuse.w, step.fuse.b, ConvSpec(3, 3, 1, "same", 1))
        outs.append(t)
        if i == 2 and params.link_a is not None:
            t = mu_block(outs[0], t, params.link_a)
            outs[-1] = t
        elif i == 3 and params.link_b is not None:
            t = mu_block(outs[1], t, params.link_b)
            outs[-1] = t
    if return_intermediates:
        return t, outs
    return t


def m2unet_forward(x, params):
    """Full forward pass: probabilities in (0, 1), shape (N, H, W, 1)."""
    pyr = encoder_forward(x, params)
    dec = decoder_forward(pyr, params)
    logits = conv2d(dec, params.head.w, params.head.b, ConvSpec(1, 1, 1, "same", 1))
    return sigmoid(logits)


def named_parameters(params):
    """Flat ``name -> Tensor`` map in deterministic traversal order."""
    out = {}

    def walk(obj, prefix):
        if isinstance(obj, Tensor):
            out[prefix] = obj
        elif isinstance(obj, (list, tuple)):
            for i, item in enumerate(obj):
                walk(item, f"{prefix}.{i}")
        elif dataclasses.is_dataclass(obj):
            for fld in dataclasses.fields(obj):
                if fld.name == "cfg":
                    continue
                value = getattr(obj, fld.name)
                if value is None or isinstance(value, (int, float, str)):
                    continue
                walk(value, f"{prefix}.{fld.name}" if prefix else fld.name)

    walk(params, "")
    return out


def parameter_count(params):
    return sum(t.size for t in named_parameters(params).values())
