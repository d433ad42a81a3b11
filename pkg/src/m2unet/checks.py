"""Finite-difference check cases for every differentiable op and block.

Each case is ``(name, fn, tolerance)`` where ``fn(seed)`` builds a fresh
random problem at the current engine precision, reduces the op under test
to a scalar through a fixed weighting, and returns the worst relative
error between the tape gradient and central differences.  The CLI
``gradcheck`` subcommand and the acceptance suite both consume these.
"""

from __future__ import annotations

import numpy as np

from . import blocks, losses, model, ops
from .engine import Tensor
from .gradcheck import check_scalar_fn


def _rand(rng, shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def _weighted_sum(t, rng):
    """Fixed random weighting turning any tensor into a scalar objective."""
    w = Tensor(rng.standard_normal(t.shape))
    return ops.sum_(ops.mul(t, w))


def _op_cases():
    def matmul_case(seed):
        rng = np.random.default_rng(seed)
        a, b = _rand(rng, (3, 4)), _rand(rng, (4, 2))
        return check_scalar_fn(lambda: _weighted_sum(ops.matmul(a, b), np.random.default_rng(seed + 1)), [a, b])

    def conv_case(seed):
        rng = np.random.default_rng(seed)
        x = _rand(rng, (2, 4, 4, 3))
        w = _rand(rng, (3, 3, 3, 4), scale=0.5)
        b = _rand(rng, (4,))
        spec = ops.ConvSpec(3, 3, 1, "same", 1)
        return check_scalar_fn(
            lambda: _weighted_sum(ops.conv2d(x, w, b, spec), np.random.default_rng(seed + 1)),
            [x, w, b])

    def conv_strided_case(seed):
        rng = np.random.default_rng(seed)
        x = _rand(rng, (1, 4, 4, 2))
        w = _rand(rng, (3, 3, 2, 3), scale=0.5)
        spec = ops.ConvSpec(3, 3, 2, 1, 1)
        return check_scalar_fn(
            lambda: _weighted_sum(ops.conv2d(x, w, None, spec), np.random.default_rng(seed + 1)),
            [x, w])

    def depthwise_case(seed):
        rng = np.random.default_rng(seed)
        x = _rand(rng, (2, 4, 4, 3))
        w = _rand(rng, (3, 3, 1, 3), scale=0.5)
        spec = ops.ConvSpec(3, 3, 1, "same", groups=3)
        return check_scalar_fn(
            lambda: _weighted_sum(ops.conv2d(x, w, None, spec), np.random.default_rng(seed + 1)),
            [x, w])

    def transpose_conv_case(seed):
        rng = np.random.default_rng(seed)
        x = _rand(rng, (2, 3, 3, 2))
        w = _rand(rng, (2, 2, 2, 3), scale=0.5)
        b = _rand(rng, (3,))
        return check_scalar_fn(
            lambda: _weighted_sum(ops.transpose_conv2d(x, w, b, stride=2), np.random.default_rng(seed + 1)),
            [x, w, b])

    def upsample_case(seed):
        rng = np.random.default_rng(seed)
        x = _rand(rng, (2, 3, 3, 2))
        return check_scalar_fn(
            lambda: _weighted_sum(ops.upsample_nearest(x, 2), np.random.default_rng(seed + 1)),
            [x])

    def layer_norm_case(seed):
        rng = np.random.default_rng(seed)
        x = _rand(rng, (2, 3, 4))
        gamma, beta = _rand(rng, (4,)), _rand(rng, (4,))
        return check_scalar_fn(
            lambda: _weighted_sum(ops.layer_norm(x, gamma, beta), np.random.default_rng(seed + 1)),
            [x, gamma, beta])

    def softmax_case(seed):
        rng = np.random.default_rng(seed)
        x = _rand(rng, (3, 5))
        return check_scalar_fn(
            lambda: _weighted_sum(ops.softmax(x), np.random.default_rng(seed + 1)), [x])

    def act_case(kind):
        def fn(seed):
            rng = np.random.default_rng(seed)
            x = _rand(rng, (3, 4))
            return check_scalar_fn(
                lambda: _weighted_sum(ops.activation(x, kind), np.random.default_rng(seed + 1)),
                [x])
        return fn

    def arithmetic_case(seed):
        rng = np.random.default_rng(seed)
        a, b = _rand(rng, (3, 4)), _rand(rng, (3, 4))
        c = _rand(rng, (4,))
        d = _rand(rng, (3, 4), scale=0.5)

        def f():
            t = ops.add(ops.mul(a, b), c)
            t = ops.sub(t, ops.div(a, ops.add(ops.mul(d, d), 1.0)))
            return ops.mean(t)

        return check_scalar_fn(f, [a, b, c, d])

    def reshape_concat_case(seed):
        rng = np.random.default_rng(seed)
        a, b = _rand(rng, (2, 3, 4)), _rand(rng, (2, 3, 2))

        def f():
            t = ops.concat([a, b], axis=2)
            t = ops.transpose(t, (0, 2, 1))
            t = ops.reshape(t, (2, 18))
            return _weighted_sum(t, np.random.default_rng(seed + 1))

        return check_scalar_fn(f, [a, b])

    return [
        ("matmul", matmul_case, 1e-4),
        ("conv2d_same", conv_case, 1e-4),
        ("conv2d_strided", conv_strided_case, 1e-4),
        ("conv2d_depthwise", depthwise_case, 1e-4),
        ("transpose_conv2d", transpose_conv_case, 1e-4),
        ("upsample_nearest", upsample_case, 1e-4),
        ("layer_norm", layer_norm_case, 1e-4),
        ("softmax", softmax_case, 1e-4),
        ("gelu", act_case("gelu"), 1e-4),
        ("relu", act_case("relu"), 1e-4),
        ("sigmoid", act_case("sigmoid"), 1e-4),
        ("arithmetic", arithmetic_case, 1e-4),
        ("reshape_concat", reshape_concat_case, 1e-4),
    ]


def _random_convformer(rng, c, r=2, e=2, k=3):
    return blocks.ConvFormerParams(
        norm1=blocks.Affine(_rand(rng, (c,), 0.5), _rand(rng, (c,), 0.5)),
        pw1=blocks.Conv(_rand(rng, (1, 1, c, r * c), 0.5), _rand(rng, (r * c,), 0.5)),
        dw=blocks.Conv(_rand(rng, (k, k, 1, r * c), 0.5), _rand(rng, (r * c,), 0.5)),
        pw2=blocks.Conv(_rand(rng, (1, 1, r * c, c), 0.5), _rand(rng, (c,), 0.5)),
        norm2=blocks.Affine(_rand(rng, (c,), 0.5), _rand(rng, (c,), 0.5)),
        mlp_w1=_rand(rng, (c, e * c), 0.5),
        mlp_w2=_rand(rng, (e * c, c), 0.5),
    )


def _random_transformer(rng, c, heads=2, e=2):
    return blocks.TransformerParams(
        norm1=blocks.Affine(_rand(rng, (c,), 0.5), _rand(rng, (c,), 0.5)),
        wq=_rand(rng, (c, c), 0.5), wk=_rand(rng, (c, c), 0.5),
        wv=_rand(rng, (c, c), 0.5), wo=_rand(rng, (c, c), 0.5),
        heads=heads,
        norm2=blocks.Affine(_rand(rng, (c,), 0.5), _rand(rng, (c,), 0.5)),
        mlp_w1=_rand(rng, (c, e * c), 0.5),
        mlp_w2=_rand(rng, (e * c, c), 0.5),
    )


def _tensors_of(obj):
    import dataclasses
    found = []

    def walk(v):
        if isinstance(v, Tensor):
            found.append(v)
        elif isinstance(v, (list, tuple)):
            for item in v:
                walk(item)
        elif dataclasses.is_dataclass(v):
            for f in dataclasses.fields(v):
                walk(getattr(v, f.name))

    walk(obj)
    return found


def _block_cases():
    def convformer_case(seed):
        rng = np.random.default_rng(seed)
        x = _rand(rng, (2, 4, 4, 4))
        p = _random_convformer(rng, 4)
        wrt = [x] + _tensors_of(p)
        return check_scalar_fn(
            lambda: _weighted_sum(blocks.conv_former_block(x, p), np.random.default_rng(seed + 1)),
            wrt, entries_per_tensor=24, rng=np.random.default_rng(seed + 2))

    def transformer_case(seed):
        rng = np.random.default_rng(seed)
        x = _rand(rng, (2, 2, 2, 4))
        p = _random_transformer(rng, 4)
        wrt = [x] + _tensors_of(p)
        return check_scalar_fn(
            lambda: _weighted_sum(blocks.transformer_block(x, p), np.random.default_rng(seed + 1)),
            wrt, entries_per_tensor=24, rng=np.random.default_rng(seed + 2))

    def mu_case(seed):
        rng = np.random.default_rng(seed)
        deep = _rand(rng, (2, 2, 2, 3))
        shallow = _rand(rng, (2, 8, 8, 2))
        p = blocks.MUParams(
            conv3=blocks.Conv(_rand(rng, (3, 3, 3, 2), 0.5), _rand(rng, (2,), 0.5)),
            conv7=blocks.Conv(_rand(rng, (7, 7, 3, 2), 0.5), _rand(rng, (2,), 0.5)),
        )
        wrt = [deep, shallow] + _tensors_of(p)
        return check_scalar_fn(
            lambda: _weighted_sum(blocks.mu_block(deep, shallow, p), np.random.default_rng(seed + 1)),
            wrt, entries_per_tensor=24, rng=np.random.default_rng(seed + 2))

    def channel_mlp_case(seed):
        rng = np.random.default_rng(seed)
        x = _rand(rng, (2, 3, 4))
        norm = blocks.Affine(_rand(rng, (4,), 0.5), _rand(rng, (4,), 0.5))
        w1, w2 = _rand(rng, (4, 8), 0.5), _rand(rng, (8, 4), 0.5)
        wrt = [x, norm.gamma, norm.beta, w1, w2]
        return check_scalar_fn(
            lambda: _weighted_sum(blocks.channel_mlp(x, norm, w1, w2), np.random.default_rng(seed + 1)),
            wrt)

    return [
        ("channel_mlp", channel_mlp_case, 1e-4),
        ("conv_former_block", convformer_case, 1e-4),
        ("transformer_block", transformer_case, 1e-4),
        ("mu_block", mu_case, 1e-4),
    ]


def _loss_cases():
    def jaccard_case(seed):
        rng = np.random.default_rng(seed)
        y = Tensor((rng.random((4, 4)) > 0.5).astype(np.float64))
        p = Tensor(rng.uniform(0.05, 0.95, (4, 4)), requires_grad=True)
        return check_scalar_fn(lambda: losses.jaccard_loss(y, p), [p])

    def batch_jaccard_case(seed):
        rng = np.random.default_rng(seed)
        y = Tensor((rng.random((2, 3, 3, 1)) > 0.5).astype(np.float64))
        p = Tensor(rng.uniform(0.05, 0.95, (2, 3, 3, 1)), requires_grad=True)
        return check_scalar_fn(lambda: losses.batch_jaccard_loss(y, p), [p])

    return [
        ("jaccard_loss", jaccard_case, 1e-4),
        ("batch_jaccard_loss", batch_jaccard_case, 1e-4),
    ]


def tiny_model_config():
    return model.ModelConfig(
        image_size=(32, 32), filters=(4, 6, 8, 12), stage_depths=(1, 1, 1, 1),
        stage_heads=(1, 1, 2, 2), head_channels=4, mu_mode="mu", mu_count=2,
    )


def _model_cases():
    def full_model_case(seed):
        rng = np.random.default_rng(seed)
        cfg = tiny_model_config()
        params = model.build_model(cfg, seed)
        named = model.named_parameters(params)
        x = Tensor(rng.uniform(-1, 1, (1, 32, 32, 3)))
        y = Tensor((rng.random((1, 32, 32, 1)) > 0.5).astype(np.float64))

        def f():
            return losses.batch_jaccard_loss(y, model.m2unet_forward(x, params))

        # probe a handful of entries in every parameter region
        wrt = list(named.values())
        return check_scalar_fn(f, wrt, entries_per_tensor=1,
                               rng=np.random.default_rng(seed + 2))

    return [("full_tiny_model", full_model_case, 1e-3)]


def suites():
    return {
        "ops": _op_cases(),
        "blocks": _block_cases(),
        "loss": _loss_cases(),
        "model": _model_cases(),
    }
