"""Convolution kernel backends.

Two interchangeable implementations of the conv2d forward/backward cores:
``fallback`` (NumPy, always available) and ``_native`` (Cython, built at
install time when a compiler is present).  The backend is chosen at import
time; set ``M2UNET_KERNELS=python`` or ``=native`` to force one.  Both are
bitwise deterministic for a fixed dtype, though they may differ from each
other in the last bits because their reduction orders differ.

The default is the NumPy path: its tap loops bottom out in BLAS matmuls,
which ``m2unet bench`` measures ~2-5x faster than the straightforward
compiled loops on the channel-heavy shapes this model runs.  The compiled
core stays useful where BLAS threading is unwanted or as an independent
cross-check (the test suite exercises both).

The dispatcher owns padding policy and output-size arithmetic; the cores
only ever see pre-padded NHWC arrays.
"""

import os

import numpy as np

from ..errors import ConfigError, ShapeError
from . import fallback

try:
    from . import _native
except ImportError:
    _native = None

_env = os.environ.get("M2UNET_KERNELS", "").strip().lower()
if _env == "native":
    if _native is None:
        raise ImportError(
            "M2UNET_KERNELS=native but the compiled kernels are not built; "
            "reinstall with a C compiler available"
        )
    _active = "native"
elif _env in ("", "python"):
    _active = "python"
else:
    raise ImportError(f"M2UNET_KERNELS={_env!r} is not 'python' or 'native'")


def backend_name():
    """Name of the backend serving kernel calls: 'native' or 'python'."""
    return _active


def available_backends():
    return ("python", "native") if _native is not None else ("python",)


def _core(backend):
    name = backend or _active
    if name == "python":
        return fallback
    if name == "native":
        if _native is None:
            raise ConfigError("native kernel backend is not built")
        return _native
    raise ConfigError(f"unknown kernel backend {name!r}")


def resolve_padding(h, w, kh, kw, stride, padding):
    """Padding amounts and output extents for one conv configuration.

    ``padding`` is either an explicit symmetric integer or "same".  With
    "same" the output is ceil(extent / stride) and any odd total padding
    puts the extra row/column at the bottom/right.
    """
    if padding == "same":
        oh = -(-h // stride)
        ow = -(-w // stride)
        total_h = max((oh - 1) * stride + kh - h, 0)
        total_w = max((ow - 1) * stride + kw - w, 0)
        pt, pl = total_h // 2, total_w // 2
        pads = (pt, total_h - pt, pl, total_w - pl)
    else:
        p = int(padding)
        if p < 0:
            raise ConfigError(f"negative padding {p}")
        oh = (h + 2 * p - kh) // stride + 1
        ow = (w + 2 * p - kw) // stride + 1
        pads = (p, p, p, p)
    if oh < 1 or ow < 1:
        raise ShapeError(
            f"conv output would be {oh}x{ow} for input {h}x{w}, "
            f"kernel {kh}x{kw}, stride {stride}, padding {padding}"
        )
    return pads, oh, ow


def _pad(x, pads):
    pt, pb, pl, pr = pads
    if pt or pb or pl or pr:
        return np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    return x


def _ready(a):
    return np.ascontiguousarray(a)


def conv2d_forward(x, w, stride, pads, groups, backend=None):
    _, h, wd, _ = x.shape
    kh, kw = w.shape[0], w.shape[1]
    pt, pb, pl, pr = pads
    oh = (h + pt + pb - kh) // stride + 1
    ow = (wd + pl + pr - kw) // stride + 1
    xp = _pad(x, pads)
    return _core(backend).conv2d_forward(_ready(xp), _ready(w), stride, oh, ow, groups)


def conv2d_grad_input(gy, w, x_shape, stride, pads, groups, backend=None):
    pt, pb, pl, pr = pads
    n, h, wd, cin = x_shape
    padded_shape = (n, h + pt + pb, wd + pl + pr, cin)
    gxp = _core(backend).conv2d_grad_input(
        _ready(gy), _ready(w), padded_shape, stride, groups
    )
    return gxp[:, pt : pt + h, pl : pl + wd, :]


def conv2d_grad_weight(gy, x, kh, kw, stride, pads, groups, backend=None):
    xp = _pad(x, pads)
    return _core(backend).conv2d_grad_weight(
        _ready(gy), _ready(xp), kh, kw, stride, groups
    )
