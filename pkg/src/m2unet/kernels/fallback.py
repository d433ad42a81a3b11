"""NumPy convolution kernels.

All cores consume a pre-padded NHWC input so that padding policy lives in one
place (the dispatcher).  Weights are laid out ``(kh, kw, c_in // groups,
c_out)`` with output channels blocked by group.  Each core loops over the
kernel taps and lets BLAS (or a broadcast multiply for depthwise) do the
channel contraction, which keeps the inner loop out of Python.
"""

import numpy as np


def _tap_view(xp, ki, kj, oh, ow, stride):
    """Strided view of the padded input aligned with kernel tap (ki, kj)."""
    return xp[:, ki : ki + (oh - 1) * stride + 1 : stride,
              kj : kj + (ow - 1) * stride + 1 : stride, :]


def conv2d_forward(xp, w, stride, oh, ow, groups):
    n = xp.shape[0]
    kh, kw, cpg, cout = w.shape
    cog = cout // groups
    y = np.zeros((n, oh, ow, cout), dtype=xp.dtype)
    for ki in range(kh):
        for kj in range(kw):
            xs = _tap_view(xp, ki, kj, oh, ow, stride)
            wt = w[ki, kj]
            if groups == 1:
                y += np.matmul(xs, wt)
            elif cpg == 1 and cog == 1:
                # depthwise: one scalar weight per channel
                y += xs * wt[0]
            else:
                xg = xs.reshape(n, oh, ow, groups, cpg)
                wg = wt.reshape(cpg, groups, cog)
                y += np.einsum("nhwgi,igo->nhwgo", xg, wg).reshape(n, oh, ow, cout)
    return y


def conv2d_grad_input(gy, w, padded_shape, stride, groups):
    n, oh, ow, cout = gy.shape
    kh, kw, cpg, _ = w.shape
    cog = cout // groups
    gxp = np.zeros(padded_shape, dtype=gy.dtype)
    for ki in range(kh):
        for kj in range(kw):
            gxs = _tap_view(gxp, ki, kj, oh, ow, stride)
            wt = w[ki, kj]
            if groups == 1:
                gxs += np.matmul(gy, wt.T)
            elif cpg == 1 and cog == 1:
                gxs += gy * wt[0]
            else:
                gg = gy.reshape(n, oh, ow, groups, cog)
                wg = wt.reshape(cpg, groups, cog)
                gxs += np.einsum("nhwgo,igo->nhwgi", gg, wg).reshape(gxs.shape)
    return gxp


def conv2d_grad_weight(gy, xp, kh, kw, stride, groups):
    n, oh, ow, cout = gy.shape
    cin = xp.shape[3]
    cpg = cin // groups
    cog = cout // groups
    gw = np.zeros((kh, kw, cpg, cout), dtype=gy.dtype)
    gy2 = gy.reshape(-1, cout)
    for ki in range(kh):
        for kj in range(kw):
            xs = _tap_view(xp, ki, kj, oh, ow, stride)
            if groups == 1:
                gw[ki, kj] = xs.reshape(-1, cin).T @ gy2
            elif cpg == 1 and cog == 1:
                gw[ki, kj, 0] = (xs * gy).sum(axis=(0, 1, 2))
            else:
                xg = xs.reshape(n, oh, ow, groups, cpg)
                gg = gy.reshape(n, oh, ow, groups, cog)
                gw[ki, kj] = np.einsum("nhwgi,nhwgo->igo", xg, gg).reshape(cpg, cout)
    return gw
