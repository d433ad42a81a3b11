import numpy as np
import pytest

from m2unet import engine


@pytest.fixture
def f64():
    """Run the test body with the whole engine at float64."""
    with engine.dtype_scope(np.float64):
        yield


def brute_conv2d(x, w, stride=1, pad=(0, 0, 0, 0), groups=1):
    """Plain-loop convolution oracle, independent of the kernel backends."""
    n, h, wd, cin = x.shape
    kh, kw, cpg, cout = w.shape
    pt, pb, pl, pr = pad
    xp = np.zeros((n, h + pt + pb, wd + pl + pr, cin), dtype=np.float64)
    xp[:, pt:pt + h, pl:pl + wd, :] = x
    oh = (xp.shape[1] - kh) // stride + 1
    ow = (xp.shape[2] - kw) // stride + 1
    cog = cout // groups
    y = np.zeros((n, oh, ow, cout), dtype=np.float64)
    for b in range(n):
        for i in range(oh):
            for j in range(ow):
                for co in range(cout):
                    g = co // cog
                    acc = 0.0
                    for ki in range(kh):
                        for kj in range(kw):
                            for ci in range(cpg):
                                acc += (xp[b, i * stride + ki, j * stride + kj, g * cpg + ci]
                                        * w[ki, kj, ci, co])
                    y[b, i, j, co] = acc
    return y
