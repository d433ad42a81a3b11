"""Benchmark the convolution backends on model-representative shapes.

Times forward, input-gradient, and weight-gradient kernels for the conv
configurations the network actually runs, on both the NumPy fallback and
(when built) the compiled core.  Run via ``m2unet bench`` or
``python -m m2unet.bench``.
"""

from __future__ import annotations

import time

import numpy as np

from . import kernels

# (label, n, h, w, cin, kh, cout, stride, groups)
WORKLOADS = [
    ("stem 7x7/4", 1, 64, 64, 3, 7, 32, 4, 1),
    ("stage 1x1 pw", 1, 16, 16, 32, 1, 64, 1, 1),
    ("stage 7x7 dw", 1, 16, 16, 64, 7, 64, 1, 64),
    ("fuse 3x3", 1, 32, 32, 64, 3, 32, 1, 1),
    ("link 7x7", 1, 32, 32, 32, 7, 16, 1, 1),
]


def _time_call(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_case(label, n, h, w, cin, k, cout, stride, groups, backend, repeats):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((n, h, w, cin)).astype(np.float32)
    wt = rng.standard_normal((k, k, cin // groups, cout)).astype(np.float32)
    pads, oh, ow = kernels.resolve_padding(h, w, k, k, stride, "same")
    y = kernels.conv2d_forward(x, wt, stride, pads, groups, backend=backend)
    gy = np.ones_like(y)
    fwd = _time_call(lambda: kernels.conv2d_forward(x, wt, stride, pads, groups,
                                                    backend=backend), repeats)
    gin = _time_call(lambda: kernels.conv2d_grad_input(gy, wt, x.shape, stride, pads,
                                                       groups, backend=backend), repeats)
    gwt = _time_call(lambda: kernels.conv2d_grad_weight(gy, x, k, k, stride, pads,
                                                        groups, backend=backend), repeats)
    return fwd, gin, gwt


def run_bench(repeats=3, out=print):
    backends = kernels.available_backends()
    out(f"# kernel backends: {', '.join(backends)} (active: {kernels.backend_name()})")
    out("workload\tbackend\tforward_ms\tgrad_input_ms\tgrad_weight_ms")
    totals = {b: 0.0 for b in backends}
    for case in WORKLOADS:
        label = case[0]
        for backend in backends:
            fwd, gin, gwt = bench_case(*case, backend=backend, repeats=repeats)
            totals[backend] += fwd + gin + gwt
            out(f"{label}\t{backend}\t{fwd * 1e3:.3f}\t{gin * 1e3:.3f}\t{gwt * 1e3:.3f}")
    if len(backends) == 2:
        ratio = totals["python"] / max(totals["native"], 1e-12)
        out(f"# total python/native time ratio: {ratio:.2f}x")
    return totals


if __name__ == "__main__":
    run_bench()
