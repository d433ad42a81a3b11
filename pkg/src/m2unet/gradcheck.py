"""Finite-difference verification of analytic gradients.

The checker only ever calls the forward path: it perturbs one input entry at
a time and compares the central difference against what :func:`backward`
reports.  Relative error is normalized by the largest numerical-gradient
magnitude so near-zero entries do not blow up the ratio.
"""

import numpy as np

from . import engine
from .engine import Tensor, backward


def finite_difference(f, t, h=1e-5, entries=None):
    """Central-difference gradient of scalar ``f`` w.r.t. tensor ``t``.

    ``entries`` optionally restricts the probe to a list of flat indices
    (the rest of the returned gradient stays zero).
    """
    flat = t.data.reshape(-1)
    grad = np.zeros_like(flat)
    idx = range(flat.size) if entries is None else entries
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        fp = f().item()
        flat[i] = orig - h
        fm = f().item()
        flat[i] = orig
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(t.shape)


def max_relative_error(analytic, numeric, entries=None):
    a = np.asarray(analytic).reshape(-1)
    n = np.asarray(numeric).reshape(-1)
    if entries is not None:
        a, n = a[entries], n[entries]
    scale = max(np.abs(n).max(), 1e-8)
    return float(np.abs(a - n).max() / scale)


def check_scalar_fn(f, wrt, h=1e-5, entries_per_tensor=None, rng=None):
    """Compare backward() with finite differences for each tensor in ``wrt``.

    ``f`` must rebuild the graph from current tensor data on every call and
    return a scalar Tensor.  Returns the worst relative error across all
    checked tensors.
    """
    loss = f()
    grads = backward(loss, params=wrt)
    worst = 0.0
    for t in wrt:
        if entries_per_tensor is not None and t.size > entries_per_tensor:
            if rng is None:
                rng = np.random.default_rng(0)
            entries = rng.choice(t.size, size=entries_per_tensor, replace=False)
            entries = [int(e) for e in entries]
        else:
            entries = None
        num = finite_difference(f, t, h=h, entries=entries)
        err = max_relative_error(grads[t].data, num, entries=entries)
        worst = max(worst, err)
    return worst


def run_gradcheck(module="all", seeds=5, verbose=True):
    """Gradient-check suites runnable from the CLI; returns failure count.

    Checks run at float64 with h=1e-5; per-op thresholds are 1e-4 and the
    full tiny model uses 1e-3.
    """
    from . import checks

    suites = checks.suites()
    if module != "all":
        if module not in suites:
            raise SystemExit(f"unknown gradcheck module {module!r}; "
                             f"choose from {sorted(suites)} or 'all'")
        suites = {module: suites[module]}

    failures = 0
    with engine.dtype_scope(np.float64):
        for name, suite in suites.items():
            for case_name, fn, tol in suite:
                errs = [fn(seed) for seed in range(seeds)]
                worst = max(errs)
                ok = worst < tol
                failures += 0 if ok else 1
                if verbose:
                    status = "PASS" if ok else "FAIL"
                    print(f"[{status}] {name}.{case_name}: max rel err "
                          f"{worst:.3e} (tol {tol:.0e}, {seeds} seeds)")
    return failures
