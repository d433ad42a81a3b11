"""Dense tensors and reverse-mode differentiation.

A :class:`Tensor` wraps a contiguous row-major NumPy array with ndim >= 1
(plain numbers become single-element vectors).  Operators in
:mod:`m2unet.ops` attach a :class:`TapeNode` to their output whenever an
input participates in gradient computation; :func:`backward` walks that tape
once in reverse topological order and returns a gradient per leaf.

Precision is a global engine parameter: forward work defaults to float32,
and gradient-check code switches the whole engine to float64 via
:func:`dtype_scope`.  Every operation output is checked for NaN/Inf while
the guard is enabled (the default); non-finite values are an error state,
not a value.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .errors import GraphError, NumericError, ShapeError, UsageError

_DTYPES = {np.float32: np.float32, np.float64: np.float64,
           "f32": np.float32, "f64": np.float64,
           "float32": np.float32, "float64": np.float64}

_state = {"dtype": np.float32, "grad": True, "guard": True}


def default_dtype():
    return _state["dtype"]


def set_default_dtype(dtype):
    try:
        _state["dtype"] = _DTYPES[dtype]
    except (KeyError, TypeError):
        raise UsageError(f"unsupported dtype {dtype!r}; use float32 or float64") from None


@contextmanager
def dtype_scope(dtype):
    """Temporarily run the whole engine at another precision."""
    old = _state["dtype"]
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _state["dtype"] = old


def grad_enabled():
    return _state["grad"]


@contextmanager
def no_grad():
    """Skip tape recording inside the block (inference / evaluation)."""
    old = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = old


def set_nan_guard(enabled):
    _state["guard"] = bool(enabled)


class TapeNode:
    """One recorded operation: its kind, inputs, and backward rule.

    ``grad_fn`` maps the gradient at this node's output to a tuple of
    gradients aligned with ``inputs`` (``None`` for non-differentiable
    slots).  ``saved`` keeps whatever forward values the rule needs.
    """

    __slots__ = ("op_kind", "inputs", "saved", "grad_fn")

    def __init__(self, op_kind, inputs, grad_fn, saved=None):
        self.op_kind = op_kind
        self.inputs = tuple(inputs)
        self.grad_fn = grad_fn
        self.saved = saved


class Tensor:
    """Immutable-by-convention dense value; see module docstring."""

    __slots__ = ("data", "requires_grad", "node")

    def __init__(self, data, requires_grad=False, node=None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(_state["dtype"])
        arr = np.ascontiguousarray(arr)
        if arr.size == 0:
            raise ShapeError(f"zero-size tensor of shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.node = node

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        if self.data.size != 1:
            raise UsageError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}{grad})"

    # Arithmetic conveniences delegate to the ops module (imported lazily to
    # avoid a circular import at package load).
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


def tensor(data, requires_grad=False, dtype=None):
    """Create a tensor in the engine's default (or an explicit) dtype."""
    arr = np.asarray(data, dtype=dtype if dtype is not None else _state["dtype"])
    return Tensor(arr, requires_grad=requires_grad)


def zeros(shape, requires_grad=False):
    return Tensor(np.zeros(shape, dtype=_state["dtype"]), requires_grad=requires_grad)


def ones(shape, requires_grad=False):
    return Tensor(np.ones(shape, dtype=_state["dtype"]), requires_grad=requires_grad)


def _needs_grad(t):
    return t.requires_grad or t.node is not None


def make_op(op_kind, out_data, inputs, grad_fn):
    """Wrap a forward result, guarding values and recording the tape."""
    if _state["guard"] and not np.all(np.isfinite(out_data)):
        raise NumericError(f"non-finite values produced by op '{op_kind}'")
    track = _state["grad"] and any(_needs_grad(t) for t in inputs)
    node = TapeNode(op_kind, inputs, grad_fn) if track else None
    return Tensor(out_data, requires_grad=track, node=node)


def _topo_order(root):
    """Tensors reachable from ``root``, post-order; raises on cycles."""
    order = []
    state = {}  # id -> 0 discovered, 1 finished
    stack = [root]
    while stack:
        t = stack[-1]
        st = state.get(id(t))
        if st is None:
            state[id(t)] = 0
            if t.node is not None:
                for inp in t.node.inputs:
                    s = state.get(id(inp))
                    if s is None:
                        stack.append(inp)
                    elif s == 0 and inp is not t:
                        raise GraphError(
                            f"cycle detected in tape at op '{t.node.op_kind}'"
                        )
        elif st == 0:
            state[id(t)] = 1
            order.append(t)
            stack.pop()
        else:
            stack.pop()
    return order


def backward(root, params=None):
    """Gradients of a scalar ``root`` with respect to every leaf.

    Returns ``{leaf_tensor: gradient_tensor}`` covering each requires-grad
    leaf the graph reaches.  When ``params`` is given, every listed tensor
    gets an entry; parameters the graph never used receive zeros.
    """
    if root.size != 1:
        raise UsageError(f"backward root must be scalar, got shape {root.shape}")

    order = _topo_order(root)
    grads = {id(root): np.ones_like(root.data)}
    leaves = {}
    for t in reversed(order):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.node is None:
            if t.requires_grad:
                prev = leaves.get(id(t))
                leaves[id(t)] = (t, g if prev is None else prev[1] + g)
            continue
        in_grads = t.node.grad_fn(g)
        for inp, gi in zip(t.node.inputs, in_grads):
            if gi is None or not _needs_grad(inp):
                continue
            if inp.node is None:
                prev = leaves.get(id(inp))
                leaves[id(inp)] = (inp, gi if prev is None else prev[1] + gi)
            else:
                acc = grads.get(id(inp))
                grads[id(inp)] = gi if acc is None else acc + gi

    result = {t: Tensor(g) for t, g in leaves.values()}
    if params is not None:
        for p in params:
            if p not in result:
                result[p] = Tensor(np.zeros_like(p.data))
    return result


# --- text dump format -------------------------------------------------------
#
# Golden-test interchange: first line is the space-separated shape, then one
# value per line in row-major order, printed with 9 significant digits
# (enough to round-trip float32 exactly).

def tensor_to_text(t):
    data = t.data if isinstance(t, Tensor) else np.asarray(t)
    lines = [" ".join(str(e) for e in data.shape)]
    lines.extend(f"{v:.9g}" for v in data.reshape(-1))
    return "\n".join(lines) + "\n"


def tensor_from_text(text, dtype=None):
    lines = text.strip().splitlines()
    if not lines:
        raise ShapeError("empty tensor dump")
    shape = tuple(int(e) for e in lines[0].split())
    values = [float(v) for v in lines[1:]]
    want = int(np.prod(shape)) if shape else 1
    if len(values) != want:
        raise ShapeError(f"tensor dump has {len(values)} values, shape {shape} needs {want}")
    arr = np.array(values, dtype=dtype if dtype is not None else _state["dtype"])
    return Tensor(arr.reshape(shape))


def save_tensor_text(path, t):
    with open(path, "w", encoding="ascii") as fh:
        fh.write(tensor_to_text(t))


def load_tensor_text(path, dtype=None):
    with open(path, encoding="ascii") as fh:
        return tensor_from_text(fh.read(), dtype=dtype)
