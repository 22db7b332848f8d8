"""Dense real/complex arrays with tape-based reverse-mode differentiation.

Arrays are plain numpy buffers; recording happens only while a ``Tape`` is
active, so inference-style forward passes carry no graph overhead.  Gradients
of complex tensors follow the convention used for real-valued objectives:
``grad = dL/d(Re x) + 1j * dL/d(Im x)``, i.e. the real and imaginary parts are
treated as independent real coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DtypeError, ShapeError, UsageError

REAL_DTYPES = (np.dtype(np.float64), np.dtype(np.float32))
COMPLEX_DTYPES = (np.dtype(np.complex128), np.dtype(np.complex64))

_TAPE_STACK: list["Tape"] = []


def _as_array(values, dtype=None):
    arr = np.asarray(values)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype in REAL_DTYPES or arr.dtype in COMPLEX_DTYPES:
        return arr
    if np.issubdtype(arr.dtype, np.complexfloating):
        return arr.astype(np.complex128)
    return arr.astype(np.float64)


class Tensor:
    """A dense array, optionally attached to a tape node."""

    __slots__ = ("values", "node", "name")

    def __init__(self, values, dtype=None, name=None):
        self.values = _as_array(values, dtype)
        self.node = None
        self.name = name

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def size(self):
        return self.values.size

    @property
    def dtype(self):
        return self.values.dtype

    @property
    def is_complex(self):
        return self.values.dtype in COMPLEX_DTYPES

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.values.dtype}{tag})"

    def __getitem__(self, key):
        return slice_(self, key)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class Node:
    """One recorded operation: parents plus a vector-Jacobian closure."""

    __slots__ = ("op", "parents", "vjp", "out")

    def __init__(self, op, parents, vjp, out):
        self.op = op
        self.parents = parents
        self.vjp = vjp
        self.out = out


class Tape:
    """Append-only record of one forward pass."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self.nodes)


def active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _record(op, parents, vjp, out_values):
    out = Tensor(out_values)
    tape = active_tape()
    if tape is not None:
        node = Node(op, parents, vjp, out)
        out.node = node
        tape.nodes.append(node)
    return out


def constant(values, dtype=None):
    """A tensor that never records onto a tape (no node, treated as leaf)."""
    return Tensor(values, dtype)


# ---------------------------------------------------------------------------
# gradient accumulation


class Gradients:
    """Maps tensors (by identity) to their gradient arrays."""

    def __init__(self):
        self._grads: dict[int, np.ndarray] = {}
        self._owned: set[int] = set()
        self._refs: dict[int, Tensor] = {}

    def _accumulate(self, tensor: Tensor, g: np.ndarray):
        if tensor.values.dtype in REAL_DTYPES and np.iscomplexobj(g):
            g = g.real
        elif tensor.values.dtype in COMPLEX_DTYPES and not np.iscomplexobj(g):
            g = g.astype(tensor.values.dtype)
        key = id(tensor)
        if key not in self._grads:
            self._grads[key] = g
            self._refs[key] = tensor
        elif key in self._owned:
            self._grads[key] += g
        else:
            self._grads[key] = self._grads[key] + g
            self._owned.add(key)

    def __contains__(self, tensor: Tensor):
        return id(tensor) in self._grads

    def __getitem__(self, tensor: Tensor) -> np.ndarray:
        g = self._grads.get(id(tensor))
        if g is None:
            return np.zeros_like(tensor.values)
        return np.broadcast_to(g, tensor.shape).astype(tensor.dtype, copy=False) \
            if g.shape != tensor.shape else g

    def get(self, tensor: Tensor, default=None):
        if id(tensor) in self._grads:
            return self[tensor]
        return default


def backward(tape: Tape, seed=None) -> Gradients:
    """Reverse sweep from the tape's terminal node.

    Computes gradients of ``<seed, terminal>`` with respect to every tensor
    reachable in the tape (leaves included).  ``seed`` defaults to ones and
    must match the terminal shape; the terminal must be real-valued.
    """
    if not tape.nodes:
        raise UsageError("empty tape: nothing was recorded")
    terminal = tape.nodes[-1].out
    return backward_from(tape, terminal, seed)


def backward_from(tape: Tape, output: Tensor, seed=None) -> Gradients:
    if not tape.nodes:
        raise UsageError("empty tape: nothing was recorded")
    if output.node is None or output.node is not tape.nodes[-1]:
        raise UsageError("backward must start from the tape's terminal node")
    if output.is_complex:
        raise UsageError("terminal node must be real-valued")
    if seed is None:
        seed_arr = np.ones(output.shape, dtype=output.dtype)
    else:
        seed_arr = np.asarray(seed, dtype=output.dtype)
        if seed_arr.shape != output.shape:
            raise UsageError(
                f"seed shape {seed_arr.shape} != terminal shape {output.shape}"
            )
    grads = Gradients()
    grads._accumulate(output, seed_arr)
    for node in reversed(tape.nodes):
        g_out = grads._grads.get(id(node.out))
        if g_out is None:
            continue
        parent_grads = node.vjp(g_out)
        for parent, g in zip(node.parents, parent_grads):
            if g is not None:
                grads._accumulate(parent, g)
    return grads


# ---------------------------------------------------------------------------
# shape / dtype guards


def _check_same_shape(op, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _require_real(op, *ts):
    for t in ts:
        if t.is_complex:
            raise DtypeError(f"{op}: complex operand not supported")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _wrap_pair(a, b):
    """Wrap a binary-op operand pair; a bare python number adopts the other
    operand's dtype so float32/complex64 graphs are not promoted."""
    if isinstance(a, (int, float, complex)) and isinstance(b, Tensor):
        dtype = b.dtype if not (isinstance(a, complex) and not b.is_complex) \
            else np.complex128
        return Tensor(np.asarray(a, dtype=dtype)), b
    if isinstance(b, (int, float, complex)) and isinstance(a, Tensor):
        dtype = a.dtype if not (isinstance(b, complex) and not a.is_complex) \
            else np.complex128
        return a, Tensor(np.asarray(b, dtype=dtype))
    return _wrap(a), _wrap(b)


def _is_scalar(t: Tensor):
    return t.values.ndim == 0


# ---------------------------------------------------------------------------
# operations


def add(a, b) -> Tensor:
    a, b = _wrap_pair(a, b)
    if not (_is_scalar(a) or _is_scalar(b)):
        _check_same_shape("add", a, b)

    def vjp(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))

    return _record("add", (a, b), vjp, a.values + b.values)


def sub(a, b) -> Tensor:
    a, b = _wrap_pair(a, b)
    if not (_is_scalar(a) or _is_scalar(b)):
        _check_same_shape("sub", a, b)

    def vjp(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))

    return _record("sub", (a, b), vjp, a.values - b.values)


def mul(a, b) -> Tensor:
    a, b = _wrap_pair(a, b)
    if not (_is_scalar(a) or _is_scalar(b)):
        _check_same_shape("mul", a, b)
    av, bv = a.values, b.values

    def vjp(g):
        return (_unbroadcast(g * np.conj(bv), a.shape),
                _unbroadcast(g * np.conj(av), b.shape))

    return _record("mul", (a, b), vjp, av * bv)


def div(a, b) -> Tensor:
    a, b = _wrap_pair(a, b)
    if not (_is_scalar(a) or _is_scalar(b)):
        _check_same_shape("div", a, b)
    av, bv = a.values, b.values
    out = av / bv

    def vjp(g):
        ga = g / np.conj(bv)
        gb = -g * np.conj(out / bv)
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

    return _record("div", (a, b), vjp, out)


def badd(x, b) -> Tensor:
    """Broadcasting add: ``b`` must match the trailing dims of ``x``."""
    x, b = _wrap(x), _wrap(b)
    if x.shape[x.ndim - b.ndim:] != b.shape:
        raise ShapeError(f"badd: {b.shape} is not a suffix of {x.shape}")

    def vjp(g):
        return (g, _unbroadcast(g, b.shape))

    return _record("badd", (x, b), vjp, x.values + b.values)


def bmul(x, y) -> Tensor:
    """Broadcasting elementwise multiply (numpy broadcast rules)."""
    x, y = _wrap(x), _wrap(y)
    try:
        out = x.values * y.values
    except ValueError as exc:
        raise ShapeError(f"bmul: {x.shape} vs {y.shape}") from exc
    xv, yv = x.values, y.values

    def vjp(g):
        return (_unbroadcast(g * np.conj(yv), x.shape),
                _unbroadcast(g * np.conj(xv), y.shape))

    return _record("bmul", (x, y), vjp, out)


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ShapeError("matmul supports 1-D and 2-D operands only")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims {a.shape} @ {b.shape}")
    av, bv = a.values, b.values
    out = av @ bv

    def vjp(g):
        if av.ndim == 2 and bv.ndim == 2:
            ga = g @ np.conj(bv).T
            gb = np.conj(av).T @ g
        elif av.ndim == 1 and bv.ndim == 2:
            ga = np.conj(bv) @ g
            gb = np.outer(np.conj(av), g)
        elif av.ndim == 2 and bv.ndim == 1:
            ga = np.outer(g, np.conj(bv))
            gb = np.conj(av).T @ g
        else:
            ga = g * np.conj(bv)
            gb = np.conj(av) * g
        return (ga, gb)

    return _record("matmul", (a, b), vjp, out)


def sigmoid(x) -> Tensor:
    x = _wrap(x)
    _require_real("sigmoid", x)
    v = x.values
    z = np.exp(-np.abs(v))
    one = v.dtype.type(1.0)
    out = np.where(v >= 0, one, z) / (one + z)

    def vjp(g):
        return (g * (out * (1.0 - out)),)

    return _record("sigmoid", (x,), vjp, out)


def tanh(x) -> Tensor:
    x = _wrap(x)
    _require_real("tanh", x)
    out = np.tanh(x.values)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return _record("tanh", (x,), vjp, out)


def exp(x) -> Tensor:
    """Exponential; works on real and complex operands."""
    x = _wrap(x)
    out = np.exp(x.values)

    def vjp(g):
        return (g * np.conj(out),)

    return _record("exp", (x,), vjp, out)


def cexp(x) -> Tensor:
    """Complex exponential; requires a complex operand."""
    x = _wrap(x)
    if not x.is_complex:
        raise DtypeError("cexp: operand must be complex")
    return exp(x)


def real(x) -> Tensor:
    x = _wrap(x)
    out = np.ascontiguousarray(x.values.real)

    def vjp(g):
        return (g,)

    return _record("real", (x,), vjp, out)


def make_complex(re, im) -> Tensor:
    re, im = _wrap(re), _wrap(im)
    _require_real("make_complex", re, im)
    _check_same_shape("make_complex", re, im)
    out = re.values + 1j * im.values

    def vjp(g):
        return (g.real, g.imag)

    return _record("make_complex", (re, im), vjp, out)


def concat(tensors, axis=0) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    shapes = [t.shape for t in ts]
    base = list(shapes[0])
    for s in shapes[1:]:
        if len(s) != len(base) or any(
            s[i] != base[i] for i in range(len(base)) if i != axis % len(base)
        ):
            raise ShapeError(f"concat: incompatible shapes {shapes}")
    out = np.concatenate([t.values for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(
            np.take(g, range(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(ts))
        )

    return _record("concat", tuple(ts), vjp, out)


def slice_(x, key) -> Tensor:
    x = _wrap(x)
    out = x.values[key]
    if not isinstance(out, np.ndarray):
        out = np.asarray(out)

    def vjp(g):
        gx = np.zeros_like(x.values)
        gx[key] = g
        return (gx,)

    return _record("slice", (x,), vjp, out)


def gather(table, indices) -> Tensor:
    """Row lookup ``table[indices]`` with scatter-add backward."""
    table = _wrap(table)
    if table.ndim != 2:
        raise ShapeError("gather: table must be 2-D")
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ShapeError("gather: indices must be integers")
    out = table.values[idx]

    def vjp(g):
        gt = np.zeros_like(table.values)
        np.add.at(gt, idx, g)
        return (gt,)

    return _record("gather", (table,), vjp, out)


def sum_(x, axis=None) -> Tensor:
    x = _wrap(x)
    out = x.values.sum(axis=axis)
    shape = x.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape),)
        gg = np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape),)

    return _record("sum", (x,), vjp, np.asarray(out))


def scale(x, factor) -> Tensor:
    x = _wrap(x)
    c = complex(factor) if np.iscomplexobj(np.asarray(factor)) else float(factor)

    def vjp(g):
        return (g * np.conj(c),)

    return _record("scale", (x,), vjp, x.values * c)


def reshape(x, shape) -> Tensor:
    x = _wrap(x)
    old = x.shape

    def vjp(g):
        return (g.reshape(old),)

    return _record("reshape", (x,), vjp, x.values.reshape(shape))


def custom_op(name, out_values, parents, vjp) -> Tensor:
    """Record a fused operation with a hand-written backward rule."""
    return _record(name, tuple(parents), vjp, out_values)


_FORWARD_OPS = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "exp": exp,
    "cexp": cexp,
    "real": real,
    "concat": lambda *ts, axis=0: concat(ts, axis=axis),
    "slice": lambda x, key: slice_(x, key),
    "sum": sum_,
    "scale": scale,
}


def forward(op_kind: str, *operands, **kwargs) -> Tensor:
    """Dispatch an operation by name (see ``_FORWARD_OPS`` for the op set)."""
    try:
        fn = _FORWARD_OPS[op_kind]
    except KeyError:
        raise UsageError(f"unknown op kind {op_kind!r}") from None
    return fn(*operands, **kwargs)


# ---------------------------------------------------------------------------
# Jacobians and gradient checking


def realify_grad(g: np.ndarray) -> np.ndarray:
    """Flatten a gradient array to real columns.

    Complex entries expand to interleaved (Re, Im) pairs in row-major element
    order; real entries flatten unchanged.
    """
    flat = np.ravel(g)
    if np.iscomplexobj(flat):
        out = np.empty(2 * flat.size, dtype=np.float64)
        out[0::2] = flat.real
        out[1::2] = flat.imag
        return out
    return flat.astype(np.float64, copy=False)


def jacobian(tape: Tape, output: Tensor, z: Tensor) -> np.ndarray:
    """Full Jacobian of a recorded mapping ``z -> output``.

    ``output`` must be the tape's terminal, real-valued, at most 1-D.  Row i
    is the gradient of ``output[i]``; complex ``z`` contributes interleaved
    (Re, Im) column pairs.
    """
    if output.node is None or output.node is not tape.nodes[-1]:
        raise UsageError("jacobian requires a recorded terminal output")
    if output.is_complex:
        raise UsageError("jacobian output must be real-valued")
    out_dim = output.size
    cols = 2 * z.size if z.is_complex else z.size
    jac = np.empty((out_dim, cols), dtype=np.float64)
    for i in range(out_dim):
        seed = np.zeros(output.shape, dtype=output.dtype)
        seed.reshape(-1)[i] = 1.0
        grads = backward_from(tape, output, seed)
        jac[i] = realify_grad(grads[z])
    return jac


@dataclass
class GradCheckReport:
    max_rel_err: float
    tol: float
    passed: bool
    analytic: np.ndarray
    numeric: np.ndarray


def grad_check(f, x: Tensor, tol=1e-6, step=1e-5) -> GradCheckReport:
    """Compare the backward gradient of scalar-valued ``f`` at ``x`` against
    central finite differences over the realified coordinates of ``x``."""
    with Tape() as tape:
        out = f(x)
    if out.size != 1:
        raise UsageError("grad_check requires a scalar-valued function")
    grads = backward_from(tape, out, np.ones(out.shape, dtype=out.dtype))
    analytic = realify_grad(grads[x])

    base = x.values.copy()
    numeric = np.empty_like(analytic)

    def eval_at(values):
        return float(np.asarray(f(Tensor(values)).values))

    flat = base.reshape(-1)
    parts = (1.0, 1j) if np.iscomplexobj(base) else (1.0,)
    col = 0
    for i in range(flat.size):
        for unit in parts:
            orig = flat[i]
            flat[i] = orig + unit * step
            fp = eval_at(base)
            flat[i] = orig - unit * step
            fm = eval_at(base)
            flat[i] = orig
            numeric[col] = (fp - fm) / (2.0 * step)
            col += 1

    denom = max(float(np.max(np.abs(numeric))), 1e-8)
    max_rel = float(np.max(np.abs(analytic - numeric))) / denom
    return GradCheckReport(max_rel, tol, max_rel < tol, analytic, numeric)
