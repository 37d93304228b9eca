"""Reverse-mode automatic differentiation over numpy arrays.

A small tape engine: every operation records the parents it depends on and
a vector-Jacobian closure, and :func:`backward` replays the tape once in
reverse topological order. All math functions in this module are generic:
called on plain numpy inputs they return plain numpy outputs, called on
:class:`Tensor` inputs they extend the tape. Training runs on float32,
gradient verification on float64; the engine preserves whatever dtype it
is given.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "parameter",
    "constant",
    "no_grad",
    "backward",
    "add",
    "sub",
    "mul",
    "div",
    "matmul",
    "affine",
    "exp",
    "log",
    "sin",
    "cos",
    "power",
    "sgauss",
    "spow",
    "logistic",
    "softplus",
    "gather_rows_blend",
    "sum",
    "mean",
    "cumsum",
    "reshape",
    "concatenate",
    "take",
]


class NumericError(RuntimeError):
    """Raised when a computation produces non-finite values it must not."""


_grad_enabled = True


class no_grad:
    """Context manager that suspends tape recording."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """A node in the computation graph.

    Holds a numpy ``value``, a lazily allocated ``grad`` accumulator of the
    same shape, and the ``parents`` + vector-Jacobian closure recorded by
    the operation that produced it. Leaf tensors created with
    :func:`parameter` have ``requires_grad=True`` and receive gradients
    from :func:`backward`.
    """

    __slots__ = ("value", "grad", "parents", "vjp", "requires_grad", "name")

    def __init__(self, value, requires_grad=False, name=None):
        self.value = np.asarray(value)
        self.grad = None
        self.parents = ()
        self.vjp = None
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def size(self):
        return self.value.size

    def detach(self):
        """Constant copy of this node; gradients do not flow past it."""
        return Tensor(self.value)

    def zero_grad(self):
        self.grad = np.zeros_like(self.value) if self.requires_grad else None

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.value.shape}, dtype={self.value.dtype}{flag}{label})"

    # operator sugar; all dispatch through the module-level functions
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return _getitem(self, key)


def parameter(value, name=None):
    """Leaf tensor that accumulates gradients."""
    t = Tensor(np.asarray(value), requires_grad=True, name=name)
    t.grad = np.zeros_like(t.value)
    return t


def constant(value):
    return Tensor(np.asarray(value))


def _val(x):
    # python scalars stay "weak" so they do not promote float32 graphs
    if isinstance(x, Tensor):
        return x.value
    if isinstance(x, (int, float)):
        return x
    return np.asarray(x)


def _req(x):
    return isinstance(x, Tensor) and x.requires_grad


def _make(value, inputs, vjp):
    """Wrap an op result: ndarray in/ndarray out, tape node when needed."""
    if not any(isinstance(x, Tensor) for x in inputs):
        return value
    live = tuple(x for x in inputs if _req(x))
    if not _grad_enabled or not live:
        return Tensor(value)
    t = Tensor(value, requires_grad=True)
    t.parents = live
    t.vjp = vjp
    return t


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(root, params=None):
    """Accumulate droot/dnode into every reachable node's ``grad``.

    ``root`` must be scalar (size 1). Each graph node is visited exactly
    once. When ``params`` is given, any parameter the graph never touched
    gets an explicit zero gradient.
    """
    if not isinstance(root, Tensor):
        raise ValueError("backward root must be a Tensor")
    if root.value.size != 1:
        raise ValueError(f"backward root must be scalar, got shape {root.value.shape}")

    # iterative postorder so deep graphs do not hit the recursion limit
    topo = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in visited:
                stack.append((p, False))

    root.grad = np.ones_like(root.value)
    for node in reversed(topo):
        if node.vjp is None:
            continue
        for parent, g in node.vjp(node.grad):
            if parent.grad is None:
                parent.grad = g if g.shape == parent.value.shape else np.broadcast_to(g, parent.value.shape).copy()
            else:
                parent.grad = parent.grad + g

    if params is not None:
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.value)


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b):
    out = _val(a) + _val(b)

    def vjp(g):
        pairs = []
        if _req(a):
            pairs.append((a, _unbroadcast(g, a.value.shape)))
        if _req(b):
            pairs.append((b, _unbroadcast(g, b.value.shape)))
        return pairs

    return _make(out, (a, b), vjp)


def sub(a, b):
    out = _val(a) - _val(b)

    def vjp(g):
        pairs = []
        if _req(a):
            pairs.append((a, _unbroadcast(g, a.value.shape)))
        if _req(b):
            pairs.append((b, _unbroadcast(-g, b.value.shape)))
        return pairs

    return _make(out, (a, b), vjp)


def mul(a, b):
    av, bv = _val(a), _val(b)
    out = av * bv

    def vjp(g):
        pairs = []
        if _req(a):
            pairs.append((a, _unbroadcast(g * bv, a.value.shape)))
        if _req(b):
            pairs.append((b, _unbroadcast(g * av, b.value.shape)))
        return pairs

    return _make(out, (a, b), vjp)


def div(a, b):
    av, bv = _val(a), _val(b)
    out = av / bv

    def vjp(g):
        pairs = []
        if _req(a):
            pairs.append((a, _unbroadcast(g / bv, a.value.shape)))
        if _req(b):
            pairs.append((b, _unbroadcast(-g * av / (bv * bv), b.value.shape)))
        return pairs

    return _make(out, (a, b), vjp)


def matmul(a, b):
    av, bv = _val(a), _val(b)
    if av.ndim != 2 or bv.ndim != 2:
        raise ValueError("matmul supports 2-D operands only")
    out = av @ bv

    def vjp(g):
        pairs = []
        if _req(a):
            pairs.append((a, g @ bv.T))
        if _req(b):
            pairs.append((b, av.T @ g))
        return pairs

    return _make(out, (a, b), vjp)


# ---------------------------------------------------------------------------
# elementwise


def exp(x):
    out = np.exp(_val(x))

    def vjp(g):
        return [(x, g * out)]

    return _make(out, (x,), vjp)


def log(x):
    v = _val(x)
    out = np.log(v)

    def vjp(g):
        return [(x, g / v)]

    return _make(out, (x,), vjp)


def sin(x):
    v = _val(x)
    out = np.sin(v)

    def vjp(g):
        return [(x, g * np.cos(v))]

    return _make(out, (x,), vjp)


def cos(x):
    v = _val(x)
    out = np.cos(v)

    def vjp(g):
        return [(x, -g * np.sin(v))]

    return _make(out, (x,), vjp)


def _int_pow(v, k):
    """v**k for integer k >= 0 by repeated squaring (np.power is slow)."""
    if k == 0:
        return np.ones_like(v)
    out = None
    base = v
    while k:
        if k & 1:
            out = base.copy() if out is None else out * base
        k >>= 1
        if k:
            base = base * base
    return out


def power(x, p):
    """x**p with a constant (python scalar) exponent."""
    v = _val(x)
    if not isinstance(v, np.ndarray):
        v = np.asarray(v, dtype=float)
    integral = float(p) == int(p) and int(p) >= 0
    out = _int_pow(v, int(p)) if integral else v**p

    def vjp(g):
        if integral:
            return [(x, g * p * _int_pow(v, int(p) - 1))] if p != 0 else [(x, np.zeros_like(v))]
        return [(x, g * p * v ** (p - 1))]

    return _make(out, (x,), vjp)


def sgauss(x, spread, p):
    """Fused exp(-(x/spread)**(2p)) for integer kurtosis p >= 1."""
    v, s = _val(x), _val(spread)
    p = int(p)
    z = v / s
    # keep the square chain: the backward needs z^(2p-1) without division
    squares = [z * z]
    while 2 ** len(squares) < 2 * p:
        squares.append(squares[-1] * squares[-1])
    u = None
    for bit, sq in enumerate(squares):
        if p & (1 << bit):
            u = sq if u is None else u * sq
    out = np.exp(-u)

    def vjp(g):
        pairs = []
        core = g * out
        if _req(x):
            dx = core * z  # build z^(2p-1) from the stored square chain
            half = p - 1
            for bit, sq in enumerate(squares):
                if half & (1 << bit):
                    dx = dx * sq
            dx = dx * (-(2.0 * p) / s)
            pairs.append((x, _unbroadcast(dx, x.value.shape)))
        if _req(spread):
            if np.ndim(s) == 0:
                ds = _unbroadcast(core * u, spread.value.shape) * (2.0 * p / s)
            else:
                ds = _unbroadcast(core * u * (2.0 * p) / s, spread.value.shape)
            pairs.append((spread, ds))
        return pairs

    return _make(out, (x, spread), vjp)


def affine(x, w, b=None, x2=None, w2=None):
    """Fused x @ w (+ x2 @ w2) (+ b); one node instead of three."""
    xv, wv = _val(x), _val(w)
    out = xv @ wv
    x2v = w2v = None
    if x2 is not None:
        x2v, w2v = _val(x2), _val(w2)
        out += x2v @ w2v
    if b is not None:
        out += _val(b)

    def vjp(g):
        pairs = []
        if _req(x):
            pairs.append((x, g @ wv.T))
        if _req(w):
            pairs.append((w, xv.T @ g))
        if x2 is not None and _req(x2):
            pairs.append((x2, g @ w2v.T))
        if w2 is not None and _req(w2):
            pairs.append((w2, x2v.T @ g))
        if b is not None and _req(b):
            pairs.append((b, _unbroadcast(g, b.value.shape)))
        return pairs

    return _make(out, tuple(t for t in (x, w, b, x2, w2) if t is not None), vjp)


def gather_rows_blend(data2d, rows, weights):
    """Weighted sum of row gathers: sum_k weights[k] * data2d[rows[k]].

    ``rows`` is a list of (N,) int arrays, ``weights`` matching (N, 1)
    arrays; the blend is one tape node with a scatter-add backward.
    """
    v = _val(data2d)
    out = None
    for r, wt in zip(rows, weights):
        term = v[r] * wt
        out = term if out is None else out + term

    def vjp(g):
        buf = np.zeros_like(v, dtype=g.dtype)
        for r, wt in zip(rows, weights):
            np.add.at(buf, r, g * wt)
        return [(data2d, buf)]

    return _make(out, (data2d,), vjp)


def spow(x, e):
    """Sign-preserving power sign(x)*|x|**e, real for negative bases.

    Differentiable in both the base and the exponent; d/dx = e*|x|**(e-1)
    on both sides of zero, and the exponent gradient is defined as zero
    where the base vanishes (the function value is zero there).
    """
    v, ev = _val(x), _val(e)
    av = np.abs(v)
    out = np.sign(v) * av**ev

    def vjp(g):
        pairs = []
        if _req(x):
            with np.errstate(divide="ignore", invalid="ignore"):
                d = ev * av ** (ev - 1)
            d = np.where(np.isfinite(d), d, 0.0)
            pairs.append((x, _unbroadcast(g * d, x.value.shape)))
        if _req(e):
            safe_log = np.where(av > 0, np.log(np.where(av > 0, av, 1.0)), 0.0)
            pairs.append((e, _unbroadcast(g * out * safe_log, e.value.shape)))
        return pairs

    return _make(out, (x, e), vjp)


def _expit(v):
    pos = v >= 0
    ez = np.exp(np.where(pos, -v, v))  # exp(-|v|), overflow-free
    return np.where(pos, 1.0 / (1.0 + ez), ez / (1.0 + ez))


def logistic(x):
    """Numerically stable 1/(1+exp(-x))."""
    v = np.asarray(_val(x))
    if not np.issubdtype(v.dtype, np.floating):
        v = v.astype(np.float64)
    out = _expit(v)

    def vjp(g):
        return [(x, g * out * (1.0 - out))]

    return _make(out, (x,), vjp)


def softplus(x):
    """log(1 + exp(x)), computed stably; derivative is the logistic."""
    v = _val(x)
    out = np.logaddexp(0.0, v)

    def vjp(g):
        return [(x, g * _expit(np.asarray(v, dtype=out.dtype)))]

    return _make(out, (x,), vjp)


# ---------------------------------------------------------------------------
# reductions and shape


def sum(x, axis=None, keepdims=False):
    v = np.asarray(_val(x))
    out = v.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        return [(x, np.broadcast_to(gg, v.shape).copy())]

    return _make(out, (x,), vjp)


def mean(x, axis=None, keepdims=False):
    v = np.asarray(_val(x))
    count = v.size if axis is None else v.shape[axis]
    s = sum(x, axis=axis, keepdims=keepdims)
    return div(s, float(count))


def cumsum(x, axis):
    v = _val(x)
    out = np.cumsum(v, axis=axis)

    def vjp(g):
        return [(x, np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis))]

    return _make(out, (x,), vjp)


def reshape(x, shape):
    v = _val(x)
    out = v.reshape(shape)

    def vjp(g):
        return [(x, g.reshape(v.shape))]

    return _make(out, (x,), vjp)


def concatenate(xs, axis=0):
    vals = [_val(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    sizes = [v.shape[axis] for v in vals]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        pairs = []
        for x, lo, hi in zip(xs, offsets[:-1], offsets[1:]):
            if _req(x):
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                pairs.append((x, g[tuple(idx)]))
        return pairs

    return _make(out, tuple(xs), vjp)


def take(x, indices):
    """Gather from the flattened input; backward scatter-adds."""
    v = _val(x)
    idx = np.asarray(indices)
    out = np.take(v, idx)

    def vjp(g):
        buf = np.zeros(v.size, dtype=g.dtype)
        np.add.at(buf, idx.ravel(), g.ravel())
        return [(x, buf.reshape(v.shape))]

    return _make(out, (x,), vjp)


def _getitem(x, key):
    """Basic (slice/int) indexing; use :func:`take` for fancy gathers."""
    v = _val(x)
    out = v[key]

    def vjp(g):
        buf = np.zeros_like(v, dtype=g.dtype)
        buf[key] += g
        return [(x, buf)]

    return _make(out, (x,), vjp)
