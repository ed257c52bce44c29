"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every differentiable operation is a named rule in ``RULES`` holding a forward
and a backward function. Calling an op records a node (rule name, inputs,
attributes) on the output tensor; ``backward`` walks those nodes in reverse
topological order and accumulates gradients into leaf tensors that have
``requires_grad`` set.
"""
import contextlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit

from . import kernels
from .errors import DomainError, NumericError, ShapeError


class Tensor:
    # ``needs`` records which inputs required gradients when the node was
    # built, so freezing a parameter only while building a graph is enough
    __slots__ = ("data", "requires_grad", "grad", "op", "inputs", "needs", "attrs", "name")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.array(data, dtype=np.float64)
        _check_extents(arr.shape)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.op = None
        self.inputs = ()
        self.needs = ()
        self.attrs = {}
        self.name = name

    @classmethod
    def _node(cls, data, op, inputs, attrs):
        t = cls.__new__(cls)
        t.data = data
        t.needs = tuple(i.requires_grad for i in inputs)
        t.requires_grad = any(t.needs)
        t.grad = None
        t.op = op
        t.inputs = inputs
        t.attrs = attrs
        t.name = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def is_leaf(self):
        return self.op is None

    def item(self):
        if self.data.size != 1:
            raise ShapeError("item() needs a single-element tensor", self.shape)
        return float(self.data.reshape(()))

    def numpy(self):
        return self.data

    def detach(self):
        """A constant tensor sharing this tensor's values."""
        t = Tensor.__new__(Tensor)
        t.data = self.data
        t.requires_grad = False
        t.grad = None
        t.op = None
        t.inputs = ()
        t.needs = ()
        t.attrs = {}
        t.name = self.name
        return t

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def __add__(self, other):
        return elementwise("add", self, other)

    def __radd__(self, other):
        return elementwise("add", other, self)

    def __sub__(self, other):
        return elementwise("sub", self, other)

    def __rsub__(self, other):
        return elementwise("sub", other, self)

    def __mul__(self, other):
        return elementwise("mul", self, other)

    def __rmul__(self, other):
        return elementwise("mul", other, self)

    def __truediv__(self, other):
        return elementwise("div", self, other)

    def __rtruediv__(self, other):
        return elementwise("div", other, self)

    def __neg__(self):
        return elementwise("neg", self)

    def __matmul__(self, other):
        return matmul(self, other)


def _check_extents(shape):
    if any(s <= 0 for s in shape):
        raise ShapeError("tensor extents must be positive", shape)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# rule registry


@dataclass
class Rule:
    forward: Callable
    backward: Callable


RULES: dict[str, Rule] = {}


def _rule(name):
    def register(pair):
        fwd, bwd = pair()
        RULES[name] = Rule(fwd, bwd)
        return pair
    return register


def apply(op, *inputs, **attrs):
    """Run rule ``op`` forward on ``inputs`` and record the node."""
    out = RULES[op].forward(*(t.data for t in inputs), **attrs)
    return Tensor._node(out, op, inputs, attrs)


@contextlib.contextmanager
def corrupted_rule(op, factor=1.5):
    """Temporarily scale the gradients produced by ``op``'s backward rule.

    Only meant for negative-control runs of ``grad_check``.
    """
    original = RULES[op]

    def bad_backward(*args, **kwargs):
        return tuple(None if g is None else g * factor
                     for g in original.backward(*args, **kwargs))

    RULES[op] = Rule(original.forward, bad_backward)
    try:
        yield
    finally:
        RULES[op] = original


# ---------------------------------------------------------------------------
# elementwise


def broadcast_shape(a, b):
    """Trailing-dimension broadcasting: one shape must be a suffix of the other."""
    a, b = tuple(a), tuple(b)
    if a == b:
        return a
    if len(b) <= len(a) and a[len(a) - len(b):] == b:
        return a
    if len(a) < len(b) and b[len(b) - len(a):] == a:
        return b
    raise ShapeError("shapes are not broadcastable", a, b)


def _unbroadcast(g, shape):
    extra = g.ndim - len(shape)
    return g.sum(axis=tuple(range(extra))) if extra > 0 else g


def _first_index(mask):
    return tuple(int(i) for i in np.unravel_index(int(np.argmax(mask)), mask.shape))


@_rule("add")
def _add():
    return (lambda a, b: a + b), (lambda g, out, a, b: (g, g))


@_rule("sub")
def _sub():
    return (lambda a, b: a - b), (lambda g, out, a, b: (g, -g))


@_rule("mul")
def _mul():
    return (lambda a, b: a * b), (lambda g, out, a, b: (g * b, g * a))


@_rule("div")
def _div():
    return (lambda a, b: a / b), (lambda g, out, a, b: (g / b, -g * a / (b * b)))


@_rule("neg")
def _neg():
    return (lambda a: -a), (lambda g, out, a: (-g,))


@_rule("exp")
def _exp():
    def fwd(a):
        with np.errstate(over="ignore"):
            return np.exp(a)
    return fwd, (lambda g, out, a: (g * out,))


@_rule("log")
def _log():
    return np.log, (lambda g, out, a: (g / a,))


@_rule("tanh")
def _tanh():
    return np.tanh, (lambda g, out, a: (g * (1.0 - out * out),))


@_rule("relu")
def _relu():
    return kernels.relu_forward, (lambda g, out, a: (kernels.relu_backward(g, a),))


@_rule("softplus")
def _softplus():
    return (lambda a: np.logaddexp(0.0, a)), (lambda g, out, a: (g * expit(a),))


UNARY = ("neg", "exp", "log", "tanh", "relu", "softplus")
BINARY = ("add", "sub", "mul", "div")


def elementwise(op_kind, a, b=None):
    """Apply an elementwise op; binary kinds broadcast by trailing dimensions."""
    if op_kind in UNARY:
        if b is not None:
            raise TypeError(f"{op_kind} takes a single operand")
        a = as_tensor(a)
        if op_kind == "log":
            bad = ~(a.data > 0)
            if bad.any():
                raise DomainError("log of nonpositive value", _first_index(bad))
        return apply(op_kind, a)
    if op_kind in BINARY:
        if b is None:
            raise TypeError(f"{op_kind} needs two operands")
        a, b = as_tensor(a), as_tensor(b)
        broadcast_shape(a.shape, b.shape)
        if op_kind == "div":
            bad = b.data == 0
            if bad.any():
                raise DomainError("division by zero", _first_index(bad))
        return apply(op_kind, a, b)
    raise ValueError(f"unknown elementwise op {op_kind!r}")


def exp(a):
    return elementwise("exp", a)


def log(a):
    return elementwise("log", a)


def tanh(a):
    return elementwise("tanh", a)


def relu(a):
    return elementwise("relu", a)


def softplus(a):
    return elementwise("softplus", a)


# ---------------------------------------------------------------------------
# linear algebra


@_rule("matmul")
def _matmul():
    return np.matmul, (lambda g, out, a, b: (g @ b.T, a.T @ g))


@_rule("linear")
def _linear():
    def fwd(x, w, b):
        return x @ w.T + b

    def bwd(g, out, x, w, b):
        return g @ w, g.T @ x, g.sum(axis=0)
    return fwd, bwd


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul needs (m, k) x (k, n)", a.shape, b.shape)
    return apply("matmul", a, b)


def linear(x, weight, bias):
    """``x @ weight.T + bias`` as a single fused node."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError("linear input width does not match weight", x.shape, weight.shape)
    if bias.shape != (weight.shape[0],):
        raise ShapeError("bias does not match weight rows", bias.shape, weight.shape)
    return apply("linear", x, weight, bias)


# ---------------------------------------------------------------------------
# reductions and shape manipulation


def _normalize_axis(axis, ndim):
    if not -ndim <= axis < ndim:
        raise ShapeError(f"axis {axis} out of range for rank {ndim}")
    return axis % ndim


def _expand_grad(g, shape, axis):
    if axis is None:
        return np.broadcast_to(g, shape)
    return np.broadcast_to(np.expand_dims(g, axis), shape)


@_rule("sum")
def _sum():
    def bwd(g, out, a, axis):
        return (np.array(_expand_grad(g, a.shape, axis)),)
    return (lambda a, axis: np.asarray(a.sum(axis=axis))), bwd


@_rule("mean")
def _mean():
    def bwd(g, out, a, axis):
        count = a.size if axis is None else a.shape[axis]
        return (_expand_grad(g, a.shape, axis) / count,)
    return (lambda a, axis: np.asarray(a.mean(axis=axis))), bwd


def reduce(op_kind, a, axis=None):
    a = as_tensor(a)
    if op_kind not in ("sum", "mean"):
        raise ValueError(f"unknown reduction {op_kind!r}")
    if axis is not None:
        axis = _normalize_axis(axis, a.ndim)
    return apply(op_kind, a, axis=axis)


def sum(a, axis=None):  # noqa: A001
    return reduce("sum", a, axis)


def mean(a, axis=None):
    return reduce("mean", a, axis)


@_rule("reshape")
def _reshape():
    return (lambda a, shape: a.reshape(shape)), (lambda g, out, a, shape: (g.reshape(a.shape),))


def reshape(a, shape):
    a = as_tensor(a)
    shape = tuple(shape)
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError("cannot reshape", a.shape, shape)
    return apply("reshape", a, shape=shape)


@_rule("slice")
def _slice():
    def fwd(a, start, stop):
        return a[..., start:stop].copy()

    def bwd(g, out, a, start, stop):
        full = np.zeros_like(a)
        full[..., start:stop] = g
        return (full,)
    return fwd, bwd


def columns(a, start, stop):
    """Slice ``a[..., start:stop]`` along the last axis."""
    a = as_tensor(a)
    if not 0 <= start < stop <= a.shape[-1]:
        raise ShapeError(f"column range [{start}, {stop}) invalid", a.shape)
    return apply("slice", a, start=start, stop=stop)


@_rule("concat")
def _concat():
    def fwd(*arrays):
        return np.concatenate(arrays, axis=-1)

    def bwd(g, out, *arrays):
        edges = np.cumsum([x.shape[-1] for x in arrays])[:-1]
        return tuple(np.split(g, edges, axis=-1))
    return fwd, bwd


def concat(tensors):
    """Concatenate along the last axis."""
    tensors = [as_tensor(t) for t in tensors]
    lead = tensors[0].shape[:-1]
    for t in tensors[1:]:
        if t.shape[:-1] != lead:
            raise ShapeError("concat needs matching leading dimensions", tensors[0].shape, t.shape)
    return apply("concat", *tensors)


# ---------------------------------------------------------------------------
# graph traversal


def _topological(root, only_grad):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for inp, need in zip(node.inputs, node.needs):
            if id(inp) not in seen and (need or not only_grad):
                stack.append((inp, False))
    return order


@dataclass
class Graph:
    """Executed nodes reachable from an output, in topological order."""

    output: Tensor
    nodes: list = field(default_factory=list)

    @classmethod
    def trace(cls, output):
        return cls(output, _topological(output, only_grad=False))

    def replay(self):
        """Recompute forward values from the leaves; returns the output array."""
        values = {}
        for node in self.nodes:
            if node.op is None:
                values[id(node)] = node.data
            else:
                args = [values[id(i)] for i in node.inputs]
                values[id(node)] = RULES[node.op].forward(*args, **node.attrs)
        return values[id(self.output)]


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.data.size != 1:
        raise ShapeError("backward needs a scalar loss", loss.shape)
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological(loss, only_grad=True)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.op is None:
            g = np.array(g, dtype=np.float64).reshape(node.shape)
            node.grad = g if node.grad is None else node.grad + g
            continue
        in_grads = RULES[node.op].backward(g, node.data, *(i.data for i in node.inputs),
                                           **node.attrs)
        for inp, need, gi in zip(node.inputs, node.needs, in_grads):
            if gi is None or not need:
                continue
            gi = _unbroadcast(gi, inp.shape)
            key = id(inp)
            grads[key] = gi if key not in grads else grads[key] + gi


# ---------------------------------------------------------------------------
# finite-difference checking


@dataclass
class ParamCheck:
    name: str
    max_rel_error: float
    worst_index: tuple
    analytic: float
    numeric: float
    checked: int


@dataclass
class GradCheckReport:
    params: list
    tol: float

    @property
    def max_rel_error(self):
        return max((p.max_rel_error for p in self.params), default=0.0)

    @property
    def passed(self):
        return self.max_rel_error <= self.tol

    @property
    def worst(self):
        return max(self.params, key=lambda p: p.max_rel_error) if self.params else None


def relative_error(analytic, numeric, floor=1e-6):
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps zero gradients from dividing by 0."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _eval_scalar(f, name, index):
    value = f()
    value = value.item() if isinstance(value, Tensor) else float(value)
    if not np.isfinite(value):
        raise NumericError("non-finite function value during grad check",
                           param=name, index=index)
    return value


def grad_check(f, params, h=1e-5, tol=1e-4, max_coords=None, seed=0, floor=1e-6):
    """Compare reverse-mode gradients of ``f()`` with central differences.

    ``f`` must rebuild its graph on every call and be deterministic (reseed
    any randomness inside it). ``max_coords`` caps the number of checked
    coordinates per parameter (chosen with ``seed``).
    """
    if h <= 0:
        raise ValueError("h must be positive")
    params = list(params)
    saved = [p.grad for p in params]
    for p in params:
        p.grad = None
    loss = f()
    _eval_scalar(lambda: loss, "<analytic>", None)
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad for p in params]
    for p, g in zip(params, saved):
        p.grad = g

    rng = np.random.default_rng(seed)
    results = []
    for k, (p, ga) in enumerate(zip(params, analytic)):
        name = p.name or f"param{k}"
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        worst = (0.0, (), 0.0, 0.0)
        for c in coords:
            index = tuple(int(i) for i in np.unravel_index(c, p.shape))
            orig = flat[c]
            flat[c] = orig + h
            fp = _eval_scalar(f, name, index)
            flat[c] = orig - h
            fm = _eval_scalar(f, name, index)
            flat[c] = orig
            numeric = (fp - fm) / (2.0 * h)
            a = float(ga.reshape(-1)[c])
            err = relative_error(a, numeric, floor)
            if err > worst[0] or not worst[1]:
                worst = (err, index, a, numeric)
        results.append(ParamCheck(name, worst[0], worst[1], worst[2], worst[3], len(coords)))
    return GradCheckReport(results, tol)
