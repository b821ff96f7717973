"""
Dense tensors with eager, tape-based reverse-mode automatic differentiation.

Every op that touches a tensor with requires_grad=True while a Graph is active appends
one GraphEntry (op name, inputs, output, backward rule) to that graph. Graph.backward()
walks the entries in reverse tape order, so gradient accumulation order is fixed and
two identical runs produce bit-identical gradients.

    with Graph() as graph:
        loss = (x * x).sum()
    grads = graph.backward(loss)

Broadcasting is one-sided: one operand must already have the result shape, the other
may be a scalar or may carry 1-extents / missing leading axes (per-channel bias,
per-item channel gates).
"""
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf, expit

from mmic00_settings import DEBUG
from utils.errors import GraphError, NonFiniteError, ShapeMismatchError

logger = logging.getLogger(__name__)

Array = np.ndarray
BackwardFn = Callable[[Array], Sequence[Array | None]]

SQRT_2 = np.sqrt(2.0)
INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

_graph_stack: list = []
_debug = {"on": DEBUG}


class Tensor:

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str = ""):
        if isinstance(data, Tensor):
            data = data.data
        array = np.asarray(data, dtype=dtype)
        if not np.issubdtype(array.dtype, np.floating):
            array = array.astype(np.float64)
        self.data: Array = array
        self.requires_grad = requires_grad
        self.grad: Array | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> Array:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise GraphError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f" '{self.name}'" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(value, like: Tensor | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype))


########################################################################
@dataclass
class GraphEntry:
    op: str
    inputs: tuple
    output: Tensor
    backward_fn: BackwardFn


@dataclass
class Graph:
    """Ordered tape of recorded operations."""
    entries: list[GraphEntry] = field(default_factory=list)
    leaves: dict = field(default_factory=dict)
    _produced: set = field(default_factory=set)

    def __enter__(self):
        _graph_stack.append(self)
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        _graph_stack.pop()
        return False

    def record(self, entry: GraphEntry):
        for tensor in entry.inputs:
            if tensor.requires_grad and id(tensor) not in self._produced:
                self.leaves.setdefault(id(tensor), tensor)
        self._produced.add(id(entry.output))
        self.entries.append(entry)

    def backward(self, output: Tensor, seed: Tensor | Array | None = None) -> dict[Tensor, Array]:
        """Propagate seed from output to every leaf with requires_grad.
        Leaf gradients are summed over all paths, stored (accumulated) in leaf.grad,
        and returned as {leaf: gradient}.
        """
        if id(output) not in self._produced:
            raise GraphError("backward before forward: the output was not produced by this graph")
        if seed is None:
            seed_array = np.ones_like(output.data)
        else:
            seed_array = np.asarray(seed.data if isinstance(seed, Tensor) else seed, dtype=output.dtype)
        if seed_array.shape != output.shape:
            raise GraphError(f"seed shape {seed_array.shape} does not match the output shape {output.shape}")

        grads: dict[int, Array] = {id(output): seed_array}
        for entry in reversed(self.entries):
            upstream = grads.pop(id(entry.output), None)
            if upstream is None:
                continue
            input_grads = entry.backward_fn(upstream)
            for tensor, input_grad in zip(entry.inputs, input_grads):
                if input_grad is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                grads[key] = grads[key] + input_grad if key in grads else input_grad

        bindings = {}
        for key, leaf in self.leaves.items():
            leaf_grad = grads.get(key)
            if leaf_grad is None:
                leaf_grad = np.zeros_like(leaf.data)
            leaf.grad = leaf_grad if leaf.grad is None else leaf.grad + leaf_grad
            bindings[leaf] = leaf_grad
        return bindings


def current_graph() -> Graph | None:
    return _graph_stack[-1] if _graph_stack else None


@contextmanager
def no_grad():
    _graph_stack.append(None)
    try:
        yield
    finally:
        _graph_stack.pop()


def debug_enabled() -> bool:
    return _debug["on"]


@contextmanager
def debug_mode(on: bool = True):
    previous = _debug["on"]
    _debug["on"] = on
    try:
        yield
    finally:
        _debug["on"] = previous


def record_op(op: str, inputs: tuple, out_data: Array, backward_fn: BackwardFn) -> Tensor:
    if _debug["on"] and not np.all(np.isfinite(out_data)):
        raise NonFiniteError(op)
    out = Tensor(out_data)
    graph = current_graph()
    if graph is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        graph.record(GraphEntry(op, inputs, out, backward_fn))
    return out


########################################################################
# broadcasting
def _result_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    if a.shape == b.shape:
        return a.shape
    try:
        shape = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatchError(op, f"cannot combine {a.shape} and {b.shape}")
    if shape != a.shape and shape != b.shape:
        raise ShapeMismatchError(op, f"two-sided broadcast of {a.shape} and {b.shape} is not supported")
    return shape


def reduce_to_shape(grad: Array, shape: tuple[int, ...]) -> Array:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    squeeze_axes = tuple(i for i, extent in enumerate(shape) if extent == 1 and grad.shape[i] != 1)
    if squeeze_axes:
        grad = grad.sum(axis=squeeze_axes, keepdims=True)
    return grad.reshape(shape)


########################################################################
# elementwise binary
def add(a, b) -> Tensor:
    a, b = as_tensor(a, b if isinstance(b, Tensor) else None), as_tensor(b, a if isinstance(a, Tensor) else None)
    _result_shape("add", a, b)

    def backward(g):
        return reduce_to_shape(g, a.shape), reduce_to_shape(g, b.shape)

    return record_op("add", (a, b), a.data + b.data, backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a, b if isinstance(b, Tensor) else None), as_tensor(b, a if isinstance(a, Tensor) else None)
    _result_shape("sub", a, b)

    def backward(g):
        return reduce_to_shape(g, a.shape), reduce_to_shape(-g, b.shape)

    return record_op("sub", (a, b), a.data - b.data, backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a, b if isinstance(b, Tensor) else None), as_tensor(b, a if isinstance(a, Tensor) else None)
    _result_shape("mul", a, b)

    def backward(g):
        return reduce_to_shape(g * b.data, a.shape), reduce_to_shape(g * a.data, b.shape)

    return record_op("mul", (a, b), a.data * b.data, backward)


########################################################################
# elementwise unary
def neg(x: Tensor) -> Tensor:
    return record_op("neg", (x,), -x.data, lambda g: (-g,))


def reciprocal(x: Tensor) -> Tensor:
    out = 1.0 / x.data
    return record_op("reciprocal", (x,), out, lambda g: (-g * out * out,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return record_op("exp", (x,), out, lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return record_op("log", (x,), np.log(x.data), lambda g: (g / x.data,))


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.data)
    return record_op("sigmoid", (x,), out, lambda g: (g * out * (1.0 - out),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record_op("relu", (x,), np.where(mask, x.data, 0.0).astype(x.dtype), lambda g: (g * mask,))


def silu(x: Tensor) -> Tensor:
    s = expit(x.data)
    return record_op("silu", (x,), x.data * s, lambda g: (g * (s + x.data * s * (1.0 - s)),))


def gelu(x: Tensor) -> Tensor:
    # exact erf form
    cdf = 0.5 * (1.0 + erf(x.data / SQRT_2))
    pdf = INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
    return record_op("gelu", (x,), (x.data * cdf).astype(x.dtype), lambda g: (g * (cdf + x.data * pdf),))


def softplus(x: Tensor) -> Tensor:
    return record_op("softplus", (x,), np.logaddexp(0.0, x.data).astype(x.dtype), lambda g: (g * expit(x.data),))


########################################################################
# reductions and layout
def _normalize_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return record_op("sum", (x,), np.asarray(out, dtype=x.dtype), backward)


def reduce_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return mul(reduce_sum(x, axis=axes, keepdims=keepdims), 1.0 / count)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeMismatchError("reshape", f"cannot reshape {x.shape} into {shape}")
    return record_op("reshape", (x,), out, lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    inverse = tuple(np.argsort(axes))
    return record_op("transpose", (x,), np.transpose(x.data, axes), lambda g: (np.transpose(g, inverse),))


def take(x: Tensor, indices, axis: int = -1) -> Tensor:
    """Gather along one axis; indices may repeat (their gradients are summed)."""
    indices = np.asarray(indices, dtype=np.int64)
    axis = axis % x.ndim
    if indices.size and (indices.min() < 0 or indices.max() >= x.shape[axis]):
        raise ShapeMismatchError("take", f"index out of range for axis {axis} of extent {x.shape[axis]}")
    out = np.take(x.data, indices, axis=axis)

    def backward(g):
        moved = np.zeros((x.shape[axis],) + tuple(np.delete(x.shape, axis)), dtype=g.dtype)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        return (np.moveaxis(moved, 0, axis),)

    return record_op("take", (x,), out, backward)


def slice_axis(x: Tensor, start: int, stop: int, axis: int = -1) -> Tensor:
    axis = axis % x.ndim
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def backward(g):
        full = np.zeros_like(x.data, dtype=g.dtype)
        full[index] = g
        return (full,)

    return record_op("slice", (x,), x.data[index], backward)


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = tuple(parts)
    if not parts:
        raise ShapeMismatchError("concat", "nothing to concatenate")
    axis = axis % parts[0].ndim
    reference = parts[0].shape[:axis] + parts[0].shape[axis + 1:]
    for part in parts[1:]:
        if part.ndim != parts[0].ndim or part.shape[:axis] + part.shape[axis + 1:] != reference:
            raise ShapeMismatchError("concat", f"parts {parts[0].shape} and {part.shape} differ off the concat axis")
    boundaries = np.cumsum([0] + [p.shape[axis] for p in parts])

    def backward(g):
        return tuple(np.take(g, np.arange(boundaries[i], boundaries[i + 1]), axis=axis) for i in range(len(parts)))

    return record_op("concat", parts, np.concatenate([p.data for p in parts], axis=axis), backward)


def matmul(x: Tensor, w: Tensor) -> Tensor:
    """(..., C_in) @ (C_in, C_out) over the last axis."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeMismatchError("matmul", f"last extent of {x.shape} does not match weight {w.shape}")

    def backward(g):
        grad_x = g @ w.data.T
        grad_w = x.data.reshape(-1, w.shape[0]).T @ g.reshape(-1, w.shape[1])
        return grad_x, grad_w

    return record_op("matmul", (x, w), x.data @ w.data, backward)


########################################################################
def evaluate(fn: Callable[..., Tensor], *leaves: Tensor) -> tuple[Tensor, Graph]:
    """Run fn(*leaves) while recording, return (terminal tensor, graph)."""
    for position, leaf in enumerate(leaves):
        if not isinstance(leaf, Tensor):
            raise GraphError(f"leaf {position} is not bound to a Tensor")
    with Graph() as graph:
        out = fn(*leaves)
    return out, graph


def backward(graph: Graph, output: Tensor, seed=None) -> dict[Tensor, Array]:
    return graph.backward(output, seed)


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    n_checked: int
    note: str = ""

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance

    def __str__(self):
        verdict = "pass" if self.passed else "FAIL"
        return f"grad check {verdict}: max rel. error {self.max_rel_error:.3e} over {self.n_checked} elements {self.note}"


def grad_check(fn: Callable[[], Tensor], leaf: Tensor, step: float = 1e-5, tolerance: float = 1e-4,
               max_elements: int | None = None, seed: int = 0, floor: float = 1e-3) -> GradCheckReport:
    """Compare the analytic gradient of the scalar fn() w.r.t. leaf against
    central differences (f(x+h) - f(x-h)) / 2h.
    The relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor). Components below floor are
    therefore held to an absolute error of tolerance * floor (1e-7 with the defaults), which is above the
    truncation and rounding error of a central difference with step 1e-5 in float64.
    With max_elements set, a seeded random subset of the leaf elements is checked.
    """
    note = "" if leaf.dtype == np.float64 else f"(leaf dtype {leaf.dtype}, expected float64)"
    was_tracked, saved_grad = leaf.requires_grad, leaf.grad
    leaf.requires_grad, leaf.grad = True, None
    try:
        with Graph() as graph:
            out = fn()
        if out.size != 1:
            return GradCheckReport(float("inf"), tolerance, 0, "(fn must return a scalar)")
        analytic = graph.backward(out).get(leaf, np.zeros_like(leaf.data)).reshape(-1)

        flat_indices = np.arange(leaf.size)
        if max_elements is not None and max_elements < leaf.size:
            flat_indices = np.sort(np.random.default_rng(seed).choice(leaf.size, max_elements, replace=False))

        original = leaf.data
        max_error = 0.0
        with no_grad():
            for flat_index in flat_indices:
                values = []
                for sign in (1.0, -1.0):
                    perturbed = original.copy()
                    perturbed.reshape(-1)[flat_index] += sign * step
                    leaf.data = perturbed
                    values.append(float(fn().data.reshape(-1)[0]))
                leaf.data = original
                numeric = (values[0] - values[1]) / (2.0 * step)
                a = float(analytic[flat_index])
                error = abs(a - numeric) / max(abs(a), abs(numeric), floor)
                max_error = max(max_error, error)
        return GradCheckReport(max_error, tolerance, len(flat_indices), note)
    finally:
        leaf.requires_grad, leaf.grad = was_tracked, saved_grad
