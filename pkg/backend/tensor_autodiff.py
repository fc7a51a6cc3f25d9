"""
Tensor Autodiff Engine
Minimal deterministic reverse-mode automatic differentiation over float64 numpy arrays.

Every op records one node on the active ComputeGraph when any input requires grad.
backward() visits the nodes reachable from the loss in exact reverse recording order,
so gradient accumulation is reproducible bit for bit.
"""

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


KL_FLOOR = 1e-12
ROW_SUM_TOLERANCE = 1e-6


class ShapeError(ValueError):
    """Input shapes do not conform to the op's shape rule"""


class LabelRangeError(ValueError):
    """Class index outside [0, C)"""


class ProbabilityError(ValueError):
    """Invalid probability tensor (negative entries or rows not summing to one)"""


class GraphError(RuntimeError):
    """backward() on a non-scalar, an unrecorded loss, or inputs recorded on another graph"""


# ============================================================================
# Tensor
# ============================================================================

class Tensor:
    """
    Dense float64 array with a lazily allocated gradient buffer.

    Only leaf tensors (not produced by a recorded op) accumulate into .grad;
    gradients of intermediate results are transient.
    """

    __slots__ = ("values", "_grad", "requires_grad", "_node", "name")

    def __init__(self, values, requires_grad: bool = False, name: Optional[str] = None):
        self.values = np.array(values, dtype=np.float64)
        self._grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._node: Optional["Node"] = None
        self.name = name

    @classmethod
    def constant(cls, values: np.ndarray) -> "Tensor":
        """Wrap an existing float64 array without copying"""
        tensor = cls.__new__(cls)
        tensor.values = values
        tensor._grad = None
        tensor.requires_grad = False
        tensor._node = None
        tensor.name = None
        return tensor

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None or self._grad.shape != self.values.shape:
            self._grad = np.zeros_like(self.values)
        return self._grad

    @grad.setter
    def grad(self, value: np.ndarray) -> None:
        self._grad = np.asarray(value, dtype=np.float64)

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def zero_grad(self) -> None:
        self._grad = None

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.values.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.values

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    # Operator sugar -------------------------------------------------------

    def __add__(self, other):
        return add(self, _lift(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _lift(other, self))

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self) -> "Tensor":
        return total(self)

    def mean(self) -> "Tensor":
        return mean(self)


def _lift(other, like: Tensor) -> Tensor:
    if isinstance(other, Tensor):
        return other
    return Tensor.constant(np.full(like.shape, float(other)))


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor.constant(np.asarray(value, dtype=np.float64))


# ============================================================================
# Compute graph
# ============================================================================

@dataclass
class Node:
    """One recorded op: kind, inputs, output and the vector-Jacobian product"""
    kind: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    vjp: Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]
    index: int
    graph: "ComputeGraph"

    @property
    def input_ids(self) -> Tuple[int, ...]:
        return tuple(id(t) for t in self.inputs)

    @property
    def output_id(self) -> int:
        return id(self.output)


@dataclass
class ComputeGraph:
    """
    Recording context; node indices are a topological order.

    A retaining graph also keeps its nodes in a list so that leaving a
    graph_scope can detach every output. The default graph retains nothing:
    its nodes live only as long as the tensors that reference them.
    """
    retain: bool = True
    nodes: List[Node] = field(default_factory=list)
    recorded: int = 0

    def record(self, kind: str, inputs: Sequence[Tensor], output: Tensor, vjp) -> None:
        node = Node(kind, tuple(inputs), output, vjp, self.recorded, self)
        self.recorded += 1
        output._node = node
        output.requires_grad = True
        if self.retain:
            self.nodes.append(node)

    def clear(self) -> None:
        for node in self.nodes:
            node.output._node = None
        self.nodes.clear()

    def __len__(self) -> int:
        return len(self.nodes)


class _GraphState(threading.local):
    def __init__(self):
        self.stack: List[ComputeGraph] = [ComputeGraph(retain=False)]
        self.grad_enabled = True


_state = _GraphState()


def current_graph() -> ComputeGraph:
    return _state.stack[-1]


@contextmanager
def graph_scope() -> Iterator[ComputeGraph]:
    """Record onto a fresh graph for the duration of the block, then drop it"""
    graph = ComputeGraph()
    _state.stack.append(graph)
    try:
        yield graph
    finally:
        _state.stack.pop()
        graph.clear()


@contextmanager
def no_grad() -> Iterator[None]:
    previous = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


def _emit(kind: str, inputs: Sequence[Tensor], values: np.ndarray, vjp) -> Tensor:
    out = Tensor.constant(values)
    if _state.grad_enabled and any(t.requires_grad for t in inputs):
        current_graph().record(kind, inputs, out, vjp)
    return out


def _reachable(root: Node) -> List[Node]:
    """Nodes the loss depends on, latest first; all must share the loss's graph"""
    graph = root.graph
    found = {}
    pending = [root]
    while pending:
        node = pending.pop()
        if node.index in found:
            continue
        found[node.index] = node
        for tensor in node.inputs:
            parent = tensor._node
            if parent is None:
                continue
            if parent.graph is not graph:
                raise GraphError(
                    f"backward: input {parent.index} of {node.kind} was recorded on another graph"
                )
            pending.append(parent)
    return [found[index] for index in sorted(found, reverse=True)]


def backward(loss: Tensor) -> None:
    """
    Accumulate d(loss)/d(leaf) into every leaf that requires grad.

    Repeated calls without zero_grad accumulate.
    """
    if loss.values.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._node is None:
        raise GraphError("backward: loss is not on the graph (no input requires grad)")

    upstream = {id(loss): np.ones_like(loss.values)}
    for node in _reachable(loss._node):
        g = upstream.pop(node.output_id, None)
        if g is None:
            continue
        grads = node.vjp(g)
        for tensor, gi in zip(node.inputs, grads):
            if gi is None or not tensor.requires_grad:
                continue
            if tensor._node is None:
                buf = tensor.grad
                buf += gi
            else:
                key = id(tensor)
                held = upstream.get(key)
                upstream[key] = gi if held is None else held + gi


# ============================================================================
# Shape helpers
# ============================================================================

def _require(cond: bool, op: str, *shapes) -> None:
    if not cond:
        described = " and ".join(str(tuple(s)) for s in shapes)
        raise ShapeError(f"{op}: incompatible shapes {described}")


# ============================================================================
# Elementwise ops
# ============================================================================

def add(a: Tensor, b: Tensor) -> Tensor:
    _require(a.shape == b.shape, "add", a.shape, b.shape)
    return _emit("add", (a, b), a.values + b.values, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require(a.shape == b.shape, "sub", a.shape, b.shape)
    return _emit("sub", (a, b), a.values - b.values, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require(a.shape == b.shape, "mul", a.shape, b.shape)
    av, bv = a.values, b.values
    return _emit("mul", (a, b), av * bv, lambda g: (g * bv, g * av))


def scale(a: Tensor, factor: float) -> Tensor:
    return _emit("scale", (a,), a.values * factor, lambda g: (g * factor,))


def neg(a: Tensor) -> Tensor:
    return _emit("neg", (a,), -a.values, lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.values)
    return _emit("exp", (a,), out, lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    av = a.values
    if np.any(av <= 0):
        raise ValueError("log: non-positive input")
    return _emit("log", (a,), np.log(av), lambda g: (g / av,))


def relu(a: Tensor) -> Tensor:
    mask = a.values > 0
    return _emit("relu", (a,), np.where(mask, a.values, 0.0), lambda g: (g * mask,))


def total(a: Tensor) -> Tensor:
    shape = a.shape
    return _emit("sum", (a,), np.sum(a.values), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a: Tensor) -> Tensor:
    shape, n = a.shape, a.size
    return _emit(
        "mean", (a,), np.sum(a.values) / n,
        lambda g: (np.broadcast_to(g / n, shape).copy(),),
    )


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    original = a.shape
    try:
        out = a.values.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {original} into {tuple(shape)}")
    return _emit("reshape", (a,), out, lambda g: (g.reshape(original),))


# ============================================================================
# Layer ops
# ============================================================================

def matmul(a: Tensor, b: Tensor) -> Tensor:
    _require(a.ndim == 2 and b.ndim == 2 and a.shape[1] == b.shape[0], "matmul", a.shape, b.shape)
    av, bv = a.values, b.values
    return _emit("matmul", (a, b), av @ bv, lambda g: (g @ bv.T, av.T @ g))


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a per-channel bias along axis 1 of a (N, C) or (N, C, H, W) tensor"""
    _require(bias.ndim == 1 and x.ndim in (2, 4) and x.shape[1] == bias.shape[0],
             "add_bias", x.shape, bias.shape)
    if x.ndim == 2:
        return _emit("add_bias", (x, bias), x.values + bias.values,
                     lambda g: (g, g.sum(axis=0)))
    return _emit("add_bias", (x, bias), x.values + bias.values[None, :, None, None],
                 lambda g: (g, g.sum(axis=(0, 2, 3))))


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """
    2-D cross-correlation via im2col + matmul.

    x: (N, C, H, W), weight: (F, C, k, k) -> (N, F, H_out, W_out)
    """
    _require(x.ndim == 4 and weight.ndim == 4 and x.shape[1] == weight.shape[1]
             and weight.shape[2] == weight.shape[3], "conv2d", x.shape, weight.shape)
    n, c, h, w = x.shape
    f, _, k, _ = weight.shape
    _require(h + 2 * padding >= k and w + 2 * padding >= k, "conv2d", x.shape, weight.shape)

    xv = x.values
    if padding:
        xv = np.pad(xv, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(xv, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    h_out, w_out = windows.shape[2], windows.shape[3]
    # (N, H_out, W_out, C, k, k) -> rows of length C*k*k
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(n * h_out * w_out, c * k * k)
    wmat = weight.values.reshape(f, c * k * k)
    out = (cols @ wmat.T).reshape(n, h_out, w_out, f).transpose(0, 3, 1, 2)
    padded_shape = xv.shape

    def vjp(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * h_out * w_out, f)
        gw = (gmat.T @ cols).reshape(weight.shape)
        gcols = (gmat @ wmat).reshape(n, h_out, w_out, c, k, k)
        gx = np.zeros(padded_shape)
        for i in range(k):
            for j in range(k):
                gx[:, :, i:i + stride * h_out:stride, j:j + stride * w_out:stride] += \
                    gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        if padding:
            gx = gx[:, :, padding:-padding, padding:-padding]
        return gx, gw

    return _emit("conv2d", (x, weight), np.ascontiguousarray(out), vjp)


def max_pool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; ties resolve to the first window element"""
    _require(x.ndim == 4 and x.shape[2] % 2 == 0 and x.shape[3] % 2 == 0, "max_pool2", x.shape)
    n, c, h, w = x.shape
    blocks = x.values.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(n, c, h // 2, w // 2, 4)
    winner = np.argmax(blocks, axis=-1)
    out = np.take_along_axis(blocks, winner[..., None], axis=-1)[..., 0]

    def vjp(g):
        gblocks = np.zeros((n, c, h // 2, w // 2, 4))
        np.put_along_axis(gblocks, winner[..., None], g[..., None], axis=-1)
        gx = gblocks.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (gx.reshape(n, c, h, w),)

    return _emit("max_pool2", (x,), out, vjp)


def flatten(x: Tensor) -> Tensor:
    _require(x.ndim >= 2, "flatten", x.shape)
    original = x.shape
    out = x.values.reshape(original[0], -1)
    return _emit("flatten", (x,), out, lambda g: (g.reshape(original),))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeError("concat: no inputs")
    first = tensors[0].shape
    for t in tensors[1:]:
        _require(t.ndim == len(first) and all(
            a == b for d, (a, b) in enumerate(zip(t.shape, first)) if d != axis % len(first)
        ), "concat", first, t.shape)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.values for t in tensors], axis=axis)
    return _emit("concat", tensors, out, lambda g: tuple(np.split(g, bounds, axis=axis)))


def gather_rows(x: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)
    _require(idx.ndim == 1 and (idx.size == 0 or (idx.min() >= -x.shape[0] and idx.max() < x.shape[0])),
             "gather_rows", x.shape, idx.shape)
    shape = x.shape

    def vjp(g):
        gx = np.zeros(shape)
        np.add.at(gx, idx, g)
        return (gx,)

    return _emit("gather_rows", (x,), x.values[idx], vjp)


def softmax(x: Tensor) -> Tensor:
    """Softmax along the last axis"""
    shifted = x.values - x.values.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _emit("softmax", (x,), s, vjp)


def log_softmax(x: Tensor) -> Tensor:
    shifted = x.values - x.values.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    s = np.exp(out)

    def vjp(g):
        return (g - s * g.sum(axis=-1, keepdims=True),)

    return _emit("log_softmax", (x,), out, vjp)


# ============================================================================
# Losses
# ============================================================================

def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label]"""
    y = np.asarray(labels, dtype=np.int64)
    _require(logits.ndim == 2 and y.ndim == 1 and y.shape[0] == logits.shape[0],
             "cross_entropy", logits.shape, y.shape)
    batch, classes = logits.shape
    if y.size and (y.min() < 0 or y.max() >= classes):
        bad = y[(y < 0) | (y >= classes)][0]
        raise LabelRangeError(f"cross_entropy: label {int(bad)} outside [0, {classes})")

    shifted = logits.values - logits.values.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    rows = np.arange(batch)
    value = -np.sum(logp[rows, y]) / batch

    def vjp(g):
        grad = np.exp(logp)
        grad[rows, y] -= 1.0
        return (grad * (g / batch),)

    return _emit("cross_entropy", (logits,), np.asarray(value), vjp)


def _check_distribution(t: Tensor, op: str, name: str) -> None:
    if np.any(t.values < 0):
        raise ProbabilityError(f"{op}: {name} has negative entries")
    sums = t.values.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > ROW_SUM_TOLERANCE):
        worst = float(sums.flat[np.argmax(np.abs(sums - 1.0))])
        raise ProbabilityError(f"{op}: {name} rows must sum to 1, found {worst!r}")


def kl_divergence(p: Tensor, q: Tensor) -> Tensor:
    """
    Mean over the batch of sum_c p_c * ln(p_c / q_c).

    q is floored at KL_FLOOR before the log; p_c = 0 terms contribute zero.
    """
    _require(p.shape == q.shape and p.ndim == 2, "kl_divergence", p.shape, q.shape)
    _check_distribution(p, "kl_divergence", "p")
    _check_distribution(q, "kl_divergence", "q")
    batch = p.shape[0]
    pv = p.values
    qf = np.maximum(q.values, KL_FLOOR)
    log_p = np.log(np.maximum(pv, KL_FLOOR))
    log_q = np.log(qf)
    terms = np.where(pv > 0, pv * (log_p - log_q), 0.0)
    value = np.sum(terms) / batch
    q_active = q.values >= KL_FLOOR

    def vjp(g):
        factor = g / batch
        gp = (log_p - log_q + 1.0) * factor
        gq = np.where(q_active, -pv / qf, 0.0) * factor
        return gp, gq

    return _emit("kl_divergence", (p, q), np.asarray(value), vjp)


FORWARD_OPS = {
    "matmul": matmul,
    "conv2d": conv2d,
    "add_bias": add_bias,
    "relu": relu,
    "max_pool2": max_pool2,
    "flatten": flatten,
    "concat": lambda *tensors, axis=1: concat(tensors, axis=axis),
    "softmax": softmax,
    "gather_rows": gather_rows,
}


def forward_op(kind: str, *inputs, **options) -> Tensor:
    """Dispatch a network op by name; options are passed through (stride, padding, axis)"""
    try:
        op = FORWARD_OPS[kind]
    except KeyError:
        raise ValueError(f"forward_op: unknown op {kind!r}; expected one of {sorted(FORWARD_OPS)}") from None
    return op(*inputs, **options)


__all__ = [
    "Tensor", "ComputeGraph", "Node",
    "ShapeError", "LabelRangeError", "ProbabilityError", "GraphError",
    "KL_FLOOR",
    "as_tensor", "current_graph", "graph_scope", "no_grad", "backward",
    "add", "sub", "mul", "scale", "neg", "exp", "log", "relu", "total", "mean", "reshape",
    "matmul", "add_bias", "conv2d", "max_pool2", "flatten", "concat", "gather_rows",
    "softmax", "log_softmax", "cross_entropy", "kl_divergence",
    "FORWARD_OPS", "forward_op",
]
