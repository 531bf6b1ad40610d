"""Reverse-mode automatic differentiation over float64 numpy arrays.

A :class:`Graph` is an append-only record of operations. Every operation
creates a :class:`Node` holding its forward value; ``backward`` walks the
record in reverse and accumulates vector-Jacobian products. Shapes are
always explicit: elementwise operations require identical shapes and the
few operations that replicate data (``repeat_rows``, ``linear``) say so in
their names.

The module also holds the dense layers and MLPs every model is built from,
the ADAM optimizer and the JSON checkpoint format for parameters.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, ContractError, TrainingError

CHECKPOINT_FORMAT_VERSION = 1
ACTIVATIONS = ("relu", "tanh", "softplus", "identity")


class Node:
    """Handle on one recorded value in a :class:`Graph`."""

    __slots__ = ("graph", "id")

    def __init__(self, graph: "Graph", node_id: int):
        self.graph = graph
        self.id = node_id

    @property
    def value(self) -> np.ndarray:
        return self.graph.values[self.id]

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __add__(self, other):
        return add(self, _lift(self.graph, other))

    def __radd__(self, other):
        return add(_lift(self.graph, other), self)

    def __sub__(self, other):
        return sub(self, _lift(self.graph, other))

    def __rsub__(self, other):
        return sub(_lift(self.graph, other), self)

    def __mul__(self, other):
        return mul(self, _lift(self.graph, other))

    def __rmul__(self, other):
        return mul(_lift(self.graph, other), self)

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        return f"Node(id={self.id}, op={self.graph.ops[self.id]!r}, shape={self.shape})"


def _lift(graph: "Graph", other) -> Node:
    if isinstance(other, Node):
        if other.graph is not graph:
            raise ContractError("nodes belong to different graphs")
        return other
    return graph.const(other)


class Graph:
    """Append-only computation record.

    Node ids are list indices, so every node's inputs precede it. Leaves
    created with ``requires_grad=False`` are constants and never receive
    gradients.
    """

    def __init__(self):
        self.ops: list[str] = []
        self.inputs: list[tuple[int, ...]] = []
        self.values: list[np.ndarray] = []
        self.vjps: list[Callable | None] = []
        self.requires_grad: list[bool] = []
        self.grads: list[np.ndarray | None] = []
        self._param_ids: dict[int, int] = {}  # id(array) -> node id; ids, not Nodes, to avoid a cycle

    def __len__(self):
        return len(self.values)

    def _record(self, op, inputs, value, vjp) -> Node:
        value = np.asarray(value, dtype=np.float64)
        rg = any(self.requires_grad[i.id] for i in inputs)
        self.ops.append(op)
        self.inputs.append(tuple(i.id for i in inputs))
        self.values.append(value)
        self.vjps.append(vjp if rg else None)
        self.requires_grad.append(rg)
        self.grads.append(None)
        return Node(self, len(self.values) - 1)

    def leaf(self, value, requires_grad: bool = True) -> Node:
        value = np.array(value, dtype=np.float64)
        self.ops.append("leaf")
        self.inputs.append(())
        self.values.append(value)
        self.vjps.append(None)
        self.requires_grad.append(requires_grad)
        self.grads.append(None)
        return Node(self, len(self.values) - 1)

    def const(self, value) -> Node:
        return self.leaf(value, requires_grad=False)

    def param(self, array: np.ndarray, requires_grad: bool = True) -> Node:
        """Leaf bound to a parameter array; one leaf per array per graph."""
        nid = self._param_ids.get(id(array))
        if nid is not None:
            return Node(self, nid)
        node = self.leaf(array, requires_grad=requires_grad)
        # keep the original object alive so id() stays unique
        self._param_ids[id(array)] = node.id
        self.values[node.id] = array
        return node

    def param_grad(self, array: np.ndarray) -> np.ndarray:
        nid = self._param_ids.get(id(array))
        if nid is None or self.grads[nid] is None:
            return np.zeros_like(array)
        return self.grads[nid]

    def backward(self, root: Node) -> dict[int, np.ndarray]:
        """Populate gradient slots with d(root)/d(node); return leaf gradients."""
        if root.graph is not self:
            raise ContractError("root belongs to a different graph")
        if root.value.ndim != 0:
            raise ContractError(f"backward root must be a scalar, got shape {root.value.shape}")
        self.grads = [None] * len(self.values)
        self.grads[root.id] = np.ones((), dtype=np.float64)
        for i in range(root.id, -1, -1):
            g = self.grads[i]
            if g is None or self.vjps[i] is None:
                continue
            for j, gj in zip(self.inputs[i], self.vjps[i](g)):
                if gj is None or not self.requires_grad[j]:
                    continue
                if self.grads[j] is None:
                    self.grads[j] = np.asarray(gj, dtype=np.float64)
                else:
                    self.grads[j] = self.grads[j] + gj
        return {
            i: self.grads[i]
            for i in range(len(self.values))
            if self.ops[i] == "leaf" and self.requires_grad[i] and self.grads[i] is not None
        }


def backward(graph: Graph, root: Node) -> dict[int, np.ndarray]:
    return graph.backward(root)


def _same_shape(a: Node, b: Node, op: str):
    if a.shape != b.shape:
        raise ConfigurationError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# -- elementwise ------------------------------------------------------------

def add(a: Node, b: Node) -> Node:
    _same_shape(a, b, "add")
    return a.graph._record("add", (a, b), a.value + b.value, lambda g: (g, g))


def sub(a: Node, b: Node) -> Node:
    _same_shape(a, b, "sub")
    return a.graph._record("sub", (a, b), a.value - b.value, lambda g: (g, -g))


def mul(a: Node, b: Node) -> Node:
    _same_shape(a, b, "mul")
    av, bv = a.value, b.value
    return a.graph._record("mul", (a, b), av * bv, lambda g: (g * bv, g * av))


def neg(a: Node) -> Node:
    return a.graph._record("neg", (a,), -a.value, lambda g: (-g,))


def scale(a: Node, c: float) -> Node:
    c = float(c)
    return a.graph._record("scale", (a,), a.value * c, lambda g: (g * c,))


def shift(a: Node, c: float) -> Node:
    """Add a Python scalar to every element."""
    return a.graph._record("shift", (a,), a.value + float(c), lambda g: (g,))


def relu(a: Node) -> Node:
    # subgradient at 0 is 0
    out = np.maximum(a.value, 0.0)
    return a.graph._record("relu", (a,), out, lambda g: (np.where(out > 0, g, 0.0),))


def tanh(a: Node) -> Node:
    out = np.tanh(a.value)
    return a.graph._record("tanh", (a,), out, lambda g: (g * (1.0 - out * out),))


def _softplus(z: np.ndarray, out: np.ndarray | None = None, beta: float = 1.0):
    """Stable log(1 + e^(beta z)) / beta and its derivative sigmoid(beta z).

    ``out`` may alias ``z``. Larger ``beta`` gives a sharper corner at 0.
    """
    slope = np.multiply(z, 0.5 * beta)
    np.tanh(slope, out=slope)
    slope += 1.0
    slope *= 0.5  # sigmoid(z) = (1 + tanh(z/2)) / 2, no masking needed
    e = np.abs(z)
    e *= -beta
    np.exp(e, out=e)
    np.log1p(e, out=e)
    if beta != 1.0:
        e /= beta
    out = np.maximum(z, 0.0, out=out)
    out += e
    return out, slope


def softplus(a: Node, beta: float = 1.0) -> Node:
    out, slope = _softplus(a.value, beta=beta)
    return a.graph._record("softplus", (a,), out, lambda g: (g * slope,))


def exp(a: Node) -> Node:
    out = np.exp(a.value)
    return a.graph._record("exp", (a,), out, lambda g: (g * out,))


def log(a: Node) -> Node:
    av = a.value
    return a.graph._record("log", (a,), np.log(av), lambda g: (g / av,))


def square(a: Node) -> Node:
    av = a.value
    return a.graph._record("square", (a,), av * av, lambda g: (2.0 * g * av,))


def sqrt(a: Node) -> Node:
    # gradient at 0 is taken as 0
    out = np.sqrt(a.value)
    safe = np.where(out > 0, out, 1.0)
    return a.graph._record("sqrt", (a,), out, lambda g: (np.where(out > 0, 0.5 * g / safe, 0.0),))


def absolute(a: Node) -> Node:
    sgn = np.sign(a.value)
    return a.graph._record("abs", (a,), np.abs(a.value), lambda g: (g * sgn,))


def where_const(a: Node, mask: np.ndarray, other: Node) -> Node:
    """Elementwise select: ``a`` where mask else ``other``."""
    _same_shape(a, other, "where")
    m = np.asarray(mask, dtype=bool)
    return a.graph._record(
        "where", (a, other), np.where(m, a.value, other.value),
        lambda g: (np.where(m, g, 0.0), np.where(m, 0.0, g)),
    )


def apply_activation(a: Node, activation: str, beta: float = 1.0) -> Node:
    """``beta`` only affects softplus."""
    if activation == "relu":
        return relu(a)
    if activation == "tanh":
        return tanh(a)
    if activation == "softplus":
        return softplus(a, beta)
    if activation == "identity":
        return a
    raise ConfigurationError(f"unknown activation {activation!r}")


# -- reductions and shape ops -----------------------------------------------

def sum_all(a: Node) -> Node:
    shape = a.shape
    return a.graph._record("sum", (a,), np.sum(a.value), lambda g: (np.full(shape, g),))


def mean_all(a: Node) -> Node:
    shape, n = a.shape, a.value.size
    return a.graph._record("mean", (a,), np.mean(a.value), lambda g: (np.full(shape, g / n),))


def sum_cols(a: Node) -> Node:
    """(n, k) -> (n,) sum across each row."""
    if a.value.ndim != 2:
        raise ConfigurationError("sum_cols expects a matrix")
    k = a.shape[1]
    return a.graph._record(
        "sum_cols", (a,), a.value.sum(axis=1),
        lambda g: (np.repeat(g[:, None], k, axis=1),),
    )


def logsumexp_rows(a: Node) -> Node:
    """(n, k) -> (n,) stable log-sum-exp across each row."""
    v = a.value
    if v.ndim != 2:
        raise ConfigurationError("logsumexp_rows expects a matrix")
    m = np.max(v, axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(v - m)
    s = e.sum(axis=1, keepdims=True)
    out = (np.log(s) + m)[:, 0]
    soft = e / s
    return a.graph._record("logsumexp", (a,), out, lambda g: (soft * g[:, None],))


def reshape(a: Node, shape) -> Node:
    old = a.shape
    return a.graph._record("reshape", (a,), a.value.reshape(shape), lambda g: (g.reshape(old),))


def slice_cols(a: Node, start: int, stop: int) -> Node:
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        out[:, start:stop] = g
        return (out,)

    return a.graph._record("slice_cols", (a,), a.value[:, start:stop], vjp)


def concat_cols(a: Node, b: Node) -> Node:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ConfigurationError(f"concat_cols: incompatible shapes {a.shape} and {b.shape}")
    k = a.shape[1]
    return a.graph._record(
        "concat_cols", (a, b), np.concatenate([a.value, b.value], axis=1),
        lambda g: (g[:, :k], g[:, k:]),
    )


def repeat_rows(a: Node, times: int) -> Node:
    """(n, k) -> (n*times, k), each row repeated ``times`` times consecutively."""
    n, k = a.shape

    def vjp(g):
        return (g.reshape(n, times, k).sum(axis=1),)

    return a.graph._record("repeat_rows", (a,), np.repeat(a.value, times, axis=0), vjp)


def matmul(a: Node, b: Node) -> Node:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ConfigurationError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.value, b.value
    return a.graph._record("matmul", (a, b), av @ bv, lambda g: (g @ bv.T, av.T @ g))


def _activate_inplace(out: np.ndarray, activation: str, beta: float = 1.0):
    """Apply the activation to ``out`` in place; return its derivative (None for identity)."""
    if activation == "relu":
        np.maximum(out, 0.0, out=out)
        return out > 0
    if activation == "tanh":
        np.tanh(out, out=out)
        return 1.0 - out * out
    if activation == "softplus":
        return _softplus(out, out=out, beta=beta)[1]
    if activation != "identity":
        raise ConfigurationError(f"unknown activation {activation!r}")
    return None


def linear(x: Node, w: Node, b: Node) -> Node:
    """Dense affine map of a batch: (n, in) @ W.T + b, W is (out, in), b is (out,).

    The bias is added to every row (the one intentional replication).
    """
    return dense(x, w, b, "identity")


def dense(x: Node, w: Node, b: Node, activation: str = "identity", beta: float = 1.0) -> Node:
    """``linear`` followed by an activation, recorded as a single node."""
    xv, wv = x.value, w.value
    if xv.ndim != 2 or wv.ndim != 2 or xv.shape[1] != wv.shape[1] or b.shape != (wv.shape[0],):
        raise ConfigurationError(
            f"dense: input {xv.shape} incompatible with weights {wv.shape} / bias {b.shape}"
        )
    x_needs_grad = x.graph.requires_grad[x.id]
    out = xv @ wv.T
    out += b.value
    slope = _activate_inplace(out, activation, beta)

    def vjp(g):
        if slope is not None:
            g = g * slope
        gx = g @ wv if x_needs_grad else None
        return gx, g.T @ xv, np.ones(g.shape[0]) @ g

    return x.graph._record("dense_" + activation, (x, w, b), out, vjp)


def late_fusion(a: Node, rows_b: Node, m: int, w: Node, bias: Node,
                activation: str = "identity", beta: float = 1.0) -> Node:
    """``dense(concat_cols(repeat_rows(a, m), rows_b), w, bias, activation)`` in one node.

    a is (n, ka), rows_b is (n*m, kb), w is (out, ka + kb). The product with
    the repeated block is computed once per row of ``a``.
    """
    av, bv, wv = a.value, rows_b.value, w.value
    n, ka = av.shape
    kb = bv.shape[1]
    out_dim = wv.shape[0]
    if bv.shape[0] != n * m or wv.shape[1] != ka + kb or bias.shape != (out_dim,):
        raise ConfigurationError(
            f"late_fusion: blocks {av.shape}, {bv.shape} incompatible with weights {wv.shape}"
        )
    wa, wb = wv[:, :ka], wv[:, ka:]
    pa = av @ wa.T + bias.value  # (n, out)
    out = bv @ wb.T
    out3 = out.reshape(n, m, out_dim)
    out3 += pa[:, None, :]
    slope = _activate_inplace(out, activation, beta)
    a_grad = a.graph.requires_grad[a.id]
    b_grad = a.graph.requires_grad[rows_b.id]

    def vjp(g):
        if slope is not None:
            g = g * slope
        ga_rows = g.reshape(n, m, out_dim).sum(axis=1)  # (n, out)
        gw = np.concatenate([ga_rows.T @ av, g.T @ bv], axis=1)
        gbias = ga_rows.sum(axis=0)
        return (ga_rows @ wa if a_grad else None,
                g @ wb if b_grad else None, gw, gbias)

    return a.graph._record("late_fusion_" + activation, (a, rows_b, w, bias), out, vjp)


# -- layers -----------------------------------------------------------------

@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "relu"
    beta: float = 1.0  # softplus sharpness, ignored by other activations

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ConfigurationError(
                f"dense layer weights {self.weights.shape} and bias {self.bias.shape} disagree"
            )
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        self.beta = float(self.beta)
        if not (self.beta > 0 and np.isfinite(self.beta)):
            raise ConfigurationError(f"softplus beta must be positive and finite, got {self.beta}")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def init(cls, in_dim: int, out_dim: int, activation: str, rng: np.random.Generator,
             beta: float = 1.0):
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and bias."""
        bound = 1.0 / math.sqrt(in_dim)
        w = rng.uniform(-bound, bound, size=(out_dim, in_dim))
        b = rng.uniform(-bound, bound, size=out_dim)
        return cls(w, b, activation, beta)


@dataclass
class Mlp:
    layers: list[DenseLayer] = field(default_factory=list)

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ConfigurationError(
                    f"adjacent layers incompatible: {a.out_dim} -> {b.in_dim}"
                )

    @classmethod
    def create(cls, dims: Sequence[int], rng: np.random.Generator,
               activation: str = "relu", final_activation: str = "identity",
               beta: float = 1.0) -> "Mlp":
        """``dims=[1, 10, 10]`` builds 1->10->10; hidden layers use ``activation``."""
        if len(dims) < 2:
            raise ConfigurationError("an MLP needs at least one layer")
        n = len(dims) - 1
        layers = [
            DenseLayer.init(dims[i], dims[i + 1],
                            final_activation if i == n - 1 else activation, rng, beta)
            for i in range(n)
        ]
        return cls(layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend([layer.weights, layer.bias])
        return out

    def apply(self, graph: Graph, x: Node, requires_grad: bool = True) -> Node:
        """Batched forward of an (n, in) node."""
        if x.value.ndim != 2 or x.shape[1] != self.in_dim:
            raise ConfigurationError(
                f"MLP expects inputs of width {self.in_dim}, got shape {x.shape}"
            )
        return self.apply_from(graph, x, 0, requires_grad)

    def apply_from(self, graph: Graph, h: Node, start: int, requires_grad: bool = True) -> Node:
        for layer in self.layers[start:]:
            w = graph.param(layer.weights, requires_grad)
            b = graph.param(layer.bias, requires_grad)
            h = dense(h, w, b, layer.activation, layer.beta)
        return h

    def describe(self) -> list[dict]:
        return [{"in": l.in_dim, "out": l.out_dim, "activation": l.activation, "beta": l.beta}
                for l in self.layers]

    def to_dict(self) -> dict:
        return {
            "layers": [
                {
                    "activation": l.activation,
                    "beta": l.beta,
                    "shape": list(l.weights.shape),
                    "weights": l.weights.ravel().tolist(),
                    "bias": l.bias.tolist(),
                }
                for l in self.layers
            ]
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        layers = []
        for ld in d["layers"]:
            shape = tuple(ld["shape"])
            w = np.array(ld["weights"], dtype=np.float64).reshape(shape)
            layers.append(DenseLayer(w, np.array(ld["bias"], dtype=np.float64), ld["activation"],
                                     ld.get("beta", 1.0)))
        return cls(layers)


def forward(mlp: Mlp, inputs, graph: Graph) -> Node:
    """Forward a single vector (or an (n, in) batch) through ``mlp``.

    A 1-D input gives a 1-D output node.
    """
    arr = np.asarray(inputs, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != mlp.in_dim:
        raise ConfigurationError(
            f"input of shape {np.shape(inputs)} does not match in-dimension {mlp.in_dim}"
        )
    out = mlp.apply(graph, graph.const(arr))
    return reshape(out, (mlp.out_dim,)) if single else out


# -- optimizer --------------------------------------------------------------

@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    """One bias-corrected ADAM update, applied to ``params`` in place."""
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ContractError("params, grads and optimizer state differ in length")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape or p.shape != state.m[i].shape:
            raise ContractError(f"shape mismatch for parameter {i}: {p.shape} vs {g.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {i}")
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


class Adam:
    """Stateful wrapper binding a parameter list to :func:`adam_step`."""

    def __init__(self, params: Sequence[np.ndarray], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = AdamState.zeros_like(self.params)

    def step(self, grads: Sequence[np.ndarray]):
        adam_step(self.params, grads, self.state, self.lr, self.betas[0], self.betas[1], self.eps)


# -- checkpoints ------------------------------------------------------------

def dumps_checkpoint(doc: dict) -> str:
    """Serialize a checkpoint document deterministically."""
    doc = {"format_version": CHECKPOINT_FORMAT_VERSION, **doc}
    return json.dumps(doc, sort_keys=True, indent=1)


def loads_checkpoint(text: str) -> dict:
    doc = json.loads(text)
    version = doc.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ConfigurationError(f"unsupported checkpoint format version {version!r}")
    return doc
