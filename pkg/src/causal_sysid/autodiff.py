"""Minimal reverse-mode automatic differentiation over numpy arrays.

A ``CompGraph`` records nodes in creation order, which is already a valid
topological order, so ``backward`` is a single reverse sweep.  Values are
float64 throughout.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, NumericError, ShapeError

ACTIVATIONS = ("tanh", "relu", "sigmoid", "identity")


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x):
    return _sigmoid(np.asarray(x, dtype=np.float64))


class Node:
    __slots__ = ("graph", "value", "op", "parents", "grad", "requires_grad", "_backward", "index", "name")
    # make ndarray (op) Node defer to the reflected Node operators
    __array_ufunc__ = None

    def __init__(self, graph, value, op, parents=(), backward=None, requires_grad=False, name=None):
        self.graph = graph
        self.value = value
        self.op = op
        self.parents = parents
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = backward
        self.name = name
        self.index = len(graph.nodes)
        graph.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node({self.op}, shape={self.value.shape})"

    def __add__(self, other):
        return self.graph.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return self.graph.sub(self, other)

    def __rsub__(self, other):
        return self.graph.sub(other, self)

    def __mul__(self, other):
        return self.graph.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return self.graph.neg(self)

    def __matmul__(self, other):
        return self.graph.matmul(self, other)

    def __rmatmul__(self, other):
        return self.graph.matmul(other, self)

    def __getitem__(self, idx):
        return self.graph.getitem(self, idx)


class CompGraph:
    """Single-writer tape of nodes. Build a fresh graph per forward pass."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._bound = {}
        self._params = {}

    def __len__(self):
        return len(self.nodes)

    # ------------------------------------------------------------ leaves
    def leaf(self, value, name=None) -> Node:
        """A differentiable input."""
        return Node(self, np.array(value, dtype=np.float64), "leaf", requires_grad=True, name=name)

    def const(self, value) -> Node:
        return Node(self, np.asarray(value, dtype=np.float64), "const")

    def _wrap(self, x) -> Node:
        if isinstance(x, Node):
            if x.graph is not self:
                raise ContractError("node belongs to a different graph")
            return x
        return self.const(x)

    def _op(self, value, op, parents, backward):
        rg = any(p.requires_grad for p in parents)
        return Node(self, value, op, parents, backward if rg else None, rg)

    def param(self, array) -> Node:
        """Leaf for a parameter array, cached by identity so repeated use shares one node."""
        key = id(array)
        if key not in self._params:
            self._params[key] = (array, self.leaf(array))
        return self._params[key][1]

    def grad_of(self, array):
        entry = self._params.get(id(array))
        return np.zeros_like(array) if entry is None else _grad_or_zero(entry[1])

    def bind(self, weights: "ModelWeights") -> list:
        """Leaf nodes for every tensor of ``weights``; cached per graph."""
        key = id(weights)
        if key not in self._bound:
            self._bound[key] = (weights, [(self.leaf(w), self.leaf(b)) for w, b in weights.layers])
        return self._bound[key][1]

    def grads_for(self, weights: "ModelWeights") -> list:
        """Gradients in the order of ``weights.tensors()``; zeros if never bound."""
        if id(weights) not in self._bound:
            return [np.zeros_like(t) for t in weights.tensors()]
        out = []
        for wn, bn in self._bound[id(weights)][1]:
            out += [_grad_or_zero(wn), _grad_or_zero(bn)]
        return out

    # ------------------------------------------------------------ binary
    def add(self, a, b):
        a, b = self._wrap(a), self._wrap(b)
        sa, sb = a.shape, b.shape
        return self._op(a.value + b.value, "add", (a, b),
                        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))

    def sub(self, a, b):
        a, b = self._wrap(a), self._wrap(b)
        sa, sb = a.shape, b.shape
        return self._op(a.value - b.value, "sub", (a, b),
                        lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))

    def mul(self, a, b):
        a, b = self._wrap(a), self._wrap(b)
        av, bv = a.value, b.value
        return self._op(av * bv, "mul", (a, b),
                        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))

    def matmul(self, a, b):
        a, b = self._wrap(a), self._wrap(b)
        av, bv = a.value, b.value
        if av.ndim < 1 or bv.ndim < 1 or av.shape[-1] != bv.shape[-2 if bv.ndim > 1 else 0]:
            raise ShapeError(f"matmul shapes {av.shape} and {bv.shape} do not align")

        def back(g):
            a2 = av[None, :] if av.ndim == 1 else av
            b2 = bv[:, None] if bv.ndim == 1 else bv
            g2 = g
            if av.ndim == 1:
                g2 = np.expand_dims(g2, -2)
            if bv.ndim == 1:
                g2 = np.expand_dims(g2, -1)
            ga = g2 @ np.swapaxes(b2, -1, -2)
            gb = np.swapaxes(a2, -1, -2) @ g2
            if av.ndim == 1:
                ga = ga[..., 0, :]
            if bv.ndim == 1:
                gb = gb[..., 0]
            return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

        return self._op(av @ bv, "matmul", (a, b), back)

    def affine(self, x, w, b):
        """x @ w + b for x of shape (..., n), w (n, m), b (m,)."""
        x, w, b = self._wrap(x), self._wrap(w), self._wrap(b)
        xv, wv = x.value, w.value
        if wv.ndim != 2 or xv.shape[-1] != wv.shape[0] or b.shape != (wv.shape[1],):
            raise ShapeError(f"affine shapes x{xv.shape} w{wv.shape} b{b.shape}")

        def back(g):
            g2 = g.reshape(-1, wv.shape[1])
            return g @ wv.T, xv.reshape(-1, wv.shape[0]).T @ g2, g2.sum(axis=0)

        return self._op(xv @ wv + b.value, "affine", (x, w, b), back)

    # ------------------------------------------------------------ unary
    def neg(self, a):
        a = self._wrap(a)
        return self._op(-a.value, "neg", (a,), lambda g: (-g,))

    def tanh(self, a):
        a = self._wrap(a)
        y = np.tanh(a.value)
        return self._op(y, "tanh", (a,), lambda g: (g * (1.0 - y * y),))

    def relu(self, a):
        a = self._wrap(a)
        mask = a.value > 0
        return self._op(np.where(mask, a.value, 0.0), "relu", (a,), lambda g: (g * mask,))

    def sigmoid(self, a):
        a = self._wrap(a)
        y = _sigmoid(a.value)
        return self._op(y, "sigmoid", (a,), lambda g: (g * y * (1.0 - y),))

    def exp(self, a):
        a = self._wrap(a)
        y = np.exp(a.value)
        return self._op(y, "exp", (a,), lambda g: (g * y,))

    def log(self, a):
        a = self._wrap(a)
        av = a.value
        with np.errstate(divide="ignore", invalid="ignore"):
            y = np.log(av)
        return self._op(y, "log", (a,), lambda g: (g / av,))

    def square(self, a):
        a = self._wrap(a)
        av = a.value
        return self._op(av * av, "square", (a,), lambda g: (2.0 * g * av,))

    def abs(self, a):
        a = self._wrap(a)
        av = a.value
        return self._op(np.abs(av), "abs", (a,), lambda g: (g * np.sign(av),))

    def softplus(self, a):
        a = self._wrap(a)
        av = a.value
        y = np.maximum(av, 0.0) + np.log1p(np.exp(-np.abs(av)))
        return self._op(y, "softplus", (a,), lambda g: (g * _sigmoid(av),))

    def power(self, a, p: float):
        """Elementwise a**p; only for a > 0 unless p is a positive integer."""
        a = self._wrap(a)
        av = a.value
        if p == 1:
            return self._op(av.copy(), "power", (a,), lambda g: (g,))
        y = av ** p
        return self._op(y, "power", (a,), lambda g: (g * p * av ** (p - 1),))

    # ------------------------------------------------------------ reductions / structure
    def sum(self, a, axis=None):
        a = self._wrap(a)
        shape = a.shape

        def back(g):
            if axis is not None:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return self._op(np.sum(a.value, axis=axis), "sum", (a,), back)

    def mean(self, a, axis=None):
        a = self._wrap(a)
        shape = a.shape
        n = a.value.size if axis is None else shape[axis]

        def back(g):
            if axis is not None:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g / n, shape).copy(),)

        return self._op(np.mean(a.value, axis=axis), "mean", (a,), back)

    def reshape(self, a, shape):
        a = self._wrap(a)
        old = a.shape
        return self._op(a.value.reshape(shape), "reshape", (a,), lambda g: (g.reshape(old),))

    def swapaxes(self, a, ax1, ax2):
        a = self._wrap(a)
        return self._op(np.swapaxes(a.value, ax1, ax2), "swapaxes", (a,),
                        lambda g: (np.swapaxes(g, ax1, ax2),))

    def getitem(self, a, idx):
        a = self._wrap(a)
        shape = a.shape

        def back(g):
            out = np.zeros(shape)
            out[idx] = g
            return (out,)

        return self._op(a.value[idx], "getitem", (a,), back)

    def activation(self, a, kind: str):
        if kind == "identity":
            return self._wrap(a)
        if kind not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {kind!r}")
        return getattr(self, kind)(a)


def _grad_or_zero(node):
    return node.grad if node.grad is not None else np.zeros_like(node.value)


def backward(graph: CompGraph, loss: Node, scale: float = 1.0) -> dict:
    """Populate ``node.grad`` for every node; returns {node: gradient}.

    Nodes that are not ancestors of ``loss`` end with a zero gradient.
    """
    if loss.graph is not graph:
        raise ContractError("loss node belongs to a different graph")
    if loss.value.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.value.shape}")
    if not np.all(np.isfinite(loss.value)):
        raise NumericError(f"non-finite loss {float(loss.value.reshape(()))!r}")
    for n in graph.nodes:
        n.grad = None
    loss.grad = np.full(loss.value.shape, float(scale))
    for node in reversed(graph.nodes[: loss.index + 1]):
        if node.grad is None or node._backward is None:
            continue
        for parent, g in zip(node.parents, node._backward(node.grad)):
            if g is None or not parent.requires_grad:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g
    out = {}
    for n in graph.nodes:
        if n.grad is None:
            n.grad = np.zeros_like(n.value)
        out[n] = n.grad
    return out


# ---------------------------------------------------------------- MLP weights

@dataclass
class ModelWeights:
    layers: list            # [(w (n_in, n_out), b (n_out,)), ...]
    activation: str = "tanh"

    def __post_init__(self):
        for i in range(len(self.layers) - 1):
            if self.layers[i][0].shape[1] != self.layers[i + 1][0].shape[0]:
                raise ShapeError(f"layer {i} output width does not match layer {i + 1} input width")
        for w, b in self.layers:
            if b.shape != (w.shape[1],):
                raise ShapeError(f"bias shape {b.shape} does not match weight {w.shape}")

    @property
    def sizes(self) -> list:
        return [self.layers[0][0].shape[0]] + [w.shape[1] for w, _ in self.layers]

    def tensors(self) -> list:
        out = []
        for w, b in self.layers:
            out += [w, b]
        return out

    def tensor_names(self, prefix="") -> list:
        out = []
        for i in range(len(self.layers)):
            out += [f"{prefix}layers[{i}].w", f"{prefix}layers[{i}].b"]
        return out

    def copy(self) -> "ModelWeights":
        return ModelWeights([(w.copy(), b.copy()) for w, b in self.layers], self.activation)

    def to_dict(self) -> dict:
        return {"layers": [{"w": w.tolist(), "b": b.tolist()} for w, b in self.layers],
                "activation": self.activation}

    @classmethod
    def from_dict(cls, d) -> "ModelWeights":
        layers = [(np.array(l["w"], dtype=np.float64).reshape(len(l["w"]), -1),
                   np.array(l["b"], dtype=np.float64)) for l in d["layers"]]
        return cls(layers, d.get("activation", "tanh"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ModelWeights":
        return cls.from_dict(json.loads(text))


def build_mlp(layer_sizes, activation: str = "tanh", seed: int = 0) -> ModelWeights:
    """Dense layers with weights ~ U(+-sqrt(6 / (fan_in + fan_out))) and zero biases."""
    sizes = list(layer_sizes)
    if len(sizes) < 2 or any(int(s) != s or s <= 0 for s in sizes):
        raise ConfigError(f"layer sizes must be >= 2 positive ints, got {sizes}")
    if activation not in ACTIVATIONS:
        raise ConfigError(f"unknown activation {activation!r}")
    rng = np.random.default_rng(seed)
    layers = []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (n_in + n_out))
        layers.append((rng.uniform(-limit, limit, size=(n_in, n_out)), np.zeros(n_out)))
    return ModelWeights(layers, activation)


def forward(weights: ModelWeights, x, graph: CompGraph, start_layer: int = 0) -> Node:
    """Apply the MLP to the last axis of ``x``; hidden layers use the activation, the output is linear."""
    params = graph.bind(weights)
    h = graph._wrap(x)
    w0 = params[start_layer][0]
    if h.shape[-1] != w0.shape[0]:
        raise ShapeError(f"input width {h.shape[-1]} != layer input width {w0.shape[0]}")
    last = len(params) - 1
    for i in range(start_layer, len(params)):
        w, b = params[i]
        h = graph.affine(h, w, b)
        if i < last:
            h = graph.activation(h, weights.activation)
    return h


# ---------------------------------------------------------------- Adam

@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, tensors, **kw) -> "AdamState":
        return cls([np.zeros_like(t) for t in tensors], [np.zeros_like(t) for t in tensors], **kw)


def adam_step(params: list, grads: list, state: AdamState, lr: float, names=None):
    """In-place bias-corrected Adam update; returns (params, state)."""
    if lr <= 0:
        raise ConfigError("learning rate must be positive")
    if not (len(params) == len(grads) == len(state.m)):
        raise ShapeError("params, grads and Adam moments differ in length")
    for i, g in enumerate(grads):
        if g.shape != params[i].shape or state.m[i].shape != params[i].shape:
            raise ShapeError(f"tensor {i}: gradient {g.shape} vs param {params[i].shape}")
        if not np.all(np.isfinite(g)):
            label = names[i] if names else f"tensor {i}"
            raise NumericError(f"non-finite gradient in {label}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# ---------------------------------------------------------------- gradient checking

def grad_check(builder, n_trials: int = 10, h: float = 1e-5, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``builder(rng)`` returns ``(inputs, fn)`` where ``inputs`` is a list of
    arrays and ``fn(graph, nodes)`` builds a scalar loss from leaf nodes.
    """
    if h <= 0:
        raise ContractError("h must be positive")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_trials):
        inputs, fn = builder(rng)
        inputs = [np.array(x, dtype=np.float64) for x in inputs]
        g = CompGraph()
        leaves = [g.leaf(x) for x in inputs]
        loss = fn(g, leaves)
        backward(g, loss)
        analytic = [l.grad.copy() for l in leaves]

        def evaluate(vals):
            gg = CompGraph()
            return float(fn(gg, [gg.leaf(v) for v in vals]).value)

        for k, x in enumerate(inputs):
            for idx in np.ndindex(x.shape):
                orig = x[idx]
                x[idx] = orig + h
                fp = evaluate(inputs)
                x[idx] = orig - h
                fm = evaluate(inputs)
                x[idx] = orig
                numeric = (fp - fm) / (2 * h)
                err = abs(analytic[k][idx] - numeric) / max(1e-8, abs(numeric))
                worst = max(worst, err)
    return worst
