"""Random graph builders for finite-difference checks of the autodiff engine.

Each builder takes a ``numpy.random.Generator`` and returns ``(inputs, fn)`` as
expected by :func:`causal_sysid.autodiff.grad_check`.
"""
from __future__ import annotations

import numpy as np

from .autodiff import CompGraph, build_mlp, grad_check

UNARY = ("tanh", "relu", "sigmoid", "exp", "log", "square", "abs")
BINARY = ("add", "mul", "matmul", "affine")
# relu/abs inputs closer than this to 0 make central differences meaningless
KINK_MARGIN = 1e-3


def mlp_mse(rng):
    """MSE of a random 4->8->2 tanh network; weights, biases and input all differentiable."""
    w = build_mlp([4, 8, 2], "tanh", seed=int(rng.integers(2**31)))
    x = rng.normal(size=(3, 4))
    y = rng.normal(size=(3, 2))

    def fn(g, leaves):
        h = leaves[-1]
        n_layers = len(w.layers)
        for i in range(n_layers):
            h = g.affine(h, leaves[2 * i], leaves[2 * i + 1])
            if i < n_layers - 1:
                h = g.tanh(h)
        return g.mean(g.square(h - y))

    return w.tensors() + [x], fn


def linear(rng):
    """x -> c . (A x) with small positive integer A, c so no gradient entry is near zero."""
    a = rng.integers(1, 4, size=(3, 3)).astype(float)
    c = rng.integers(1, 4, size=3).astype(float)
    x = rng.normal(size=3)

    def fn(g, leaves):
        return g.sum((a @ leaves[0]) * c)

    return [x], fn


def sigmoid_chain(rng, depth=5):
    x = rng.normal(size=4)
    scales = rng.uniform(0.5, 2.0, size=depth)

    def fn(g, leaves):
        h = leaves[0]
        for s in scales:
            h = g.sigmoid(h * s)
        return g.sum(h)

    return [x], fn


def _unary(g, op, h):
    # keep exp/log inside well-conditioned ranges
    if op == "exp":
        return g.exp(g.tanh(h))
    if op == "log":
        return g.log(g.square(h) + 1.0)
    return getattr(g, op)(h)


def op_mix(rng, n_ops=14, width=3):
    """Every supported op at least once, in random order, reduced with mean and L1."""
    ops = list(UNARY + BINARY)
    seq = list(rng.permutation(ops)) + list(rng.choice(ops, size=max(0, n_ops - len(ops))))
    inputs = [rng.normal(size=width) for _ in range(3)]
    mats = [rng.normal(size=(width, width)) / np.sqrt(width) for _ in range(2)]
    bias = rng.normal(size=width)
    picks = rng.integers(0, 1 << 30, size=(len(seq), 2))

    def fn(g, leaves):
        pool = list(leaves[:3])
        m0, m1, b = leaves[3:]
        for op, (i, j) in zip(seq, picks):
            a = pool[i % len(pool)]
            if op in UNARY:
                out = _unary(g, op, a)
            elif op == "add":
                out = a + pool[j % len(pool)]
            elif op == "mul":
                out = a * pool[j % len(pool)]
            elif op == "matmul":
                out = m0 @ a
            else:
                out = g.affine(a, m1, b)
            pool.append(out)
        return g.mean(g.square(pool[-1])) + 0.1 * g.sum(g.abs(pool[-2]))

    return inputs + mats + [bias], fn


SUITE = {
    "mlp_mse": mlp_mse,
    "linear": linear,
    "sigmoid_chain": sigmoid_chain,
    "op_mix": op_mix,
}


def near_kink(builder, seed) -> bool:
    inputs, fn = builder(np.random.default_rng(seed))
    g = CompGraph()
    fn(g, [g.leaf(x) for x in inputs])
    return any(node.op in ("relu", "abs") and np.any(np.abs(node.parents[0].value) < KINK_MARGIN)
               for node in g.nodes)


def kink_free_seeds(builder, n_trials, seed=0) -> list:
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n_trials:
        child = int(rng.integers(2**62))
        if not near_kink(builder, child):
            out.append(child)
    return out


def run_suite(n_trials=100, h=1e-5, seed=0) -> dict:
    """Max relative error per builder over ``n_trials`` random graphs each."""
    results = {}
    for name, builder in SUITE.items():
        worst = 0.0
        for child in kink_free_seeds(builder, n_trials, seed):
            worst = max(worst, grad_check(builder, 1, h, seed=child))
        results[name] = worst
    return results
