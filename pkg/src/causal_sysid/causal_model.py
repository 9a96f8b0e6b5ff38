"""Structural causal model from environment parameters to trajectory differences.

Each scalar parameter is encoded independently by a shared MLP (its value plus a
one-hot tag of its index), the |E| x d_z feature matrix is mixed through the
|E| x K causal graph, the action encoding is added to every factor column, and a
shared decoder maps each column to one non-negative predicted difference.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import (AdamState, CompGraph, ModelWeights, adam_step, backward, build_mlp, forward,
                       sigmoid)
from .errors import ConfigError, ContractError, NumericError, ShapeError

INIT_LOGIT = 6.0
CENTER = 0.5
REF_QUANTILES = 8


# ---------------------------------------------------------------- causal graph

@dataclass
class CausalGraphParams:
    logits: np.ndarray
    temperature: float = 1.0

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.logits.ndim != 2:
            raise ShapeError("logits must be an |E| x K matrix")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive", field="temperature")

    @property
    def psi(self) -> np.ndarray:
        return sigmoid(self.logits)

    @property
    def shape(self):
        return self.logits.shape

    def copy(self) -> "CausalGraphParams":
        return CausalGraphParams(self.logits.copy(), self.temperature)

    def retained(self, threshold: float = 0.5) -> np.ndarray:
        """Boolean mask of parameters whose strongest edge reaches ``threshold``."""
        return self.psi.max(axis=1) >= threshold


def init_graph_params(n_params: int, k: int, temperature: float = 1.0) -> CausalGraphParams:
    """Fully connected start: every logit at +6 (psi ~ 0.9975)."""
    if n_params <= 0 or k <= 0:
        raise ConfigError(f"graph dimensions must be positive, got ({n_params}, {k})")
    return CausalGraphParams(np.full((n_params, k), INIT_LOGIT), temperature)


def expected_graph(params: CausalGraphParams) -> np.ndarray:
    return params.psi


@dataclass
class GraphSample:
    node: object          # graph node holding the relaxed sample
    noise: np.ndarray     # (2, |E|, K) Gumbel draws g1, g0

    @property
    def value(self) -> np.ndarray:
        return self.node.value


def sample_graph(params: CausalGraphParams, seed, graph: CompGraph) -> GraphSample:
    """Binary-concrete sample sigmoid((L + g1 - g0) / T), differentiable in the logits.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    noise = rng.gumbel(size=(2,) + params.shape)
    logits = graph.param(params.logits)
    z = (logits + (noise[0] - noise[1])) * (1.0 / params.temperature)
    return GraphSample(graph.sigmoid(z), noise)


# ---------------------------------------------------------------- data

@dataclass
class DifferenceDataset:
    eps: np.ndarray       # (R, |E|) normalised to [0, 1]
    actions: np.ndarray   # (R, A) raw action values
    d: np.ndarray         # (R, K) trajectory differences, >= 0

    def __post_init__(self):
        self.eps = np.atleast_2d(np.asarray(self.eps, dtype=np.float64))
        self.actions = np.atleast_2d(np.asarray(self.actions, dtype=np.float64))
        self.d = np.atleast_2d(np.asarray(self.d, dtype=np.float64))
        if not (len(self.eps) == len(self.actions) == len(self.d)):
            raise ShapeError("dataset columns differ in row count")
        if np.any(self.d < 0):
            raise ContractError("trajectory differences must be non-negative")

    def __len__(self):
        return len(self.d)

    @property
    def n_params(self) -> int:
        return self.eps.shape[1]

    @property
    def n_factors(self) -> int:
        return self.d.shape[1]

    def rows(self, idx) -> "DifferenceDataset":
        return DifferenceDataset(self.eps[idx], self.actions[idx], self.d[idx])

    def to_jsonl(self) -> str:
        lines = [json.dumps({"eps": e.tolist(), "action": a.tolist(), "d": d.tolist()})
                 for e, a, d in zip(self.eps, self.actions, self.d)]
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_jsonl(cls, text: str) -> "DifferenceDataset":
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        return cls([r["eps"] for r in rows], [r["action"] for r in rows], [r["d"] for r in rows])


# ---------------------------------------------------------------- model

@dataclass
class TrainingConfig:
    sparse_weight: float = 0.003
    sw_discount: float = 0.5
    p_norm: float = 1.0
    epochs: int = 4000
    batch_size: int = 64
    learning_rate: float = 0.001
    graph_learning_rate: float = 0.001
    temperature: float = 1.0
    emb_dim: int = 32
    hidden: tuple = (256, 256)
    activation: str = "tanh"
    learn_graph: bool = True
    # the decoder predicts d / mean(d); better conditioned whatever the units of d
    normalize_targets: bool = True
    # measure the squared error in those units too, which makes the sparsity
    # weight relative to the size of d instead of absolute
    relative_loss: bool = True
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.validate()

    def validate(self):
        checks = [
            ("sparse_weight", self.sparse_weight >= 0, "must be >= 0"),
            ("sw_discount", 0 < self.sw_discount <= 1, "must be in (0, 1]"),
            ("p_norm", self.p_norm > 0, "must be > 0"),
            ("epochs", isinstance(self.epochs, int) and self.epochs > 0, "must be a positive int"),
            ("batch_size", isinstance(self.batch_size, int) and self.batch_size > 0, "must be a positive int"),
            ("learning_rate", self.learning_rate > 0, "must be > 0"),
            ("graph_learning_rate", self.graph_learning_rate > 0, "must be > 0"),
            ("temperature", self.temperature > 0, "must be > 0"),
            ("emb_dim", isinstance(self.emb_dim, int) and self.emb_dim > 0, "must be a positive int"),
            ("hidden", all(h > 0 for h in self.hidden), "widths must be positive"),
            ("activation", self.activation in ("tanh", "relu", "sigmoid", "identity"), "unknown activation"),
        ]
        for name, ok, msg in checks:
            if not ok:
                raise ConfigError(f"{msg} (got {getattr(self, name)!r})", field=name)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class CausalModel:
    encoder: ModelWeights          # [1 + |E|, *hidden, d_z]
    action_encoder: ModelWeights   # [A, *hidden, d_z]
    decoder: ModelWeights          # [d_z, *hidden, 1]
    graph_params: CausalGraphParams
    action_low: np.ndarray
    action_high: np.ndarray
    output_scale: float = 1.0
    center: np.ndarray | None = None   # (Q, |E|) reference inputs, normalized units

    def __post_init__(self):
        dz = self.emb_dim
        n = self.graph_params.shape[0]
        if self.center is None:
            self.center = np.full((1, n), CENTER)
        self.center = np.atleast_2d(np.asarray(self.center, dtype=float))
        if self.center.ndim != 2 or self.center.shape[1] != n:
            raise ShapeError(f"center has shape {self.center.shape}, expected (Q, {n})")
        if self.encoder.sizes[0] != 1 + n:
            raise ShapeError(f"encoder input width {self.encoder.sizes[0]} != 1 + |E| = {1 + n}")
        if self.action_encoder.sizes[-1] != dz or self.decoder.sizes[0] != dz:
            raise ShapeError("encoder, action encoder and decoder disagree on d_z")
        if self.decoder.sizes[-1] != 1:
            raise ShapeError("decoder must output one value per factor")

    @property
    def emb_dim(self) -> int:
        return self.encoder.sizes[-1]

    @property
    def n_params(self) -> int:
        return self.graph_params.shape[0]

    @property
    def n_factors(self) -> int:
        return self.graph_params.shape[1]

    def weight_sets(self) -> list:
        return [self.encoder, self.action_encoder, self.decoder]

    def to_dict(self) -> dict:
        return {
            "encoder": self.encoder.to_dict(),
            "action_encoder": self.action_encoder.to_dict(),
            "decoder": self.decoder.to_dict(),
            "logits": self.graph_params.logits.tolist(),
            "psi": self.graph_params.psi.tolist(),
            "temperature": self.graph_params.temperature,
            "action_low": self.action_low.tolist(),
            "action_high": self.action_high.tolist(),
            "output_scale": self.output_scale,
            "center": self.center.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "CausalModel":
        return cls(ModelWeights.from_dict(d["encoder"]), ModelWeights.from_dict(d["action_encoder"]),
                   ModelWeights.from_dict(d["decoder"]),
                   CausalGraphParams(np.array(d["logits"]), d.get("temperature", 1.0)),
                   np.array(d["action_low"], dtype=float), np.array(d["action_high"], dtype=float),
                   float(d.get("output_scale", 1.0)), d.get("center"))


def new_model(n_params: int, n_factors: int, action_low, action_high, cfg: TrainingConfig,
              graph_params: CausalGraphParams | None = None, seed: int = 0) -> CausalModel:
    action_low = np.asarray(action_low, dtype=float)
    action_high = np.asarray(action_high, dtype=float)
    seeds = np.random.SeedSequence(seed).generate_state(3)
    h = list(cfg.hidden)
    enc = build_mlp([1 + n_params] + h + [cfg.emb_dim], cfg.activation, int(seeds[0]))
    act = build_mlp([len(action_low)] + h + [cfg.emb_dim], cfg.activation, int(seeds[1]))
    dec = build_mlp([cfg.emb_dim] + h + [1], cfg.activation, int(seeds[2]))
    gp = graph_params if graph_params is not None else init_graph_params(n_params, n_factors, cfg.temperature)
    return CausalModel(enc, act, dec, gp, action_low, action_high)


def reference_inputs(eps: np.ndarray, n_quantiles: int = REF_QUANTILES) -> np.ndarray:
    """Per-column midpoint quantiles, shape (n_quantiles, |E|)."""
    q = (np.arange(n_quantiles) + 0.5) / n_quantiles
    return np.quantile(np.asarray(eps, dtype=float), q, axis=0)


def _encode_raw(model: CausalModel, eps, graph: CompGraph):
    w0, b0 = graph.bind(model.encoder)[0]
    x = graph.reshape(eps, eps.shape + (1,))
    # first layer of [value, one_hot(r)] @ W0 without materialising the one-hot block
    h = x * w0[0:1] + w0[1:] + b0
    if len(model.encoder.layers) == 1:
        return h
    h = graph.activation(h, model.encoder.activation)
    return forward(model.encoder, h, graph, start_layer=1)


def _encode_params(model: CausalModel, eps, graph: CompGraph):
    """Shared per-dimension encoder: (B, |E|) -> (B, |E|, d_z).

    Each feature is measured relative to its average encoding over the model's
    reference inputs (quantiles of the training data), so a dimension carries no
    constant offset and can only matter through its variation.
    """
    ref = graph.mean(_encode_raw(model, graph.const(model.center), graph), axis=0)
    return _encode_raw(model, eps, graph) - ref


def predict_difference(model: CausalModel, g, eps_norm, a, graph: CompGraph):
    """Predicted per-factor trajectory difference, shape (B, K) (or (K,) for one row)."""
    eps = graph._wrap(eps_norm)
    single = eps.value.ndim == 1
    if single:
        eps = graph.reshape(eps, (1, -1))
    a_val = np.asarray(a.value if hasattr(a, "value") else a, dtype=float)
    if a_val.ndim == 1:
        a_val = a_val[None, :]
    g = graph._wrap(g)
    n, k = model.graph_params.shape
    if eps.shape[-1] != n:
        raise ShapeError(f"expected {n} parameters, got {eps.shape[-1]}")
    if g.shape != (n, k):
        raise ShapeError(f"graph shape {g.shape} != {(n, k)}")
    if a_val.shape[-1] != len(model.action_low):
        raise ShapeError(f"expected action width {len(model.action_low)}, got {a_val.shape[-1]}")
    batch = eps.shape[0]
    a_norm = (a_val - model.action_low) / (model.action_high - model.action_low)
    if a_norm.shape[0] != batch:
        a_norm = np.broadcast_to(a_norm, (batch, a_norm.shape[1]))

    z = _encode_params(model, eps, graph)                      # (B, E, dz)
    g_eps = graph.swapaxes(z, -1, -2) @ g                       # (B, dz, K)
    g_a = forward(model.action_encoder, a_norm, graph)          # (B, dz)
    g_a = graph.reshape(g_a, (batch, model.emb_dim, 1))
    cols = graph.swapaxes(g_eps + g_a, -1, -2)                  # (B, K, dz)
    out = forward(model.decoder, cols, graph)                   # (B, K, 1)
    out = graph.softplus(graph.reshape(out, (batch, k)))
    if model.output_scale != 1.0:
        out = out * model.output_scale
    return graph.reshape(out, (k,)) if single else out


def sparsity_penalty(params: CausalGraphParams, graph: CompGraph, p: float):
    psi = graph.sigmoid(graph.param(params.logits))
    return graph.sum(graph.power(psi, p))


def compute_loss(model: CausalModel, batch: DifferenceDataset, sparse_weight: float, p: float,
                 seed, graph: CompGraph, learn_graph: bool = True, relative_loss: bool = False):
    """Mean squared prediction error plus ``sparse_weight * sum(psi ** p)``.

    With ``learn_graph=False`` the graph is the fixed expected graph and no
    penalty is added. ``relative_loss`` divides the residual by the model's
    output scale, so the error is measured in units of mean(d).
    """
    if len(batch) == 0:
        raise ContractError("empty batch")
    if sparse_weight < 0:
        raise ContractError("sparse weight must be >= 0")
    if learn_graph:
        g = sample_graph(model.graph_params, seed, graph).node
    else:
        g = graph.const(expected_graph(model.graph_params))
    pred = predict_difference(model, g, batch.eps, batch.actions, graph)
    resid = pred - batch.d
    if relative_loss and model.output_scale != 1.0:
        resid = resid * (1.0 / model.output_scale)
    err = graph.sum(graph.square(resid), axis=1)
    loss = graph.mean(err)
    if learn_graph and sparse_weight > 0:
        loss = loss + sparse_weight * sparsity_penalty(model.graph_params, graph, p)
    return loss


@dataclass
class TrainResult:
    model: CausalModel
    graph_params: CausalGraphParams
    loss_history: list = field(default_factory=list)


def train(dataset: DifferenceDataset, cfg: TrainingConfig, graph_params: CausalGraphParams, seed: int | None = None,
          sparse_weight: float | None = None, action_low=None, action_high=None,
          on_epoch=None) -> TrainResult:
    """Fit a freshly initialised model and continue optimising the graph logits.

    Returns the trained model, the updated graph parameters and the mean loss
    per epoch.  ``graph_params`` is not modified.  ``on_epoch(epoch, loss, graph_params)``
    is called after every epoch if given.
    """
    if len(dataset) == 0:
        raise ContractError("empty dataset")
    if graph_params.shape != (dataset.n_params, dataset.n_factors):
        raise ShapeError(f"graph {graph_params.shape} does not match dataset "
                         f"({dataset.n_params}, {dataset.n_factors})")
    lam = cfg.sparse_weight if sparse_weight is None else sparse_weight
    if action_low is None:
        action_low = dataset.actions.min(axis=0)
        action_high = np.maximum(dataset.actions.max(axis=0), action_low + 1e-12)
    seeds = np.random.SeedSequence(cfg.seed if seed is None else seed).generate_state(2)
    gp = graph_params.copy()
    model = new_model(dataset.n_params, dataset.n_factors, action_low, action_high, cfg, gp, int(seeds[0]))
    model.center = reference_inputs(dataset.eps)
    if cfg.normalize_targets:
        mean_d = float(dataset.d.mean())
        model.output_scale = mean_d if mean_d > 0 else 1.0
    rng = np.random.default_rng(int(seeds[1]))

    tensors, names = [], []
    for label, w in zip(("encoder", "action_encoder", "decoder"), model.weight_sets()):
        tensors += w.tensors()
        names += w.tensor_names(label + ".")
    state = AdamState.zeros_like(tensors)
    # the logits get their own step size: at logit +6 the sigmoid is nearly flat
    graph_state = AdamState.zeros_like([gp.logits])

    n = len(dataset)
    history = []
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            graph = CompGraph()
            try:
                loss = compute_loss(model, dataset.rows(idx), lam, cfg.p_norm, rng, graph, cfg.learn_graph,
                                    cfg.relative_loss)
                backward(graph, loss)
                grads = []
                for w in model.weight_sets():
                    grads += graph.grads_for(w)
                adam_step(tensors, grads, state, cfg.learning_rate, names)
                if cfg.learn_graph:
                    adam_step([gp.logits], [graph.grad_of(gp.logits)], graph_state,
                              cfg.graph_learning_rate, ["graph.logits"])
            except NumericError as exc:
                raise NumericError(str(exc), epoch=epoch) from exc
            total += float(loss.value) * len(idx)
        history.append(total / n)
        if not math.isfinite(history[-1]):
            raise NumericError("non-finite mean loss", epoch=epoch)
        if on_epoch is not None:
            on_epoch(epoch, history[-1], gp)
    return TrainResult(model, gp, history)


# ---------------------------------------------------------------- io

def psi_to_csv(psi: np.ndarray, param_names, factor_names) -> str:
    psi = np.asarray(psi)
    if psi.shape != (len(param_names), len(factor_names)):
        raise ShapeError("psi shape does not match names")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["param"] + list(factor_names))
    for name, row in zip(param_names, psi):
        w.writerow([name] + [repr(float(v)) for v in row])
    return buf.getvalue()


def psi_from_csv(text: str):
    """Returns (psi, param_names, factor_names); raises ValueError naming the bad line."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ValueError("line 1: empty psi CSV")
    header = rows[0]
    if len(header) < 2:
        raise ValueError("line 1: header needs a parameter column and at least one factor")
    names, values = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ValueError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            values.append([float(x) for x in row[1:]])
        except ValueError:
            raise ValueError(f"line {lineno}: non-numeric value in {row[1:]}") from None
        names.append(row[0])
    return np.array(values).reshape(len(names), len(header) - 1), names, header[1:]
