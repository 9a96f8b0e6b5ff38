import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from causal_sysid.autodiff import CompGraph, backward
from causal_sysid.causal_model import (CausalGraphParams, CausalModel, DifferenceDataset, TrainingConfig,
                                       compute_loss, expected_graph, init_graph_params, new_model,
                                       predict_difference, psi_from_csv, psi_to_csv, sample_graph,
                                       sparsity_penalty, train)
from causal_sysid.errors import ConfigError, ContractError, ShapeError

SMALL = dict(hidden=(8, 8), emb_dim=4)
LOW, HIGH = np.zeros(2), np.ones(2)


def small_model(n=5, k=2, seed=0, **kw):
    cfg = TrainingConfig(**{**SMALL, **kw})
    return new_model(n, k, LOW, HIGH, cfg, seed=seed)


def predict(model, g, eps, a):
    return predict_difference(model, g, eps, a, CompGraph()).value


# ---- graph parameters

def test_init_graph_full_connectivity():
    gp = init_graph_params(64, 2)
    assert gp.psi.shape == (64, 2) and np.all(gp.psi > 0.99)
    assert init_graph_params(1, 1).psi[0, 0] > 0.99
    assert np.array_equal(init_graph_params(3, 2).logits, init_graph_params(3, 2).logits)


@pytest.mark.parametrize("n,k", [(0, 2), (3, 0), (-1, 1)])
def test_init_graph_rejects_bad_dims(n, k):
    with pytest.raises(ConfigError):
        init_graph_params(n, k)


def test_expected_graph_sigmoid_table():
    gp = CausalGraphParams(np.array([[-6.0, 0.0, 6.0]]))
    assert np.allclose(expected_graph(gp), [[0.00247, 0.5, 0.99753]], atol=1e-5)
    assert np.array_equal(expected_graph(CausalGraphParams(np.zeros((2, 2)))), np.full((2, 2), 0.5))


def test_sample_graph_saturated_and_deterministic():
    gp = CausalGraphParams(np.full((4, 3), 20.0))
    s = sample_graph(gp, 123, CompGraph())
    assert np.all(s.value > 0.999) and s.value.shape == (4, 3)
    assert np.array_equal(s.value, sample_graph(gp, 123, CompGraph()).value)
    assert s.noise.shape == (2, 4, 3)


def test_sample_graph_monte_carlo_half():
    # 10^5 independent draws at psi = 0.5: one draw per entry of a large logit matrix
    gp = CausalGraphParams(np.zeros((100_000, 1)))
    hard = sample_graph(gp, 7, CompGraph()).value >= 0.5
    assert 0.49 <= hard.mean() <= 0.51


@settings(max_examples=30, deadline=None)
@given(st.floats(-8, 8), st.floats(0.1, 5), st.integers(0, 2**31))
def test_sample_graph_in_unit_interval(logit, temp, seed):
    s = sample_graph(CausalGraphParams(np.full((3, 2), logit), temp), seed, CompGraph())
    assert np.all((s.value >= 0) & (s.value <= 1))


def test_temperature_must_be_positive():
    with pytest.raises(ConfigError):
        CausalGraphParams(np.zeros((1, 1)), 0.0)


# ---- predict_difference

def test_zero_graph_ignores_params():
    m = small_model()
    g = np.zeros((5, 2))
    a = np.array([0.3, 0.7])
    rng = np.random.default_rng(0)
    out = [predict(m, g, rng.uniform(size=5), a) for _ in range(5)]
    for o in out[1:]:
        assert np.array_equal(o, out[0])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 4), st.integers(0, 2**31))
def test_structural_masking(r, seed):
    rng = np.random.default_rng(seed)
    m = small_model(seed=seed % 1000)
    g = rng.uniform(size=(5, 2))
    g[r] = 0.0
    e1 = rng.uniform(size=5)
    e2 = e1.copy()
    e2[r] = rng.uniform()
    a = rng.uniform(size=2)
    assert np.array_equal(predict(m, g, e1, a), predict(m, g, e2, a))


def test_sensitivity_nonzero_when_connected():
    m = small_model(seed=3)
    g = np.full((5, 2), 0.99)
    e = np.full(5, 0.4)
    a = np.array([0.5, 0.5])
    h = 1e-5
    ep, em = e.copy(), e.copy()
    ep[2] += h
    em[2] -= h
    fd = (predict(m, g, ep, a) - predict(m, g, em, a)) / (2 * h)
    assert np.all(np.abs(fd) > 1e-8)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_output_non_negative(seed):
    rng = np.random.default_rng(seed)
    m = small_model(seed=seed % 997)
    for t in m.decoder.tensors():
        t *= 5.0
    out = predict(m, rng.uniform(size=(5, 2)), rng.uniform(size=(7, 5)), rng.uniform(size=(7, 2)))
    assert out.shape == (7, 2) and np.all(out >= 0)


def test_batched_matches_single():
    m = small_model(seed=2)
    rng = np.random.default_rng(1)
    g, e, a = rng.uniform(size=(5, 2)), rng.uniform(size=(3, 5)), rng.uniform(size=(3, 2))
    batched = predict(m, g, e, a)
    for i in range(3):
        assert np.allclose(predict(m, g, e[i], a[i]), batched[i], rtol=0, atol=1e-12)


def test_predict_shape_errors():
    m = small_model()
    with pytest.raises(ShapeError):
        predict(m, np.ones((5, 2)), np.ones(4), np.ones(2))
    with pytest.raises(ShapeError):
        predict(m, np.ones((4, 2)), np.ones(5), np.ones(2))
    with pytest.raises(ShapeError):
        predict(m, np.ones((5, 2)), np.ones(5), np.ones(3))


def test_model_json_roundtrip():
    m = small_model(seed=4)
    m.output_scale = 2.5
    back = CausalModel.from_dict(json.loads(json.dumps(m.to_dict())))
    g, e, a = np.full((5, 2), 0.9), np.full(5, 0.3), np.array([0.2, 0.8])
    assert np.array_equal(predict(back, g, e, a), predict(m, g, e, a))


# ---- loss

def _constant_model(value, n=3, k=2):
    """Model whose prediction is softplus^-1-free: zero weights, decoder bias set so output == value."""
    m = small_model(n, k)
    for w in m.weight_sets():
        for t in w.tensors():
            t[...] = 0.0
    m.decoder.layers[-1][1][...] = np.log(np.expm1(value))
    return m


def test_loss_two_example():
    m = _constant_model(1.0, n=3, k=2)
    batch = DifferenceDataset(np.full((1, 3), 0.5), np.zeros((1, 2)), np.zeros((1, 2)))
    loss = compute_loss(m, batch, 0.0, 1.0, 0, CompGraph())
    assert float(loss.value) == pytest.approx(2.0, rel=1e-12)


def test_sparsity_term_full_graph():
    gp = CausalGraphParams(np.full((64, 2), 40.0))
    assert 0.003 * float(sparsity_penalty(gp, CompGraph(), 1.0).value) == pytest.approx(0.384, abs=1e-12)


def test_loss_zero_limit():
    m = _constant_model(1.0, n=3, k=1)
    m.graph_params = CausalGraphParams(np.full((3, 1), -40.0))
    batch = DifferenceDataset(np.full((2, 3), 0.5), np.zeros((2, 2)), np.ones((2, 1)))
    assert float(compute_loss(m, batch, 0.003, 1.0, 0, CompGraph()).value) < 1e-12


def test_loss_rejects_empty_and_negative_weight():
    m = small_model(3, 1)
    empty = DifferenceDataset(np.zeros((0, 3)), np.zeros((0, 2)), np.zeros((0, 1)))
    with pytest.raises(ContractError):
        compute_loss(m, empty, 0.0, 1.0, 0, CompGraph())
    batch = DifferenceDataset(np.zeros((1, 3)), np.zeros((1, 2)), np.zeros((1, 1)))
    with pytest.raises(ContractError):
        compute_loss(m, batch, -1.0, 1.0, 0, CompGraph())


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2), st.integers(0, 1), st.floats(-4, 4), st.floats(0.01, 2.0))
def test_loss_increasing_in_psi(i, j, logit, delta):
    """Fixed predictions (zero graph input weights), so only the penalty depends on psi."""
    m = _constant_model(0.7, n=3, k=2)
    batch = DifferenceDataset(np.full((2, 3), 0.5), np.zeros((2, 2)), np.ones((2, 2)))
    logits = np.zeros((3, 2))
    logits[i, j] = logit
    lo = CausalGraphParams(logits.copy())
    logits[i, j] += delta
    hi = CausalGraphParams(logits)
    m.graph_params = lo
    l_lo = float(compute_loss(m, batch, 0.003, 1.0, 5, CompGraph()).value)
    m.graph_params = hi
    l_hi = float(compute_loss(m, batch, 0.003, 1.0, 5, CompGraph()).value)
    assert l_hi > l_lo


def test_logit_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    m = small_model(4, 2, seed=1)
    m.graph_params = CausalGraphParams(rng.normal(size=(4, 2)))
    batch = DifferenceDataset(rng.uniform(size=(6, 4)), rng.uniform(size=(6, 2)), rng.uniform(size=(6, 2)))
    g = CompGraph()
    backward(g, compute_loss(m, batch, 0.003, 1.0, 11, g))
    grad = g.grad_of(m.graph_params.logits).copy()
    assert np.all(grad != 0)
    h = 1e-6
    for idx in np.ndindex(4, 2):
        vals = []
        for s in (h, -h):
            m.graph_params.logits[idx] += s
            vals.append(float(compute_loss(m, batch, 0.003, 1.0, 11, CompGraph()).value))
            m.graph_params.logits[idx] -= s
        fd = (vals[0] - vals[1]) / (2 * h)
        assert abs(grad[idx] - fd) / max(abs(fd), 1e-8) < 1e-3


# ---- training

def _synthetic(n_rows=64, seed=0):
    rng = np.random.default_rng(seed)
    eps = rng.uniform(size=(n_rows, 4))
    acts = rng.uniform(size=(n_rows, 2))
    d = np.abs(3 * (eps[:, [1]] - 0.5))
    return DifferenceDataset(eps, acts, d)


def test_training_deterministic():
    ds = _synthetic()
    cfg = TrainingConfig(epochs=5, **SMALL)
    gp = init_graph_params(4, 1)
    r1 = train(ds, cfg, gp, seed=3, action_low=LOW, action_high=HIGH)
    r2 = train(ds, cfg, gp, seed=3, action_low=LOW, action_high=HIGH)
    assert r1.loss_history == r2.loss_history and len(r1.loss_history) == 5
    assert np.array_equal(r1.graph_params.logits, r2.graph_params.logits)
    assert np.array_equal(gp.logits, init_graph_params(4, 1).logits)


def test_training_zero_targets_fit():
    rng = np.random.default_rng(0)
    ds = DifferenceDataset(rng.uniform(size=(64, 4)), rng.uniform(size=(64, 2)), np.zeros((64, 2)))
    res = train(ds, TrainingConfig(epochs=400, batch_size=16, learning_rate=0.01, sparse_weight=0.0, **SMALL), init_graph_params(4, 2), seed=0,
                action_low=LOW, action_high=HIGH)
    g = CompGraph()
    pred = predict_difference(res.model, expected_graph(res.graph_params), ds.eps, ds.actions, g).value
    assert np.mean(np.sum(pred ** 2, axis=1)) < 1e-4


def test_no_sparsity_keeps_graph():
    ds = _synthetic(seed=1)
    gp = init_graph_params(4, 1)
    res = train(ds, TrainingConfig(epochs=200, sparse_weight=0.0, graph_learning_rate=0.01, **SMALL), gp, seed=0,
                action_low=LOW, action_high=HIGH)
    assert res.graph_params.psi.sum() > 0.8 * gp.psi.sum()


def test_inert_parameter_pressure():
    """A parameter that cannot affect d loses edge probability under the sparsity term."""
    ds = _synthetic(640, seed=2)
    gp = init_graph_params(4, 1)
    res = train(ds, TrainingConfig(epochs=30, sparse_weight=0.003, graph_learning_rate=0.01, **SMALL), gp,
                seed=0, action_low=LOW, action_high=HIGH)
    for r in (0, 2, 3):
        assert res.graph_params.psi[r].max() < gp.psi[r].max()


def test_train_shape_and_empty_errors():
    ds = _synthetic()
    with pytest.raises(ShapeError):
        train(ds, TrainingConfig(epochs=1, **SMALL), init_graph_params(3, 1))
    empty = DifferenceDataset(np.zeros((0, 4)), np.zeros((0, 2)), np.zeros((0, 1)))
    with pytest.raises(ContractError):
        train(empty, TrainingConfig(epochs=1, **SMALL), init_graph_params(4, 1))


@pytest.mark.parametrize("field,value", [("sparse_weight", -0.1), ("sw_discount", 0.0), ("sw_discount", 1.5),
                                         ("p_norm", 0.0), ("epochs", 0), ("batch_size", 0),
                                         ("learning_rate", 0.0), ("temperature", -1.0)])
def test_training_config_validation(field, value):
    with pytest.raises(ConfigError) as exc:
        TrainingConfig(**{field: value})
    assert exc.value.field == field


def test_training_defaults():
    c = TrainingConfig()
    assert (c.sparse_weight, c.sw_discount, c.epochs, c.batch_size, c.learning_rate) == (0.003, 0.5, 4000, 64, 0.001)
    assert (c.emb_dim, c.hidden, c.temperature, c.p_norm) == (32, (256, 256), 1.0, 1.0)


# ---- dataset and psi io

def test_dataset_invariants_and_jsonl():
    with pytest.raises(ShapeError):
        DifferenceDataset(np.zeros((2, 3)), np.zeros((3, 2)), np.zeros((2, 1)))
    with pytest.raises(ContractError):
        DifferenceDataset(np.zeros((1, 3)), np.zeros((1, 2)), -np.ones((1, 1)))
    ds = _synthetic(5)
    line = json.loads(ds.to_jsonl().splitlines()[0])
    assert set(line) == {"eps", "action", "d"}
    back = DifferenceDataset.from_jsonl(ds.to_jsonl())
    assert np.array_equal(back.eps, ds.eps) and np.array_equal(back.d, ds.d)


def test_psi_csv_roundtrip():
    psi = np.random.default_rng(0).uniform(size=(3, 2))
    text = psi_to_csv(psi, ["a@b@c", "d@e@f", "g@h@i"], ["puck1", "puck2"])
    back, params, factors = psi_from_csv(text)
    assert np.array_equal(back, psi) and params == ["a@b@c", "d@e@f", "g@h@i"] and factors == ["puck1", "puck2"]
    with pytest.raises(ValueError, match="line 3"):
        psi_from_csv(text.replace(repr(float(psi[1, 0])), "oops"))
