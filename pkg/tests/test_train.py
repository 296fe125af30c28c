import numpy as np
import pytest

from entangle_ot.errors import ConfigInvalid, Diverged, FeatureTermUnavailable
from entangle_ot.measures import EmpiricalJoint
from entangle_ot.scenarios import ShiftConfig, generate
from entangle_ot.train import (
    HISTORY_FIELDS,
    Model,
    TrainConfig,
    fit,
    gradient,
    objective_value,
    ot_plans,
    softmax,
)


def finite_difference(model, bp, bq, cfg, plans, h=1e-5):
    g = np.zeros_like(model.params)
    for i in range(g.size):
        e = np.zeros_like(g)
        e[i] = h
        hi = objective_value(model.copy(model.params + e), bp, bq, cfg, plans)[0]
        lo = objective_value(model.copy(model.params - e), bp, bq, cfg, plans)[0]
        g[i] = (hi - lo) / (2 * h)
    return g


def batches(rng, m=3, d=3):
    bp = EmpiricalJoint(rng.normal(size=(10, d)), np.arange(10) % m, None, m)
    bq = EmpiricalJoint(rng.normal(size=(8, d)) + 1, np.arange(8) % m, None, m)
    return bp, bq


@pytest.mark.parametrize("objective", ["erm", "wrr", "lje_oracle", "cc_oracle", "jdot_lite"])
@pytest.mark.parametrize("loss", ["euclidean", "cross_entropy"])
def test_gradient_matches_finite_difference(rng, objective, loss):
    kind = "mlp" if objective == "jdot_lite" else "linear"
    cfg = TrainConfig(objective=objective, loss=loss, model=kind, feature_weight=0.5)
    bp, bq = batches(rng)
    for _ in range(3):
        m = Model.initialize(kind, 3, 3, rng, hidden=4)
        m.params = m.params * 2
        plans = ot_plans(m, bp, bq, cfg)
        g = gradient(m, bp, bq, cfg, plans)
        fd = finite_difference(m, bp, bq, cfg, plans)
        assert np.max(np.abs(g - fd)) <= 1e-6 * max(1.0, np.max(np.abs(fd)))


def test_softmax_rows():
    p = softmax(np.array([[1000.0, 0.0], [0.0, 0.0]]))
    np.testing.assert_allclose(p, [[1.0, 0.0], [0.5, 0.5]])


def test_jdot_needs_hidden_layer(rng):
    cfg = TrainConfig(objective="jdot_lite", model="linear")
    bp, bq = batches(rng)
    m = Model.initialize("linear", 3, 3, rng)
    with pytest.raises(FeatureTermUnavailable):
        objective_value(m, bp, bq, cfg)


def test_fit_is_deterministic_and_logs_history():
    sc = generate(ShiftConfig(kind="covariate", points_per_domain=60, translation=[0.5, 0.0]))
    cfg = TrainConfig(objective="wrr", lr=0.05, epochs=3, seed=4, batch_size=16)
    a, b = fit(sc.source, sc.target, cfg), fit(sc.source, sc.target, cfg)
    np.testing.assert_array_equal(a.model.params, b.model.params)
    assert len(a.history) == 3
    assert tuple(a.history[0]) == HISTORY_FIELDS
    assert a.history_csv().splitlines()[0] == ",".join(HISTORY_FIELDS)


def test_erm_learns_separable_data():
    sc = generate(ShiftConfig(kind="covariate", points_per_domain=200, mean_scale=4.0))
    res = fit(sc.source, sc.target, TrainConfig(lr=0.05, epochs=10))
    assert res.history[-1]["src_acc"] > 0.95
    assert res.history[-1]["risk_p"] < res.history[0]["risk_p"] + 1e-12 or res.history[0]["risk_p"] < 0.2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported(rng):
    # from zero weights the gradient is large, so an absurd step overflows
    j = EmpiricalJoint(rng.normal(size=(4, 2)) * 100, [0, 1, 0, 1])
    m = Model.initialize("linear", 2, 2, rng)
    m.params = np.zeros_like(m.params)
    with pytest.raises(Diverged) as info:
        fit(j, j, TrainConfig(optimizer="sgd", lr=1e308, epochs=2, batch_size=4), model=m)
    assert info.value.history == []


def test_model_round_trip(tmp_path, rng):
    m = Model.initialize("mlp", 2, 3, rng, hidden=5, activation="tanh")
    path = tmp_path / "m.json"
    m.save(path)
    back = Model.load(path)
    x = rng.normal(size=(4, 2))
    np.testing.assert_array_equal(back(x), m(x))


def test_config_validation():
    with pytest.raises(ConfigInvalid):
        TrainConfig(objective="magic")
    with pytest.raises(ConfigInvalid):
        TrainConfig(wasserstein_order=3)
    with pytest.raises(ConfigInvalid):
        TrainConfig.from_dict({"lr": 0.1, "momentum": 0.9})
    with pytest.raises(ConfigInvalid):
        TrainConfig(ot_method="simplex")


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_lje_oracle_separates_both_domains(seed):
    sc = generate(ShiftConfig(kind="covariate", seed=seed, mean_scale=4.0, translation=[1.0, 0.0]))
    last = fit(sc.source, sc.target, TrainConfig(objective="lje_oracle", seed=seed, lr=0.05, epochs=10)).history[-1]
    assert last["src_acc"] > 0.95 and last["tgt_acc"] > 0.95


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_erm_without_shift_transfers(seed):
    sc = generate(ShiftConfig(kind="covariate", seed=seed))
    last = fit(sc.source, sc.target, TrainConfig(seed=seed, lr=0.05, epochs=10)).history[-1]
    assert abs(last["tgt_acc"] - last["src_acc"]) <= 0.05


def test_softmax_outputs_on_simplex(rng):
    m = Model.initialize("mlp", 2, 3, rng, hidden=5)
    m.params = m.params * 50
    out = m(rng.normal(size=(100, 2)) * 10)
    assert np.all(out >= 0)
    np.testing.assert_allclose(out.sum(1), 1.0, atol=1e-9)
