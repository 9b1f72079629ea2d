import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import make_series
from oracles import adamw_scalar_reference
from thermosurrogate import autodiff as ad
from thermosurrogate.dataset import make_windows, split
from thermosurrogate.errors import Diverged, HeadsDivisibility, NonFiniteGradient
from thermosurrogate.models import ModelKind, ModelSpec, init_parameters
from thermosurrogate.node_select import identity_plan
from thermosurrogate.train import (AdamState, OptimConfig, PreparedData, SearchSpace, adamw_step, adamw_update,
                                   apply_config, evaluate_mse, full_node_mse, generalised_protocol, prepare_fold,
                                   prepare_specialised, random_search, read_metrics, specialised_protocol,
                                   train_model, tune_specialised, write_metrics, write_trial_log)


def scalar_step(theta, g, t, cfg, m=0.0, v=0.0):
    return adamw_update(np.float64(theta), np.float64(g), np.float64(m), np.float64(v), t, cfg)


def test_zero_gradient_zero_decay_is_identity():
    cfg = OptimConfig(learning_rate=0.1, weight_decay=0.0)
    assert scalar_step(1.7, 0.0, 1, cfg)[0] == 1.7


def test_first_step_hand_value():
    theta, _, _ = scalar_step(1.0, 1.0, 1, OptimConfig(learning_rate=0.1, weight_decay=0.0))
    assert theta == pytest.approx(1 - 0.1 / (1 + 1e-8), abs=1e-15)


def test_pure_decoupled_decay():
    theta, _, _ = scalar_step(1.0, 0.0, 1, OptimConfig(learning_rate=0.1, weight_decay=0.1))
    assert theta == pytest.approx(0.99, abs=1e-15)


@given(st.integers(0, 10_000))
def test_adamw_matches_scalar_reference(seed):
    rng = np.random.default_rng(seed)
    lr = float(10 ** rng.uniform(-4, -1))
    wd = float(10 ** rng.uniform(-6, -2))
    grads = rng.normal(size=100) * 10 ** rng.uniform(-3, 2)
    cfg = OptimConfig(learning_rate=lr, weight_decay=wd)
    p = {"w": ad.parameter(0.7)}
    state = AdamState()
    ref = adamw_scalar_reference(0.7, grads, lr, wd)
    for g, r in zip(grads, ref):
        p["w"].grad = np.array(g)
        adamw_step(p, state, cfg)
        assert abs(p["w"].data - r) <= 1e-12 * max(1.0, abs(r))


def test_non_finite_gradient():
    p = {"w": ad.parameter(np.ones(2))}
    p["w"].grad = np.array([1.0, np.inf])
    with pytest.raises(NonFiniteGradient):
        adamw_step(p, AdamState(), OptimConfig())


def test_constant_target_fits_exactly():
    x, y = np.zeros((640, 10, 2)), np.full((640, 2), 0.7)
    res = train_model(ModelSpec(ModelKind.GRU, 2, 2, hidden=8), OptimConfig(learning_rate=1e-2, weight_decay=0.0),
                      (x, y), None, seed=1)
    assert res.train_curve[-1] < 1e-8
    assert evaluate_mse(res.spec, res.params, (x, y)) < 1e-8


def toy_windows(seed=0, n=40, d=3):
    rng = np.random.default_rng(seed)
    t = np.linspace(0, 4, n + 10)
    v = np.column_stack([np.sin(t + k) for k in range(d)]) + 0.01 * rng.normal(size=(n + 10, d))
    return make_windows(v, 10)


def test_zero_learning_rate_keeps_init():
    spec = ModelSpec(ModelKind.LSTM, 3, 3, hidden=4)
    res = train_model(spec, OptimConfig(learning_rate=0.0, weight_decay=0.0, epochs=2), toy_windows(), None, seed=3)
    init = init_parameters(spec.with_(rng_seed=3))
    assert all(np.array_equal(res.params[k].data, init[k].data) for k in init)


def test_training_is_deterministic_per_seed():
    spec = ModelSpec(ModelKind.TCN, 3, 3, hidden=4, dropout=0.2)
    cfg = OptimConfig(epochs=3)
    a = train_model(spec, cfg, toy_windows(), toy_windows(1), seed=5)
    b = train_model(spec, cfg, toy_windows(), toy_windows(1), seed=5)
    c = train_model(spec, cfg, toy_windows(), toy_windows(1), seed=6)
    assert a.train_curve == b.train_curve and a.val_curve == b.val_curve
    assert a.train_curve != c.train_curve
    assert len(a.train_curve) == len(a.val_curve) == 3


def test_divergence_is_reported():
    x, y = toy_windows()
    with pytest.raises(Diverged):
        train_model(ModelSpec(ModelKind.RNN, 3, 3, hidden=4), OptimConfig(epochs=1), (x, y * np.inf), None, 0)


def test_empty_windows_rejected():
    with pytest.raises(ValueError):
        train_model(ModelSpec(ModelKind.RNN, 3, 3), OptimConfig(), (np.zeros((0, 10, 3)), np.zeros((0, 3))), None, 0)


@given(st.integers(0, 10_000), st.sampled_from(list(ModelKind)))
def test_search_samples_respect_ranges(seed, kind):
    space = SearchSpace()
    cfg = space.sample(np.random.default_rng(seed), kind)
    assert 1e-5 <= cfg["learning_rate"] <= 1e-2
    assert 1e-6 <= cfg["weight_decay"] <= 1e-3
    assert 0.1 <= cfg["dropout"] <= 0.5
    assert 1 <= cfg["layers"] <= 12
    assert cfg["hidden"] in (32, 64, 128, 256)
    assert ("heads" in cfg) == (kind is ModelKind.TRANSFORMER)
    if "heads" in cfg:
        assert 2 <= cfg["heads"] <= 4


def test_single_trial_is_best():
    best, log = random_search(SearchSpace(), lambda c: 1.0, trials=1, seed=3)
    assert len(log) == 1 and best == log[0].config


def test_synthetic_objective_picks_closest_rate():
    best, log = random_search(SearchSpace(), lambda c: abs(c["learning_rate"] - 1e-3), trials=20, seed=9)
    assert len(log) == 20
    assert best["learning_rate"] == min((t.config["learning_rate"] for t in log), key=lambda lr: abs(lr - 1e-3))


def test_failed_trials_are_logged_not_fatal(tmp_path):
    calls = iter(range(100))

    def objective(cfg):
        i = next(calls)
        if i == 0:
            raise Diverged("boom")
        if i == 1:
            raise HeadsDivisibility("bad heads")
        return float(i)

    best, log = random_search(SearchSpace(), objective, trials=4, seed=0)
    assert [t.status for t in log] == ["diverged", "invalid", "ok", "ok"]
    assert best == log[2].config
    write_trial_log(log, tmp_path / "t.csv", {"run_id": "RUN1"})
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0].startswith("run_id,trial,") and len(lines) == 5


def test_search_is_seeded():
    a = random_search(SearchSpace(), lambda c: c["dropout"], trials=5, seed=1)
    b = random_search(SearchSpace(), lambda c: c["dropout"], trials=5, seed=1)
    assert a[0] == b[0]


def test_apply_config():
    spec, optim = apply_config(ModelSpec(ModelKind.GRU, 2, 2), OptimConfig(),
                               {"learning_rate": 0.005, "weight_decay": 1e-5, "dropout": 0.2, "hidden": 64,
                                "layers": 3})
    assert (spec.hidden, spec.layers, spec.dropout) == (64, 3, 0.2)
    assert (optim.learning_rate, optim.weight_decay, optim.epochs) == (0.005, 1e-5, 30)


def affine_run(n=80, run_id="RUN1", seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(n) / n
    base = np.column_stack([np.sin(6 * t), np.cos(5 * t) + 0.3 * rng.normal(size=n)])
    v = np.column_stack([base[:, 0], base[:, 1], 3 * base[:, 0] - 1, -0.5 * base[:, 1] + 2])
    return make_series(300 + v, run_id)


def test_exact_retained_predictions_give_zero_full_mse():
    prep = prepare_specialised(affine_run(), 0.95, 10)
    assert prep.plan.retained == (0, 1)
    exact = prep.plan.select(prep.test_targets_full)
    full, ret = full_node_mse(exact, prep.test_targets_full, prep)
    assert full < 1e-20 and ret == 0.0


def test_measured_parents_confine_error_to_retained_columns(rng):
    prep = prepare_specialised(affine_run(), 0.95, 10)
    targets = prep.test_targets_full
    pred = prep.plan.select(targets) + rng.normal(scale=0.05, size=(len(targets), 2))
    full_m, ret = full_node_mse(pred, targets, prep, parents="measured")
    full_p, _ = full_node_mse(pred, targets, prep)
    assert full_m == pytest.approx(ret * 2 / 4, rel=1e-9)
    assert full_p > full_m
    with pytest.raises(ValueError):
        full_node_mse(pred, targets, prep, parents="oracle")


def test_full_equals_retained_without_reduction(rng):
    prep = prepare_specialised(make_series(rng.normal(size=(60, 3))), 0.95, 10)
    prep = PreparedData(identity_plan(3), prep.normalizer, prep.train, prep.val, prep.test_inputs,
                        prep.test_targets_full)
    pred = prep.test_targets_full + rng.normal(scale=0.1, size=prep.test_targets_full.shape)
    full, ret = full_node_mse(pred, prep.test_targets_full, prep)
    assert full == pytest.approx(ret, rel=1e-12)


def test_specialised_protocol_shapes_and_determinism():
    spec = ModelSpec(ModelKind.GRU, 1, 1, hidden=4)
    cfg = OptimConfig(epochs=2)
    a = specialised_protocol(affine_run(), spec, 0.95, cfg, seeds=(1, 2))
    b = specialised_protocol(affine_run(), spec, 0.95, cfg, seeds=(1, 2))
    assert a.n_retained == 2 and a.n_repeats == 2
    assert a.per_seed == b.per_seed and a.mse_mean == b.mse_mean
    assert a.mse_std >= 0 and a.mse_mean >= 0
    assert a.mse_mean == pytest.approx(np.mean(a.per_seed)) and a.mse_std == pytest.approx(np.std(a.per_seed))


def test_tuning_never_reads_the_test_segment():
    run = affine_run(100)
    tr, va, te = split(run)
    vals = np.array(run.values)
    vals[80:] += 50.0  # only the test rows change
    tr2, va2, te2 = split(run.with_values(vals))
    spec = ModelSpec(ModelKind.RNN, 1, 1, hidden=4)
    cfg = OptimConfig(epochs=1)
    a = tune_specialised(tr, va, spec, cfg, SearchSpace(layers=(1, 1), hidden=(4,)), 2)
    b = tune_specialised(tr2, va2, spec, cfg, SearchSpace(layers=(1, 1), hidden=(4,)), 2)
    assert [t.value for t in a[1]] == [t.value for t in b[1]]
    assert not np.array_equal(te.values, te2.values)


def test_fold_windows_never_cross_runs():
    runs = [affine_run(100, f"RUN{i}", seed=i) for i in range(1, 4)]
    fold = prepare_fold(runs, 0, 0.95, 10)
    # each training run: first 80 rows -> 70 windows, last 20 rows -> 10 windows
    assert len(fold.prep.train[0]) == 2 * 70 and len(fold.prep.val[0]) == 2 * 10
    assert len(fold.in_dist_inputs) == 2 * 90
    assert len(fold.prep.test_inputs) == 90
    assert fold.prep.plan.metadata["fitted_on"] == ["RUN2", "RUN3"]


def test_duplicate_runs_generalise_like_in_distribution():
    run = affine_run(80)
    runs = [run, make_series(run.values, "RUN2")]
    rows = generalised_protocol(runs, ModelSpec(ModelKind.GRU, 1, 1, hidden=4), 0.95, OptimConfig(epochs=3),
                                seeds=(1,))
    assert [r.run_id for r in rows] == ["RUN1", "RUN2"]
    for r in rows:
        assert r.mse_mean == pytest.approx(r.in_distribution_mse, rel=1e-9)


def test_generalised_needs_two_runs():
    with pytest.raises(ValueError):
        generalised_protocol([affine_run()], ModelSpec(ModelKind.GRU, 1, 1), 0.95, OptimConfig(epochs=1))


def test_metrics_csv_round_trip(tmp_path):
    m = specialised_protocol(affine_run(), ModelSpec(ModelKind.RNN, 1, 1, hidden=4), 0.95, OptimConfig(epochs=1),
                             seeds=(1,))
    path = tmp_path / "metrics.csv"
    write_metrics([m], path, "specialised", "temperature")
    write_metrics([m], path, "specialised", "heatflux")
    rows = read_metrics(path)
    assert len(rows) == 2
    assert float(rows[0]["mse_mean"]) == m.mse_mean
    assert rows[1]["quantity"] == "heatflux" and rows[0]["seeds"] == "1"
    assert math.isfinite(float(rows[0]["retained_mse_mean"]))
