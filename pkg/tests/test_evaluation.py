"""Metric definitions, cross-validation wiring, and the latency bench."""

from __future__ import annotations

import numpy as np
import pytest

from powerid import (
    BenchResult,
    DimensionMismatch,
    LengthMismatch,
    NetworkConfig,
    TooFewSamples,
    TrainedModel,
    bench_inference,
    cross_validate,
    init_weights,
    metrics,
    series_metrics,
    split_k_fold,
    train,
)
from powerid.cpinn import forward, make_batch


# ---- metric hand examples ----


def test_series_metrics_hand_example():
    m = series_metrics(np.array([2.0, 2.0]), np.array([1.0, 3.0]))
    assert m.mae_W == 1.0
    assert m.mse_W2 == 1.0
    assert m.r2 == 0.0
    assert m.wmape_pct == 50.0
    assert m.n_samples == 2
    assert not m.degenerate_r2
    assert not m.degenerate_wmape


def test_series_metrics_perfect_fit():
    truth = np.array([1.0, 3.0, 2.0])
    m = series_metrics(truth.copy(), truth)
    assert m.mae_W == 0.0
    assert m.mse_W2 == 0.0
    assert m.r2 == 1.0
    assert m.wmape_pct == 0.0


def test_series_metrics_constant_truth_degenerates_r2():
    m = series_metrics(np.array([2.0, 3.0]), np.array([2.0, 2.0]))
    assert m.r2 is None
    assert m.degenerate_r2
    assert m.wmape_pct == 25.0  # |err| sums to 1 over |truth| sum 4
    assert not m.degenerate_wmape


def test_series_metrics_zero_truth_degenerates_wmape():
    m = series_metrics(np.array([1.0, -1.0]), np.array([0.0, 0.0]))
    assert m.wmape_pct is None
    assert m.degenerate_wmape
    assert m.r2 is None  # zero truth is also zero-variance truth
    assert m.mae_W == 1.0


def test_series_metrics_validation():
    with pytest.raises(LengthMismatch):
        series_metrics(np.zeros(3), np.zeros(4))
    with pytest.raises(LengthMismatch):
        series_metrics(np.zeros((3, 2)), np.zeros((3, 2)))
    with pytest.raises(TooFewSamples):
        series_metrics(np.zeros(1), np.zeros(1))


def test_series_metrics_dict_carries_flags():
    d = series_metrics(np.array([1.0, 2.0]), np.array([0.0, 0.0]), "gpu").to_dict()
    assert d["component"] == "gpu"
    assert d["wmape_pct"] is None
    assert d["degenerate_wmape"] is True
    assert d["n_samples"] == 2


def test_metrics_per_component_and_names():
    pred = np.array([[2.0, 5.0], [2.0, 5.0]])
    truth = np.array([[1.0, 5.0], [3.0, 5.0]])
    out = metrics(pred, truth, names=("cpu", "gpu"))
    assert [m.component for m in out] == ["cpu", "gpu"]
    assert out[0].mae_W == 1.0
    assert out[1].mae_W == 0.0
    assert out[1].degenerate_r2  # constant truth column
    default = metrics(pred, truth)
    assert [m.component for m in default] == ["u0", "u1"]
    with pytest.raises(LengthMismatch):
        metrics(pred, truth[:1])
    with pytest.raises(LengthMismatch):
        metrics(pred, truth, names=("only",))


def test_metric_properties_over_random_series():
    rng = np.random.default_rng(100)
    for _ in range(200):
        n = int(rng.integers(2, 50))
        truth = rng.normal(0, 3, n)
        pred = truth + rng.normal(0, 1, n)
        m = series_metrics(pred, truth)
        assert m.mae_W <= np.sqrt(m.mse_W2) + 1e-12
        assert m.r2 is None or m.r2 <= 1.0
        # scaling both series leaves WMAPE and R^2 alone, scales MAE
        c = 7.3
        ms = series_metrics(c * pred, c * truth)
        if m.wmape_pct is not None:
            assert ms.wmape_pct == pytest.approx(m.wmape_pct, rel=1e-9)
        if m.r2 is not None:
            assert ms.r2 == pytest.approx(m.r2, rel=1e-9)
        assert ms.mae_W == pytest.approx(c * m.mae_W, rel=1e-9)


# ---- cross-validation ----


@pytest.fixture(scope="module")
def cv_setup(misspec_bundle):
    _, ident, est = misspec_bundle
    config = NetworkConfig(n_units=2, hidden_widths=(6,), max_epochs=3,
                           patience=3, batch_size=128)
    return ident, est, config


def test_cross_validate_report_structure(cv_setup):
    ident, est, config = cv_setup
    report = cross_validate(config, ident, est, k=5, seed=7)
    assert report.k == 5
    assert report.unit_names == ("cpu", "gpu")
    assert len(report.fold_metrics) == 5
    for fold in report.fold_metrics:
        assert [m.component for m in fold] == ["cpu", "gpu"]
        # 400-sample test block in one segment: 399 scored pairs
        assert all(m.n_samples == 399 for m in fold)
    assert report.fold_epochs == [3] * 5
    assert len(report.mean_train_curve) == min(report.fold_epochs)
    assert len(report.mean_val_curve) == len(report.mean_train_curve)
    assert all(np.isfinite(report.mean_train_curve))
    assert all(np.isfinite(report.mean_val_curve))


def test_cross_validate_aggregate_matches_folds(cv_setup):
    ident, est, config = cv_setup
    report = cross_validate(config, ident, est, k=5, seed=7)
    agg = report.aggregate
    for ui, unit in enumerate(report.unit_names):
        vals = [fold[ui].mae_W for fold in report.fold_metrics]
        assert agg[unit]["mae_W"]["mean"] == pytest.approx(np.mean(vals), rel=1e-12)
        assert agg[unit]["mae_W"]["std"] == pytest.approx(np.std(vals), rel=1e-12)
        assert agg[unit]["mae_W"]["n_folds"] == 5
    doc = report.to_dict()
    assert set(doc) == {"k", "unit_names", "fold_metrics", "aggregate",
                        "mean_train_curve", "mean_val_curve", "fold_epochs"}


def test_cross_validate_fold_seed_derivation(cv_setup):
    # fold f trains with seed * 10_000 + f; reproduce fold 0 by hand
    ident, est, config = cv_setup
    report = cross_validate(config, ident, est, k=5, seed=7)
    train_ds, test_ds = split_k_fold(est, 5)[0]
    model = train(config, ident, train_ds, seed=7 * 10_000)
    batch, _ = make_batch(test_ds, ident.ambient_K, require_truth=True)
    pred, _ = forward(model, batch.t_prev, batch.t_curr, batch.p_est)
    mae = float(np.mean(np.abs(pred[:, 0] - batch.p_true[:, 0])))
    assert report.fold_metrics[0][0].mae_W == pytest.approx(mae, rel=1e-12)


def test_cross_validate_aggregate_skips_degenerate_folds(model2):
    # constant-power trace: every fold's truth has zero variance, so r2
    # aggregates over zero folds while mae still aggregates over all
    from powerid import PowerSchedule, estimate_dataset, simulate

    sched = PowerSchedule("constant", 60, levels=np.array([1.0, 2.0]))
    d = simulate(model2, sched, seed=1)
    est = estimate_dataset(model2, d)
    config = NetworkConfig(n_units=2, max_epochs=1, patience=1)
    report = cross_validate(config, model2, est, k=3, seed=0)
    for unit in report.unit_names:
        assert report.aggregate[unit]["r2"]["n_folds"] == 0
        assert report.aggregate[unit]["r2"]["mean"] is None
        assert report.aggregate[unit]["mae_W"]["n_folds"] == 3


# ---- latency ----


def bench_model(hidden=()) -> TrainedModel:
    config = NetworkConfig(n_units=2, hidden_widths=hidden)
    return TrainedModel(config, ("u0", "u1"), init_weights(config, 0),
                        0.9 * np.eye(2), np.eye(2) + 0.05, 298.15, 1.0)


def test_bench_inference_stats_are_sane():
    result = bench_inference(bench_model((8,)), n_iters=200, seed=1)
    assert isinstance(result, BenchResult)
    for stats in (result.cached, result.uncached):
        assert stats.n_iters == 200
        assert stats.mean_us > 0.0
        assert stats.p50_us > 0.0
        assert stats.p99_us >= stats.p50_us
    doc = result.to_dict()
    assert set(doc) == {"cached", "uncached"}
    assert set(doc["cached"]) == {"mean_us", "p50_us", "p99_us", "n_iters"}


def test_bench_inference_rejects_small_iteration_counts():
    with pytest.raises(DimensionMismatch):
        bench_inference(bench_model(), n_iters=50)
    bench_inference(bench_model(), n_iters=100)
