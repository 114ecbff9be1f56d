"""Accuracy metrics, cross-validation and latency benchmarking."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .core import ThermalModel, TraceDataset, split_k_fold
from .cpinn import (
    NetworkConfig,
    TrainedModel,
    forward,
    make_batch,
    train,
)
from .errors import DimensionMismatch, LengthMismatch, TooFewSamples

WMAPE_SCALE = 100.0  # reported in percent


@dataclass(frozen=True)
class ComponentMetrics:
    """Error statistics of one power estimate series against its truth.

    r2 is None when the truth has zero variance, wmape_pct is None
    when the truth sums to zero in magnitude; degenerate flags mark
    both cases instead of emitting misleading numbers.
    """

    component: str
    mae_W: float
    mse_W2: float
    r2: float | None
    wmape_pct: float | None
    n_samples: int
    degenerate_r2: bool = False
    degenerate_wmape: bool = False

    def to_dict(self) -> dict:
        return {
            "component": self.component,
            "mae_W": self.mae_W,
            "mse_W2": self.mse_W2,
            "r2": self.r2,
            "wmape_pct": self.wmape_pct,
            "n_samples": self.n_samples,
            "degenerate_r2": self.degenerate_r2,
            "degenerate_wmape": self.degenerate_wmape,
        }


def series_metrics(pred: np.ndarray, truth: np.ndarray, component: str = "unit"
                   ) -> ComponentMetrics:
    """Metrics for a single component series."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise LengthMismatch(f"series shapes differ: {pred.shape} vs {truth.shape}")
    if pred.size < 2:
        raise TooFewSamples("metrics need at least 2 samples")
    err = pred - truth
    mae = float(np.mean(np.abs(err)))
    mse = float(np.mean(err**2))
    ss_tot = float(np.sum((truth - np.mean(truth)) ** 2))
    degenerate_r2 = ss_tot == 0.0
    r2 = None if degenerate_r2 else float(1.0 - np.sum(err**2) / ss_tot)
    denom = float(np.sum(np.abs(truth)))
    degenerate_wmape = denom == 0.0
    wmape = None if degenerate_wmape else float(WMAPE_SCALE * np.sum(np.abs(err)) / denom)
    return ComponentMetrics(component, mae, mse, r2, wmape, int(pred.size),
                            degenerate_r2, degenerate_wmape)


def metrics(pred: np.ndarray, truth: np.ndarray,
            names: tuple[str, ...] | None = None) -> list[ComponentMetrics]:
    """Per-component metrics over (N, n) prediction and truth arrays."""
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    truth = np.atleast_2d(np.asarray(truth, dtype=np.float64))
    if pred.shape != truth.shape:
        raise LengthMismatch(f"shapes differ: {pred.shape} vs {truth.shape}")
    n = pred.shape[1]
    if names is None:
        names = tuple(f"u{i}" for i in range(n))
    if len(names) != n:
        raise LengthMismatch(f"{len(names)} names for {n} components")
    return [series_metrics(pred[:, i], truth[:, i], names[i]) for i in range(n)]


# ---- cross-validation ----


@dataclass
class CvReport:
    """Per-fold metrics, their aggregates, and averaged loss curves.

    Loss curves from folds that stopped at different epochs are
    truncated to the shortest before averaging, so both curves share
    one epoch axis.
    """

    k: int
    unit_names: tuple[str, ...]
    fold_metrics: list[list[ComponentMetrics]]
    aggregate: dict  # unit -> metric -> {"mean": x, "std": s}
    mean_train_curve: list[float]
    mean_val_curve: list[float]
    fold_epochs: list[int]

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "unit_names": list(self.unit_names),
            "fold_metrics": [[m.to_dict() for m in fold] for fold in self.fold_metrics],
            "aggregate": self.aggregate,
            "mean_train_curve": self.mean_train_curve,
            "mean_val_curve": self.mean_val_curve,
            "fold_epochs": self.fold_epochs,
        }


_AGG_FIELDS = ("mae_W", "mse_W2", "r2", "wmape_pct")


def _aggregate(fold_metrics: list[list[ComponentMetrics]],
               names: tuple[str, ...]) -> dict:
    out: dict = {}
    for ui, unit in enumerate(names):
        per_unit = {}
        for fname in _AGG_FIELDS:
            vals = [getattr(fold[ui], fname) for fold in fold_metrics]
            vals = [v for v in vals if v is not None]
            if vals:
                per_unit[fname] = {"mean": float(np.mean(vals)),
                                   "std": float(np.std(vals)),
                                   "n_folds": len(vals)}
            else:
                per_unit[fname] = {"mean": None, "std": None, "n_folds": 0}
        out[unit] = per_unit
    return out


def cross_validate(config: NetworkConfig, init_model: ThermalModel,
                   dataset: TraceDataset, k: int = 10, seed: int = 0) -> CvReport:
    """k-fold chronological-block cross-validation of the estimator.

    Every sample is tested exactly once; training pairs never span
    the excised fold. Fold f trains with its own derived seed.
    """
    folds = split_k_fold(dataset, k)
    names = dataset.unit_names
    fold_metrics: list[list[ComponentMetrics]] = []
    train_curves: list[list[float]] = []
    val_curves: list[list[float]] = []
    for f, (train_ds, test_ds) in enumerate(folds):
        model = train(config, init_model, train_ds, seed=seed * 10_000 + f)
        test_batch, _ = make_batch(test_ds, init_model.ambient_K, require_truth=True)
        pred, _ = forward(model, test_batch.t_prev, test_batch.t_curr, test_batch.p_est)
        fold_metrics.append(metrics(pred, test_batch.p_true, names))
        train_curves.append(model.history["train_total"])
        val_curves.append(model.history["val_total"])
    n_epochs = min(len(c) for c in train_curves)
    mean_train = np.mean([c[:n_epochs] for c in train_curves], axis=0)
    mean_val = np.mean([c[:n_epochs] for c in val_curves], axis=0)
    return CvReport(
        k=k,
        unit_names=names,
        fold_metrics=fold_metrics,
        aggregate=_aggregate(fold_metrics, names),
        mean_train_curve=[float(x) for x in mean_train],
        mean_val_curve=[float(x) for x in mean_val],
        fold_epochs=[len(c) for c in train_curves],
    )


# ---- latency ----


@dataclass(frozen=True)
class LatencyStats:
    mean_us: float
    p50_us: float
    p99_us: float
    n_iters: int

    def to_dict(self) -> dict:
        return {"mean_us": self.mean_us, "p50_us": self.p50_us,
                "p99_us": self.p99_us, "n_iters": self.n_iters}


@dataclass(frozen=True)
class BenchResult:
    """Single-sample inference latency, with and without reusing a
    prefactorised B'."""

    cached: LatencyStats
    uncached: LatencyStats

    def to_dict(self) -> dict:
        return {"cached": self.cached.to_dict(), "uncached": self.uncached.to_dict()}


def _mlp_apply(model: TrainedModel, x: np.ndarray) -> np.ndarray:
    from .cpinn import _act_pair  # single activation table

    act, _ = _act_pair(model.config.activation)
    h = x if model.x_mean is None else (x - model.x_mean) / model.x_std
    for li, (W, b) in enumerate(model.weights):
        h = h @ W + b
        if li < len(model.weights) - 1:
            h = act(h)
    return h


def bench_inference(model: TrainedModel, n_iters: int = 1000,
                    seed: int = 0) -> BenchResult:
    """Wall-clock per single (t_prev, t_curr, p_est) -> p_final call.

    Each call includes the physics solve against B'. The cached
    variant reuses one LU factorisation across calls; the uncached
    variant refactorises every time. Warmup iterations are excluded.
    """
    if n_iters < 100:
        raise DimensionMismatch("n_iters must be >= 100 for stable percentiles")
    n = model.config.n_units
    rng = np.random.default_rng(seed)
    t_prev = rng.uniform(1.0, 20.0, size=n)
    t_curr = rng.uniform(1.0, 20.0, size=n)
    p_est = rng.uniform(0.0, 5.0, size=n)
    A, B = model.A_prime, model.B_prime
    lu = scipy.linalg.lu_factor(B)
    x = np.concatenate([t_prev, t_curr, p_est])

    def call_cached():
        p_phys = scipy.linalg.lu_solve(lu, t_curr - A @ t_prev)
        return p_phys + _mlp_apply(model, x)

    def call_uncached():
        p_phys = np.linalg.solve(B, t_curr - A @ t_prev)
        return p_phys + _mlp_apply(model, x)

    def measure(fn) -> LatencyStats:
        warmup = max(10, n_iters // 10)
        for _ in range(warmup):
            fn()
        lat = np.empty(n_iters)
        for i in range(n_iters):
            t0 = time.perf_counter()
            fn()
            lat[i] = time.perf_counter() - t0
        lat *= 1e6
        return LatencyStats(
            mean_us=float(np.mean(lat)),
            p50_us=float(np.percentile(lat, 50)),
            p99_us=float(np.percentile(lat, 99)),
            n_iters=n_iters,
        )

    return BenchResult(cached=measure(call_cached), uncached=measure(call_uncached))
