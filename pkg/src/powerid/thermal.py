"""Thermal trace generation and state-space identification.

The simulator propagates T_r(k) = A @ T_r(k-1) + B @ P(k) from a cold
start (T_r(0) = 0) and can inject model mismatch: a quadratic
self-heating term and Gaussian coupling noise. Identification recovers
(A, B) from traces, either against known per-unit power or blindly
from the total power budget alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from .core import ThermalModel, TraceDataset, TraceSample, replace_samples, spectral_radius
from .errors import (
    DimensionMismatch,
    DivergenceDetected,
    MissingGroundTruth,
    NonFiniteValue,
    RankDeficient,
    TooFewSamples,
    UnstableModel,
)

SCHEDULE_KINDS = ("constant", "step", "square_wave", "random_walk", "workload_script")


@dataclass(frozen=True)
class PowerSchedule:
    """Per-unit power demand over a fixed number of samples.

    levels is the base per-unit power (W). step and square_wave also
    use levels_high; random_walk perturbs levels with a clipped
    Gaussian walk; workload_script plays back an explicit array.
    """

    kind: str
    duration_samples: int
    levels: np.ndarray = field(default_factory=lambda: np.zeros(0))
    levels_high: np.ndarray | None = None
    period_samples: int = 100
    walk_sd_W: float = 0.1
    p_max_W: float = 10.0
    script: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise DimensionMismatch(f"unknown schedule kind {self.kind!r}")
        if self.duration_samples < 2:
            raise TooFewSamples("schedule must cover at least 2 samples")
        lv = np.asarray(self.levels, dtype=np.float64)
        object.__setattr__(self, "levels", lv)
        if self.kind == "workload_script":
            if self.script is None:
                raise DimensionMismatch("workload_script needs a script array")
            sc = np.asarray(self.script, dtype=np.float64)
            if sc.ndim != 2 or sc.shape[0] < self.duration_samples:
                raise DimensionMismatch("script must be (>=duration, n_units)")
            object.__setattr__(self, "script", sc)
        else:
            if lv.ndim != 1 or lv.size == 0:
                raise DimensionMismatch("levels must be a non-empty vector")
        if np.any(self.levels < 0):
            raise DimensionMismatch("power levels must be >= 0")
        if self.levels_high is not None:
            hi = np.asarray(self.levels_high, dtype=np.float64)
            if hi.shape != lv.shape or np.any(hi < 0):
                raise DimensionMismatch("levels_high must match levels and be >= 0")
            object.__setattr__(self, "levels_high", hi)
        if self.period_samples < 1:
            raise DimensionMismatch("period_samples must be >= 1")

    @property
    def n_units(self) -> int:
        return self.script.shape[1] if self.kind == "workload_script" else self.levels.size


def generate_powers(schedule: PowerSchedule, rng: np.random.Generator) -> np.ndarray:
    """Materialise the (duration, n_units) power array for a schedule."""
    k = schedule.duration_samples
    n = schedule.n_units
    if schedule.kind == "constant":
        return np.tile(schedule.levels, (k, 1))
    if schedule.kind == "step":
        hi = schedule.levels_high if schedule.levels_high is not None else 2 * schedule.levels
        out = np.tile(schedule.levels, (k, 1))
        out[schedule.period_samples :] = hi
        return out
    if schedule.kind == "square_wave":
        hi = schedule.levels_high if schedule.levels_high is not None else 2 * schedule.levels
        out = np.empty((k, n))
        half = schedule.period_samples
        for i in range(k):
            out[i] = schedule.levels if (i // half) % 2 == 0 else hi
        return out
    if schedule.kind == "random_walk":
        out = np.empty((k, n))
        out[0] = schedule.levels
        steps = rng.normal(0.0, schedule.walk_sd_W, size=(k - 1, n))
        for i in range(1, k):
            out[i] = np.clip(out[i - 1] + steps[i - 1], 0.0, schedule.p_max_W)
        return out
    return schedule.script[:k].copy()


def schedule_from_dict(doc: dict) -> PowerSchedule:
    """Build a schedule from its JSON form."""
    kw = dict(doc)
    for key in ("levels", "levels_high", "script"):
        if kw.get(key) is not None:
            kw[key] = np.asarray(kw[key], dtype=np.float64)
    return PowerSchedule(**kw)


@dataclass(frozen=True)
class MisspecSpec:
    """Deliberate structural error injected by the simulator.

    leakage_quad_coeff adds coeff * T_r(k-1)^2 kelvin per step
    (temperature-dependent leakage the linear model cannot express);
    coupling_noise_sd adds zero-mean Gaussian kelvin noise per step.
    """

    leakage_quad_coeff: float = 0.0
    coupling_noise_sd: float = 0.0
    enabled: bool = True

    def __post_init__(self):
        if self.leakage_quad_coeff < 0 or self.coupling_noise_sd < 0:
            raise DimensionMismatch("misspecification magnitudes must be >= 0")


def simulate(model: ThermalModel, schedule: PowerSchedule,
             misspec: MisspecSpec | None = None, seed: int = 0) -> TraceDataset:
    """Run the forward model from a cold start, returning a full trace.

    Sample k carries the power P(k) that drove the transition from
    step k-1, so physics inversion on any adjacent pair recovers it.
    Deterministic for a fixed seed, including injected noise.
    """
    if schedule.n_units != model.n_units:
        raise DimensionMismatch(
            f"schedule has {schedule.n_units} units, model has {model.n_units}"
        )
    if not model.is_stable:
        raise UnstableModel(f"spectral radius {spectral_radius(model.A):.4f} >= 1")
    rng = np.random.default_rng(seed)
    powers = generate_powers(schedule, rng)
    k_total = schedule.duration_samples
    n = model.n_units
    active = misspec is not None and misspec.enabled
    temps_rel = np.zeros((k_total, n))
    for k in range(1, k_total):
        t_prev = temps_rel[k - 1]
        t = model.A @ t_prev + model.B @ powers[k]
        if active:
            t = t + misspec.leakage_quad_coeff * t_prev**2
            if misspec.coupling_noise_sd > 0:
                t = t + rng.normal(0.0, misspec.coupling_noise_sd, size=n)
        if not np.all(np.isfinite(t)) or np.max(np.abs(t)) > 1e6:
            raise UnstableModel(f"temperature diverged at step {k}")
        temps_rel[k] = t
    samples = []
    for k in range(k_total):
        samples.append(TraceSample(
            time_s=k * model.dt_s,
            temps_K=model.ambient_K + temps_rel[k],
            p_total_W=float(np.sum(powers[k])),
            p_true_W=powers[k],
        ))
    return TraceDataset(tuple(samples), source="synthetic", model_hint=model)


def steady_state(model: ThermalModel, p: Sequence[float] | np.ndarray) -> np.ndarray:
    """Fixed-point absolute temperatures under constant per-unit power."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (model.n_units,):
        raise DimensionMismatch(f"power vector must have shape ({model.n_units},)")
    if not model.is_stable:
        raise UnstableModel("no steady state: spectral radius >= 1")
    t_rel = np.linalg.solve(np.eye(model.n_units) - model.A, model.B @ p)
    return model.ambient_K + t_rel


# ---- identification ----


def _pair_arrays(d: TraceDataset) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Stacked (t_prev, t_curr, p_total_curr, curr_index) over valid pairs."""
    pairs = d.pair_indices()
    if not pairs:
        raise TooFewSamples("no adjacent sample pairs available")
    amb = d.model_hint.ambient_K if d.model_hint is not None else float(
        np.min(d.temps_K())
    )
    temps = d.temps_K() - amb
    prev_idx = np.array([i for i, _ in pairs])
    curr_idx = np.array([j for _, j in pairs])
    p_total = d.p_total_W()[curr_idx]
    return temps[prev_idx], temps[curr_idx], p_total, curr_idx


def _solve_qr(Z: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, float]:
    """Least squares via column-pivoted QR with an explicit rank check."""
    q, r, piv = scipy.linalg.qr(Z, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = Z.shape[1] * np.finfo(np.float64).eps * np.max(
        np.linalg.norm(Z, axis=0), initial=0.0
    )
    rank = int(np.sum(diag > tol))
    if rank < Z.shape[1]:
        cond = float(diag.max() / diag.min()) if diag.min() > 0 else np.inf
        raise RankDeficient(
            f"regressor rank {rank} < {Z.shape[1]}; the trace does not excite the model",
            condition_number=cond,
        )
    theta_piv = scipy.linalg.solve_triangular(r, q.T @ Y)
    theta = np.empty_like(theta_piv)
    theta[piv] = theta_piv
    return theta, float(diag.max() / diag.min())


def identify_supervised(d: TraceDataset) -> ThermalModel:
    """Fit (A, B) by least squares on adjacent pairs with known power.

    Minimises ||A t_prev + B p_curr - t_curr||^2 jointly over both
    matrices. Residual RMS and regressor condition number land in the
    returned model's meta dict.
    """
    if not d.has_ground_truth:
        raise MissingGroundTruth("supervised identification needs per-unit power")
    t_prev, t_curr, _, curr_idx = _pair_arrays(d)
    n = d.n_units
    if t_prev.shape[0] < 2 * n + 1:
        raise TooFewSamples(f"need at least {2 * n + 1} pairs, have {t_prev.shape[0]}")
    p_curr = d.p_true_W()[curr_idx]
    Z = np.hstack([t_prev, p_curr])
    theta, cond = _solve_qr(Z, t_curr)
    A = theta[:n].T
    B = theta[n:].T
    resid = Z @ theta - t_curr
    rms = float(np.sqrt(np.mean(resid**2)))
    hint = d.model_hint
    return ThermalModel(
        unit_names=d.unit_names,
        A=A,
        B=B,
        ambient_K=hint.ambient_K if hint is not None else float(np.min(d.temps_K())),
        dt_s=hint.dt_s if hint is not None else float(np.min(np.diff(d.times()))),
        meta={"residual_rms_K": rms, "condition_number": cond,
              "n_pairs": int(t_prev.shape[0])},
    )


@dataclass
class BlindResult:
    """Outcome of total-power-only identification."""

    model: ThermalModel
    dataset: TraceDataset  # input samples with p_est_W filled in
    objectives: list[float]  # squared-residual objective after each iteration


def _constrained_split(B: np.ndarray, delta: np.ndarray, total: float) -> np.ndarray:
    """min ||B p - delta||^2 subject to sum(p) = total, p >= 0.

    Small active-set solve: fix the most negative coordinate to zero
    and re-solve until the free block is non-negative.
    """
    n = B.shape[0]
    if total <= 0:
        return np.zeros(n)
    free = list(range(n))
    p = np.zeros(n)
    for _ in range(n):
        Bf = B[:, free]
        m = len(free)
        kkt = np.zeros((m + 1, m + 1))
        kkt[:m, :m] = 2.0 * Bf.T @ Bf
        kkt[:m, m] = 1.0
        kkt[m, :m] = 1.0
        rhs = np.concatenate([2.0 * Bf.T @ delta, [total]])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            break
        pf = sol[:m]
        if np.all(pf >= -1e-12):
            p[:] = 0.0
            p[free] = np.maximum(pf, 0.0)
            return p
        drop = free[int(np.argmin(pf))]
        free.remove(drop)
        if not free:
            break
    # fall back to a uniform split if the active set collapsed
    return np.full(n, total / n)


def identify_blind(d: TraceDataset, iters: int = 50) -> BlindResult:
    """Alternating estimation of (A, B) and per-unit power splits.

    Only the total power budget is observed. The split is initialised
    proportionally to each unit's ambient-relative temperature (warmer
    units get more of the budget); a uniform split would make the
    power columns of the regressor collinear and the first fit
    unsolvable. The loop then alternates a joint least-squares fit of
    (A, B) with a per-sample redistribution of the total, keeping the
    squared-residual objective non-increasing by construction: a
    candidate split is only accepted where it does not worsen the
    sample's residual. This is a pragmatic surrogate for blind source
    separation and is flagged experimental.
    """
    if iters < 0:
        raise DimensionMismatch("iters must be >= 0")
    t_prev, t_curr, p_total, curr_idx = _pair_arrays(d)
    n = d.n_units
    if t_prev.shape[0] < 2 * n + 1:
        raise TooFewSamples(f"need at least {2 * n + 1} pairs, have {t_prev.shape[0]}")
    all_total = d.p_total_W()
    amb = d.model_hint.ambient_K if d.model_hint is not None else float(
        np.min(d.temps_K())
    )
    warmth = np.maximum(d.temps_K() - amb, 0.0)
    row_sum = warmth.sum(axis=1, keepdims=True)
    frac = np.where(row_sum > 0, warmth / np.maximum(row_sum, 1e-300), 1.0 / n)
    p_est = all_total[:, None] * frac
    p_pairs = p_est[curr_idx]

    def fit(p_pairs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        Z = np.hstack([t_prev, p_pairs])
        theta, _ = _solve_qr(Z, t_curr)
        return theta[:n].T, theta[n:].T

    def objective(A: np.ndarray, B: np.ndarray, p_pairs: np.ndarray) -> float:
        r = t_prev @ A.T + p_pairs @ B.T - t_curr
        return float(np.sum(r**2))

    A, B = fit(p_pairs)
    objectives: list[float] = []
    prev_obj = objective(A, B, p_pairs)
    rises = 0
    for _ in range(iters):
        A, B = fit(p_pairs)
        delta_all = t_curr - t_prev @ A.T
        for i in range(p_pairs.shape[0]):
            cand = _constrained_split(B, delta_all[i], float(p_total[i]))
            old_r = float(np.sum((B @ p_pairs[i] - delta_all[i]) ** 2))
            new_r = float(np.sum((B @ cand - delta_all[i]) ** 2))
            if new_r <= old_r:
                p_pairs[i] = cand
        obj = objective(A, B, p_pairs)
        if obj > prev_obj + 1e-9:
            rises += 1
            if rises >= 2:
                raise DivergenceDetected(
                    f"objective rose twice consecutively ({prev_obj:.6e} -> {obj:.6e})"
                )
        else:
            rises = 0
        objectives.append(obj)
        prev_obj = obj

    if not np.all(np.isfinite(p_pairs)):
        raise NonFiniteValue("blind estimation produced non-finite power")
    p_est[curr_idx] = p_pairs
    samples = [
        TraceSample(s.time_s, s.temps_K, s.p_total_W, s.p_true_W, p_est[i])
        for i, s in enumerate(d.samples)
    ]
    hint = d.model_hint
    model = ThermalModel(
        unit_names=d.unit_names,
        A=A,
        B=B,
        ambient_K=hint.ambient_K if hint is not None else float(np.min(d.temps_K())),
        dt_s=hint.dt_s if hint is not None else float(np.min(np.diff(d.times()))),
        meta={"objective": prev_obj, "iters": iters, "experimental": True},
    )
    out = replace_samples(d, samples, d.segments)
    return BlindResult(model=model, dataset=out, objectives=objectives)
