"""Physics-guided residual estimator for per-unit power.

The physics branch inverts the thermal model over one step:
p = B^-1 (t_curr - A t_prev) on ambient-relative temperatures. A small
dense network sees [t_prev, t_curr, p_est] and emits a residual
correction, so the final estimate is p_physics + delta_p. Training
jointly refines the network and copies (A', B') of the thermal
matrices under a three-part objective: data fit, one-step physics
consistency, and proximity to the physics branch.

All gradients are written out by hand in float64, including the path
through B'^-1, so they can be checked against finite differences.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.special import erf

from .core import ThermalModel, TraceDataset, TraceSample, replace_samples
from .errors import (
    ConfigError,
    DimensionMismatch,
    MissingGroundTruth,
    NonFiniteLoss,
    SingularB,
    TooFewSamples,
)

ACTIVATIONS = ("relu", "tanh", "gelu")

_DET_MIN = 1e-12
_IMPROVE_TOL = 1e-6  # minimum validation improvement that resets patience

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture and training hyper-parameters for the residual net."""

    n_units: int
    hidden_widths: tuple[int, ...] = ()
    activation: str = "tanh"
    dropout_rate: float = 0.0
    weight_decay: float = 0.0
    lambda_phys: float = 0.1
    lambda_guide: float = 0.1
    learning_rate: float = 1e-2
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 20

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.n_units < 1:
            raise DimensionMismatch("n_units must be >= 1")
        if len(self.hidden_widths) > 4:
            raise DimensionMismatch("at most 4 hidden layers are supported")
        if any(w < 1 or w > 1024 for w in self.hidden_widths):
            raise DimensionMismatch("hidden widths must lie in [1, 1024]")
        if self.activation not in ACTIVATIONS:
            raise DimensionMismatch(f"unknown activation {self.activation!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise DimensionMismatch("dropout_rate must lie in [0, 1)")
        if self.weight_decay < 0 or self.lambda_phys < 0 or self.lambda_guide < 0:
            raise DimensionMismatch("penalty coefficients must be >= 0")
        if self.learning_rate <= 0:
            raise DimensionMismatch("learning_rate must be > 0")
        if self.batch_size < 1 or self.max_epochs < 0 or self.patience < 1:
            raise DimensionMismatch("bad batch_size / max_epochs / patience")

    @property
    def input_dim(self) -> int:
        return 3 * self.n_units

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim, *self.hidden_widths, self.n_units]

    def to_dict(self) -> dict:
        return {
            "n_units": self.n_units,
            "hidden_widths": list(self.hidden_widths),
            "activation": self.activation,
            "dropout_rate": self.dropout_rate,
            "weight_decay": self.weight_decay,
            "lambda_phys": self.lambda_phys,
            "lambda_guide": self.lambda_guide,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "patience": self.patience,
        }

    @staticmethod
    def from_dict(doc: dict) -> "NetworkConfig":
        return NetworkConfig(**{**doc, "hidden_widths": tuple(doc.get("hidden_widths", ()))})


def mac_count(config: NetworkConfig) -> int:
    """Multiply-accumulate count per inference: sum of in*out over layers.

    Biases, activations and the physics branch are excluded; a network
    with no hidden layer costs 3n * n.
    """
    dims = config.layer_dims
    return int(sum(dims[i] * dims[i + 1] for i in range(len(dims) - 1)))


class Batch(NamedTuple):
    """Row-stacked consecutive-pair arrays (ambient-relative kelvin)."""

    t_prev: np.ndarray
    t_curr: np.ndarray
    p_est: np.ndarray
    p_true: np.ndarray | None = None


class LossParts(NamedTuple):
    total: float
    data: float
    phys: float
    guide: float


@dataclass
class Gradients:
    """Exact gradients for every trainable parameter group."""

    weights: list[tuple[np.ndarray, np.ndarray]]  # (dW, db) per layer
    A_prime: np.ndarray
    B_prime: np.ndarray


@dataclass
class TrainedModel:
    """Residual network plus its refined thermal matrices.

    x_mean / x_std standardise the network input (frozen from the
    training pairs); identity transforms by default so hand-built
    models behave exactly as written.
    """

    config: NetworkConfig
    unit_names: tuple[str, ...]
    weights: list[tuple[np.ndarray, np.ndarray]]
    A_prime: np.ndarray
    B_prime: np.ndarray
    ambient_K: float
    dt_s: float
    x_mean: np.ndarray | None = None
    x_std: np.ndarray | None = None
    history: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)


# ---- physics branch ----


def physics_power(A: np.ndarray, B: np.ndarray, t_prev: np.ndarray,
                  t_curr: np.ndarray) -> np.ndarray:
    """Invert one model step: solve B p = t_curr - A t_prev.

    Accepts single vectors (n,) or row-stacked batches (N, n) of
    ambient-relative temperatures; the estimate has the same shape.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if abs(np.linalg.det(B)) <= _DET_MIN:
        raise SingularB(f"|det B| = {abs(np.linalg.det(B)):.3e}")
    t_prev = np.asarray(t_prev, dtype=np.float64)
    t_curr = np.asarray(t_curr, dtype=np.float64)
    delta = t_curr - t_prev @ A.T
    return np.linalg.solve(B, delta.T).T if delta.ndim > 1 else np.linalg.solve(B, delta)


def estimate_dataset(model: ThermalModel, d: TraceDataset) -> TraceDataset:
    """Fill p_est_W by physics inversion over every adjacent pair.

    The first sample of each segment has no predecessor and keeps an
    absent estimate.
    """
    if d.n_units != model.n_units:
        raise DimensionMismatch("dataset and model unit counts differ")
    temps_rel = d.temps_K() - model.ambient_K
    est: list[np.ndarray | None] = [None] * len(d)
    for i, j in d.pair_indices():
        est[j] = physics_power(model.A, model.B, temps_rel[i], temps_rel[j])
    samples = [
        TraceSample(s.time_s, s.temps_K, s.p_total_W, s.p_true_W, est[k])
        for k, s in enumerate(d.samples)
    ]
    return replace_samples(d, samples, d.segments)


def make_batch(d: TraceDataset, ambient_K: float, require_truth: bool = False
               ) -> tuple[Batch, np.ndarray]:
    """Consecutive pairs with an available estimate, as training arrays.

    Returns the batch plus the dataset index of each pair's current
    sample. Temperatures are converted to ambient-relative form here.
    """
    temps_rel = d.temps_K() - ambient_K
    p_true_all = d.p_true_W() if d.has_ground_truth else None
    if require_truth and p_true_all is None:
        raise MissingGroundTruth("batch construction requires per-unit power")
    rows = [(i, j) for i, j in d.pair_indices() if d.samples[j].p_est_W is not None]
    if not rows:
        raise TooFewSamples("no adjacent pairs with a power estimate")
    prev = np.array([i for i, _ in rows])
    curr = np.array([j for _, j in rows])
    p_est = np.stack([d.samples[j].p_est_W for j in curr])
    p_true = p_true_all[curr] if p_true_all is not None else None
    return Batch(temps_rel[prev], temps_rel[curr], p_est, p_true), curr


# ---- network forward / loss / backward ----


def _act_pair(name: str):
    if name == "relu":
        return (lambda z: np.maximum(z, 0.0),
                lambda z: (z > 0).astype(np.float64))
    if name == "tanh":
        return (np.tanh,
                lambda z: 1.0 - np.tanh(z) ** 2)
    # exact gelu and its derivative via the Gaussian cdf/pdf
    def gelu(z):
        return 0.5 * z * (1.0 + erf(z * _INV_SQRT2))

    def dgelu(z):
        cdf = 0.5 * (1.0 + erf(z * _INV_SQRT2))
        return cdf + z * np.exp(-0.5 * z * z) * _INV_SQRT2PI

    return gelu, dgelu


def init_weights(config: NetworkConfig, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Seeded Glorot-style initialisation; biases start at zero."""
    rng = np.random.default_rng(seed)
    dims = config.layer_dims
    out = []
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        scale = np.sqrt(2.0 / (fan_in + fan_out))
        out.append((rng.normal(0.0, scale, size=(fan_in, fan_out)),
                    np.zeros(fan_out)))
    return out


class _ForwardCache(NamedTuple):
    x: np.ndarray
    zs: list[np.ndarray]
    hs: list[np.ndarray]          # post-activation, post-dropout
    masks: list[np.ndarray] | None
    delta: np.ndarray             # t_curr - t_prev A'^T
    binv: np.ndarray
    p_phys: np.ndarray
    delta_p: np.ndarray
    p_final: np.ndarray


def _forward_full(weights, config: NetworkConfig, A: np.ndarray, B: np.ndarray,
                  batch: Batch, dropout_rng: np.random.Generator | None = None,
                  norm: tuple[np.ndarray, np.ndarray] | None = None) -> _ForwardCache:
    if abs(np.linalg.det(B)) <= _DET_MIN:
        raise SingularB(f"|det B'| = {abs(np.linalg.det(B)):.3e}")
    binv = np.linalg.inv(B)
    delta = batch.t_curr - batch.t_prev @ A.T
    p_phys = delta @ binv.T
    x = np.concatenate([batch.t_prev, batch.t_curr, batch.p_est], axis=-1)
    if norm is not None:
        x = (x - norm[0]) / norm[1]
    act, _ = _act_pair(config.activation)
    h = x
    zs, hs = [], []
    masks: list[np.ndarray] | None = None
    use_dropout = dropout_rng is not None and config.dropout_rate > 0.0
    if use_dropout:
        masks = []
    for li, (W, b) in enumerate(weights):
        z = h @ W + b
        if li < len(weights) - 1:
            h = act(z)
            if use_dropout:
                keep = (dropout_rng.random(h.shape) >= config.dropout_rate)
                mask = keep / (1.0 - config.dropout_rate)
                h = h * mask
                masks.append(mask)
            zs.append(z)
            hs.append(h)
        else:
            delta_p = z
    p_final = p_phys + delta_p
    return _ForwardCache(x, zs, hs, masks, delta, binv, p_phys, delta_p, p_final)


def forward(model: TrainedModel, t_prev: np.ndarray, t_curr: np.ndarray,
            p_est: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inference-mode estimate: returns (p_final, p_physics).

    Inputs are ambient-relative temperatures, single vectors or
    (N, n) batches. Dropout is never applied here.
    """
    t_prev = np.asarray(t_prev, dtype=np.float64)
    single = t_prev.ndim == 1
    batch = Batch(
        np.atleast_2d(t_prev),
        np.atleast_2d(np.asarray(t_curr, dtype=np.float64)),
        np.atleast_2d(np.asarray(p_est, dtype=np.float64)),
    )
    cache = _forward_full(model.weights, model.config, model.A_prime, model.B_prime,
                          batch, norm=_norm_of(model))
    if single:
        return cache.p_final[0], cache.p_phys[0]
    return cache.p_final, cache.p_phys


def _norm_of(model: TrainedModel) -> tuple[np.ndarray, np.ndarray] | None:
    if model.x_mean is None or model.x_std is None:
        return None
    return model.x_mean, model.x_std


def _loss_from_cache(cache: _ForwardCache, batch: Batch, A: np.ndarray, B: np.ndarray,
                     lambda_phys: float, lambda_guide: float) -> LossParts:
    if batch.p_true is None:
        raise MissingGroundTruth("loss needs p_true in the batch")
    n = batch.t_prev.shape[0]
    r_data = cache.p_final - batch.p_true
    l_data = float(np.sum(r_data**2) / n)
    r_phys = batch.t_prev @ A.T + cache.p_final @ B.T - batch.t_curr
    l_phys = float(np.sum(r_phys**2) / n)
    l_guide = float(np.sum(cache.delta_p**2) / n)
    total = l_data + lambda_phys * l_phys + lambda_guide * l_guide
    return LossParts(total, l_data, l_phys, l_guide)


def loss(model: TrainedModel, batch: Batch, lambda_phys: float | None = None,
         lambda_guide: float | None = None) -> LossParts:
    """Three-part objective on a batch (inference-mode forward).

    data: mean squared error of p_final against p_true;
    phys: mean squared one-step residual of the (A', B') model;
    guide: mean squared distance of p_final from the physics branch.
    """
    lp = model.config.lambda_phys if lambda_phys is None else lambda_phys
    lg = model.config.lambda_guide if lambda_guide is None else lambda_guide
    cache = _forward_full(model.weights, model.config, model.A_prime, model.B_prime,
                          batch, norm=_norm_of(model))
    return _loss_from_cache(cache, batch, model.A_prime, model.B_prime, lp, lg)


def _backward_full(weights, config: NetworkConfig, A: np.ndarray, B: np.ndarray,
                   batch: Batch, cache: _ForwardCache, lambda_phys: float,
                   lambda_guide: float, weight_decay: float = 0.0) -> Gradients:
    if batch.p_true is None:
        raise MissingGroundTruth("gradients need p_true in the batch")
    n_samples = batch.t_prev.shape[0]
    r_data = cache.p_final - batch.p_true
    r_phys = batch.t_prev @ A.T + cache.p_final @ B.T - batch.t_curr

    # d total / d p_final; the guide term differentiates through
    # delta_p alone because p_phys cancels inside it
    g_pf = (2.0 / n_samples) * (r_data + lambda_phys * (r_phys @ B))
    g_dp = g_pf + (2.0 / n_samples) * lambda_guide * cache.delta_p
    g_pp = g_pf

    # network backprop
    _, dact = _act_pair(config.activation)
    grads_w: list[tuple[np.ndarray, np.ndarray]] = [None] * len(weights)
    g = g_dp
    for li in range(len(weights) - 1, -1, -1):
        W, _ = weights[li]
        h_in = cache.hs[li - 1] if li > 0 else cache.x
        dW = h_in.T @ g
        db = np.sum(g, axis=0)
        if weight_decay > 0.0:
            dW = dW + weight_decay * W
        grads_w[li] = (dW, db)
        if li > 0:
            g = g @ W.T
            if cache.masks is not None:
                g = g * cache.masks[li - 1]
            g = g * dact(cache.zs[li - 1])

    # thermal matrices: path through the physics branch plus the
    # explicit appearance in the physics residual
    g_delta = g_pp @ cache.binv
    grad_A = -g_delta.T @ batch.t_prev \
        + (2.0 * lambda_phys / n_samples) * r_phys.T @ batch.t_prev
    grad_C = g_pp.T @ cache.delta            # C = B^-1
    grad_B = -cache.binv.T @ grad_C @ cache.binv.T \
        + (2.0 * lambda_phys / n_samples) * r_phys.T @ cache.p_final
    return Gradients(weights=grads_w, A_prime=grad_A, B_prime=grad_B)


def backward(model: TrainedModel, batch: Batch, lambda_phys: float | None = None,
             lambda_guide: float | None = None, weight_decay: float = 0.0) -> Gradients:
    """Exact reverse-mode gradients of the total loss.

    Covers network weights and biases plus A' and B', including the
    dependence of the physics branch on B' through its inverse. When
    weight_decay > 0 the gradient of 0.5 * wd * ||W||^2 is added for
    weight matrices only (the trainer itself decays weights directly
    and calls this with the default 0).
    """
    lp = model.config.lambda_phys if lambda_phys is None else lambda_phys
    lg = model.config.lambda_guide if lambda_guide is None else lambda_guide
    cache = _forward_full(model.weights, model.config, model.A_prime, model.B_prime,
                          batch, norm=_norm_of(model))
    return _backward_full(model.weights, model.config, model.A_prime, model.B_prime,
                          batch, cache, lp, lg, weight_decay)


# ---- training ----


class _Adam:
    """Adam moments for a list of arrays, updated in place."""

    def __init__(self, shapes: list[tuple[int, ...]], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def _project_invertible(B: np.ndarray) -> np.ndarray:
    """Nudge B back to invertibility by adding small multiples of I."""
    if abs(np.linalg.det(B)) > _DET_MIN:
        return B
    n = B.shape[0]
    delta = 1e-9 * max(1.0, abs(np.trace(B)) / n)
    for _ in range(60):
        B = B + delta * np.eye(n)
        if abs(np.linalg.det(B)) > _DET_MIN:
            return B
        delta *= 10.0
    raise SingularB("could not restore invertibility of B'")


def train(config: NetworkConfig, init_model: ThermalModel, dataset: TraceDataset,
          seed: int = 0) -> TrainedModel:
    """Fit the residual network and refine (A', B') on a prepared trace.

    The dataset must already carry physics estimates and ground truth.
    A chronological 10% tail of the available pairs is held out for
    early stopping; the returned model is the best-validation
    checkpoint. Bit-for-bit deterministic for fixed inputs and seed.
    """
    if config.n_units != dataset.n_units or config.n_units != init_model.n_units:
        raise DimensionMismatch("config, model and dataset unit counts must agree")
    batch_all, _ = make_batch(dataset, init_model.ambient_K, require_truth=True)
    n_pairs = batch_all.t_prev.shape[0]
    n_val = max(1, int(0.1 * n_pairs))
    if n_pairs - n_val < 1:
        raise TooFewSamples(f"{n_pairs} pairs leave no training data after validation split")

    def take(b: Batch, idx) -> Batch:
        return Batch(b.t_prev[idx], b.t_curr[idx], b.p_est[idx],
                     None if b.p_true is None else b.p_true[idx])

    train_b = take(batch_all, slice(0, n_pairs - n_val))
    val_b = take(batch_all, slice(n_pairs - n_val, n_pairs))

    # input standardisation frozen from the training pairs
    x_all = np.concatenate([train_b.t_prev, train_b.t_curr, train_b.p_est], axis=-1)
    x_mean = np.mean(x_all, axis=0)
    x_std = np.std(x_all, axis=0)
    x_std[x_std < 1e-8] = 1.0
    norm = (x_mean, x_std)

    rng = np.random.default_rng(seed)
    weights = init_weights(config, seed)
    A = init_model.A.copy()
    B = init_model.B.copy()

    history = {"train_total": [], "train_data": [], "train_phys": [],
               "train_guide": [], "val_total": [], "best_epoch": -1}
    provenance = {"dataset_sha256": dataset_sha256(dataset), "seed": int(seed)}
    model = TrainedModel(config, dataset.unit_names, weights, A, B,
                         init_model.ambient_K, init_model.dt_s,
                         x_mean=x_mean, x_std=x_std,
                         history=history, provenance=provenance)
    if config.max_epochs == 0:
        return model

    params = [w for pair in weights for w in pair] + [A, B]
    adam = _Adam([p.shape for p in params], config.learning_rate)
    n_train = train_b.t_prev.shape[0]
    bs = min(config.batch_size, n_train)
    lp, lg = config.lambda_phys, config.lambda_guide

    best = {"val": np.inf, "epoch": -1, "weights": None, "A": None, "B": None}
    stall = 0
    for epoch in range(config.max_epochs):
        order = rng.permutation(n_train)
        sums = np.zeros(4)
        n_batches = 0
        for start in range(0, n_train, bs):
            idx = order[start : start + bs]
            mb = take(train_b, idx)
            drop_rng = rng if config.dropout_rate > 0 else None
            cache = _forward_full(weights, config, A, B, mb, dropout_rng=drop_rng,
                                  norm=norm)
            parts = _loss_from_cache(cache, mb, A, B, lp, lg)
            if not np.isfinite(parts.total):
                raise NonFiniteLoss(f"non-finite loss at epoch {epoch}, batch {n_batches}",
                                    epoch=epoch, batch=n_batches)
            grads = _backward_full(weights, config, A, B, mb, cache, lp, lg)
            flat = [g for pair in grads.weights for g in pair] + [grads.A_prime, grads.B_prime]
            adam.step(params, flat)
            if config.weight_decay > 0.0:
                for W, _b in weights:
                    W -= config.learning_rate * config.weight_decay * W
            if abs(np.linalg.det(B)) <= _DET_MIN:
                B_new = _project_invertible(B.copy())
                B[:] = B_new
            sums += np.array(parts)
            n_batches += 1
        means = sums / n_batches
        val = _loss_from_cache(
            _forward_full(weights, config, A, B, val_b, norm=norm), val_b, A, B, lp, lg
        )
        if not np.isfinite(val.total):
            raise NonFiniteLoss(f"non-finite validation loss at epoch {epoch}", epoch=epoch)
        history["train_total"].append(float(means[0]))
        history["train_data"].append(float(means[1]))
        history["train_phys"].append(float(means[2]))
        history["train_guide"].append(float(means[3]))
        history["val_total"].append(float(val.total))

        if val.total < best["val"] - _IMPROVE_TOL:
            best.update(val=val.total, epoch=epoch,
                        weights=[(W.copy(), b.copy()) for W, b in weights],
                        A=A.copy(), B=B.copy())
            stall = 0
        else:
            stall += 1
            if stall >= config.patience:
                break

    history["best_epoch"] = int(best["epoch"])
    model.weights = best["weights"]
    model.A_prime = best["A"]
    model.B_prime = best["B"]
    return model


def predict_dataset(model: TrainedModel, d: TraceDataset
                    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(p_final, p_physics, current-sample indices) over usable pairs."""
    batch, curr = make_batch(d, model.ambient_K)
    p_final, p_phys = forward(model, batch.t_prev, batch.t_curr, batch.p_est)
    return p_final, p_phys, curr


def dataset_sha256(d: TraceDataset) -> str:
    """Stable content hash of a dataset's numeric payload."""
    h = hashlib.sha256()
    h.update(",".join(d.unit_names).encode())
    h.update(d.source.encode())
    h.update(np.ascontiguousarray(d.times()).tobytes())
    h.update(np.ascontiguousarray(d.temps_K()).tobytes())
    h.update(np.ascontiguousarray(d.p_total_W()).tobytes())
    for s in d.samples:
        for v in (s.p_true_W, s.p_est_W):
            h.update(b"-" if v is None else np.ascontiguousarray(v).tobytes())
    return h.hexdigest()


# ---- checkpoint persistence ----

CHECKPOINT_VERSION = 1


def save_checkpoint(model: TrainedModel, path: str | Path) -> None:
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "unit_names": list(model.unit_names),
        "weights": [{"W": W.tolist(), "b": b.tolist()} for W, b in model.weights],
        "A_prime": model.A_prime.tolist(),
        "B_prime": model.B_prime.tolist(),
        "ambient_K": model.ambient_K,
        "dt_s": model.dt_s,
        "x_mean": None if model.x_mean is None else model.x_mean.tolist(),
        "x_std": None if model.x_std is None else model.x_std.tolist(),
        "history": model.history,
        "provenance": model.provenance,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path: str | Path) -> TrainedModel:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint format_version {version!r}")
    config = NetworkConfig.from_dict(doc["config"])
    weights = [(np.array(w["W"], dtype=np.float64), np.array(w["b"], dtype=np.float64))
               for w in doc["weights"]]
    dims = config.layer_dims
    if len(weights) != len(dims) - 1 or any(
        w.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],)
        for i, (w, b) in enumerate(weights)
    ):
        raise ConfigError("checkpoint weight shapes do not match its config")
    def arr(key: str) -> np.ndarray | None:
        v = doc.get(key)
        return None if v is None else np.array(v, dtype=np.float64)

    return TrainedModel(
        config=config,
        unit_names=tuple(doc["unit_names"]),
        weights=weights,
        A_prime=np.array(doc["A_prime"], dtype=np.float64),
        B_prime=np.array(doc["B_prime"], dtype=np.float64),
        ambient_K=float(doc["ambient_K"]),
        dt_s=float(doc["dt_s"]),
        x_mean=arr("x_mean"),
        x_std=arr("x_std"),
        history=doc.get("history", {}),
        provenance=doc.get("provenance", {}),
    )
