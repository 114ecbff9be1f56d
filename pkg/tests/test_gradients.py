"""Analytic gradients against central finite differences.

The finite-difference objective re-evaluates the public loss (plus the
0.5 * wd * ||W||^2 regulariser that backward() folds in on request), so
the two sides share no derivative code.
"""

from __future__ import annotations

import numpy as np
import pytest

from powerid import (
    Batch,
    NetworkConfig,
    TrainedModel,
    backward,
    init_weights,
    loss,
)

FD_H = 1e-5
REL_TOL = 1e-4


def _objective(model: TrainedModel, batch: Batch, wd: float) -> float:
    total = loss(model, batch).total
    if wd > 0.0:
        total += 0.5 * wd * sum(float(np.sum(W**2)) for W, _ in model.weights)
    return total


def _fd_into(model: TrainedModel, batch: Batch, wd: float, arr: np.ndarray) -> np.ndarray:
    """Central differences for one parameter array, perturbed in place."""
    grad = np.zeros_like(arr)
    flat, gflat = arr.ravel(), grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + FD_H
        hi = _objective(model, batch, wd)
        flat[i] = orig - FD_H
        lo = _objective(model, batch, wd)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * FD_H)
    return grad


def _rel_err(analytic: np.ndarray, fd: np.ndarray) -> float:
    scale = np.maximum(1e-6, np.maximum(np.abs(analytic), np.abs(fd)))
    return float(np.max(np.abs(analytic - fd) / scale))


def random_setup(rng: np.random.Generator, n_layers: int, activation: str,
                 standardise: bool) -> tuple[TrainedModel, Batch]:
    n = int(rng.integers(1, 4))
    widths = tuple(int(w) for w in rng.integers(2, 7, size=n_layers))
    config = NetworkConfig(
        n_units=n, hidden_widths=widths, activation=activation,
        lambda_phys=float(10 ** rng.uniform(-2, 0.5)),
        lambda_guide=float(10 ** rng.uniform(-2, 0.5)),
    )
    A = 0.7 * np.eye(n) + 0.1 * rng.random((n, n))
    B = np.eye(n) + 0.2 * rng.random((n, n))
    x_mean = rng.normal(0, 1, 3 * n) if standardise else None
    x_std = (0.5 + rng.random(3 * n)) if standardise else None
    model = TrainedModel(config, tuple(f"u{i}" for i in range(n)),
                         init_weights(config, int(rng.integers(0, 2**31))),
                         A, B, 298.15, 1.0, x_mean=x_mean, x_std=x_std)
    rows = int(rng.integers(3, 9))
    batch = Batch(rng.normal(0, 3, (rows, n)), rng.normal(0, 3, (rows, n)),
                  rng.normal(0, 1, (rows, n)), rng.normal(0, 1, (rows, n)))
    return model, batch


def check_all_groups(model: TrainedModel, batch: Batch, wd: float) -> float:
    grads = backward(model, batch, weight_decay=wd)
    worst = 0.0
    for li, (W, b) in enumerate(model.weights):
        gW, gb = grads.weights[li]
        worst = max(worst, _rel_err(gW, _fd_into(model, batch, wd, W)))
        worst = max(worst, _rel_err(gb, _fd_into(model, batch, wd, b)))
    worst = max(worst, _rel_err(grads.A_prime, _fd_into(model, batch, wd, model.A_prime)))
    worst = max(worst, _rel_err(grads.B_prime, _fd_into(model, batch, wd, model.B_prime)))
    return worst


KINK_MARGIN = 1e-3  # comfortably above FD_H times any Jacobian in these setups


def _relu_kink_margin(model: TrainedModel, batch: Batch) -> float:
    """Smallest hidden pre-activation magnitude; inf for 0-layer nets."""
    x = np.concatenate([batch.t_prev, batch.t_curr, batch.p_est], axis=-1)
    if model.x_mean is not None:
        x = (x - model.x_mean) / model.x_std
    h, margin = x, np.inf
    for W, b in model.weights[:-1]:
        z = h @ W + b
        margin = min(margin, float(np.min(np.abs(z))))
        h = np.maximum(z, 0.0)
    return margin


def draw_smooth_setup(rng: np.random.Generator, n_layers: int, activation: str,
                      standardise: bool) -> tuple[TrainedModel, Batch]:
    """random_setup, rejecting relu draws with a pre-activation near zero.

    The loss is not differentiable at relu's corner; a central
    difference straddling it measures the subgradient ambiguity, not
    backward(), so such draws are discarded.
    """
    while True:
        model, batch = random_setup(rng, n_layers, activation, standardise)
        if activation != "relu" or _relu_kink_margin(model, batch) > KINK_MARGIN:
            return model, batch


@pytest.mark.parametrize("n_layers", [0, 1, 2, 3])
@pytest.mark.parametrize("activation", ["relu", "tanh", "gelu"])
def test_gradients_match_finite_differences(n_layers, activation):
    rng = np.random.default_rng(1000 + 10 * n_layers + len(activation))
    for trial in range(3):
        wd = 0.01 if trial % 2 else 0.0
        model, batch = draw_smooth_setup(rng, n_layers, activation,
                                         standardise=trial == 2)
        worst = check_all_groups(model, batch, wd)
        assert worst <= REL_TOL, (
            f"layers={n_layers} act={activation} trial={trial}: rel err {worst:.3e}")


def test_gradient_a_prime_matches_independent_physics_derivation():
    # zero network: p_final is the physics inversion, so dL/dA' has the
    # closed form -(2/N) sum_ij r_ij Binv_ja t_prev_ib, written out as
    # loops below rather than reusing any package expression
    rng = np.random.default_rng(77)
    n = 2
    config = NetworkConfig(n_units=n, hidden_widths=(), lambda_phys=0.3,
                           lambda_guide=0.4)
    weights = [(np.zeros((3 * n, n)), np.zeros(n))]
    A = np.array([[0.85, 0.03], [0.02, 0.8]])
    B = np.array([[1.0, 0.1], [0.05, 0.9]])
    model = TrainedModel(config, ("u0", "u1"), weights, A, B, 298.15, 1.0)
    N = 6
    batch = Batch(rng.normal(0, 3, (N, n)), rng.normal(0, 3, (N, n)),
                  rng.normal(0, 1, (N, n)), rng.normal(0, 1, (N, n)))

    binv = np.linalg.inv(B)
    p_phys = (batch.t_curr - batch.t_prev @ A.T) @ binv.T
    r = p_phys - batch.p_true
    ref = np.zeros((n, n))
    for a in range(n):
        for b in range(n):
            acc = 0.0
            for i in range(N):
                for j in range(n):
                    acc += r[i, j] * binv[j, a] * batch.t_prev[i, b]
            ref[a, b] = -(2.0 / N) * acc

    grads = backward(model, batch)
    assert np.allclose(grads.A_prime, ref, rtol=0, atol=1e-12)


def test_gradients_vanish_at_perfect_fit():
    # true matrices, zero network, consistent data: every residual is
    # zero, so every gradient must be exactly zero
    n = 2
    A = np.array([[0.9, 0.02], [0.02, 0.9]])
    B = np.array([[1.0, 0.1], [0.05, 0.9]])
    rng = np.random.default_rng(8)
    t_prev = rng.normal(0, 5, (10, n))
    p_true = rng.random((10, n)) + 0.5
    t_curr = t_prev @ A.T + p_true @ B.T
    config = NetworkConfig(n_units=n, hidden_widths=(4,))
    dims = config.layer_dims
    weights = [(np.zeros((dims[i], dims[i + 1])), np.zeros(dims[i + 1]))
               for i in range(len(dims) - 1)]
    model = TrainedModel(config, ("u0", "u1"), weights, A, B, 298.15, 1.0)
    batch = Batch(t_prev, t_curr, p_true.copy(), p_true)

    grads = backward(model, batch)
    assert np.max(np.abs(grads.A_prime)) < 1e-12
    assert np.max(np.abs(grads.B_prime)) < 1e-12
    for gW, gb in grads.weights:
        assert np.max(np.abs(gW)) < 1e-12
        assert np.max(np.abs(gb)) < 1e-12


def test_weight_decay_adds_exactly_wd_times_weights():
    rng = np.random.default_rng(4)
    config = NetworkConfig(n_units=2, hidden_widths=(6, 3), activation="relu")
    model = TrainedModel(config, ("u0", "u1"), init_weights(config, 11),
                         0.8 * np.eye(2), np.eye(2), 298.15, 1.0)
    batch = Batch(rng.normal(0, 2, (5, 2)), rng.normal(0, 2, (5, 2)),
                  rng.normal(0, 1, (5, 2)), rng.normal(0, 1, (5, 2)))
    plain = backward(model, batch, weight_decay=0.0)
    decayed = backward(model, batch, weight_decay=0.02)
    for (gW0, gb0), (gW1, gb1), (W, _b) in zip(plain.weights, decayed.weights,
                                               model.weights):
        assert np.allclose(gW1 - gW0, 0.02 * W, rtol=0, atol=1e-15)
        assert np.array_equal(gb0, gb1)  # biases are never decayed
    assert np.array_equal(plain.A_prime, decayed.A_prime)
    assert np.array_equal(plain.B_prime, decayed.B_prime)


def test_gradient_shapes_match_parameters():
    config = NetworkConfig(n_units=3, hidden_widths=(5, 4))
    model = TrainedModel(config, ("a", "b", "c"), init_weights(config, 0),
                         0.8 * np.eye(3), np.eye(3), 298.15, 1.0)
    rng = np.random.default_rng(1)
    batch = Batch(rng.normal(0, 1, (4, 3)), rng.normal(0, 1, (4, 3)),
                  rng.normal(0, 1, (4, 3)), rng.normal(0, 1, (4, 3)))
    grads = backward(model, batch)
    assert len(grads.weights) == len(model.weights)
    for (gW, gb), (W, b) in zip(grads.weights, model.weights):
        assert gW.shape == W.shape
        assert gb.shape == b.shape
    assert grads.A_prime.shape == (3, 3)
    assert grads.B_prime.shape == (3, 3)
