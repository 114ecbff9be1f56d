"""Shared fixtures: small models and synthetic traces reused across files."""

from __future__ import annotations

import numpy as np
import pytest

from powerid import (
    MisspecSpec,
    PowerSchedule,
    ThermalModel,
    estimate_dataset,
    identify_supervised,
    simulate,
)


@pytest.fixture
def model2() -> ThermalModel:
    return ThermalModel(
        unit_names=("cpu", "gpu"),
        A=np.array([[0.9, 0.02], [0.02, 0.9]]),
        B=np.array([[1.0, 0.1], [0.05, 0.9]]),
    )


@pytest.fixture
def linear_trace(model2) -> "TraceDataset":
    sched = PowerSchedule("random_walk", 400, levels=np.array([1.0, 1.5]),
                          walk_sd_W=0.15, p_max_W=3.0)
    return simulate(model2, sched, seed=3)


@pytest.fixture(scope="session")
def misspec_bundle():
    """(true model, identified model, trace with physics estimates).

    Quadratic leakage makes the linear model structurally wrong, so a
    residual network has something real to learn. Session-scoped: the
    2000-sample simulation and the identification are shared by every
    training test.
    """
    true_model = ThermalModel(
        unit_names=("cpu", "gpu"),
        A=np.array([[0.8, 0.02], [0.02, 0.8]]),
        B=np.array([[1.0, 0.1], [0.05, 0.9]]),
    )
    sched = PowerSchedule("random_walk", 2000, levels=np.array([1.0, 1.5]),
                          walk_sd_W=0.15, p_max_W=3.0)
    raw = simulate(true_model, sched, MisspecSpec(leakage_quad_coeff=2e-3), seed=11)
    ident = identify_supervised(raw)
    est = estimate_dataset(ident, raw)
    return true_model, ident, est
