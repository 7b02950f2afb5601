"""Probability-flow ODE integration in the sigma(t) = t parameterization.

The flow ``dx/dsigma = -sigma * score(x, sigma)`` transports the smoothed
density ``p_sigma`` onto ``p_0`` as sigma decreases. Steppers below always
move sigma downwards by a positive step ``h``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .prior import ScoreModel

SIGMA_FLOOR = 1e-3
METHODS = ("euler", "rk4")

DriftFn = Callable[[np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class OdeState:
    x: np.ndarray
    sigma: float

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


def drift(model: ScoreModel, x, sigma: float) -> np.ndarray:
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    return -sigma * model.score(x, sigma)


def _model_drift(model):
    def f(x, sigma):
        # sigma * score -> 0 as sigma -> 0 for any smooth clean density
        if sigma == 0:
            return np.zeros_like(x)
        return drift(model, x, sigma)

    return f


def _check_step(state: OdeState, h: float):
    if not h > 0:
        raise ValueError(f"step size must be positive, got {h}")
    if state.sigma - h < -1e-12 * max(1.0, state.sigma):
        raise ValueError(
            f"step h={h} overshoots sigma=0 from sigma={state.sigma}"
        )


def euler_step(model: ScoreModel | None, state: OdeState, h: float,
               drift_fn: DriftFn | None = None) -> OdeState:
    """One explicit Euler step from ``sigma`` to ``sigma - h`` (1 evaluation)."""
    _check_step(state, h)
    f = drift_fn or _model_drift(model)
    x = np.asarray(state.x, dtype=float)
    x_new = x - h * f(x, state.sigma)
    return OdeState(x_new, max(state.sigma - h, 0.0))


def rk4_step(model: ScoreModel | None, state: OdeState, h: float,
             drift_fn: DriftFn | None = None) -> OdeState:
    """Classical four-stage Runge-Kutta step from ``sigma`` to ``sigma - h``.

    Uses exactly four drift evaluations, at sigma, sigma - h/2 (twice) and
    sigma - h.
    """
    _check_step(state, h)
    f = drift_fn or _model_drift(model)
    x = np.asarray(state.x, dtype=float)
    s = state.sigma
    s_mid = s - 0.5 * h
    s_end = max(s - h, 0.0)
    k1 = f(x, s)
    k2 = f(x - 0.5 * h * k1, s_mid)
    k3 = f(x - 0.5 * h * k2, s_mid)
    k4 = f(x - h * k3, s_end)
    x_new = x - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return OdeState(x_new, s_end)


_STEPPERS = {"euler": (euler_step, 1), "rk4": (rk4_step, 4)}


def integrate_pf_ode(model: ScoreModel | None, x_start, sigma_start: float,
                     sigma_end: float, n_steps: int, method: str = "rk4",
                     drift_fn: DriftFn | None = None,
                     sigma_floor: float = SIGMA_FLOOR) -> tuple[np.ndarray, int]:
    """Integrate the flow over a uniform sigma grid.

    Returns the end state and the number of score evaluations consumed.
    ``sigma_end`` is raised to ``sigma_floor`` so the score is never queried
    at zero noise.
    """
    if method not in _STEPPERS:
        raise ValueError(f"unknown ODE method {method!r}; expected one of {METHODS}")
    if int(n_steps) != n_steps or n_steps < 1:
        raise ValueError(f"n_steps must be a positive integer, got {n_steps}")
    sigma_end = max(sigma_end, sigma_floor)
    x = np.array(x_start, dtype=float)
    if not sigma_start > sigma_end:
        return x, 0
    step, cost = _STEPPERS[method]
    grid = np.linspace(sigma_start, sigma_end, int(n_steps) + 1)
    state = OdeState(x, float(sigma_start))
    for i in range(int(n_steps)):
        h = grid[i] - grid[i + 1]
        state = step(model, OdeState(state.x, float(grid[i])), h, drift_fn)
    return state.x, cost * int(n_steps)
