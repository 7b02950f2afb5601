"""Noise-level annealing schedules and M-step step sizes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    sigma_max: float = 100.0
    sigma_min: float = 0.1
    n_steps: int = 51
    rho: float = -7.0

    def __post_init__(self):
        _check_schedule_args(self.sigma_max, self.sigma_min, self.n_steps, self.rho)

    def sigmas(self) -> np.ndarray:
        return build_schedule(self.sigma_max, self.sigma_min, self.n_steps, self.rho)


@dataclass(frozen=True)
class StepSizeSchedule:
    """Linear decay from ``eta0`` (at t = T) down to ``eta0 * delta`` (at t = 0)."""

    eta0: float = 1e-4
    delta: float = 1e-2

    def __post_init__(self):
        if not self.eta0 > 0:
            raise ValueError(f"eta0 must be positive, got {self.eta0}")
        if not 0 < self.delta <= 1:
            raise ValueError(f"delta must lie in (0, 1], got {self.delta}")


def _check_schedule_args(sigma_max, sigma_min, n_steps, rho):
    if rho == 0:
        raise ValueError("rho must be nonzero")
    if not sigma_min > 0:
        raise ValueError(f"sigma_min must be positive, got {sigma_min}")
    if not sigma_max > sigma_min:
        raise ValueError(
            f"sigma_max ({sigma_max}) must exceed sigma_min ({sigma_min})"
        )
    if int(n_steps) != n_steps or n_steps < 2:
        raise ValueError(f"n_steps must be an integer >= 2, got {n_steps}")


def build_schedule(sigma_max: float, sigma_min: float, n_steps: int, rho: float) -> np.ndarray:
    """Polynomially warped noise levels from ``sigma_max`` down to ``sigma_min``.

    The levels are uniform in ``sigma ** (1 / rho)``. Positive ``rho`` keeps
    the sequence at high noise for longer; negative ``rho`` drops quickly and
    spends most of the steps near ``sigma_min``.
    """
    _check_schedule_args(sigma_max, sigma_min, n_steps, rho)
    n_steps = int(n_steps)
    inv = 1.0 / rho
    frac = np.arange(n_steps) / (n_steps - 1)
    sigmas = (sigma_max**inv + frac * (sigma_min**inv - sigma_max**inv)) ** rho
    # pin endpoints against pow round-off
    sigmas[0] = sigma_max
    sigmas[-1] = sigma_min
    return sigmas


def step_size(sched: StepSizeSchedule, t: float, T: float) -> float:
    if not T > 0:
        raise ValueError(f"T must be positive, got {T}")
    if not 0 <= t <= T:
        raise ValueError(f"t must lie in [0, T] = [0, {T}], got {t}")
    return sched.eta0 * (sched.delta + (t / T) * (1.0 - sched.delta))


def sigma_threshold(gamma: float, multiplier: float = 10.0) -> float:
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if not multiplier > 0:
        raise ValueError(f"multiplier must be positive, got {multiplier}")
    return multiplier * gamma


def schedule_to_csv(sigmas) -> str:
    lines = ["index,sigma"]
    lines += [f"{i},{float(s)!r}" for i, s in enumerate(sigmas)]
    return "\n".join(lines) + "\n"
