"""Annealed E-M samplers: DAPS++, the interleaved DAPS baseline and DPS.

Cycle ``k`` (1-based) of an annealed run starts from a state at noise level
``sigmas[k-1]``, produces a clean estimate (E-step), refines it against the
measurement (M-step) and, unless it is the last cycle, re-noises to
``sigmas[k]``. A schedule of ``N`` levels therefore gives ``K = N - 1`` cycles.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as rngs
from .diagnostics import gradient_pair
from .odesolve import integrate_pf_ode
from .operators import Measurement
from .prior import ScoreModel, tweedie_denoise
from .refine import RefineConfig, mcmc_refine
from .schedule import NoiseSchedule, StepSizeSchedule, step_size

log = logging.getLogger(__name__)


class NonFiniteStateError(FloatingPointError):
    def __init__(self, cycle, stage):
        super().__init__(f"non-finite state at cycle {cycle} after {stage}")
        self.cycle = cycle
        self.stage = stage


@dataclass(frozen=True)
class SamplerConfig:
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)
    step_sizes: StepSizeSchedule = field(default_factory=StepSizeSchedule)
    refine: RefineConfig = field(default_factory=lambda: RefineConfig(gamma=0.01))
    sigma_bar: float = 0.5
    ode_steps_below_bar: int = 1
    ode_method: str = "rk4"
    seed: int = 0
    diagnostics: bool = True
    keep_snapshots: bool = False

    def __post_init__(self):
        s = self.schedule
        if not s.sigma_min < self.sigma_bar < s.sigma_max:
            raise ValueError(
                f"sigma_bar={self.sigma_bar} must lie in (sigma_min, sigma_max) = "
                f"({s.sigma_min}, {s.sigma_max})"
            )
        if int(self.ode_steps_below_bar) != self.ode_steps_below_bar or self.ode_steps_below_bar < 1:
            raise ValueError("ode_steps_below_bar must be a positive integer")
        if self.ode_method not in ("euler", "rk4"):
            raise ValueError(f"unknown ode_method {self.ode_method!r}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @property
    def n_cycles(self) -> int:
        return self.schedule.n_steps - 1

    def with_seed(self, seed: int) -> "SamplerConfig":
        return replace(self, seed=seed)


@dataclass
class CycleRecord:
    cycle: int
    sigma: float
    nfe: int
    residual_norm: float
    kappa: float = float("nan")
    inner_product: float = float("nan")
    score_norm: float = float("nan")
    estep: str = ""


@dataclass
class Trace:
    records: list = field(default_factory=list)
    refine_rows: list = field(default_factory=list)  # (cycle, step, residual, grad)
    snapshots: list = field(default_factory=list)  # state entering each cycle
    prior_evals: int = 0

    @property
    def nfe(self) -> int:
        return self.records[-1].nfe if self.records else 0

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])


def estep(model: ScoreModel, x_in, sigma_in: float, sigma_bar: float,
          ode_steps: int = 1, method: str = "rk4"):
    """Tweedie above ``sigma_bar``; a short probability-flow solve at or below it."""
    if not sigma_in > 0:
        raise ValueError(f"sigma_in must be positive, got {sigma_in}")
    if sigma_in > sigma_bar:
        return tweedie_denoise(model, x_in, sigma_in), 1
    return integrate_pf_ode(model, x_in, sigma_in, 0.0, ode_steps, method)


def renoise(x0_tilde, sigma_next: float, rng: np.random.Generator | None = None,
            noise=None) -> np.ndarray:
    if not sigma_next > 0:
        raise ValueError(f"sigma_next must be positive, got {sigma_next}")
    x0_tilde = np.asarray(x0_tilde, dtype=float)
    if noise is None:
        noise = rng.standard_normal(x0_tilde.shape)
    return x0_tilde + sigma_next * noise


def cycle_step_size(cfg: SamplerConfig, k: int) -> float:
    """M-step size for cycle ``k``: ``eta0`` at the first cycle, ``eta0 * delta`` at the last."""
    K = cfg.n_cycles
    return step_size(cfg.step_sizes, (K - k) / K, 1.0)


def _check_finite(x, cycle, stage):
    if not np.all(np.isfinite(x)):
        raise NonFiniteStateError(cycle, stage)


def _annealed_em(model, measurement, cfg, estep_fn, refine_cfg, label):
    sigmas = cfg.schedule.sigmas()
    K = cfg.n_cycles
    d = measurement.operator.in_dim
    trace = Trace()
    x_in = sigmas[0] * rngs.stream(cfg.seed, "init").standard_normal(d)
    nfe = 0
    x_tilde = x_in
    for k in range(1, K + 1):
        sigma_in = float(sigmas[k - 1])
        x_hat, cost, branch = estep_fn(x_in, sigma_in)
        nfe += cost
        _check_finite(x_hat, k, "E-step")

        rcfg = replace(refine_cfg, eta=cycle_step_size(cfg, k))
        x_tilde, rtrace = mcmc_refine(
            x_hat, measurement, model, rcfg, rngs.stream(cfg.seed, "refine", k)
        )
        trace.prior_evals += rtrace.nfe
        _check_finite(x_tilde, k, "M-step")

        rec = CycleRecord(
            cycle=k, sigma=sigma_in, nfe=nfe,
            residual_norm=rtrace.residual_norms[-1], estep=branch,
        )
        if cfg.diagnostics:
            g_lik, g_prior, _ = gradient_pair(
                model, measurement.operator, x_in, measurement.y,
                refine_cfg.gamma or measurement.gamma, sigma_in,
            )
            n_prior = np.linalg.norm(g_prior)
            rec.kappa = float(np.linalg.norm(g_lik) / n_prior) if n_prior > 0 else float("inf")
            rec.inner_product = float(g_lik @ g_prior)
            rec.score_norm = float(np.linalg.norm(model.score(x_hat, cfg.schedule.sigma_min)))
        trace.records.append(rec)
        trace.refine_rows += [(k, *row) for row in rtrace.rows()]
        if cfg.keep_snapshots:
            trace.snapshots.append(np.array(x_in, copy=True))

        if k < K:
            x_in = renoise(x_tilde, float(sigmas[k]), rngs.stream(cfg.seed, "renoise", k))
    log.debug("%s finished: %d cycles, NFE %d", label, K, nfe)
    return x_tilde, trace


def run_dapspp(model: ScoreModel, measurement: Measurement, cfg: SamplerConfig):
    """DAPS++: prior-only E-step, likelihood-only Langevin M-step, re-noise."""

    def e(x_in, sigma_in):
        x, cost = estep(model, x_in, sigma_in, cfg.sigma_bar,
                        cfg.ode_steps_below_bar, cfg.ode_method)
        return x, cost, "tweedie" if sigma_in > cfg.sigma_bar else "ode"

    refine_cfg = replace(cfg.refine, sigma_ref=cfg.schedule.sigma_min)
    return _annealed_em(model, measurement, cfg, e, refine_cfg, "DAPS++")


def run_daps_baseline(model: ScoreModel, measurement: Measurement, cfg: SamplerConfig,
                      ode_steps: int = 2, n_refine: int = 100, with_prior: bool = True):
    """Interleaved DAPS: a few Euler steps at every level, long Langevin M-step.

    Only E-step score evaluations count as NFE; the prior term inside the
    M-step is tallied separately in ``trace.prior_evals``.
    """

    def e(x_in, sigma_in):
        x, cost = integrate_pf_ode(model, x_in, sigma_in, 0.0, ode_steps, "euler")
        return x, cost, "euler"

    refine_cfg = replace(
        cfg.refine, n_steps=n_refine, with_prior=with_prior,
        sigma_ref=cfg.schedule.sigma_min,
    )
    return _annealed_em(model, measurement, cfg, e, refine_cfg, "DAPS")


def _dps_update(model, measurement, x_t, sigma_t, sigma_next, eta_t, z):
    """Coupled one-line update: prior denoising, guidance and noise together."""
    op, y = measurement.operator, measurement.y
    s = model.score(x_t, sigma_t)
    x_hat = x_t + sigma_t**2 * s
    grad_sq = -2.0 * op.vjp(x_hat, y - op.apply(x_hat))  # grad of ||y - A(x0)||^2
    return x_t + sigma_t**2 * s + sigma_next * z - eta_t * grad_sq


def _em_update(model, measurement, x_t, sigma_t, sigma_next, eta_t, z):
    """The same step written as E-step, a single noise-free M-step, then re-noise."""
    op, y = measurement.operator, measurement.y
    x_hat = tweedie_denoise(model, x_t, sigma_t)
    x_tilde = x_hat + eta_t * 2.0 * op.vjp(x_hat, y - op.apply(x_hat))
    return x_tilde + sigma_next * z


def run_dps_baseline(model: ScoreModel, measurement: Measurement, cfg: SamplerConfig,
                     eta_scale: float | None = None):
    """DPS-style coupled sampler over the same schedule.

    The guidance step is ``eta_k * eta_scale`` with ``eta_k`` from the
    step-size schedule; ``eta_scale`` defaults to ``1 / gamma_eff^2`` so the
    per-step pull matches the M-step of the E-M samplers.
    """
    gamma = cfg.refine.gamma or measurement.gamma
    if eta_scale is None:
        eta_scale = 1.0 / gamma**2
    sigmas = cfg.schedule.sigmas()
    K = cfg.n_cycles
    d = measurement.operator.in_dim
    trace = Trace()
    x = sigmas[0] * rngs.stream(cfg.seed, "init").standard_normal(d)
    nfe = 0
    for k in range(1, K + 1):
        sigma_t = float(sigmas[k - 1])
        sigma_next = float(sigmas[k]) if k < K else 0.0
        z = rngs.stream(cfg.seed, "renoise", k).standard_normal(d)
        x = _dps_update(model, measurement, x, sigma_t, sigma_next, cycle_step_size(cfg, k) * eta_scale, z)
        nfe += 1
        _check_finite(x, k, "DPS update")
        r = measurement.y - measurement.operator.apply(x)
        trace.records.append(CycleRecord(k, sigma_t, nfe, float(np.linalg.norm(r)), estep="dps"))
    return x, trace


def dps_equivalence_check(model: ScoreModel, measurement: Measurement, x_t,
                          sigma_t: float, sigma_next: float, eta_t: float, seed: int):
    """Evaluate the coupled and the E-M forms of one DPS step with a shared draw."""
    x_t = np.asarray(x_t, dtype=float)
    z = rngs.stream(seed, "dps-equivalence").standard_normal(x_t.shape)
    coupled = _dps_update(model, measurement, x_t, sigma_t, sigma_next, eta_t, z)
    decomposed = _em_update(model, measurement, x_t, sigma_t, sigma_next, eta_t, z)
    return coupled, decomposed, float(np.max(np.abs(coupled - decomposed)))
