"""Decoupled E-M diffusion sampling for Bayesian inverse problems, with closed-form priors."""

from .diagnostics import (
    KappaBound,
    PosteriorOracle,
    gmm_posterior_oracle,
    inner_product_At,
    kappa,
    kappa_lower_bound,
    lipschitz_estimate,
    moment_error,
    mse,
    psnr,
    ssim,
)
from .odesolve import OdeState, drift, euler_step, integrate_pf_ode, rk4_step
from .operators import (
    Conv1D,
    Conv2D,
    DownsampleAvg,
    ForwardOperator,
    HdrClip,
    Identity,
    MaskInpaint,
    MatrixOperator,
    Measurement,
    PhaseMagnitude,
    likelihood_grad,
    min_nonzero_singular,
    residual,
)
from .prior import GmmPrior, IsotropicGaussianPrior, ScoreModel, tweedie_denoise
from .refine import RefineConfig, mcmc_refine, ula_step, warm_start_compare
from .sampler import (
    SamplerConfig,
    Trace,
    dps_equivalence_check,
    estep,
    renoise,
    run_daps_baseline,
    run_dapspp,
    run_dps_baseline,
)
from .schedule import NoiseSchedule, StepSizeSchedule, build_schedule, sigma_threshold, step_size

__version__ = "0.1.0"
