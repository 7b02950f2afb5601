"""Gradient-dominance measurements, the exact mixture posterior and image metrics."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.special import logsumexp

from .operators import DOUBLED, ForwardOperator, min_nonzero_singular
from .prior import LOG_2PI, GmmPrior, IsotropicGaussianPrior, ScoreModel, tweedie_denoise

# ---------------------------------------------------------------------------
# prior vs. likelihood gradients
# ---------------------------------------------------------------------------


def gradient_pair(model: ScoreModel, op: ForwardOperator, x_t, y, gamma: float,
                  sigma_t: float, convention: str = DOUBLED):
    """Likelihood and prior gradients at a noisy state ``x_t``.

    The likelihood term is evaluated at the Tweedie estimate ``x0_hat(x_t)``
    with the denoiser Jacobian replaced by the identity, i.e.
    ``c / gamma^2 * J(x0_hat)^T r`` with ``r = y - A(x0_hat)`` and ``c = 2``
    under the doubled convention (1 otherwise).

    Returns ``(g_lik, g_prior, r)``.
    """
    if not sigma_t > 0:
        raise ValueError(f"sigma_t must be positive, got {sigma_t}")
    x_t = np.asarray(x_t, dtype=float)
    x_hat = tweedie_denoise(model, x_t, sigma_t)
    r = np.asarray(y, dtype=float) - op.apply(x_hat)
    g_lik = op.vjp(x_hat, r) / gamma**2
    if convention == DOUBLED:
        g_lik = 2.0 * g_lik
    return g_lik, model.score(x_t, sigma_t), r


def inner_product_At(model, op, x_t, y, gamma, sigma_t, convention=DOUBLED) -> float:
    g_lik, g_prior, _ = gradient_pair(model, op, x_t, y, gamma, sigma_t, convention)
    return float(g_lik @ g_prior)


def kappa(model, op, x_t, y, gamma, sigma_t, convention=DOUBLED) -> float:
    """``||likelihood gradient|| / ||prior score||``; ``inf`` (with a warning) if the score vanishes."""
    g_lik, g_prior, _ = gradient_pair(model, op, x_t, y, gamma, sigma_t, convention)
    denom = np.linalg.norm(g_prior)
    if denom == 0:
        warnings.warn("prior score is zero; kappa is unbounded", RuntimeWarning, stacklevel=2)
        return float("inf")
    return float(np.linalg.norm(g_lik) / denom)


@dataclass(frozen=True)
class KappaBound:
    sigma_min_plus: float
    gamma: float
    lipschitz_C: float
    sigma_t: float
    residual_norm: float

    def __post_init__(self):
        for name in ("sigma_min_plus", "gamma", "lipschitz_C", "sigma_t", "residual_norm"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")


def kappa_lower_bound(kb: KappaBound) -> float:
    return kb.sigma_min_plus / (kb.gamma**2 * kb.lipschitz_C) * kb.sigma_t * kb.residual_norm


def kappa_bound_for(model, op, x_t, y, gamma, sigma_t, C) -> float:
    """Evaluate the lower bound at the same state used for ``kappa``."""
    _, _, r = gradient_pair(model, op, x_t, y, gamma, sigma_t)
    kb = KappaBound(min_nonzero_singular(op), gamma, C, sigma_t, float(np.linalg.norm(r)))
    return kappa_lower_bound(kb)


def lipschitz_ratios(model: ScoreModel, sigma: float, n_probes: int,
                     rng: np.random.Generator, rel_step: float = 1e-2) -> np.ndarray:
    """Observed ``||s(x) - s(x')|| / ||x - x'||`` over probe pairs.

    Half the pairs are independent points drawn from ``p_sigma``; the other
    half are local pairs ``x' = x + h u`` with ``h = rel_step * sigma``.
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    d = model.dim
    x = model.sample(rng, n_probes) + sigma * rng.standard_normal((n_probes, d))
    far = model.sample(rng, n_probes) + sigma * rng.standard_normal((n_probes, d))
    u = rng.standard_normal((n_probes, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    near = x + rel_step * sigma * u
    half = n_probes // 2
    other = np.concatenate([far[:half], near[half:]])
    ds = model.score(x, sigma) - model.score(other, sigma)
    dx = x - other
    return np.linalg.norm(ds, axis=1) / np.linalg.norm(dx, axis=1)


def lipschitz_estimate(model, sigma, n_probes=200, rng=None) -> float:
    """Empirical ``C`` with ``L_sigma <= C / sigma^2``: max probe ratio times ``sigma^2``."""
    rng = rng if rng is not None else np.random.default_rng(0)
    return float(lipschitz_ratios(model, sigma, n_probes, rng).max() * sigma**2)


# ---------------------------------------------------------------------------
# exact posterior for linear-Gaussian mixtures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PosteriorOracle:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self):
        if not np.isclose(np.sum(self.weights), 1.0, atol=1e-10):
            raise ValueError("posterior weights must sum to 1")

    @property
    def dim(self):
        return self.means.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def cov(self) -> np.ndarray:
        mu = self.mean()
        dev = self.means - mu
        within = np.einsum("k,kde->de", self.weights, self.covariances)
        between = np.einsum("k,kd,ke->de", self.weights, dev, dev)
        return within + between

    def as_prior(self) -> GmmPrior:
        return GmmPrior(self.weights, self.means, self.covariances)

    def log_density(self, x):
        return self.as_prior().log_density(x, 0.0)

    def responsibilities(self, x):
        return self.as_prior().responsibilities(x, 0.0)

    def sample(self, rng, n):
        return self.as_prior().sample(rng, n)

    def to_dict(self):
        return {
            "kind": "gmm",
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
        }


def _as_gmm(prior) -> GmmPrior:
    if isinstance(prior, GmmPrior):
        return prior
    if isinstance(prior, IsotropicGaussianPrior):
        return GmmPrior([1.0], prior.mu[None, :], prior.tau2 * np.eye(prior.dim)[None])
    raise TypeError(f"no closed-form posterior for {type(prior).__name__}")


def gmm_posterior_oracle(prior, op: ForwardOperator, y, gamma: float) -> PosteriorOracle:
    """Conjugate update of every mixture component plus evidence reweighting."""
    if not op.linear:
        raise TypeError(f"{op.name} is nonlinear; the mixture posterior is not closed-form")
    prior = _as_gmm(prior)
    A = op.matrix
    y = np.asarray(y, dtype=float)
    m = A.shape[0]
    means, covs, log_ev = [], [], []
    for w, mu, S in zip(prior.weights, prior.means, prior.covariances):
        SAt = S @ A.T
        innov = A @ SAt + gamma**2 * np.eye(m)
        L = np.linalg.cholesky(innov)
        resid = y - A @ mu
        gain_t = np.linalg.solve(innov, SAt.T)  # (A S A^T + g^2 I)^{-1} A S
        post_cov = S - SAt @ gain_t
        post_cov = 0.5 * (post_cov + post_cov.T)
        means.append(mu + gain_t.T @ resid)
        covs.append(post_cov)
        white = np.linalg.solve(L, resid)
        log_ev.append(
            np.log(w) - 0.5 * (white @ white) - np.sum(np.log(np.diag(L))) - 0.5 * m * LOG_2PI
        )
    log_ev = np.array(log_ev)
    weights = np.exp(log_ev - logsumexp(log_ev))
    return PosteriorOracle(weights, np.array(means), np.array(covs))


def moment_error(samples, oracle: PosteriorOracle) -> dict:
    """Compare empirical moments of ``samples`` (n, d) with the oracle.

    Component weights are estimated by averaging oracle responsibilities.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[0] < 2:
        raise ValueError("need at least 2 samples of shape (n, d)")
    n = samples.shape[0]
    emp_mean = samples.mean(axis=0)
    emp_cov = np.cov(samples, rowvar=False, bias=False).reshape(oracle.dim, oracle.dim)
    o_mean, o_cov = oracle.mean(), oracle.cov()
    emp_w = oracle.responsibilities(samples).mean(axis=0)
    cov_norm = np.linalg.norm(o_cov)
    return {
        "mean_err": float(np.linalg.norm(emp_mean - o_mean)),
        "mean_z": np.abs(emp_mean - o_mean) / np.sqrt(np.diag(emp_cov) / n),
        "cov_err": float(np.linalg.norm(emp_cov - o_cov)),
        "cov_rel_err": float(np.linalg.norm(emp_cov - o_cov) / cov_norm),
        "weight_err": float(np.max(np.abs(emp_w - oracle.weights))),
        "weights": emp_w,
        "n": n,
    }


# ---------------------------------------------------------------------------
# image metrics
# ---------------------------------------------------------------------------


def _same_shape(x, x_ref):
    x = np.asarray(x, dtype=float)
    x_ref = np.asarray(x_ref, dtype=float)
    if x.shape != x_ref.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_ref.shape}")
    return x, x_ref


def mse(x, x_ref) -> float:
    x, x_ref = _same_shape(x, x_ref)
    return float(np.mean((x - x_ref) ** 2))


def psnr(x, x_ref, peak: float = 1.0) -> float:
    if not peak > 0:
        raise ValueError("peak must be positive")
    err = mse(x, x_ref)
    if err == 0:
        return float("inf")
    return float(10.0 * np.log10(peak**2 / err))


def _gaussian_window(side: int, ndim: int, std: float = 1.5) -> np.ndarray:
    ax = np.arange(side) - (side - 1) / 2
    g = np.exp(-0.5 * (ax / std) ** 2)
    w = g
    for _ in range(ndim - 1):
        w = np.multiply.outer(w, g)
    return w / w.sum()


def ssim(x, x_ref, window: int | None = None, peak: float = 1.0,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean structural similarity with a Gaussian window (std 1.5).

    ``window`` defaults to ``min(7, smallest image side)``.
    """
    x, x_ref = _same_shape(x, x_ref)
    side = window or min(7, min(x.shape))
    w = _gaussian_window(side, x.ndim)
    filt = lambda a: ndimage.correlate(a, w, mode="reflect")  # noqa: E731
    mu_x, mu_y = filt(x), filt(x_ref)
    sxx = filt(x * x) - mu_x**2
    syy = filt(x_ref * x_ref) - mu_y**2
    sxy = filt(x * x_ref) - mu_x * mu_y
    c1, c2 = (k1 * peak) ** 2, (k2 * peak) ** 2
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def failure_rate(psnr_values, threshold: float = 25.0) -> float:
    """Fraction of reconstructions whose PSNR falls below ``threshold``."""
    v = np.asarray(psnr_values, dtype=float)
    return float(np.mean(v < threshold))


def residual_ratio(op, x, y, gamma) -> float:
    """``||y - A(x)|| / (gamma sqrt(m))``; close to 1 when x fits y to the noise level."""
    r = np.asarray(y) - op.apply(x)
    return float(np.linalg.norm(r) / (gamma * np.sqrt(r.size)))
