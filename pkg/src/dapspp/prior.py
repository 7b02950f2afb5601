"""Closed-form score models.

The analytic priors here stand in for a trained score network. Every model
exposes the score of its Gaussian-smoothed density

    p_sigma(x) = (p_0 * N(0, sigma^2 I))(x),

which is what a noise-conditioned network would approximate.
"""

from __future__ import annotations

import abc

import numpy as np

LOG_2PI = np.log(2.0 * np.pi)


def logsumexp(a, axis=-1, keepdims=False):
    """Max-shifted log-sum-exp over ``axis`` (finite inputs only)."""
    m = np.max(a, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True))
    return out if keepdims else np.squeeze(out, axis=axis)


class ScoreModel(abc.ABC):
    """Interface for noise-conditioned score models.

    Inputs ``x`` may be a single vector of shape ``(d,)`` or a batch of shape
    ``(n, d)``; outputs follow the same leading shape.
    """

    dim: int
    has_density: bool = False

    @abc.abstractmethod
    def score(self, x, sigma: float) -> np.ndarray:
        """Gradient of ``log p_sigma`` at ``x``."""

    def log_density(self, x, sigma: float):
        raise NotImplementedError(
            f"{type(self).__name__} has no closed-form log density"
        )

    @abc.abstractmethod
    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """Exact draw(s) from the clean prior ``p_0``."""

    def _check_x(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim not in (1, 2) or x.shape[-1] != self.dim:
            raise ValueError(
                f"expected trailing dimension {self.dim}, got shape {x.shape}"
            )
        return x


def _check_sigma(sigma, allow_zero=False):
    if allow_zero:
        if not sigma >= 0:
            raise ValueError(f"sigma must be >= 0, got {sigma}")
    elif not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")


class IsotropicGaussianPrior(ScoreModel):
    """``N(mu, tau2 * I)``; smoothing at ``sigma`` gives ``N(mu, (tau2 + sigma^2) I)``."""

    has_density = True

    def __init__(self, mu, tau2: float, dim: int | None = None):
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        if dim is not None and mu.size == 1 and dim > 1:
            mu = np.full(dim, mu[0])
        if mu.ndim != 1:
            raise ValueError("mu must be a vector")
        if not tau2 > 0:
            raise ValueError(f"tau2 must be positive, got {tau2}")
        self.mu = mu
        self.tau2 = float(tau2)
        self.dim = mu.size

    def score(self, x, sigma):
        _check_sigma(sigma)
        x = self._check_x(x)
        return -(x - self.mu) / (self.tau2 + sigma**2)

    def log_density(self, x, sigma):
        _check_sigma(sigma, allow_zero=True)
        x = self._check_x(x)
        var = self.tau2 + sigma**2
        sq = np.sum((x - self.mu) ** 2, axis=-1)
        return -0.5 * (sq / var + self.dim * (np.log(var) + LOG_2PI))

    def sample(self, rng, size=None):
        shape = (self.dim,) if size is None else (size, self.dim)
        return self.mu + np.sqrt(self.tau2) * rng.standard_normal(shape)

    def to_dict(self):
        return {"kind": "isotropic", "mu": self.mu.tolist(), "tau2": self.tau2}


class GmmPrior(ScoreModel):
    """Gaussian mixture ``sum_k w_k N(mu_k, Sigma_k)``.

    Each covariance is eigendecomposed once, so the smoothed covariance
    ``Sigma_k + sigma^2 I`` shares the eigenvectors and only the eigenvalues
    shift. Responsibilities are formed in log space.
    """

    has_density = True

    def __init__(self, weights, means, covariances):
        w = np.asarray(weights, dtype=float)
        means = np.asarray(means, dtype=float)
        covs = np.asarray(covariances, dtype=float)
        if means.ndim == 1:
            means = means[:, None]
        k, d = means.shape
        if covs.ndim == 1:  # per-component scalar variance in 1D
            covs = covs.reshape(k, 1, 1)
        if w.shape != (k,) or covs.shape != (k, d, d):
            raise ValueError(
                f"inconsistent shapes: weights {w.shape}, means {means.shape}, "
                f"covariances {covs.shape}"
            )
        if np.any(w <= 0) or not np.isclose(w.sum(), 1.0, rtol=0, atol=1e-10):
            raise ValueError("weights must be positive and sum to 1")
        if not np.allclose(covs, np.swapaxes(covs, 1, 2), rtol=0, atol=1e-12):
            raise ValueError("covariances must be symmetric")
        lam, vecs = np.linalg.eigh(covs)
        if np.any(lam <= 0):
            raise ValueError("covariances must be positive definite")

        self.weights = w / w.sum()
        self.means = means
        self.covariances = covs
        self.dim = d
        self.n_components = k
        self._log_w = np.log(self.weights)
        self._lam = lam  # (k, d)
        self._vecs = vecs  # (k, d, d); columns are eigenvectors
        self._vecs_t = np.ascontiguousarray(np.swapaxes(vecs, 1, 2))
        self._chol = np.linalg.cholesky(covs)

    def _component_terms(self, x, sigma):
        """Per-component log N(x; mu_k, Sigma_k + sigma^2 I) and scores."""
        diff = x[..., None, :] - self.means  # (..., k, d)
        k = self.n_components
        # per-component products go through BLAS; batched matmul/einsum do not
        coords = np.stack([diff[..., j, :] @ self._vecs[j] for j in range(k)], axis=-2)
        var = self._lam + sigma**2  # (k, d)
        scaled = coords / var
        maha = np.sum(coords * scaled, axis=-1)
        logdet = np.sum(np.log(var), axis=-1)
        log_n = -0.5 * (maha + logdet + self.dim * LOG_2PI)
        scores = -np.stack([scaled[..., j, :] @ self._vecs_t[j] for j in range(k)], axis=-2)
        return log_n, scores

    def responsibilities(self, x, sigma):
        x = self._check_x(x)
        log_n, _ = self._component_terms(x, sigma)
        logits = self._log_w + log_n
        return np.exp(logits - logsumexp(logits, axis=-1, keepdims=True))

    def score(self, x, sigma):
        _check_sigma(sigma)
        x = self._check_x(x)
        log_n, scores = self._component_terms(x, sigma)
        logits = self._log_w + log_n
        resp = np.exp(logits - logsumexp(logits, axis=-1, keepdims=True))
        return np.einsum("...k,...kd->...d", resp, scores)

    def log_density(self, x, sigma):
        _check_sigma(sigma, allow_zero=True)
        x = self._check_x(x)
        log_n, _ = self._component_terms(x, sigma)
        return logsumexp(self._log_w + log_n, axis=-1)

    def sample(self, rng, size=None):
        n = 1 if size is None else size
        comp = rng.choice(self.n_components, size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        out = self.means[comp] + np.einsum("nde,ne->nd", self._chol[comp], z)
        return out[0] if size is None else out

    def smoothed(self, sigma: float) -> "GmmPrior":
        """The mixture ``p_sigma`` as a clean prior in its own right."""
        _check_sigma(sigma, allow_zero=True)
        eye = np.eye(self.dim)
        return GmmPrior(self.weights, self.means, self.covariances + sigma**2 * eye)

    def to_dict(self):
        return {
            "kind": "gmm",
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
        }


def smooth_image_gmm(shape, n_components: int = 3, tau2: float = 0.02,
                     length_scale: float = 2.0, nugget: float = 1e-3,
                     seed: int = 0) -> GmmPrior:
    """Mixture of correlated Gaussians over small images.

    Each component has a squared-exponential covariance
    ``tau2 * exp(-|p - q|^2 / (2 l^2)) + nugget * I`` between pixel positions
    and a mean made of a few random blobs on a 0.5 background, clipped to [0, 1].
    """
    shape = tuple(int(s) for s in np.atleast_1d(shape))
    if not tau2 > 0 or not length_scale > 0 or not nugget > 0:
        raise ValueError("tau2, length_scale and nugget must be positive")
    rng = np.random.default_rng(seed)
    grid = np.stack(np.meshgrid(*[np.arange(s) for s in shape], indexing="ij"), -1)
    pos = grid.reshape(-1, len(shape)).astype(float)
    sq = np.sum((pos[:, None, :] - pos[None, :, :]) ** 2, axis=-1)
    d = pos.shape[0]
    cov = tau2 * np.exp(-0.5 * sq / length_scale**2) + nugget * np.eye(d)
    means = []
    for _ in range(n_components):
        img = np.full(d, 0.5)
        for _ in range(3):
            center = rng.uniform(0, np.array(shape) - 1)
            width = rng.uniform(1.0, 0.3 * max(shape))
            amp = rng.uniform(-0.4, 0.4)
            img += amp * np.exp(-0.5 * np.sum((pos - center) ** 2, axis=-1) / width**2)
        means.append(np.clip(img, 0.0, 1.0))
    weights = np.full(n_components, 1.0 / n_components)
    return GmmPrior(weights, np.array(means), np.repeat(cov[None], n_components, axis=0))


def tweedie_denoise(model: ScoreModel, x_t, sigma: float) -> np.ndarray:
    """Posterior-mean denoiser ``E[x_0 | x_t] = x_t + sigma^2 * score(x_t, sigma)``."""
    x_t = model._check_x(x_t)
    if not sigma >= 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return x_t.copy()
    return x_t + sigma**2 * model.score(x_t, sigma)


def score(model: ScoreModel, x, sigma: float) -> np.ndarray:
    return model.score(x, sigma)


def log_density(model: ScoreModel, x, sigma: float):
    return model.log_density(x, sigma)


def sample_prior(model: ScoreModel, rng: np.random.Generator, size=None) -> np.ndarray:
    return model.sample(rng, size)


def prior_from_dict(spec: dict) -> ScoreModel:
    kind = spec.get("kind")
    if kind == "isotropic":
        return IsotropicGaussianPrior(spec["mu"], spec["tau2"], dim=spec.get("dim"))
    if kind == "gmm":
        return GmmPrior(spec["weights"], spec["means"], spec["covariances"])
    if kind == "smooth_gmm":
        return smooth_image_gmm(
            spec["shape"], spec.get("n_components", 3), spec.get("tau2", 0.02),
            spec.get("length_scale", 2.0), spec.get("nugget", 1e-3), spec.get("seed", 0),
        )
    raise ValueError(f"unknown prior kind {kind!r}")
