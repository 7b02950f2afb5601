import numpy as np
import pytest

from dapspp import rng as rngs
from dapspp.operators import EXACT_SCORE, Identity, MatrixOperator, Measurement
from dapspp.prior import IsotropicGaussianPrior, smooth_image_gmm
from dapspp.refine import (
    RefineConfig,
    likelihood_lipschitz,
    mcmc_refine,
    prior_drift_bound,
    ula_step,
    warm_start_compare,
)

from .helpers import task_problem


def test_ula_deterministic_part():
    assert ula_step(np.array([1.0]), np.array([-1.0]), 0.1, noise=np.zeros(1))[0] == pytest.approx(0.9)


def test_ula_pure_noise_increment():
    xi = np.array([0.3, -1.2])
    x = np.array([5.0, 6.0])
    np.testing.assert_allclose(ula_step(x, np.zeros(2), 0.02, noise=xi) - x, np.sqrt(0.04) * xi,
                               rtol=0, atol=1e-15)


def test_ula_stationary_variance():
    # 1000 parallel chains x 1000 steps on N(0, 1); AR(1) variance 1 / (1 - eta / 2)
    eta = 0.1
    rng = np.random.default_rng(0)
    x = rng.standard_normal(1000)
    for _ in range(200):  # burn-in, mixing time ~ 1 / eta
        x = ula_step(x, -x, eta, rng)
    acc = []
    for _ in range(1000):
        x = ula_step(x, -x, eta, rng)
        acc.append(x)
    var = np.var(np.concatenate(acc))
    assert var == pytest.approx(1 / (1 - eta / 2), rel=0.05)
    assert round(1 / (1 - eta / 2), 4) == 1.0526


def test_ula_rejects_bad_input():
    with pytest.raises(ValueError):
        ula_step(np.zeros(2), np.zeros(2), 0.0, noise=np.zeros(2))
    with pytest.raises(ValueError):
        ula_step(np.zeros(2), np.zeros(3), 0.1, noise=np.zeros(2))


def test_zero_steps_return_input():
    meas = Measurement(np.ones(3), 0.1, Identity(3))
    x0 = np.array([0.2, 0.4, 0.6])
    z, tr = mcmc_refine(x0, meas, None, RefineConfig(n_steps=0), np.random.default_rng(0))
    np.testing.assert_array_equal(z, x0)
    assert tr.residual_norms == [pytest.approx(np.linalg.norm(1 - x0))]
    assert tr.rows() == []


def test_exact_recovery_on_identity():
    gamma = 0.01
    y = np.random.default_rng(1).uniform(-1, 1, 16)
    meas = Measurement(y, gamma, Identity(16))
    cfg = RefineConfig(n_steps=2000, eta=1e-5, grad_convention=EXACT_SCORE)
    z, tr = mcmc_refine(np.zeros(16), meas, None, cfg, np.random.default_rng(2))
    assert np.all(np.abs(z - y) <= 3 * gamma)
    assert len(tr.residual_norms) == 2001 and len(tr.rows()) == 2000


def test_prior_term_is_exactly_eta_times_score():
    model = smooth_image_gmm((4, 4), n_components=2, seed=3)
    op = MatrixOperator(np.random.default_rng(4).standard_normal((6, 16)))
    meas = Measurement(np.random.default_rng(5).standard_normal(6), 0.05, op)
    x0 = np.random.default_rng(6).uniform(0, 1, 16)
    eta, sigma_ref = 1e-4, 0.1
    base = RefineConfig(n_steps=1, eta=eta, sigma_ref=sigma_ref)
    with_p = RefineConfig(n_steps=1, eta=eta, sigma_ref=sigma_ref, with_prior=True)
    a, _ = mcmc_refine(x0, meas, model, base, rngs.stream(7, "refine", 1))
    b, tr = mcmc_refine(x0, meas, model, with_p, rngs.stream(7, "refine", 1))
    np.testing.assert_allclose(b - a, eta * model.score(x0, sigma_ref), rtol=0, atol=1e-12)
    assert tr.nfe == 1


def test_prior_drift_bound_covers_multi_step_gap():
    model = IsotropicGaussianPrior(0.5, 0.04, dim=9)
    op = Identity(9)
    meas = Measurement(np.full(9, 0.6), 0.1, op)
    x0 = np.full(9, 0.55)
    J, eta = 8, 1e-4
    a, _ = mcmc_refine(x0, meas, model, RefineConfig(J, eta, sigma_ref=0.1), np.random.default_rng(8))
    b, _ = mcmc_refine(x0, meas, model, RefineConfig(J, eta, True, sigma_ref=0.1),
                       np.random.default_rng(8))
    # the prior score is largest at the chain's farthest excursion; bound it over a box
    eps = np.linalg.norm(model.score(np.full(9, 0.5 + 0.3), 0.1))
    bound = prior_drift_bound(J, eta, eps, likelihood_lipschitz(op, 0.1))
    assert np.linalg.norm(b - a) <= bound
    assert likelihood_lipschitz(op, 0.1) == pytest.approx(200.0)
    assert likelihood_lipschitz(op, 0.1, EXACT_SCORE) == pytest.approx(100.0)


def test_stationary_posterior_with_prior_included():
    A = np.array([[1.0, 0.5]])
    gamma, mu, tau2, sigma_ref = 0.5, 0.2, 1.0, 0.1
    y = np.array([0.8])
    # closed-form Gaussian posterior; the prior term sees tau^2 + sigma_ref^2
    prior_var = tau2 + sigma_ref**2
    precision = A.T @ A / gamma**2 + np.eye(2) / prior_var
    cov = np.linalg.inv(precision)
    mean = cov @ (A.T @ y / gamma**2 + mu / prior_var)

    model = IsotropicGaussianPrior(mu, tau2, dim=2)
    meas = Measurement(y, gamma, MatrixOperator(A))
    # 400 chains of 600 steps; each chain is one independent draw at the end
    rng = np.random.default_rng(9)
    long_cfg = RefineConfig(n_steps=600, eta=0.02, with_prior=True,
                            grad_convention=EXACT_SCORE, sigma_ref=sigma_ref)
    draws = np.array([mcmc_refine(mean, meas, model, long_cfg, rng)[0] for _ in range(400)])
    se = np.sqrt(np.diag(cov) / len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - mean) <= 3 * se)
    np.testing.assert_allclose(np.var(draws, axis=0, ddof=1), np.diag(cov), rtol=0.2)


def test_refine_config_validation():
    with pytest.raises(ValueError):
        RefineConfig(n_steps=-1)
    with pytest.raises(ValueError):
        RefineConfig(eta=0.0)
    with pytest.raises(ValueError):
        RefineConfig(grad_convention="half")
    with pytest.raises(ValueError):
        RefineConfig(gamma=0.0)


def sr4_problem(seed):
    return task_problem("sr4", seed)[1]


def test_warm_start_table_on_downsampling_toy():
    prob = sr4_problem(0)
    cfg = RefineConfig(n_steps=50, eta=1e-3, gamma=0.01)
    table = warm_start_compare(prob.measurement, prob.model, cfg=cfg, rng=rngs.stream(0, "warm-start"))
    by = {row["init"]: row for row in table}
    assert set(by) == {"tweedie", "euler5", "rk45", "pure_noise"}
    assert all(row["iters_to_threshold"] is not None for row in table)
    assert by["tweedie"]["iters_to_threshold"] <= by["pure_noise"]["iters_to_threshold"]
    assert by["tweedie"]["init_nfe"] == 1 and by["rk45"]["init_nfe"] == 20
    again = warm_start_compare(prob.measurement, prob.model, cfg=cfg, rng=rngs.stream(0, "warm-start"))
    assert again == table


def test_warm_start_rejects_unknown_initializer():
    prob = sr4_problem(0)
    with pytest.raises(ValueError, match="unknown initializer"):
        warm_start_compare(prob.measurement, prob.model, inits=("ddim",))
