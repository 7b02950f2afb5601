import numpy as np
import pytest

from dapspp.odesolve import OdeState, drift, euler_step, integrate_pf_ode, rk4_step
from dapspp.prior import GmmPrior, IsotropicGaussianPrior

from .oracles import gmm3_2d, reference_rk4


def gaussian_flow(x_T, T, t, tau):
    """Closed-form transport of the probability flow for a N(0, tau^2) prior."""
    return x_T * np.sqrt((tau**2 + t**2) / (tau**2 + T**2))


def convergence_slope(method, tau=0.5, T=2.0, t=0.4, hs=(0.4, 0.2, 0.1, 0.05)):
    p = IsotropicGaussianPrior(0.0, tau**2)
    exact = gaussian_flow(1.0, T, t, tau)
    errs = []
    for h in hs:
        x, _ = integrate_pf_ode(p, [1.0], T, t, int(round((T - t) / h)), method, sigma_floor=0.0)
        errs.append(abs(x[0] - exact))
    return np.polyfit(np.log(hs), np.log(errs), 1)[0]


def test_drift_examples():
    assert drift(IsotropicGaussianPrior(0.0, 1.0), np.array([1.0]), 1.0)[0] == 0.5
    cov = np.eye(2)
    sym = GmmPrior([0.5, 0.5], [[1.0, 0.0], [-1.0, 0.0]], [cov, cov])
    np.testing.assert_array_equal(drift(sym, np.zeros(2), 0.8), np.zeros(2))
    with pytest.raises(ValueError):
        drift(sym, np.zeros(2), 0.0)


def test_drift_is_minus_sigma_times_score():
    p = gmm3_2d()
    rng = np.random.default_rng(0)
    for _ in range(10):
        x, s = rng.standard_normal(2) * 3, rng.uniform(0.1, 10)
        np.testing.assert_allclose(drift(p, x, s), -s * p.score(x, s), rtol=1e-15)


def test_euler_hand_example():
    out = euler_step(IsotropicGaussianPrior(0.0, 1.0), OdeState(np.array([1.0]), 1.0), 0.5)
    assert out.x[0] == pytest.approx(0.75, rel=1e-15)
    assert out.sigma == 0.5


def test_zero_drift_is_identity():
    zero = lambda x, s: np.zeros_like(x)  # noqa: E731
    x = np.array([0.3, -2.0])
    for step in (euler_step, rk4_step):
        np.testing.assert_array_equal(step(None, OdeState(x, 1.0), 0.4, zero).x, x)


def test_rk4_exponential_flow():
    out = rk4_step(None, OdeState(np.array([1.0]), 1.0), 0.1, lambda x, s: x)
    assert abs(out.x[0] - np.exp(-0.1)) < 2e-7
    assert round(out.x[0], 7) == 0.9048375


def test_rk4_matches_textbook_reference():
    p = IsotropicGaussianPrior(0.0, 1.0)
    flow = lambda s, x: s * x / (1 + s * s)  # noqa: E731
    for x_T, T, t, n in [(3.0, 10.0, 0.1, 20), (100.0, 100.0, 0.1, 50)]:
        x, _ = integrate_pf_ode(p, [x_T], T, t, n, "rk4")
        assert x[0] == pytest.approx(reference_rk4(flow, x_T, T, t, n), rel=1e-12)


def test_rk4_gaussian_flow_uniform_grid_accuracy():
    p = IsotropicGaussianPrior(0.0, 1.0)
    exact = gaussian_flow(3.0, 10.0, 0.1, 1.0)
    x20, nfe = integrate_pf_ode(p, [3.0], 10.0, 0.1, 20, "rk4")
    assert nfe == 80
    # h ~ 0.5 leaves a 1.6e-4 relative error; 200 steps bring it under 1e-6
    assert abs(x20[0] - exact) <= 2e-4 * exact
    x200, _ = integrate_pf_ode(p, [3.0], 10.0, 0.1, 200, "rk4")
    assert abs(x200[0] - exact) <= 1e-6 * exact


def test_long_flow_from_sigma_max():
    p = IsotropicGaussianPrior(0.0, 1.0)
    exact = 100 * np.sqrt(1.01 / 10001)
    assert round(exact, 5) == 1.00494
    x50, _ = integrate_pf_ode(p, [100.0], 100.0, 0.1, 50, "rk4")
    assert abs(x50[0] - exact) < 0.015  # h ~ 2 is coarse where sigma ~ tau
    x500, _ = integrate_pf_ode(p, [100.0], 100.0, 0.1, 500, "rk4")
    assert abs(x500[0] - exact) <= 1e-4


def test_convergence_orders():
    assert convergence_slope("euler") >= 0.9
    assert convergence_slope("rk4") >= 3.5


def test_single_step_integration_matches_stepper():
    p = gmm3_2d()
    x0 = np.array([0.4, -1.0])
    x, nfe = integrate_pf_ode(p, x0, 0.5, 0.1, 1, "rk4")
    np.testing.assert_array_equal(x, rk4_step(p, OdeState(x0, 0.5), 0.4).x)
    assert nfe == 4


@pytest.mark.parametrize("method, steps, expected", [("rk4", 5, 20), ("euler", 5, 5), ("euler", 2, 2)])
def test_nfe_counts(method, steps, expected):
    calls = []

    def f(x, s):
        calls.append(s)
        return -x

    _, nfe = integrate_pf_ode(None, [1.0], 1.0, 0.0, steps, method, drift_fn=f)
    assert nfe == expected == len(calls)


def test_floor_keeps_score_away_from_zero():
    seen = []

    def f(x, s):
        seen.append(s)
        return np.zeros_like(x)

    integrate_pf_ode(None, [1.0], 0.5, 0.0, 1, "rk4", drift_fn=f)
    assert min(seen) == pytest.approx(1e-3)


def test_deterministic():
    p = gmm3_2d()
    a, _ = integrate_pf_ode(p, [1.0, 2.0], 5.0, 0.0, 7, "rk4")
    b, _ = integrate_pf_ode(p, [1.0, 2.0], 5.0, 0.0, 7, "rk4")
    np.testing.assert_array_equal(a, b)


def test_errors():
    p = IsotropicGaussianPrior(0.0, 1.0)
    with pytest.raises(ValueError, match="overshoots"):
        euler_step(p, OdeState(np.array([1.0]), 0.2), 0.5)
    with pytest.raises(ValueError):
        rk4_step(p, OdeState(np.array([1.0]), 0.2), 0.0)
    with pytest.raises(ValueError, match="unknown ODE method"):
        integrate_pf_ode(p, [1.0], 1.0, 0.0, 1, "heun")
    with pytest.raises(ValueError):
        OdeState(np.array([1.0]), -0.1)
