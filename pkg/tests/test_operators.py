import itertools

import numpy as np
import pytest

from dapspp.operators import (
    EXACT_SCORE,
    DOUBLED,
    Conv1D,
    Conv2D,
    DownsampleAvg,
    HdrClip,
    Identity,
    MaskInpaint,
    MatrixOperator,
    Measurement,
    PhaseMagnitude,
    box_mask,
    gaussian_kernel,
    likelihood_grad,
    min_nonzero_singular,
    motion_kernel,
    operator_from_dict,
    residual,
)

from .oracles import fd_vjp


def linear_ops():
    rng = np.random.default_rng(0)
    return [
        Identity(6),
        MatrixOperator(rng.standard_normal((3, 5))),
        MaskInpaint(rng.random(10) > 0.4),
        MaskInpaint(box_mask((6, 6), (1, 4, 2, 5))),
        Conv1D([0.2, 0.5, 0.3], 9),
        Conv2D(gaussian_kernel(7, 1.5), (8, 8)),
        Conv2D(motion_kernel(5), (6, 7)),
        Conv2D(rng.standard_normal((2, 3)), (5, 6)),
        DownsampleAvg(2, (8,)),
        DownsampleAvg(4, (8, 8)),
    ]


def adjoint_mismatch(op, rng, n_probes=100):
    worst = 0.0
    for _ in range(n_probes):
        x = rng.standard_normal(op.in_dim)
        r = rng.standard_normal(op.out_dim)
        lhs = op.apply(x) @ r
        rhs = x @ op.adjoint(r)
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))
    return worst


@pytest.mark.parametrize("op", linear_ops(), ids=lambda op: f"{op.name}-{op.in_dim}")
def test_adjoint_identity(op):
    assert adjoint_mismatch(op, np.random.default_rng(1)) <= 1e-10


def roll_correlate(kernel, img):
    """Circular cross-correlation written out tap by tap."""
    kernel = np.atleast_2d(kernel)
    img = np.atleast_2d(img)
    center = [(k - 1) // 2 for k in kernel.shape]
    out = np.zeros_like(img)
    for a, b in itertools.product(range(kernel.shape[0]), range(kernel.shape[1])):
        out += kernel[a, b] * np.roll(img, (center[0] - a, center[1] - b), axis=(0, 1))
    return out


@pytest.mark.parametrize(
    "kernel, shape",
    [(gaussian_kernel(7, 1.5), (8, 8)), (motion_kernel(5), (6, 7)),
     (np.arange(6.0).reshape(2, 3), (5, 4))],
)
def test_conv_matches_shift_and_add(kernel, shape):
    op = Conv2D(kernel, shape)
    img = np.random.default_rng(2).standard_normal(shape)
    np.testing.assert_allclose(op.apply(img.ravel()), roll_correlate(kernel, img).ravel(), atol=1e-13)


def test_apply_examples():
    np.testing.assert_allclose(Conv1D([0.5, 0.5], 2).apply([1.0, 3.0]), [2.0, 2.0], atol=1e-15)
    np.testing.assert_allclose(DownsampleAvg(2, (4,)).apply([1.0, 2.0, 3.0, 4.0]), [1.5, 3.5])
    np.testing.assert_array_equal(MaskInpaint([1, 0, 1]).apply([4.0, 5.0, 6.0]), [4.0, 6.0])
    np.testing.assert_array_equal(MaskInpaint([1, 0, 1]).adjoint([4.0, 6.0]), [4.0, 0.0, 6.0])
    np.testing.assert_array_equal(HdrClip(3, 2.0).apply([0.1, 0.6, -0.7]), [0.2, 1.0, -1.0])
    np.testing.assert_allclose(PhaseMagnitude((2,), 2).apply([1.0, 0.0]), [1.0] * 4)
    np.testing.assert_allclose(Identity(3).apply([1.0, 2.0, 3.0]), [1.0, 2.0, 3.0])


def test_box_mask_removes_rectangle():
    keep = box_mask((4, 4), (1, 3, 0, 2)).reshape(4, 4)
    assert keep.sum() == 12
    assert not keep[1:3, 0:2].any()


def test_dense_matrix_of_downsample():
    np.testing.assert_allclose(
        DownsampleAvg(2, (4,)).matrix, [[0.5, 0.5, 0.0, 0.0], [0.0, 0.0, 0.5, 0.5]]
    )


@pytest.mark.parametrize(
    "op, expected",
    [(Identity(4), 1.0), (MaskInpaint([1, 0, 1, 1]), 1.0), (DownsampleAvg(2, (4,)), 2**-0.5)],
)
def test_min_nonzero_singular(op, expected):
    assert min_nonzero_singular(op) == pytest.approx(expected, rel=1e-12)


def test_min_nonzero_singular_skips_null_space():
    A = np.diag([3.0, 0.5, 0.0])
    assert min_nonzero_singular(MatrixOperator(A)) == pytest.approx(0.5, rel=1e-12)


def test_hdr_vjp_matches_finite_differences():
    op = HdrClip(20, 2.0)
    rng = np.random.default_rng(3)
    x = rng.uniform(-0.8, 0.8, 20)
    x[np.abs(np.abs(2 * x) - 1) < 0.05] = 0.0  # keep probes off the kinks
    for _ in range(10):
        r = rng.standard_normal(20)
        fd = fd_vjp(op, x, r)
        assert np.linalg.norm(op.vjp(x, r) - fd) <= 1e-5 * np.linalg.norm(fd)


@pytest.mark.parametrize("shape", [(6,), (4, 4)])
def test_phase_vjp_matches_finite_differences(shape):
    op = PhaseMagnitude(shape, 2)
    rng = np.random.default_rng(4)
    for _ in range(10):
        x = rng.standard_normal(op.in_dim)
        r = rng.standard_normal(op.out_dim)
        fd = fd_vjp(op, x, r)
        assert np.linalg.norm(op.vjp(x, r) - fd) <= 1e-5 * np.linalg.norm(fd)


@pytest.mark.parametrize("op", linear_ops(), ids=lambda op: f"{op.name}-{op.in_dim}")
def test_linear_ops_are_linear(op):
    rng = np.random.default_rng(5)
    x, z = rng.standard_normal((2, op.in_dim))
    np.testing.assert_allclose(op.apply(2.0 * x - 3.0 * z), 2.0 * op.apply(x) - 3.0 * op.apply(z),
                               atol=1e-12)


@pytest.mark.parametrize("op", [HdrClip(8, 2.0), PhaseMagnitude((8,), 2)], ids=["hdr", "phase"])
def test_nonlinear_ops_fail_linearity_probe(op):
    rng = np.random.default_rng(6)
    x, z = rng.standard_normal((2, op.in_dim))
    gap = op.apply(2.0 * x - 3.0 * z) - (2.0 * op.apply(x) - 3.0 * op.apply(z))
    assert np.linalg.norm(gap) > 1e-3
    with pytest.raises(TypeError):
        op.adjoint(np.zeros(op.out_dim))
    with pytest.raises(TypeError):
        min_nonzero_singular(op)


def test_phase_is_sign_invariant():
    op = PhaseMagnitude((4, 4), 2)
    x = np.random.default_rng(7).standard_normal(16)
    np.testing.assert_allclose(op.apply(-x), op.apply(x), atol=1e-13)


def test_likelihood_grad_conventions():
    op = Identity(1)
    assert likelihood_grad(op, [0.0], [1.0], 1.0, DOUBLED)[0] == 2.0
    assert likelihood_grad(op, [0.0], [1.0], 1.0, EXACT_SCORE)[0] == 1.0
    assert likelihood_grad(op, [0.0], [1.0], 0.1, EXACT_SCORE)[0] == pytest.approx(100.0)
    with pytest.raises(ValueError):
        likelihood_grad(op, [0.0], [1.0], 0.0)
    with pytest.raises(ValueError):
        likelihood_grad(op, [0.0], [1.0], 1.0, "other")


def test_exact_score_grad_is_log_likelihood_gradient():
    op = MatrixOperator(np.random.default_rng(8).standard_normal((3, 4)))
    y = np.array([0.3, -1.0, 2.0])
    x = np.array([0.1, 0.2, -0.4, 1.0])
    gamma = 0.3
    loglik = lambda z: -0.5 * np.sum((y - op.apply(z)) ** 2) / gamma**2  # noqa: E731
    from .oracles import fd_gradient

    np.testing.assert_allclose(likelihood_grad(op, x, y, gamma, EXACT_SCORE),
                               fd_gradient(loglik, x), rtol=1e-7)


def test_shape_errors():
    op = Conv2D(gaussian_kernel(3, 1.0), (4, 4))
    with pytest.raises(ValueError):
        op.apply(np.zeros(15))
    with pytest.raises(ValueError):
        op.vjp(None, np.zeros(3))
    with pytest.raises(ValueError):
        residual(op, np.zeros(16), np.zeros(4))
    with pytest.raises(ValueError):
        Measurement(np.zeros(3), 0.1, op)
    with pytest.raises(ValueError):
        Measurement(np.zeros(16), 0.0, op)
    with pytest.raises(ValueError):
        DownsampleAvg(3, (8,))
    with pytest.raises(ValueError):
        Conv2D(np.ones((3, 3)), (8,))


@pytest.mark.parametrize("op", linear_ops() + [HdrClip(5, 3.0), PhaseMagnitude((3, 3), 2)],
                         ids=lambda op: op.name)
def test_operator_dict_round_trip(op):
    x = np.random.default_rng(9).standard_normal(op.in_dim)
    np.testing.assert_array_equal(operator_from_dict(op.to_dict()).apply(x), op.apply(x))


def test_unknown_operator_rejected():
    with pytest.raises(ValueError, match="unknown operator"):
        operator_from_dict({"name": "radon"})
    with pytest.raises(ValueError, match="missing parameter"):
        operator_from_dict({"name": "downsample", "k": 2})
