"""Forward measurement operators.

All operators act on flat real vectors. Image-shaped operators carry the
``shape`` they reshape to internally; outputs are flattened as well.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np

DOUBLED = "doubled"
EXACT_SCORE = "exact-score"
CONVENTIONS = (DOUBLED, EXACT_SCORE)


class ForwardOperator:
    """Base class. Subclasses implement ``_apply`` and ``_vjp`` on flat vectors."""

    linear: bool = True
    name: str = "operator"

    def __init__(self, in_dim: int, out_dim: int):
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.in_dim,):
            raise ValueError(
                f"{self.name}: expected input of shape ({self.in_dim},), got {x.shape}"
            )
        return self._apply(x)

    def vjp(self, x, r) -> np.ndarray:
        """Jacobian-transpose action ``J(x)^T r``. ``x`` is ignored for linear ops."""
        r = np.asarray(r, dtype=float)
        if r.shape != (self.out_dim,):
            raise ValueError(
                f"{self.name}: expected cotangent of shape ({self.out_dim},), got {r.shape}"
            )
        if not self.linear:
            x = np.asarray(x, dtype=float)
            if x.shape != (self.in_dim,):
                raise ValueError(
                    f"{self.name}: expected input of shape ({self.in_dim},), got {x.shape}"
                )
        return self._vjp(x, r)

    def adjoint(self, r) -> np.ndarray:
        if not self.linear:
            raise TypeError(f"{self.name} is nonlinear and has no adjoint")
        return self.vjp(None, r)

    def _apply(self, x):
        raise NotImplementedError

    def _vjp(self, x, r):
        raise NotImplementedError

    @cached_property
    def matrix(self) -> np.ndarray:
        """Dense ``(out_dim, in_dim)`` matrix of a linear operator."""
        if not self.linear:
            raise TypeError(f"{self.name} is nonlinear; no matrix form")
        eye = np.eye(self.in_dim)
        return np.stack([self._apply(e) for e in eye], axis=1)

    @cached_property
    def singular_values(self) -> np.ndarray:
        return np.linalg.svd(self.matrix, compute_uv=False)

    def to_dict(self) -> dict:
        raise NotImplementedError


class Identity(ForwardOperator):
    name = "identity"

    def __init__(self, dim: int):
        super().__init__(dim, dim)

    def _apply(self, x):
        return x.copy()

    def _vjp(self, x, r):
        return r.copy()

    def to_dict(self):
        return {"name": self.name, "dim": self.in_dim}


class MatrixOperator(ForwardOperator):
    """An explicit dense matrix ``A``."""

    name = "matrix"

    def __init__(self, A):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        if A.ndim != 2:
            raise ValueError("A must be a 2D array")
        self.A = A
        super().__init__(A.shape[1], A.shape[0])

    def _apply(self, x):
        return self.A @ x

    def _vjp(self, x, r):
        return self.A.T @ r

    def to_dict(self):
        return {"name": self.name, "A": self.A.tolist()}


class MaskInpaint(ForwardOperator):
    """Keeps the entries where ``mask`` is nonzero."""

    name = "mask"

    def __init__(self, mask):
        mask = np.asarray(mask).astype(bool).ravel()
        if not mask.any():
            raise ValueError("mask must keep at least one entry")
        self.mask = mask
        super().__init__(mask.size, int(mask.sum()))

    def _apply(self, x):
        return x[self.mask]

    def _vjp(self, x, r):
        out = np.zeros(self.in_dim)
        out[self.mask] = r
        return out

    def to_dict(self):
        return {"name": self.name, "mask": self.mask.astype(int).tolist()}


def box_mask(shape, box) -> np.ndarray:
    """Flat keep-mask for an image of ``shape`` with the rectangle
    ``rows [r0, r1) x cols [c0, c1)`` removed."""
    r0, r1, c0, c1 = (int(b) for b in box)
    keep = np.ones(tuple(shape), dtype=bool)
    keep[r0:r1, c0:c1] = False
    return keep.ravel()


class Conv2D(ForwardOperator):
    """Circular cross-correlation with a small kernel.

    ``y[i] = sum_a kernel[a] * x[(i + a - c) mod n]`` where ``c`` is the kernel
    center ``(size - 1) // 2`` along each axis. Works for 1D or 2D signals;
    the kernel rank must match ``shape``.
    """

    name = "conv"

    def __init__(self, kernel, shape):
        kernel = np.asarray(kernel, dtype=float)
        shape = tuple(int(s) for s in np.atleast_1d(shape))
        if kernel.ndim != len(shape):
            raise ValueError(f"kernel rank {kernel.ndim} does not match shape {shape}")
        if any(k > s for k, s in zip(kernel.shape, shape)):
            raise ValueError("kernel larger than signal")
        self.kernel = kernel
        self.shape = shape
        center = [(k - 1) // 2 for k in kernel.shape]
        # tap at offset o contributes w * x[i + o]; its transfer function is
        # the FFT of w placed at index -o (mod n)
        taps = np.zeros(shape)
        for idx in itertools.product(*(range(k) for k in kernel.shape)):
            pos = tuple((c - i) % s for i, c, s in zip(idx, center, shape))
            taps[pos] += kernel[idx]
        self._H = np.fft.rfftn(taps)
        self._axes = tuple(range(len(shape)))
        n = int(np.prod(shape))
        super().__init__(n, n)

    def _apply(self, x):
        img = x.reshape(self.shape)
        return np.fft.irfftn(np.fft.rfftn(img) * self._H, s=self.shape, axes=self._axes).ravel()

    def _vjp(self, x, r):
        img = r.reshape(self.shape)
        return np.fft.irfftn(np.fft.rfftn(img) * np.conj(self._H), s=self.shape, axes=self._axes).ravel()

    def to_dict(self):
        return {"name": self.name, "kernel": self.kernel.tolist(), "shape": list(self.shape)}


def Conv1D(kernel, n: int) -> Conv2D:
    return Conv2D(np.asarray(kernel, dtype=float).ravel(), (n,))


def gaussian_kernel(size: int = 7, std: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-0.5 * (ax / std) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


def motion_kernel(length: int = 5) -> np.ndarray:
    """Horizontal box blur of ``length`` taps."""
    return np.full((1, length), 1.0 / length)


class DownsampleAvg(ForwardOperator):
    """Non-overlapping ``k``-block averaging (1D or 2D)."""

    name = "downsample"

    def __init__(self, k: int, shape):
        shape = tuple(int(s) for s in np.atleast_1d(shape))
        if k < 1 or any(s % k for s in shape):
            raise ValueError(f"factor {k} must divide every axis of {shape}")
        self.k = int(k)
        self.shape = shape
        self.out_shape = tuple(s // k for s in shape)
        super().__init__(int(np.prod(shape)), int(np.prod(self.out_shape)))

    def _blocked(self):
        new = []
        for s in self.out_shape:
            new += [s, self.k]
        return tuple(new)

    def _apply(self, x):
        blocks = x.reshape(self._blocked())
        return blocks.mean(axis=tuple(range(1, 2 * len(self.shape), 2))).ravel()

    def _vjp(self, x, r):
        out = r.reshape(self.out_shape) / self.k ** len(self.shape)
        for ax in range(len(self.shape)):
            out = np.repeat(out, self.k, axis=ax)
        return out.ravel()

    def to_dict(self):
        return {"name": self.name, "k": self.k, "shape": list(self.shape)}


class HdrClip(ForwardOperator):
    """``y = clip(alpha * x, -1, 1)``; the derivative is taken as 0 on the boundary."""

    name = "hdr"
    linear = False

    def __init__(self, dim: int, alpha: float = 2.0):
        self.alpha = float(alpha)
        super().__init__(dim, dim)

    def _apply(self, x):
        return np.clip(self.alpha * x, -1.0, 1.0)

    def _vjp(self, x, r):
        inside = np.abs(self.alpha * x) < 1.0
        return np.where(inside, self.alpha * r, 0.0)

    def to_dict(self):
        return {"name": self.name, "dim": self.in_dim, "alpha": self.alpha}


class PhaseMagnitude(ForwardOperator):
    """Fourier magnitude of the zero-padded signal, ``y = |DFT(pad(x))|``."""

    name = "phase"
    linear = False

    def __init__(self, shape, oversample: int = 2):
        shape = tuple(int(s) for s in np.atleast_1d(shape))
        self.shape = shape
        self.oversample = int(oversample)
        self.pad_shape = tuple(s * self.oversample for s in shape)
        super().__init__(int(np.prod(shape)), int(np.prod(self.pad_shape)))

    def _spectrum(self, x):
        return np.fft.fftn(x.reshape(self.shape), s=self.pad_shape, axes=tuple(range(len(self.shape))))

    def _apply(self, x):
        return np.abs(self._spectrum(x)).ravel()

    def _vjp(self, x, r):
        f = self._spectrum(x)
        mag = np.abs(f)
        phase = np.divide(f, mag, out=np.zeros_like(f), where=mag > 0)
        v = r.reshape(self.pad_shape) * phase
        back = np.fft.ifftn(v) * v.size
        crop = tuple(slice(0, s) for s in self.shape)
        return back.real[crop].ravel()

    def to_dict(self):
        return {"name": self.name, "shape": list(self.shape), "oversample": self.oversample}


@dataclass(frozen=True)
class Measurement:
    y: np.ndarray
    gamma: float
    operator: ForwardOperator

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        object.__setattr__(self, "y", y)
        if y.shape != (self.operator.out_dim,):
            raise ValueError(
                f"observation has shape {y.shape}, operator emits ({self.operator.out_dim},)"
            )
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")

    @property
    def m(self) -> int:
        return self.operator.out_dim


def simulate_measurement(op, x0, gamma, rng) -> Measurement:
    y = op.apply(x0) + gamma * rng.standard_normal(op.out_dim)
    return Measurement(y, gamma, op)


def min_nonzero_singular(op: ForwardOperator, rtol: float | None = None) -> float:
    """Smallest singular value above the numerical-rank cutoff."""
    if not op.linear:
        raise TypeError(f"{op.name} is nonlinear; singular values are undefined")
    s = op.singular_values
    if rtol is None:
        rtol = max(op.in_dim, op.out_dim) * np.finfo(float).eps
    keep = s > rtol * s[0]
    return float(s[keep].min())


def apply(op: ForwardOperator, x) -> np.ndarray:
    return op.apply(x)


def vjp(op: ForwardOperator, x, r) -> np.ndarray:
    return op.vjp(x, r)


def residual(op: ForwardOperator, x, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    pred = op.apply(x)
    if y.shape != pred.shape:
        raise ValueError(f"observation shape {y.shape} does not match {pred.shape}")
    return y - pred


def likelihood_grad(op, x, y, gamma, convention=DOUBLED) -> np.ndarray:
    """Measurement-consistency gradient.

    ``exact-score`` returns ``J^T r / gamma^2``, the gradient of
    ``log N(y; A(x), gamma^2 I)``. ``doubled`` returns
    ``-(1/gamma^2) * grad ||y - A(x)||^2 = 2 J^T r / gamma^2``.
    """
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown gradient convention {convention!r}")
    r = residual(op, x, y)
    g = op.vjp(x, r) / gamma**2
    return 2.0 * g if convention == DOUBLED else g


_REGISTRY = {
    "identity": lambda p: Identity(p["dim"]),
    "matrix": lambda p: MatrixOperator(p["A"]),
    "mask": lambda p: MaskInpaint(p["mask"]),
    "box_mask": lambda p: MaskInpaint(box_mask(p["shape"], p["box"])),
    "conv": lambda p: Conv2D(p["kernel"], p["shape"]),
    "gaussian_blur": lambda p: Conv2D(
        gaussian_kernel(p.get("size", 7), p.get("std", 1.5)), p["shape"]
    ),
    "motion_blur": lambda p: Conv2D(motion_kernel(p.get("length", 5)), p["shape"]),
    "downsample": lambda p: DownsampleAvg(p["k"], p["shape"]),
    "hdr": lambda p: HdrClip(p["dim"], p.get("alpha", 2.0)),
    "phase": lambda p: PhaseMagnitude(p["shape"], p.get("oversample", 2)),
}


def operator_from_dict(spec: dict) -> ForwardOperator:
    name = spec.get("name")
    if name not in _REGISTRY:
        raise ValueError(f"unknown operator {name!r}; known: {sorted(_REGISTRY)}")
    try:
        return _REGISTRY[name](spec)
    except KeyError as exc:
        raise ValueError(f"operator {name!r} is missing parameter {exc.args[0]!r}") from None
