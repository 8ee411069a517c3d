"""Dirac matrices, the fundamental solution of H - a, and its kernel split.

The free Dirac operator in 3D is H = -i alpha . grad + m beta, acting on
4-spinors. For a spectral parameter a with Re sqrt(m^2 - a^2) > 0 the operator
H - a has an explicit matrix-valued fundamental solution phi_a with
exponential decay; it splits into three pieces omega1 + omega2 + omega3 of
which only omega3 (the scaled Riesz kernel times alpha) is genuinely singular
under surface integration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import numpy.typing as npt

ArrayC = npt.NDArray[np.complex128]
ArrayR = npt.NDArray[np.float64]

SIGMA1 = np.array([[0, 1], [1, 0]], dtype=np.complex128)
SIGMA2 = np.array([[0, -1j], [1j, 0]], dtype=np.complex128)
SIGMA3 = np.array([[1, 0], [0, -1]], dtype=np.complex128)
I2 = np.eye(2, dtype=np.complex128)
I4 = np.eye(4, dtype=np.complex128)

Z2 = np.zeros((2, 2), dtype=np.complex128)
ALPHA = tuple(np.block([[Z2, s], [s, Z2]]) for s in (SIGMA1, SIGMA2, SIGMA3))
BETA = np.block([[I2, Z2], [Z2, -I2]])

#: refuse kernel evaluation closer to the singularity than this
SINGULARITY_GUARD = 1e-12


def alpha_dot(v) -> ArrayC:
    """alpha . v for a 3-vector (or batch of 3-vectors) v.

    For batched input of shape (..., 3) the result has shape (..., 4, 4).
    """
    v = np.asarray(v)
    return (
        np.multiply.outer(v[..., 0], ALPHA[0])
        + np.multiply.outer(v[..., 1], ALPHA[1])
        + np.multiply.outer(v[..., 2], ALPHA[2])
    )


@dataclass(frozen=True)
class SpectralParameter:
    """Spectral point a and mass m, with the decay branch sqrt(m^2 - a^2).

    Accepted parameters: a off the real axis, or real a strictly inside the
    gap (-m, m). The single degenerate boundary case a = 0, m = 0 is also
    admitted (the kernel then reduces to the odd part omega3); every other
    case with Re sqrt(m^2 - a^2) = 0 is rejected.
    """

    a: complex
    m: float
    branch: complex = field(init=False)

    def __post_init__(self):
        a = complex(self.a)
        m = float(self.m)
        if m < 0:
            raise ValueError(f"mass must be nonnegative, got {m}")
        degenerate = a == 0 and m == 0
        in_gap = a.imag == 0 and abs(a.real) < m
        if not (a.imag != 0 or in_gap or degenerate):
            raise ValueError(
                f"spectral parameter a={a} not in (C \\ R) union (-m, m) for m={m}"
            )
        w = np.sqrt(complex(m * m - a * a))
        if w.real < 0:
            w = -w
        if w.real == 0 and not degenerate:
            raise ValueError(f"branch value sqrt(m^2-a^2)={w} has zero real part")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "branch", complex(w))

    def conjugate(self) -> "SpectralParameter":
        return SpectralParameter(np.conj(self.a), self.m)


def _check_points(x) -> tuple[ArrayR, ArrayR, bool]:
    """Validate kernel arguments; returns (points (n,3), radii (n,), batched)."""
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim > 1
    pts = np.atleast_2d(x)
    if pts.shape[-1] != 3:
        raise ValueError(f"expected 3-vectors, got shape {x.shape}")
    r = np.linalg.norm(pts, axis=-1)
    if np.any(r < SINGULARITY_GUARD):
        raise ValueError("kernel evaluated at (or too close to) its singular point")
    return pts, r, batched


def phi_a(sp: SpectralParameter, x) -> ArrayC:
    """Fundamental solution phi_a(x) of H - a.

    phi_a(x) = e^{-w|x|}/(4 pi |x|) (a + m beta + (1 + w|x|) i alpha.x / |x|^2)
    with w = sqrt(m^2 - a^2), Re w > 0.

    Parameters:
        sp: spectral parameter
        x: 3-vector, or a batch of them with shape (n, 3)

    Returns:
        4x4 complex matrix, or an (n, 4, 4) stack for batched input.
    """
    pts, r, batched = _check_points(x)
    w = sp.branch
    pref = np.exp(-w * r) / (4.0 * np.pi * r)
    even = np.multiply.outer(pref, sp.a * I4 + sp.m * BETA)
    odd_coef = pref * (1.0 + w * r) / (r * r)
    odd = odd_coef[:, None, None] * (1j * alpha_dot(pts))
    out = even + odd
    return out if batched else out[0]


def riesz_kernel(x) -> ArrayR:
    """The vector Riesz-type kernel k(x) = x / (4 pi |x|^3); odd in x."""
    pts, r, batched = _check_points(x)
    out = pts / (4.0 * np.pi * r[:, None] ** 3)
    return out if batched else out[0]


@dataclass(frozen=True)
class KernelSplit:
    """Three-term split of phi_a; omega1 + omega2 + omega3 = phi_a pointwise.

    omega1(x) = e^{-w r}/(4 pi r) (a + m beta + w i alpha.x/r)
    omega2(x) = (e^{-w r} - 1)/(4 pi) i alpha.x / r^3
    omega3(x) = i alpha.x / (4 pi r^3)            (a-independent, odd)
    """

    sp: SpectralParameter
    omega1: Callable
    omega2: Callable
    omega3: Callable


def kernel_split(sp: SpectralParameter) -> KernelSplit:
    w = sp.branch

    def omega1(x) -> ArrayC:
        pts, r, batched = _check_points(x)
        pref = np.exp(-w * r) / (4.0 * np.pi * r)
        even = np.multiply.outer(pref, sp.a * I4 + sp.m * BETA)
        odd = (pref * w / r)[:, None, None] * (1j * alpha_dot(pts))
        out = even + odd
        return out if batched else out[0]

    def omega2(x) -> ArrayC:
        pts, r, batched = _check_points(x)
        coef = (np.exp(-w * r) - 1.0) / (4.0 * np.pi * r**3)
        out = coef[:, None, None] * (1j * alpha_dot(pts))
        return out if batched else out[0]

    def omega3(x) -> ArrayC:
        pts, r, batched = _check_points(x)
        coef = 1.0 / (4.0 * np.pi * r**3)
        out = coef[:, None, None] * (1j * alpha_dot(pts))
        return out if batched else out[0]

    return KernelSplit(sp=sp, omega1=omega1, omega2=omega2, omega3=omega3)
