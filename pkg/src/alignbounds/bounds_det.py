"""Cramér-Rao bounds for translation estimation with a deterministic latent image.

The unknown image is a nuisance parameter. Eliminating it through the Schur
complement leaves a ``2K x 2K`` information matrix of Kronecker form whose
spatial factor is the 2x2 gradient-energy matrix ``Q``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import SingularGradient, UnsupportedShape
from .spectral import ImageGeometry, full_plane_frequencies


@dataclass(frozen=True)
class GradientEnergy:
    e_xx: float
    e_yy: float
    e_xy: float

    def __post_init__(self):
        if self.e_xx < 0 or self.e_yy < 0:
            raise ValueError("gradient energies must be non-negative")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.e_xx, self.e_xy], [self.e_xy, self.e_yy]])

    @property
    def det(self) -> float:
        return self.e_xx * self.e_yy - self.e_xy * self.e_xy


@dataclass(frozen=True)
class DetBoundInput:
    gradient: GradientEnergy
    sigma2: float
    K: int = 1

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")


@dataclass(frozen=True)
class ShiftPriorGG:
    """Centered generalized Gaussian prior on every shift component."""

    c: float
    delta: float

    def __post_init__(self):
        gg_lambda2(self.c, self.delta)  # validates

    @property
    def lambda2(self) -> float:
        return gg_lambda2(self.c, self.delta)


def spectral_gradients(image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic derivatives ``(u_x, u_y)`` by multiplication with ``i w``.

    Taking the real part of the inverse transform zeroes the Nyquist lines,
    which matches the cosine convention used by ``synth.fourier_shift``.
    """
    geometry = ImageGeometry.of(image)
    wx, wy = full_plane_frequencies(geometry)
    f = np.fft.fft2(image)
    ux = np.fft.ifft2(1j * wx * f).real
    uy = np.fft.ifft2(1j * wy * f).real
    return ux, uy


def gradient_energy(image: np.ndarray) -> GradientEnergy:
    ux, uy = spectral_gradients(np.asarray(image, dtype=float))
    return GradientEnergy(
        e_xx=float(np.sum(ux * ux)),
        e_yy=float(np.sum(uy * uy)),
        e_xy=float(np.sum(ux * uy)),
    )


def _checked_det(g: GradientEnergy) -> float:
    det = g.det
    scale = g.e_xx * g.e_yy
    if not det > 1e-12 * scale or scale == 0:
        raise SingularGradient(
            f"gradient matrix is singular (e_xx={g.e_xx:g}, e_yy={g.e_yy:g}, e_xy={g.e_xy:g})"
        )
    return det


def crbd(inp: DetBoundInput) -> float:
    """Per-component MSE bound; independent of ``K``."""
    g = inp.gradient
    return inp.sigma2 * (g.e_xx + g.e_yy) / _checked_det(g)


def crbd_known(inp: DetBoundInput) -> float:
    """Bound when the latent image is known: half of ``crbd``."""
    return crbd(inp) / 2


def gg_lambda2(c: float, delta: float) -> float:
    """Inverse prior information of the generalized Gaussian (``lambda^2``)."""
    if not c > 0.5:
        raise UnsupportedShape(f"shape c must exceed 1/2, got {c}")
    if not delta > 0:
        raise ValueError(f"scale delta must be positive, got {delta}")
    # log-space keeps large c finite (Gamma(1/c) ~ c)
    log_l2 = (
        2 * math.log(delta)
        + 2 * math.lgamma(1 / c)
        - 2 * math.log(c)
        - math.lgamma(3 / c)
        - math.lgamma(2 - 1 / c)
    )
    return math.exp(log_l2)


def _trace_inv2(a: np.ndarray) -> float:
    det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    return (a[0, 0] + a[1, 1]) / det


def bcrb(inp: DetBoundInput, prior: ShiftPriorGG | float) -> float:
    """Bayesian CRB on the per-component EMSE.

    ``prior`` is either a ``ShiftPriorGG`` or the prior variance ``lambda^2``.
    The Kronecker factor ``I - 11^T/(K+1)`` has eigenvalue 1 (multiplicity
    ``K-1``) and ``1/(K+1)`` along the all-ones direction, so the trace of
    the inverse splits into two 2x2 inversions.
    """
    lam2 = prior.lambda2 if isinstance(prior, ShiftPriorGG) else float(prior)
    if not lam2 > 0:
        raise ValueError("prior variance must be positive")
    _checked_det(inp.gradient)
    K = inp.K
    Q = inp.gradient.matrix / inp.sigma2
    eye = np.eye(2) / lam2
    tr = (K - 1) * _trace_inv2(Q + eye) + _trace_inv2(Q / (K + 1) + eye)
    return tr / (2 * K)


def bcrb_dense_oracle(inp: DetBoundInput, prior: ShiftPriorGG | float) -> float:
    """Same quantity from an explicitly assembled ``2K x 2K`` Schur complement.

    ``J_tt + I/lambda^2 - J_ut^T J_uu^{-1} J_ut`` is built with dense Kronecker
    products and inverted with LAPACK; used to cross-check ``bcrb``.
    """
    lam2 = prior.lambda2 if isinstance(prior, ShiftPriorGG) else float(prior)
    K = inp.K
    if K > 16:
        raise ValueError("dense oracle is limited to K <= 16")
    _checked_det(inp.gradient)
    Q = inp.gradient.matrix
    s2 = inp.sigma2
    ones = np.ones((K, 1))
    j_tt = np.kron(np.eye(K), Q) / s2
    # J_ut^T J_uu^{-1} J_ut = (1 1^T (x) Q) / (sigma2 (K+1))
    coupling = np.kron(ones @ ones.T, Q) / (s2 * (K + 1))
    s_bar = j_tt + np.eye(2 * K) / lam2 - coupling
    return float(np.trace(np.linalg.inv(s_bar))) / (2 * K)


def bcrb_pixel_oracle(image: np.ndarray, sigma2: float, K: int, lam2: float) -> float:
    """Dense oracle that keeps the image pixels as explicit nuisance parameters.

    Assembles the full ``(n_p + 2K)`` Bayesian information matrix from the
    image derivatives and inverts it; only practical for tiny images.
    """
    ux, uy = spectral_gradients(np.asarray(image, dtype=float))
    n_p = image.size
    grad = np.stack([ux.ravel(), uy.ravel()], axis=1)  # n_p x 2
    size = n_p + 2 * K
    J = np.zeros((size, size))
    J[:n_p, :n_p] = (K + 1) / sigma2 * np.eye(n_p)
    for i in range(K):
        sl = slice(n_p + 2 * i, n_p + 2 * i + 2)
        J[sl, sl] = grad.T @ grad / sigma2 + np.eye(2) / lam2
        # d/dtau of u(x - tau) is -grad u
        J[:n_p, sl] = -grad / sigma2
        J[sl, :n_p] = -grad.T / sigma2
    inv = np.linalg.inv(J)
    return float(np.trace(inv[n_p:, n_p:])) / (2 * K)
