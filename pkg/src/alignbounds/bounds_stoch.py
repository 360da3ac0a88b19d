"""Cramér-Rao bounds under the zero-mean Gaussian stochastic image model.

Each DFT bin of the ``K+1`` observations is an independent complex Gaussian
vector with covariance ``S(w) p p^H + N I``, where ``p`` holds the shift
phasors. Frequency sums run over independent complex coefficients, i.e.
``FrequencyGrid.half_sum``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import SingularInformation
from .spectral import (
    TWO_PI,
    FrequencyGrid,
    NoiseSpectrum,
    SpectrumModel,
    spectrum_on_grid,
)


@dataclass(frozen=True, eq=False)
class StochBoundInput:
    grid: FrequencyGrid
    model: SpectrumModel
    noise: NoiseSpectrum
    K: int = 1

    def __post_init__(self):
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")


@dataclass(frozen=True)
class RhoMatrix:
    rho_xx: float
    rho_yy: float
    rho_xy: float

    @property
    def det(self) -> float:
        return self.rho_xx * self.rho_yy - self.rho_xy**2


def _per_bin_density(S: np.ndarray, N: float, K: int) -> np.ndarray:
    return 2.0 * S * S / (N * N + (K + 1) * S * N)


def rho(inp: StochBoundInput) -> RhoMatrix:
    S = spectrum_on_grid(inp.model, inp.grid)
    dens = _per_bin_density(S, inp.noise.level, inp.K)
    wx, wy = inp.grid.wx, inp.grid.wy
    return RhoMatrix(
        rho_xx=inp.grid.half_sum(dens * wx * wx),
        rho_yy=inp.grid.half_sum(dens * wy * wy),
        rho_xy=inp.grid.half_sum(dens * wx * wy),
    )


def crbs(inp: StochBoundInput) -> float:
    """Per-component MSE bound ``tr(B^-1) / (K+1)``.

    Reduces to ``2 / ((K+1) rho_xx)`` for rotationally symmetric spectra.
    """
    r = rho(inp)
    det = r.det
    if not det > 1e-14 * r.rho_xx * r.rho_yy or r.rho_xx <= 0 or r.rho_yy <= 0:
        raise SingularInformation(f"degenerate information matrix {r}")
    return (r.rho_xx + r.rho_yy) / ((inp.K + 1) * det)


def fim_oracle(inp: StochBoundInput, tau: np.ndarray | None = None) -> np.ndarray:
    """Brute-force ``2K x 2K`` Fisher information of the stochastic model.

    Assembles ``Sigma_tau(w)`` for every stored bin, differentiates it
    analytically with respect to each shift component and accumulates
    ``Re tr(Sigma^-1 dSigma_a Sigma^-1 dSigma_b)`` with the half-plane weights.
    """
    K = inp.K
    if K > 8 or len(inp.grid) > 4096:
        raise ValueError("fim_oracle is meant for small test problems (K <= 8)")
    tau = np.zeros((K, 2)) if tau is None else np.asarray(tau, dtype=float).reshape(K, 2)
    taus = np.vstack([np.zeros((1, 2)), tau])
    S_all = spectrum_on_grid(inp.model, inp.grid)
    N = inp.noise.level
    J = np.zeros((2 * K, 2 * K))
    eye = np.eye(K + 1)
    for wx, wy, w, S in zip(inp.grid.wx, inp.grid.wy, inp.grid.weight, S_all):
        omega = np.array([wx, wy])
        p = np.exp(1j * (taus @ omega))
        outer = S * np.outer(p, p.conj())
        sigma = outer + N * eye
        sigma_inv = np.linalg.inv(sigma)
        derivs = []
        for i in range(1, K + 1):
            e = eye[i]
            sel = e[:, None] - e[None, :]
            for h in range(2):
                derivs.append(sigma_inv @ (1j * omega[h] * outer * sel))
        for a in range(2 * K):
            for b in range(a, 2 * K):
                val = 0.5 * w * np.trace(derivs[a] @ derivs[b]).real
                J[a, b] += val
                if a != b:
                    J[b, a] += val
    return J


def crbs_from_fim(J: np.ndarray) -> float:
    """``tr(J^-1) / 2K`` for a ``2K x 2K`` information matrix."""
    return float(np.trace(np.linalg.inv(J))) / J.shape[0]


def crbs_hsnr(grid: FrequencyGrid, model: SpectrumModel, sigma2: float) -> float:
    """High-SNR limit of ``crbs``; no dependence on ``K``.

    The integral of ``S(w) w_x^2`` is the Riemann sum over the full plane with
    cell area ``(2 pi)^2 / n_p``.
    """
    S = spectrum_on_grid(model, grid)
    n_p = grid.geometry.n_p
    integral = grid.full_sum(S * grid.wx**2) * TWO_PI**2 / n_p
    if not integral > 0:
        raise SingularInformation("spectrum has no gradient energy")
    return 2.0 * sigma2 * TWO_PI**2 / (n_p * integral)


def crbs_flat_closed(n_p: int, K: int, W: float, snr_w: float) -> float:
    """Closed-form CRBS for a flat spectrum of bandwidth ``W``."""
    if not snr_w > 0:
        raise ValueError("snr_w must be positive")
    pi2 = math.pi**2
    return 8 * pi2 / (3 * n_p * (K + 1) * snr_w**2) + 16 * pi2 / (n_p * W**2 * snr_w)


def acoth(x: float) -> float:
    if x - 1.0 < 1e-12:
        raise ValueError(f"acoth argument too close to 1: {x!r}")
    # log1p form keeps precision when x is large
    return 0.5 * math.log1p(2.0 / (x - 1.0))


def crbs_natural_closed(n_p: int, K: int, W: float, snr_n: float) -> float:
    """Quarter-circle approximation of CRBS for an inverse-square spectrum."""
    if not snr_n > 0:
        raise ValueError("snr_n must be positive")
    arg = 1.0 + 2 * math.pi * (K + 1) * snr_n / W**2
    return 8 * math.pi / (n_p * (K + 1) * snr_n**2 * acoth(arg))


def snr1_flat(K: int, W: float = TWO_PI) -> float:
    return W**2 / (6 * (K + 1))


def snr1_natural(K: int, W: float = TWO_PI) -> float:
    return W**2 / (2 * math.pi * (K + 1))
