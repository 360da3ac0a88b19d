"""Extended Ziv-Zakai bound for multi-image translation estimation.

Only the flat-spectrum, full-band (``W = 2 pi``) closed form is provided,
evaluated along the two hypothesis paths ``delta = (h, h/2, ..., h/2)`` (small
``h``) and ``delta = (h, 0, ..., 0)`` (large ``h``).  Probabilities built from
``exp(a + b) * Phi(sqrt(2 b))`` are combined in log space because ``a`` is of
order ``-n_p`` at high SNR.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize, special

from .errors import NoTransition
from .spectral import FrequencyGrid, NoiseSpectrum, SpectrumModel, spectrum_on_grid

PI2 = math.pi**2
PI4 = math.pi**4


def log_upper_tail(t):
    """``log Phi(t)`` with ``Phi`` the standard normal upper tail."""
    return special.log_ndtr(-np.asarray(t, dtype=float))


def upper_tail(t):
    return 0.5 * special.erfc(np.asarray(t, dtype=float) / math.sqrt(2.0))


@dataclass(frozen=True)
class EzzbFlatInput:
    n_p: int
    K: int
    snr_w: float
    D: float

    def __post_init__(self):
        if self.n_p < 16:
            raise ValueError("n_p must be >= 16")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not self.snr_w > 0:
            raise ValueError("snr_w must be positive")
        if not self.D >= 1:
            raise ValueError("D must be >= 1")


@dataclass(frozen=True)
class EzzbConstants:
    kappa1: float
    kappa2: float
    a: float
    b: float
    c2: float

    @property
    def log_tail_weight(self) -> float:
        """``log(exp(a + b) * Phi(sqrt(2 b)))``."""
        return self.a + self.b + float(log_upper_tail(math.sqrt(2 * self.b)))


def overlap_factor(delta, D: float) -> float:
    """Prior overlap ``A(delta)`` for independent ``U[0, D]`` components."""
    if not D > 0:
        raise ValueError("D must be positive")
    d = np.abs(np.asarray(delta, dtype=float)).ravel()
    return float(np.prod(np.clip(1.0 - d / D, 0.0, None)))


def _pmin_terms(delta, grid: FrequencyGrid, model: SpectrumModel, noise: NoiseSpectrum, K: int):
    delta = np.asarray(delta, dtype=float).reshape(K, 2)
    S = spectrum_on_grid(model, grid)
    N = noise.level
    phase = np.outer(grid.wx, delta[:, 0]) + np.outer(grid.wy, delta[:, 1])
    T = np.abs(1.0 + np.exp(-1j * phase).sum(axis=1)) ** 2
    deficit = np.clip((K + 1) ** 2 - T, 0.0, None)
    gamma = S * S * deficit / (4.0 * (N * N + (K + 1) * N * S))
    a = -grid.half_sum(np.log1p(gamma))
    b = grid.half_sum(gamma / (1.0 + gamma))
    return a, b


def pmin(delta, grid: FrequencyGrid, model: SpectrumModel, noise: NoiseSpectrum, K: int) -> float:
    """Approximate minimum error probability between hypotheses ``phi`` and ``phi + delta``.

    ``delta`` holds ``K`` 2D offsets (shape ``(K, 2)`` or flat ``2K``).
    """
    a, b = _pmin_terms(delta, grid, model, noise, K)
    return 0.5 * math.exp(a + b + float(log_upper_tail(math.sqrt(2 * b))))


def ezzb_flat_constants(inp: EzzbFlatInput) -> EzzbConstants:
    snr, K, n_p = inp.snr_w, inp.K, inp.n_p
    kappa1 = 9 * snr**2 * (K + 1) / (8 * PI4 + 12 * PI2 * snr * (K + 1))
    kappa2 = 9 * snr**2 * K / (4 * PI4 + 6 * PI2 * snr * (K + 1))
    root = math.sqrt(kappa2 + 1.0)
    # sqrt(k+1) - 1 written as k / (sqrt(k+1) + 1) to survive tiny kappa2
    excess = kappa2 / (root + 1.0)
    a = -n_p * math.log1p(excess / 2.0)
    b = 0.5 * n_p * excess / root
    c2 = n_p * PI2 * kappa1 / 12.0
    return EzzbConstants(kappa1=kappa1, kappa2=kappa2, a=a, b=b, c2=c2)


def _term1_integrand(h, n_p):
    return h * math.exp(-9.0 * h**4 / (20.0 * n_p)) * float(upper_tail(h))


def ezzb_terms(inp: EzzbFlatInput, epsrel: float = 1e-8) -> tuple[float, float]:
    """The two addends of the flat-spectrum EZZB: (high-SNR term, prior term)."""
    k = ezzb_flat_constants(inp)
    upper = math.sqrt(2 * k.b)
    if upper > 0:
        integral, _ = integrate.quad(
            _term1_integrand, 0.0, upper, args=(inp.n_p,), epsabs=0.0, epsrel=epsrel, limit=200
        )
        term1 = integral / k.c2
    else:
        term1 = 0.0
    term2 = inp.D**2 / 6.0 * math.exp(k.log_tail_weight)
    return term1, term2


def ezzb_flat(inp: EzzbFlatInput) -> float:
    t1, t2 = ezzb_terms(inp)
    return t1 + t2


def _bisect_db(f, what: str, lo_db=-60.0, hi_db=60.0, xtol_db=0.01, scan_db=1.0) -> float:
    """Root of ``f`` (a function of SNR in dB), returned as a linear SNR.

    ``f`` is scanned on a ``scan_db`` grid and the highest bracketing
    interval is bisected; the equal-contribution condition also holds
    deep in the prior plateau, which is not the transition of interest.
    """
    grid = np.arange(lo_db, hi_db + 0.5 * scan_db, scan_db)
    vals = np.array([f(float(x)) for x in grid])
    flips = np.nonzero((vals[:-1] > 0) != (vals[1:] > 0))[0]
    if flips.size == 0:
        raise NoTransition(
            f"{what}: no sign change on [{lo_db}, {hi_db}] dB (f={vals[0]:.3g}, {vals[-1]:.3g})",
            lo_db, hi_db, float(vals[0]), float(vals[-1]),
        )
    i = flips[-1]
    root = optimize.bisect(f, float(grid[i]), float(grid[i + 1]), xtol=xtol_db)
    return 10.0 ** (root / 10.0)


def snr2(n_p: int, K: int, D: float) -> float:
    """SNR at which both EZZB terms contribute alike (start of the transition)."""

    def f(db):
        k = ezzb_flat_constants(EzzbFlatInput(n_p, K, 10.0 ** (db / 10.0), D))
        return -math.log(4 * k.c2) - (math.log(D**2 / 6.0) + k.log_tail_weight)

    return _bisect_db(f, "snr2")


def snr3(n_p: int, K: int) -> float:
    """SNR at which the prior term reaches half its saturation value."""

    def f(db):
        k = ezzb_flat_constants(EzzbFlatInput(n_p, K, 10.0 ** (db / 10.0), 1.0))
        return k.log_tail_weight - math.log(0.25)

    return _bisect_db(f, "snr3")
