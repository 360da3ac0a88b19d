"""Frequency grids, spectrum models and SNR bookkeeping.

All frequencies are angular, in radians per pixel. Images are indexed
``image[row, col]`` with ``x`` running along columns and ``y`` along rows.

The stored half-plane keeps ``l_y = 0 .. m_r/2`` and ``l_x = -m_c/2 .. m_c/2-1``.
Rows ``l_y = 0`` and ``l_y = m_r/2`` contain both members of each conjugate
pair, so those bins get weight 1; every other bin stands for itself and its
(unstored) conjugate and gets weight 2.  ``FrequencyGrid.full_sum`` therefore
reproduces a sum over the whole DFT plane, and ``FrequencyGrid.half_sum``
(half of it) counts every independent complex coefficient exactly once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Union

import numpy as np

from .errors import InvalidGeometry, InvalidSnr, UnsupportedModel

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class ImageGeometry:
    m_r: int
    m_c: int

    def __post_init__(self):
        for name in ("m_r", "m_c"):
            v = getattr(self, name)
            if int(v) != v or v < 2 or v % 2:
                raise InvalidGeometry(f"{name} must be an even integer >= 2, got {v!r}")

    @property
    def n_p(self) -> int:
        return self.m_r * self.m_c

    @property
    def shape(self) -> tuple[int, int]:
        return (self.m_r, self.m_c)

    @classmethod
    def of(cls, image: np.ndarray) -> "ImageGeometry":
        if image.ndim != 2:
            raise InvalidGeometry(f"expected a 2D image, got shape {image.shape}")
        return cls(*image.shape)


@dataclass(frozen=True, eq=False)
class FrequencyGrid:
    """Non-redundant half-plane of DFT bins with multiplicity weights."""

    geometry: ImageGeometry
    lx: np.ndarray
    ly: np.ndarray
    wx: np.ndarray
    wy: np.ndarray
    weight: np.ndarray

    def __len__(self) -> int:
        return self.wx.size

    @property
    def bins(self):
        """``(wx, wy, weight)`` triples in storage order."""
        return list(zip(self.wx.tolist(), self.wy.tolist(), self.weight.tolist()))

    @property
    def fft_index(self) -> tuple[np.ndarray, np.ndarray]:
        """``(row, col)`` indices of every stored bin in a ``numpy.fft.fft2`` array."""
        return self.ly, self.lx % self.geometry.m_c

    def full_sum(self, values) -> float:
        """Weighted sum equal to the same integrand summed over the full plane."""
        return float(np.sum(self.weight * values))

    def half_sum(self, values) -> float:
        """Sum over independent complex DFT coefficients (half the full-plane sum)."""
        return 0.5 * self.full_sum(values)


@lru_cache(maxsize=32)
def build_frequency_grid(geometry: ImageGeometry) -> FrequencyGrid:
    m_r, m_c = geometry.m_r, geometry.m_c
    ly, lx = np.meshgrid(
        np.arange(0, m_r // 2 + 1), np.arange(-m_c // 2, m_c // 2), indexing="ij"
    )
    ly = ly.ravel()
    lx = lx.ravel()
    weight = np.where((ly == 0) | (ly == m_r // 2), 1.0, 2.0)
    arrays = dict(
        lx=lx,
        ly=ly,
        wx=TWO_PI * lx / m_c,
        wy=TWO_PI * ly / m_r,
        weight=weight,
    )
    for a in arrays.values():
        a.setflags(write=False)
    return FrequencyGrid(geometry=geometry, **arrays)


def full_plane_frequencies(geometry: ImageGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Angular frequency meshes ``(wx, wy)`` laid out like ``numpy.fft.fft2``."""
    wy = TWO_PI * np.fft.fftfreq(geometry.m_r)
    wx = TWO_PI * np.fft.fftfreq(geometry.m_c)
    return np.meshgrid(wx, wy, indexing="xy")


# ---------------------------------------------------------------------------
# spectrum models


def _check_band(amplitude, bandwidth):
    if not amplitude > 0:
        raise ValueError(f"spectrum amplitude must be positive, got {amplitude}")
    if not 0 < bandwidth <= TWO_PI * (1 + 1e-12):
        raise ValueError(f"bandwidth must lie in (0, 2*pi], got {bandwidth}")


@dataclass(frozen=True)
class Flat:
    """Constant power ``amplitude`` inside ``max(|wx|, |wy|) <= bandwidth/2``."""

    amplitude: float
    bandwidth: float = TWO_PI

    def __post_init__(self):
        _check_band(self.amplitude, self.bandwidth)


@dataclass(frozen=True)
class InverseSquare:
    """Power ``amplitude / |w|^2`` inside the band; the DC value is 0."""

    amplitude: float
    bandwidth: float = TWO_PI

    def __post_init__(self):
        _check_band(self.amplitude, self.bandwidth)


@dataclass(frozen=True, eq=False)
class Empirical:
    """Per-bin power values attached to a ``FrequencyGrid``."""

    grid: FrequencyGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (len(self.grid),):
            raise ValueError(f"expected {len(self.grid)} values, got shape {v.shape}")
        if np.any(v < 0):
            raise ValueError("empirical spectrum values must be non-negative")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_image(cls, image: np.ndarray) -> "Empirical":
        """Periodogram ``|DFT(u)|^2 / n_p`` sampled on the half-plane grid."""
        geometry = ImageGeometry.of(image)
        grid = build_frequency_grid(geometry)
        power = np.abs(np.fft.fft2(image)) ** 2 / geometry.n_p
        return cls(grid, power[grid.fft_index])


SpectrumModel = Union[Flat, InverseSquare, Empirical]


def _in_band(wx, wy, bandwidth):
    half = bandwidth / 2 * (1 + 1e-12)
    return np.maximum(np.abs(wx), np.abs(wy)) <= half


def eval_spectrum(model: SpectrumModel, wx, wy):
    """Evaluate the power spectral density at angular frequency ``(wx, wy)``.

    Accepts scalars or broadcastable arrays. ``Empirical`` models are looked
    up at the nearest stored bin, folding ``wy < 0`` onto its conjugate.
    """
    wx = np.asarray(wx, dtype=float)
    wy = np.asarray(wy, dtype=float)
    if isinstance(model, Flat):
        out = np.where(_in_band(wx, wy, model.bandwidth), model.amplitude, 0.0)
    elif isinstance(model, InverseSquare):
        r2 = wx * wx + wy * wy
        with np.errstate(divide="ignore"):
            val = np.where(r2 > 0, model.amplitude / np.where(r2 > 0, r2, 1.0), 0.0)
        out = np.where(_in_band(wx, wy, model.bandwidth), val, 0.0)
    elif isinstance(model, Empirical):
        g = model.grid.geometry
        ky = np.rint(wy * g.m_r / TWO_PI).astype(int) % g.m_r
        kx = np.rint(wx * g.m_c / TWO_PI).astype(int) % g.m_c
        conj = ky > g.m_r // 2
        ky = np.where(conj, g.m_r - ky, ky)
        kx = np.where(conj, (-kx) % g.m_c, kx)
        lx = (kx + g.m_c // 2) % g.m_c  # column offset of l_x in storage order
        out = model.values[ky * g.m_c + lx]
    else:
        raise UnsupportedModel(f"unknown spectrum model {type(model).__name__}")
    return out if out.ndim else float(out)


def spectrum_on_grid(model: SpectrumModel, grid: FrequencyGrid) -> np.ndarray:
    if isinstance(model, Empirical):
        if model.grid.geometry != grid.geometry:
            raise ValueError("empirical spectrum was sampled on a different geometry")
        return model.values
    return eval_spectrum(model, grid.wx, grid.wy)


# ---------------------------------------------------------------------------
# noise and SNR


@dataclass(frozen=True)
class NoiseSpectrum:
    """Flat in-band noise level ``N``; equals the pixel variance for white noise."""

    level: float

    def __post_init__(self):
        if not self.level > 0:
            raise ValueError(f"noise level must be positive, got {self.level}")

    @property
    def sigma2(self) -> float:
        return self.level


def snr_of(model: SpectrumModel, noise: NoiseSpectrum) -> float:
    """Gradient-energy to noise ratio of a parametric spectrum."""
    if isinstance(model, Flat):
        return model.amplitude * model.bandwidth**2 / (6.0 * noise.level)
    if isinstance(model, InverseSquare):
        return model.amplitude / noise.level
    raise UnsupportedModel("snr_of needs a parametric model; use empirical_snr for images")


def calibrate_noise(model: SpectrumModel, target_snr: float) -> NoiseSpectrum:
    if not target_snr > 0:
        raise InvalidSnr(f"target SNR must be positive, got {target_snr}")
    if isinstance(model, Flat):
        return NoiseSpectrum(model.amplitude * model.bandwidth**2 / (6.0 * target_snr))
    if isinstance(model, InverseSquare):
        return NoiseSpectrum(model.amplitude / target_snr)
    raise UnsupportedModel("calibrate_noise needs a parametric model")


def _gradient_power(image: np.ndarray) -> float:
    """``sum |DFT(u)|^2 |w|^2`` over the full plane (Nyquist taken at -pi)."""
    geometry = ImageGeometry.of(image)
    wx, wy = full_plane_frequencies(geometry)
    return float(np.sum(np.abs(np.fft.fft2(image)) ** 2 * (wx * wx + wy * wy)))


def empirical_snr(image: np.ndarray, sigma2: float) -> float:
    """SNR of a realised image, using its periodogram in place of the PSD.

    The continuous integral is replaced by a Riemann sum over the full DFT
    grid with cell area ``(2 pi)^2 / n_p`` and ``W = 2 pi``.
    """
    if not sigma2 > 0:
        raise InvalidSnr(f"noise variance must be positive, got {sigma2}")
    n_p = image.size
    return _gradient_power(image) / (n_p * n_p * sigma2)


def sigma2_for_snr(image: np.ndarray, target_snr: float) -> float:
    """Noise variance that gives ``image`` the requested empirical SNR."""
    if not target_snr > 0:
        raise InvalidSnr(f"target SNR must be positive, got {target_snr}")
    n_p = image.size
    return _gradient_power(image) / (n_p * n_p * target_snr)


def db_to_linear(snr_db):
    return 10.0 ** (np.asarray(snr_db, dtype=float) / 10.0)


def linear_to_db(snr):
    return 10.0 * np.log10(snr)
