"""Synthetic latent images, subpixel shifts and noisy observation sets.

Shifts are cyclic and applied in the Fourier domain, so the discrete
observation model used by the bounds holds exactly.  Randomness comes from
Philox streams keyed by ``(master_seed, trial_index, stream)``; a trial can
be regenerated on its own, in any process, in any order.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image

from .errors import InvalidGeometry
from .spectral import ImageGeometry, full_plane_frequencies

# stream ids inside one trial
STREAM_IMAGE = 0
STREAM_SHIFTS = 1
STREAM_FRAME0 = 2  # frame i draws its noise from STREAM_FRAME0 + i


def rng_for(master_seed: int, trial_index: int = 0, stream: int = 0) -> np.random.Generator:
    """Counter-based generator for one ``(seed, trial, stream)`` key."""
    ss = np.random.SeedSequence([int(master_seed), int(trial_index), int(stream)])
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class TrialSeed:
    """Seed key of one Monte Carlo trial; expands into per-frame streams."""

    master_seed: int
    trial_index: int = 0

    def stream(self, stream: int) -> np.random.Generator:
        return rng_for(self.master_seed, self.trial_index, stream)

    def as_dict(self) -> dict:
        return {"master_seed": self.master_seed, "trial_index": self.trial_index}


RngLike = Union[np.random.Generator, TrialSeed]


def _image_rng(rng: RngLike) -> np.random.Generator:
    return rng.stream(STREAM_IMAGE) if isinstance(rng, TrialSeed) else rng


# ---------------------------------------------------------------------------
# latent images


def gen_flat_image(geometry: ImageGeometry, rng: RngLike, amplitude: float = 1.0) -> np.ndarray:
    """I.i.d. ``U[0, amplitude]`` pixels with the sample mean removed."""
    u = _image_rng(rng).uniform(0.0, amplitude, size=geometry.shape)
    return u - u.mean()


def gen_natural_image(geometry: ImageGeometry, rng: RngLike, s_n: float = 1.0) -> np.ndarray:
    """Gaussian image whose power spectrum is ``s_n / |w|^2`` (DC removed).

    The transform of real white noise is already Hermitian, so shaping it by a
    real, even filter keeps the inverse transform real.
    """
    white = _image_rng(rng).standard_normal(geometry.shape)
    wx, wy = full_plane_frequencies(geometry)
    r = np.hypot(wx, wy)
    gain = np.zeros_like(r)
    np.divide(math.sqrt(s_n), r, out=gain, where=r > 0)
    return np.fft.ifft2(np.fft.fft2(white) * gain).real


def _ramp(n: int, t: float) -> np.ndarray:
    """1D phase ramp ``exp(-i w t)`` in fft order; Nyquist uses ``cos(pi t)``."""
    w = 2 * np.pi * np.fft.fftfreq(n)
    r = np.exp(-1j * w * t)
    r[n // 2] = math.cos(math.pi * t)
    return r


def fourier_shift(image: np.ndarray, tau) -> np.ndarray:
    """Cyclic shift ``u(x - tau)`` with ``tau = (tau_x, tau_y)`` in pixels."""
    image = np.asarray(image, dtype=float)
    m_r, m_c = ImageGeometry.of(image).shape
    tx, ty = float(tau[0]), float(tau[1])
    ramp = np.outer(_ramp(m_r, ty), _ramp(m_c, tx))
    return np.fft.ifft2(np.fft.fft2(image) * ramp).real


# ---------------------------------------------------------------------------
# shifts


@dataclass(frozen=True)
class UniformBox:
    """Each component uniform on ``[-half_width, half_width]``."""

    half_width: float = 5.0

    def __post_init__(self):
        if not self.half_width > 0:
            raise ValueError("half_width must be positive")

    def sample(self, rng: np.random.Generator, K: int) -> np.ndarray:
        return rng.uniform(-self.half_width, self.half_width, size=(K, 2))

    def contains(self, shifts) -> bool:
        return bool(np.all(np.abs(shifts) <= self.half_width))


@dataclass(frozen=True)
class UniformPositive:
    """Each component uniform on ``[0, D]``."""

    D: float

    def __post_init__(self):
        if not self.D > 0:
            raise ValueError("D must be positive")

    def sample(self, rng: np.random.Generator, K: int) -> np.ndarray:
        return rng.uniform(0.0, self.D, size=(K, 2))

    def contains(self, shifts) -> bool:
        s = np.asarray(shifts)
        return bool(np.all((s >= 0) & (s <= self.D)))


ShiftSampler = Union[UniformBox, UniformPositive]


# ---------------------------------------------------------------------------
# observations


@dataclass(frozen=True, eq=False)
class ObservationSet:
    frames: np.ndarray  # (K+1, m_r, m_c)
    true_shifts: np.ndarray  # (K, 2), frame 0 is the reference at (0, 0)
    sigma2: float
    source_model: str = "unknown"
    seed: dict = field(default_factory=dict)

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=float)
        s = np.asarray(self.true_shifts, dtype=float).reshape(-1, 2)
        if f.ndim != 3 or f.shape[0] < 2:
            raise InvalidGeometry(f"frames must be (K+1, m_r, m_c) with K >= 1, got {f.shape}")
        ImageGeometry(*f.shape[1:])
        if s.shape[0] != f.shape[0] - 1:
            raise ValueError(f"{f.shape[0]} frames need {f.shape[0] - 1} shifts, got {s.shape[0]}")
        if not np.all(np.isfinite(s)):
            raise ValueError("true shifts must be finite")
        if not self.sigma2 >= 0:
            raise ValueError("sigma2 must be non-negative")
        object.__setattr__(self, "frames", f)
        object.__setattr__(self, "true_shifts", s)

    @property
    def K(self) -> int:
        return self.frames.shape[0] - 1

    @property
    def geometry(self) -> ImageGeometry:
        return ImageGeometry(*self.frames.shape[1:])

    def subset(self, K: int) -> "ObservationSet":
        """Reference frame plus the first ``K`` shifted frames."""
        if not 1 <= K <= self.K:
            raise ValueError(f"K must lie in [1, {self.K}]")
        return ObservationSet(
            self.frames[: K + 1], self.true_shifts[:K], self.sigma2, self.source_model, dict(self.seed)
        )


def make_observations(
    u: np.ndarray,
    K: int,
    sampler: ShiftSampler,
    sigma2: float,
    rng: RngLike,
    source_model: str = "unknown",
) -> ObservationSet:
    """Frame 0 is ``u`` plus noise; frame ``i`` is ``u`` shifted by ``tau_i`` plus noise.

    With a ``TrialSeed`` the shifts and each frame's noise come from their own
    streams, so the first frames of a ``K = 10`` set equal a ``K = 1`` set
    built from the same seed.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if not sigma2 >= 0:
        raise ValueError("sigma2 must be non-negative")
    u = np.asarray(u, dtype=float)
    ImageGeometry.of(u)
    if isinstance(rng, TrialSeed):
        shift_rng = rng.stream(STREAM_SHIFTS)
        noise_rngs = [rng.stream(STREAM_FRAME0 + i) for i in range(K + 1)]
        seed = rng.as_dict()
    else:
        shift_rng = rng
        noise_rngs = [rng] * (K + 1)
        seed = {}
    shifts = sampler.sample(shift_rng, K)
    sd = math.sqrt(sigma2)
    frames = np.empty((K + 1,) + u.shape)
    for i in range(K + 1):
        clean = u if i == 0 else fourier_shift(u, shifts[i - 1])
        frames[i] = clean + sd * noise_rngs[i].standard_normal(u.shape)
    return ObservationSet(frames, shifts, float(sigma2), source_model, seed)


# ---------------------------------------------------------------------------
# file formats


def read_pgm(path) -> np.ndarray:
    """Load an 8- or 16-bit grayscale raster as float64."""
    with Image.open(path) as im:
        if im.mode not in ("L", "I", "I;16", "I;16B"):
            raise ValueError(f"expected a grayscale image, got mode {im.mode}")
        return np.asarray(im, dtype=float)


def write_pgm(path, image: np.ndarray, bits: int = 8, rescale: bool = True) -> None:
    """Store ``image`` as a binary PGM; ``rescale`` maps its range onto ``[0, maxval]``."""
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    maxval = (1 << bits) - 1
    a = np.asarray(image, dtype=float)
    if rescale:
        lo, hi = float(a.min()), float(a.max())
        a = (a - lo) / (hi - lo) * maxval if hi > lo else np.zeros_like(a)
    a = np.clip(np.rint(a), 0, maxval).astype(np.uint8 if bits == 8 else np.uint16)
    Image.fromarray(a).save(path, format="PPM")


_MAGIC = b"ALGNOBS\x00"
_VERSION = 1
_HEADER = struct.Struct("<8sIIIIdI")


def write_observations(path, obs: ObservationSet) -> None:
    """Binary container: fixed header, JSON metadata, shifts, then frames (LE float64)."""
    meta = json.dumps({"source_model": obs.source_model, "seed": obs.seed}, sort_keys=True).encode()
    m_r, m_c = obs.geometry.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, m_r, m_c, obs.K, obs.sigma2, len(meta)))
        fh.write(meta)
        fh.write(obs.true_shifts.astype("<f8").tobytes())
        fh.write(obs.frames.astype("<f8").tobytes())


def read_observations(path) -> ObservationSet:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError("truncated observation file")
    magic, version, m_r, m_c, K, sigma2, n_meta = _HEADER.unpack_from(data)
    if magic != _MAGIC or version != _VERSION:
        raise ValueError("not an observation-set file (bad magic or version)")
    off = _HEADER.size
    meta = json.loads(data[off : off + n_meta])
    off += n_meta
    n_shift = 2 * K
    n_pix = (K + 1) * m_r * m_c
    if len(data) != off + 8 * (n_shift + n_pix):
        raise ValueError("observation file size does not match its header")
    shifts = np.frombuffer(data, "<f8", n_shift, off).reshape(K, 2)
    frames = np.frombuffer(data, "<f8", n_pix, off + 8 * n_shift).reshape(K + 1, m_r, m_c)
    return ObservationSet(frames.copy(), shifts.copy(), sigma2, meta["source_model"], meta["seed"])
