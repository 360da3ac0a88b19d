"""Multi-frame maximum-likelihood registration by alternating averaging.

Each frame is matched to a running estimate of the latent image, and that
estimate is recomputed as the mean of the back-shifted frames.  The
pairwise step maximises the cross-correlation of the two images over every
bin except the Nyquist row and column.  A real-valued subpixel shift can only
scale Nyquist content by ``cos(pi tau)``, so back-shifting is not invertible
there; keeping those bins lets each frame's own contribution to the average
drag its estimate off the optimum (about 40% excess MSE at K = 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import DegenerateInput
from .spectral import ImageGeometry
from .synth import ObservationSet

_HALF_WINDOW = 1.5  # px, first refinement stage
_DECADE = 10


@dataclass(frozen=True)
class RegistrationConfig:
    upsample_factor: int = 100
    max_iters: int = 50
    tol: float = 1e-3
    ref_frame: int = 0
    exclude_self: bool = False  # register frame i against the mean of the other frames

    def __post_init__(self):
        if int(self.upsample_factor) != self.upsample_factor or self.upsample_factor < 1:
            raise ValueError("upsample_factor must be an integer >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.ref_frame < 0:
            raise ValueError("ref_frame must be a frame index")


@dataclass(eq=False)
class MleResult:
    shifts: np.ndarray  # (K, 2), relative to frame 0
    fused: np.ndarray
    iterations: int
    converged: bool
    per_iter_shift_delta: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    config: RegistrationConfig = field(default_factory=RegistrationConfig)

    @property
    def n_nonmonotone(self) -> int:
        """Iterations whose L2 objective went up (diagnostic only)."""
        obj = np.asarray(self.objective)
        if obj.size < 2:
            return 0
        slack = 1e-12 * np.abs(obj[:-1]).max()
        return int(np.sum(np.diff(obj) > slack))


# ---------------------------------------------------------------------------
# phase ramps shared with synth.fourier_shift
#
# Spectra are kept as ``rfft2`` halves of shape ``(m_r, m_c // 2 + 1)``.  A
# full-plane sum of a Hermitian quantity is recovered with the column
# weights ``[1, 2, ..., 2, 1]``.


@lru_cache(maxsize=64)
def _freqs(n: int, half: bool = False) -> np.ndarray:
    w = 2 * np.pi * (np.fft.rfftfreq(n) if half else np.fft.fftfreq(n))
    w.setflags(write=False)
    return w


@lru_cache(maxsize=64)
def _col_weights(m_c: int) -> np.ndarray:
    w = np.full(m_c // 2 + 1, 2.0)
    w[0] = w[-1] = 1.0
    w.setflags(write=False)
    return w


def _ramps(n: int, t, half: bool = False) -> np.ndarray:
    """``exp(-i w t)`` for every ``t`` (rows) and bin (columns); Nyquist is ``cos(pi t)``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    r = np.exp(-1j * np.outer(t, _freqs(n, half)))
    r[:, n // 2] = np.cos(np.pi * t)
    return r


@lru_cache(maxsize=64)
def _offset_table(n: int, half: bool, step: float, count: int) -> np.ndarray:
    offs = step * np.arange(-count, count + 1)
    tab = np.exp(1j * np.outer(offs, _freqs(n, half)))
    tab.setflags(write=False)
    return tab


def _grid_ramps_conj(n: int, half: bool, center: float, step: float, count: int):
    """Conjugate ramps at ``center + step * (-count .. count)``."""
    t = center + step * np.arange(-count, count + 1)
    return t, _offset_table(n, half, step, count) * np.exp(1j * center * _freqs(n, half))


def _frame_ramps(shape, shifts: np.ndarray):
    """Separable ramps of every frame: ``(n, m_r)`` and ``(n, m_c // 2 + 1)``."""
    return _ramps(shape[0], shifts[:, 1]), _ramps(shape[1], shifts[:, 0], half=True)


# ---------------------------------------------------------------------------
# pairwise registration


def _signed(i: int, n: int) -> int:
    return i - n if i >= n // 2 else i


def _correlation(X, m_c, ay, ax):
    """``<z, s_tau(r)>`` (times ``n_p``) on a grid of shifts.

    ``X = Z conj(R)`` is a half spectrum with its Nyquist lines removed;
    ``ay``/``ax`` hold the conjugate ramps of the candidate shifts.
    """
    return (ay @ X @ (ax * _col_weights(m_c)).T).real


@lru_cache(maxsize=16)
def _stages(upsample_factor: int):
    """``(half_window, step)`` pairs of the cascaded refinement."""
    final = 1.0 / upsample_factor
    out = []
    half, step = _HALF_WINDOW, 1.0
    while step > final * (1 + 1e-9):
        step = max(step / _DECADE, final)
        out.append((half, step))
        half = _HALF_WINDOW * step
    return tuple(out)


def _register_spectra(Z: np.ndarray, R: np.ndarray, shape, upsample_factor: int) -> np.ndarray:
    """Registration of half spectra ``Z`` (moving) against ``R`` (reference)."""
    m_r, m_c = shape
    X = Z * R.conj()
    X[m_r // 2, :] = 0.0
    X[:, m_c // 2] = 0.0
    cc = np.fft.irfft2(X, s=shape)
    iy, ix = np.unravel_index(int(np.argmax(cc)), cc.shape)
    ty, tx = float(_signed(iy, m_r)), float(_signed(ix, m_c))
    for half, step in _stages(upsample_factor):
        n = int(round(half / step))
        gy, ay = _grid_ramps_conj(m_r, False, ty, step, n)
        gx, ax = _grid_ramps_conj(m_c, True, tx, step, n)
        J = _correlation(X, m_c, ay, ax)
        jy, jx = np.unravel_index(int(np.argmax(J)), J.shape)
        ty, tx = float(gy[jy]), float(gx[jx])
    return np.array([tx, ty])


def _check_signal(F: np.ndarray, what: str):
    if not np.any(np.abs(F) > 0):
        raise DegenerateInput(f"{what} carries no signal")


def register_pair(moving: np.ndarray, reference: np.ndarray, upsample_factor: int = 100) -> np.ndarray:
    """Shift ``(tau_x, tau_y)`` such that ``fourier_shift(reference, tau)`` best matches ``moving``."""
    moving = np.asarray(moving, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if moving.shape != reference.shape:
        raise ValueError(f"shape mismatch {moving.shape} vs {reference.shape}")
    ImageGeometry.of(moving)
    Z, R = np.fft.rfft2(moving), np.fft.rfft2(reference)
    _check_signal(Z, "moving image")
    _check_signal(R, "reference image")
    return _register_spectra(Z, R, moving.shape, int(upsample_factor))


# ---------------------------------------------------------------------------
# alternating estimator


def _back_shifted(Zs: np.ndarray, ramps) -> np.ndarray:
    ry, rx = ramps
    # back-shifting by tau multiplies by the conjugate ramp
    return Zs * ry.conj()[:, :, None] * rx.conj()[:, None, :]


def _average_spectrum(Zs: np.ndarray, ramps) -> np.ndarray:
    return _back_shifted(Zs, ramps).mean(axis=0)


def shifted_average(frames, shifts) -> np.ndarray:
    """Mean of the frames after moving each back by its shift.

    ``shifts`` holds one vector per frame, frame 0 included.
    """
    frames = np.asarray(frames, dtype=float)
    if frames.ndim == 2:
        frames = frames[None]
    shape = frames.shape[1:]
    ImageGeometry(*shape)
    shifts = np.asarray(shifts, dtype=float).reshape(len(frames), 2)
    Zs = np.fft.rfft2(frames)
    return np.fft.irfft2(_average_spectrum(Zs, _frame_ramps(shape, shifts)), s=shape)


def _objective(Zs, U, ramps, shape) -> float:
    """``sum_i ||z_i - s_tau_i(u)||^2`` via Parseval."""
    ry, rx = ramps
    resid = Zs - U[None] * ry[:, :, None] * rx[:, None, :]
    power = (resid.real**2 + resid.imag**2) @ _col_weights(shape[1])
    return float(power.sum()) / (shape[0] * shape[1])


def mle_avg(obs, config: RegistrationConfig | None = None, initial_shifts=None) -> MleResult:
    """Alternate latent-image averaging and per-frame registration.

    ``obs`` is an ``ObservationSet`` or a ``(K+1, m_r, m_c)`` array.
    ``initial_shifts`` optionally replaces the pairwise initialisation
    (``K`` vectors, or ``K+1`` with frame 0 first).  Reported shifts are
    re-centred so that frame 0 sits at the origin.

    By default every frame is matched against the mean of all frames,
    itself included.  That self term pulls a mis-registered frame towards
    its current position; ``config.exclude_self`` matches each frame against
    the mean of the others instead, which is exact coordinate ascent on the
    concentrated likelihood.
    """
    config = config or RegistrationConfig()
    frames = obs.frames if isinstance(obs, ObservationSet) else np.asarray(obs, dtype=float)
    if frames.ndim != 3 or frames.shape[0] < 2:
        raise ValueError("need at least two frames")
    shape = frames.shape[1:]
    ImageGeometry(*shape)
    n = frames.shape[0]
    if not 0 <= config.ref_frame < n:
        raise ValueError(f"ref_frame {config.ref_frame} out of range")
    up = int(config.upsample_factor)
    Zs = np.fft.rfft2(frames)
    for i, Z in enumerate(Zs):
        _check_signal(Z, f"frame {i}")

    if initial_shifts is None:
        ref = Zs[config.ref_frame]
        tau = np.array([_register_spectra(Z, ref, shape, up) for Z in Zs])
    else:
        tau = np.asarray(initial_shifts, dtype=float).reshape(-1, 2)
        if tau.shape[0] == n - 1:
            tau = np.vstack([np.zeros((1, 2)), tau])
        if tau.shape[0] != n:
            raise ValueError(f"expected {n - 1} or {n} initial shifts")
    tau = tau - tau[0]

    deltas, objective = [], []
    converged = False
    it = 0
    ramps = _frame_ramps(shape, tau)
    back = _back_shifted(Zs, ramps)
    U = back.mean(axis=0)
    for it in range(1, config.max_iters + 1):
        if config.exclude_self:
            total = back.sum(axis=0)
            refs = [(total - b) / (n - 1) for b in back]
        else:
            refs = [U] * n
        new = np.array([_register_spectra(Z, R, shape, up) for Z, R in zip(Zs, refs)])
        new -= new[0]
        delta = float(np.max(np.abs(new - tau)))
        tau = new
        ramps = _frame_ramps(shape, tau)
        back = _back_shifted(Zs, ramps)
        U = back.mean(axis=0)
        deltas.append(delta)
        objective.append(_objective(Zs, U, ramps, shape))
        if delta < config.tol:
            converged = True
            break
    return MleResult(
        shifts=tau[1:].copy(),
        fused=np.fft.irfft2(U, s=shape),
        iterations=it,
        converged=converged,
        per_iter_shift_delta=deltas,
        objective=objective,
        config=config,
    )


def mle_pairwise(obs, upsample_factor: int = 100) -> np.ndarray:
    """Baseline: every frame registered to frame 0 on its own."""
    frames = obs.frames if isinstance(obs, ObservationSet) else np.asarray(obs, dtype=float)
    return np.array([register_pair(f, frames[0], upsample_factor) for f in frames[1:]])


def rmse(estimated, truth) -> float:
    d = np.asarray(estimated, dtype=float) - np.asarray(truth, dtype=float)
    return math.sqrt(float(np.mean(d * d)))
