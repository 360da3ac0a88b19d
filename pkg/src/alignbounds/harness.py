"""Monte Carlo driver, per-cell statistics and bound sweeps.

Every trial is keyed by ``(master_seed, trial_index)`` only, so all
``(K, SNR)`` cells see the same latent images, shifts and noise patterns
(common random numbers).  Trials can therefore be farmed out to any number
of worker processes without changing a single output byte.
"""

from __future__ import annotations

import csv
import io
import json
import math
import multiprocessing
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .bounds_det import DetBoundInput, ShiftPriorGG, bcrb, crbd, crbd_known, gradient_energy
from .bounds_stoch import crbs_flat_closed, crbs_natural_closed, snr1_flat, snr1_natural
from .errors import AlignBoundsError, InvalidGeometry, NoTransition, NotObserved
from .ezzb import EzzbFlatInput, ezzb_terms, snr2, snr3
from .mle import RegistrationConfig, mle_avg
from .spectral import (
    TWO_PI,
    Flat,
    ImageGeometry,
    InverseSquare,
    NoiseSpectrum,
    db_to_linear,
    linear_to_db,
    sigma2_for_snr,
    snr_of,
)
from .synth import (
    ShiftSampler,
    TrialSeed,
    UniformBox,
    UniformPositive,
    gen_flat_image,
    gen_natural_image,
    make_observations,
    read_pgm,
)

WORKERS_ENV = "ALIGNBOUNDS_WORKERS"
CSV_COLUMNS = ("k", "snr_db", "sigma2", "rmse_px", "bias2", "variance", "n_trials", "n_fail")
SCHEMA = "alignbounds.trialstats/1"
IMAGE_SOURCES = ("flat", "natural", "raster")


@dataclass(frozen=True)
class ExperimentConfig:
    image_source: str = "flat"
    geometry: ImageGeometry = ImageGeometry(64, 64)
    K_list: tuple = (1, 10)
    snr_grid_db: tuple = tuple(range(-40, 41, 2))
    trials_per_cell: int = 100
    shift_sampler: ShiftSampler = UniformBox(5.0)
    registration: RegistrationConfig = RegistrationConfig()
    master_seed: int = 0
    raster_path: str | None = None
    flat_amplitude: float = 1.0  # pixels ~ U[0, a] before centring
    natural_level: float = 1.0

    def __post_init__(self):
        if self.image_source not in IMAGE_SOURCES:
            raise ValueError(f"image_source must be one of {IMAGE_SOURCES}")
        if self.image_source == "raster" and not self.raster_path:
            raise ValueError("raster source needs raster_path")
        if self.trials_per_cell < 1:
            raise ValueError("trials_per_cell must be >= 1")
        if not self.K_list or any(int(k) != k or k < 1 for k in self.K_list):
            raise ValueError("K_list must hold integers >= 1")
        grid = np.asarray(self.snr_grid_db, dtype=float)
        if grid.size == 0 or np.any(np.diff(grid) <= 0) or not np.all(np.isfinite(grid)):
            raise ValueError("snr_grid_db must be finite and strictly increasing")
        object.__setattr__(self, "K_list", tuple(int(k) for k in self.K_list))
        object.__setattr__(self, "snr_grid_db", tuple(float(s) for s in grid))

    def to_dict(self) -> dict:
        d = {
            "image_source": self.image_source,
            "geometry": [self.geometry.m_r, self.geometry.m_c],
            "K_list": list(self.K_list),
            "snr_grid_db": list(self.snr_grid_db),
            "trials_per_cell": self.trials_per_cell,
            "shift_sampler": sampler_to_dict(self.shift_sampler),
            "registration": asdict(self.registration),
            "master_seed": self.master_seed,
            "raster_path": self.raster_path,
            "flat_amplitude": self.flat_amplitude,
            "natural_level": self.natural_level,
        }
        return d


def sampler_to_dict(s: ShiftSampler) -> dict:
    if isinstance(s, UniformBox):
        return {"kind": "uniform_box", "half_width": s.half_width}
    return {"kind": "uniform_positive", "D": s.D}


@dataclass
class TrialStats:
    """Statistics of one ``(K, SNR)`` cell, over successful trials."""

    k: int
    snr_db: float
    sigma2: float
    rmse_px: float
    bias2: float
    variance: float
    n_trials: int
    n_fail: int
    snr_db_nominal: float = float("nan")
    n_nonmonotone: int = 0
    n_unconverged: int = 0
    wall_time: float = 0.0  # never written to files

    @property
    def mse(self) -> float:
        return self.rmse_px**2

    def row(self) -> list:
        return [self.k, self.snr_db, self.sigma2, self.rmse_px, self.bias2, self.variance, self.n_trials, self.n_fail]

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("wall_time")
        # strict JSON has no NaN
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}


@dataclass(frozen=True)
class TrialOutcome:
    errors: np.ndarray | None  # (K, 2) estimated minus true
    sigma2: float
    snr_nominal: float
    nonmonotone: int = 0
    converged: bool = True


def cell_stats(k: int, snr_db: float, outcomes: Sequence[TrialOutcome], wall_time: float = 0.0) -> TrialStats:
    """Reduce trial outcomes with exactly rounded sums (order independent)."""
    ok = [o for o in outcomes if o.errors is not None]
    n, n_fail = len(ok), len(outcomes) - len(ok)
    sig = math.fsum(o.sigma2 for o in outcomes) / len(outcomes) if outcomes else float("nan")
    nominal = [o.snr_nominal for o in outcomes if np.isfinite(o.snr_nominal)]
    nom_db = float(linear_to_db(math.fsum(nominal) / len(nominal))) if nominal else float("nan")
    if n == 0:
        nan = float("nan")
        return TrialStats(k, snr_db, sig, nan, nan, nan, 0, n_fail, nom_db, 0, 0, wall_time)
    e = np.stack([np.asarray(o.errors, dtype=float).ravel() for o in ok])  # n x 2K
    means = [math.fsum(col) / n for col in e.T]
    bias2 = math.fsum(m * m for m in means) / len(means)
    variance = math.fsum(math.fsum((col - m) ** 2) / n for col, m in zip(e.T, means)) / len(means)
    mse = math.fsum((e * e).ravel()) / e.size
    return TrialStats(
        k=k,
        snr_db=snr_db,
        sigma2=sig,
        rmse_px=math.sqrt(mse),
        bias2=bias2,
        variance=variance,
        n_trials=n,
        n_fail=n_fail,
        snr_db_nominal=nom_db,
        n_nonmonotone=sum(o.nonmonotone for o in ok),
        n_unconverged=sum(not o.converged for o in ok),
        wall_time=wall_time,
    )


# ---------------------------------------------------------------------------
# trials


def _latent_image(cfg: ExperimentConfig, seed: TrialSeed):
    """Latent image and its nominal spectrum model (None for rasters)."""
    if cfg.image_source == "flat":
        u = gen_flat_image(cfg.geometry, seed, cfg.flat_amplitude)
        return u, Flat(cfg.flat_amplitude**2 / 12.0)
    if cfg.image_source == "natural":
        return gen_natural_image(cfg.geometry, seed, cfg.natural_level), InverseSquare(cfg.natural_level)
    return load_raster(cfg.raster_path), None


def load_raster(path) -> np.ndarray:
    """Raster as a zero-mean float image cropped to even dimensions."""
    u = read_pgm(path)
    m_r, m_c = (u.shape[0] // 2) * 2, (u.shape[1] // 2) * 2
    if m_r < 2 or m_c < 2:
        raise InvalidGeometry(f"raster too small: {u.shape}")
    u = u[:m_r, :m_c]
    return u - u.mean()


def run_trial(cfg: ExperimentConfig, k: int, snr_db: float, trial_index: int) -> TrialOutcome:
    seed = TrialSeed(cfg.master_seed, trial_index)
    snr = float(db_to_linear(snr_db))
    u, model = _latent_image(cfg, seed)
    sigma2 = sigma2_for_snr(u, snr)
    nominal = snr_of(model, NoiseSpectrum(sigma2)) if model is not None else float("nan")
    try:
        obs = make_observations(u, k, cfg.shift_sampler, sigma2, seed, cfg.image_source)
        res = mle_avg(obs, cfg.registration)
    except (AlignBoundsError, FloatingPointError, np.linalg.LinAlgError):
        return TrialOutcome(None, sigma2, nominal)
    return TrialOutcome(res.shifts - obs.true_shifts, sigma2, nominal, res.n_nonmonotone, res.converged)


def _run_chunk(cfg: ExperimentConfig, tasks):
    with threadpool_limits(limits=1):
        return [run_trial(cfg, k, s, t) for k, s, t in tasks]


def _worker_init():
    threadpool_limits(limits=1)


def resolve_workers(workers: int | None = None) -> int:
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1") or 1)
    return max(1, int(workers))


def _chunks(items, size):
    for i in range(0, len(items), size):
        yield items[i : i + size]


def run_monte_carlo(cfg: ExperimentConfig, workers: int | None = None, progress: Callable | None = None):
    """All cells of ``cfg``, ordered by ``K`` then SNR.

    ``workers`` defaults to ``$ALIGNBOUNDS_WORKERS`` (or 1, in process).
    BLAS is pinned to one thread everywhere so results never depend on the
    worker count.
    """
    workers = resolve_workers(workers)
    cells = [(k, s) for k in cfg.K_list for s in cfg.snr_grid_db]
    stats = []
    if workers == 1:
        for k, s in cells:
            t0 = time.perf_counter()
            out = _run_chunk(cfg, [(k, s, t) for t in range(cfg.trials_per_cell)])
            stats.append(cell_stats(k, s, out, time.perf_counter() - t0))
            if progress:
                progress(stats[-1])
        return stats

    tasks = [(k, s, t) for k, s in cells for t in range(cfg.trials_per_cell)]
    size = max(1, min(cfg.trials_per_cell, len(tasks) // (4 * workers) or 1))
    chunks = list(_chunks(tasks, size))
    saved = {v: os.environ.get(v) for v in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")}
    os.environ.update({v: "1" for v in saved})
    try:
        ctx = multiprocessing.get_context("spawn")
        t0 = time.perf_counter()
        with ProcessPoolExecutor(workers, mp_context=ctx, initializer=_worker_init) as pool:
            results = [r for chunk in pool.map(_run_chunk, [cfg] * len(chunks), chunks) for r in chunk]
        elapsed = time.perf_counter() - t0
    finally:
        for v, old in saved.items():
            if old is None:
                os.environ.pop(v, None)
            else:
                os.environ[v] = old
    n = cfg.trials_per_cell
    for i, (k, s) in enumerate(cells):
        stats.append(cell_stats(k, s, results[i * n : (i + 1) * n], elapsed / len(cells)))
        if progress:
            progress(stats[-1])
    return stats


# ---------------------------------------------------------------------------
# output


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def stats_to_csv(stats: Sequence[TrialStats], cfg: ExperimentConfig | None = None) -> str:
    buf = io.StringIO()
    buf.write(f"# alignbounds {__version__} schema={SCHEMA}\n")
    if cfg is not None:
        buf.write(f"# master_seed={cfg.master_seed}\n")
        buf.write(f"# config={json.dumps(cfg.to_dict(), sort_keys=True)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for s in stats:
        w.writerow([_fmt(v) for v in s.row()])
    return buf.getvalue()


def stats_to_json(stats: Sequence[TrialStats], cfg: ExperimentConfig | None = None) -> str:
    doc = {
        "schema": SCHEMA,
        "version": __version__,
        "master_seed": cfg.master_seed if cfg else None,
        "config": cfg.to_dict() if cfg else None,
        "results": [s.to_dict() for s in stats],
    }
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def read_stats_csv(path) -> list[TrialStats]:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    rows = list(csv.DictReader(lines))
    out = []
    for r in rows:
        out.append(
            TrialStats(
                k=int(r["k"]),
                snr_db=float(r["snr_db"]),
                sigma2=float(r["sigma2"]),
                rmse_px=float(r["rmse_px"]),
                bias2=float(r["bias2"]),
                variance=float(r["variance"]),
                n_trials=int(r["n_trials"]),
                n_fail=int(r["n_fail"]),
            )
        )
    return out


# ---------------------------------------------------------------------------
# bound curves

BOUND_KINDS = (
    "crbd",
    "crbd_kn",
    "bcrb",
    "crbs_flat",
    "crbs_natural",
    "ezzb_flat",
    "ezzb_term1",
    "ezzb_term2",
)


@dataclass
class BoundCurve:
    kind: str
    params: dict
    points: list  # (snr_db, value px^2)
    markers: dict = field(default_factory=dict)  # threshold name -> dB

    def __post_init__(self):
        if self.kind not in BOUND_KINDS:
            raise ValueError(f"unknown bound kind {self.kind!r}")
        for snr_db, v in self.points:
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{self.kind} at {snr_db} dB is not a positive finite value: {v}")

    @property
    def snr_db(self) -> np.ndarray:
        return np.array([p[0] for p in self.points])

    @property
    def values(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])

    def at(self, snr_db: float) -> float:
        for s, v in self.points:
            if abs(s - snr_db) < 1e-9:
                return v
        raise KeyError(snr_db)


def _db_or_none(fn, *args):
    try:
        return float(linear_to_db(fn(*args)))
    except NoTransition:
        return None


def sweep_bounds(
    kind: str,
    snr_grid_db: Sequence[float],
    *,
    n_p: int | None = None,
    K: int = 1,
    W: float = TWO_PI,
    D: float = 20.0,
    c: float = 2.0,
    delta: float = 1.0,
    image: np.ndarray | None = None,
) -> BoundCurve:
    """Evaluate one bound over an SNR grid (dB).

    ``crbd``, ``crbd_kn`` and ``bcrb`` need ``image``; its empirical SNR sets
    ``sigma2`` at each grid point.  The other kinds need ``n_p``.
    """
    kind = kind.replace("-", "_")
    if kind not in BOUND_KINDS:
        raise ValueError(f"unknown bound kind {kind!r}; choose from {', '.join(BOUND_KINDS)}")
    params = {"K": K}
    markers = {}
    snrs = [float(s) for s in snr_grid_db]
    lin = [float(db_to_linear(s)) for s in snrs]
    if kind in ("crbd", "crbd_kn", "bcrb"):
        if image is None:
            raise ValueError(f"{kind} needs an image")
        image = np.asarray(image, dtype=float)
        g = gradient_energy(image)
        params["shape"] = list(image.shape)
        fn = {"crbd": crbd, "crbd_kn": crbd_known}.get(kind)
        if kind == "bcrb":
            prior = ShiftPriorGG(c, delta)
            params.update(c=c, delta=delta, lambda2=prior.lambda2)
            vals = [bcrb(DetBoundInput(g, sigma2_for_snr(image, s), K), prior) for s in lin]
        else:
            vals = [fn(DetBoundInput(g, sigma2_for_snr(image, s), K)) for s in lin]
    else:
        if n_p is None:
            raise ValueError(f"{kind} needs n_p")
        params["n_p"] = n_p
        if kind == "crbs_flat":
            params["W"] = W
            vals = [crbs_flat_closed(n_p, K, W, s) for s in lin]
            markers["snr1"] = float(linear_to_db(snr1_flat(K, W)))
        elif kind == "crbs_natural":
            params["W"] = W
            vals = [crbs_natural_closed(n_p, K, W, s) for s in lin]
            markers["snr1"] = float(linear_to_db(snr1_natural(K, W)))
        else:
            params["D"] = D
            terms = [ezzb_terms(EzzbFlatInput(n_p, K, s, D)) for s in lin]
            pick = {"ezzb_flat": lambda t: t[0] + t[1], "ezzb_term1": lambda t: t[0], "ezzb_term2": lambda t: t[1]}
            vals = [pick[kind](t) for t in terms]
            markers["snr1"] = float(linear_to_db(snr1_flat(K)))
            markers["snr2"] = _db_or_none(snr2, n_p, K, D)
            markers["snr3"] = _db_or_none(snr3, n_p, K)
            if kind == "ezzb_term2":
                # the prior term underflows to 0 at high SNR; keep the curve positive
                keep = [(s, v) for s, v in zip(snrs, vals) if v > 0]
                return BoundCurve(kind, params, keep, markers)
    return BoundCurve(kind, params, list(zip(snrs, vals)), markers)


def curve_to_csv(curves: Sequence[BoundCurve]) -> str:
    buf = io.StringIO()
    buf.write(f"# alignbounds {__version__} schema=alignbounds.boundcurve/1\n")
    for c in curves:
        buf.write(f"# {c.kind} params={json.dumps(c.params, sort_keys=True)} markers_db={json.dumps(c.markers, sort_keys=True)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kind", "k", "snr_db", "value"])
    for c in curves:
        for s, v in c.points:
            w.writerow([c.kind, c.params.get("K", ""), _fmt(s), _fmt(float(v))])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# breaking point


def flat_bound(n_p: int, K: int, W: float = TWO_PI) -> Callable[[float], float]:
    return lambda snr: crbs_flat_closed(n_p, K, W, snr)


def estimate_breaking_point(
    stats: Sequence[TrialStats], bound: Callable[[float], float], factor: float = 2.0
) -> float:
    """Lowest SNR (dB) of the run of cells, ending at the top of the grid, with RMSE <= factor*sqrt(bound).

    ``stats`` must belong to one ``K``; ``bound`` maps linear SNR to px^2.
    Below the transition the bound itself grows past the error of a
    saturated estimator, so only the top-anchored run is meaningful.
    """
    if len({s.k for s in stats}) > 1:
        raise ValueError("breaking point needs cells of a single K")
    cells = sorted(stats, key=lambda s: s.snr_db)
    if len(cells) < 2:
        raise ValueError("need at least two SNR cells")
    ok = [
        s.n_trials > 0 and s.rmse_px <= factor * math.sqrt(bound(float(db_to_linear(s.snr_db)))) for s in cells
    ]
    if not ok[-1]:
        raise NotObserved("estimator never reaches the bound on this grid")
    i = len(cells) - 1
    while i > 0 and ok[i - 1]:
        i -= 1
    return cells[i].snr_db
