"""Command-line entry point: ``alignbounds {bounds,thresholds,simulate,compare,synth}``.

SNR values are given in dB.  Exit codes: 0 success, 2 usage error, 3
numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bounds_stoch import snr1_flat, snr1_natural
from .errors import NoTransition
from .ezzb import snr2, snr3
from .harness import (
    BOUND_KINDS,
    WORKERS_ENV,
    ExperimentConfig,
    curve_to_csv,
    load_raster,
    read_stats_csv,
    resolve_workers,
    run_monte_carlo,
    stats_to_csv,
    stats_to_json,
    sweep_bounds,
)
from .mle import RegistrationConfig
from .spectral import TWO_PI, ImageGeometry, db_to_linear, linear_to_db, sigma2_for_snr
from .synth import (
    TrialSeed,
    UniformBox,
    UniformPositive,
    gen_flat_image,
    gen_natural_image,
    make_observations,
    write_observations,
    write_pgm,
)

DEFAULT_SEED = 0
_VALUE_OPTS = {"--snr-db", "--k", "--np", "--d", "--c", "--delta", "--w"}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument helpers


def parse_grid(text: str) -> list[float]:
    """``lo:step:hi`` (inclusive) or a comma list."""
    text = text.strip()
    try:
        if ":" in text:
            parts = [float(p) for p in text.split(":")]
            if len(parts) != 3:
                raise ValueError
            lo, step, hi = parts
            if step <= 0 or hi < lo:
                raise ValueError
            n = int(math.floor((hi - lo) / step + 1e-9)) + 1
            return [round(lo + i * step, 10) for i in range(n)]
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}; use lo:step:hi or a,b,c") from None


def parse_ints(text: str) -> list[int]:
    try:
        vals = [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def parse_floats(text: str) -> list[float]:
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad number list {text!r}") from None


def parse_size(text: str) -> ImageGeometry:
    try:
        parts = [int(p) for p in text.lower().split("x")]
        if len(parts) == 1:
            parts *= 2
        return ImageGeometry(*parts)
    except (ValueError, TypeError) as exc:
        raise argparse.ArgumentTypeError(f"bad size {text!r}: {exc}") from None


def _join_negative_values(argv):
    """Let ``--snr-db -40:1:40`` through argparse by gluing it into one token."""
    out, i = [], 0
    while i < len(argv):
        tok = argv[i]
        if tok in _VALUE_OPTS and i + 1 < len(argv) and argv[i + 1][:1] == "-" and argv[i + 1][1:2].isdigit():
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
            continue
        out.append(tok)
        i += 1
    return out


def _emit(text: str, out: str | None):
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _echo(config: dict):
    sys.stderr.write("# resolved config: " + json.dumps(config, sort_keys=True) + "\n")


def _seed(args) -> int:
    if args.seed is None:
        sys.stderr.write(f"# seed not given; using {DEFAULT_SEED}\n")
        return DEFAULT_SEED
    return args.seed


def _latent(source: str, geometry: ImageGeometry, seed: int) -> np.ndarray:
    if source == "flat":
        return gen_flat_image(geometry, TrialSeed(seed, 0))
    if source == "natural":
        return gen_natural_image(geometry, TrialSeed(seed, 0))
    return load_raster(source)


def _sampler(args):
    if args.prior_d is not None:
        return UniformPositive(args.prior_d)
    return UniformBox(args.box)


# ---------------------------------------------------------------------------
# subcommands


def cmd_bounds(args) -> int:
    kind = args.kind.replace("-", "_")
    if kind not in BOUND_KINDS:
        raise UsageError(f"unknown --kind {args.kind}")
    image = None
    n_p = args.np
    seed = None
    if kind in ("crbd", "crbd_kn", "bcrb"):
        seed = _seed(args)
        image = _latent(args.source, args.size, seed)
    elif n_p is None:
        raise UsageError(f"--np is required for {args.kind}")
    config = {
        "command": "bounds",
        "kind": kind,
        "np": n_p,
        "k": args.k,
        "snr_db": args.snr_db,
        "d": args.d,
        "c": args.c,
        "delta": args.delta,
        "w": args.w,
        "source": args.source if image is not None else None,
        "size": list(args.size.shape) if image is not None else None,
        "seed": seed,
        "version": __version__,
    }
    _echo(config)
    curves = [
        sweep_bounds(kind, args.snr_db, n_p=n_p, K=k, W=args.w, D=args.d, c=args.c, delta=args.delta, image=image)
        for k in args.k
    ]
    if args.format == "json":
        doc = {
            "version": __version__,
            "config": config,
            "curves": [
                {"kind": c.kind, "params": c.params, "markers_db": c.markers, "points": c.points} for c in curves
            ],
        }
        text = json.dumps(doc, sort_keys=True, indent=1) + "\n"
    else:
        text = f"# config={json.dumps(config, sort_keys=True)}\n" + curve_to_csv(curves)
    _emit(text, args.out)
    return 0


def cmd_thresholds(args) -> int:
    config = {"command": "thresholds", "np": args.np, "k": args.k, "d": args.d, "w": args.w, "version": __version__}
    _echo(config)
    buf = io.StringIO()
    buf.write(f"# alignbounds {__version__} config={json.dumps(config, sort_keys=True)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n_p", "k", "d", "snr1_flat_db", "snr1_natural_db", "snr2_db", "snr3_db", "note"])

    def db(x):
        return repr(float(linear_to_db(x)))

    for n_p in args.np:
        for k in args.k:
            for d in args.d:
                notes = []
                try:
                    s2 = db(snr2(n_p, k, d))
                except NoTransition as exc:
                    s2 = ""
                    notes.append(str(exc))
                try:
                    s3 = db(snr3(n_p, k))
                except NoTransition as exc:
                    s3 = ""
                    notes.append(str(exc))
                w.writerow([n_p, k, d, db(snr1_flat(k, args.w)), db(snr1_natural(k, args.w)), s2, s3, "; ".join(notes)])
    _emit(buf.getvalue(), args.out)
    return 0


def _experiment(args, seed) -> ExperimentConfig:
    source = args.source
    kw = {}
    if source in ("flat", "natural"):
        geometry = args.size
    else:
        geometry = ImageGeometry(*load_raster(source).shape)
        kw["raster_path"] = source
        source = "raster"
    return ExperimentConfig(
        image_source=source,
        geometry=geometry,
        K_list=tuple(args.k),
        snr_grid_db=tuple(args.snr_db),
        trials_per_cell=args.trials,
        shift_sampler=_sampler(args),
        registration=RegistrationConfig(
            upsample_factor=args.upsample,
            max_iters=args.max_iters,
            tol=args.tol,
            exclude_self=args.exclude_self,
        ),
        master_seed=seed,
        **kw,
    )


def cmd_simulate(args) -> int:
    seed = _seed(args)
    cfg = _experiment(args, seed)
    workers = resolve_workers(args.workers)
    _echo({"command": "simulate", **cfg.to_dict(), "version": __version__})
    sys.stderr.write(f"# workers={workers}\n")

    def progress(s):
        if not args.quiet:
            sys.stderr.write(f"k={s.k} snr_db={s.snr_db:g} rmse_px={s.rmse_px:.4g} fail={s.n_fail}\n")

    stats = run_monte_carlo(cfg, workers=workers, progress=progress)
    _emit(stats_to_csv(stats, cfg), args.out)
    if args.json:
        Path(args.json).write_text(stats_to_json(stats, cfg))
    return 0


def _read_curves_csv(path):
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    table = {}
    for r in csv.DictReader(lines):
        table[(r["kind"], int(r["k"]), round(float(r["snr_db"]), 9))] = float(r["value"])
    return table


def cmd_compare(args) -> int:
    stats = read_stats_csv(args.stats)
    curves = _read_curves_csv(args.bounds)
    kinds = sorted({key[0] for key in curves})
    if not kinds:
        raise UsageError("bounds file holds no curves")
    config = {"command": "compare", "stats": args.stats, "bounds": args.bounds, "kinds": kinds, "version": __version__}
    _echo(config)
    buf = io.StringIO()
    buf.write(f"# alignbounds {__version__} config={json.dumps(config, sort_keys=True)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "snr_db", "rmse_px"] + [c for kind in kinds for c in (kind, f"ratio_{kind}")])
    missing = []
    for s in stats:
        row = [s.k, repr(s.snr_db), repr(s.rmse_px)]
        for kind in kinds:
            key = (kind, s.k, round(s.snr_db, 9))
            if key not in curves:
                missing.append(f"{kind} k={s.k} snr_db={s.snr_db:g}")
                continue
            b = curves[key]
            row += [repr(b), repr(s.rmse_px**2 / b)]
        w.writerow(row)
    if missing:
        raise UsageError("bound grid does not cover the simulated cells: " + ", ".join(missing[:5]))
    _emit(buf.getvalue(), args.out)
    return 0


def cmd_synth(args) -> int:
    seed = _seed(args)
    k = args.k[0]
    snr_db = args.snr_db[0]
    config = {
        "command": "synth",
        "model": args.model,
        "size": list(args.size.shape),
        "k": k,
        "snr_db": snr_db,
        "sampler": {"box": args.box, "prior_d": args.prior_d},
        "seed": seed,
        "version": __version__,
    }
    _echo(config)
    trial = TrialSeed(seed, 0)
    u = _latent(args.model, args.size, seed)
    sigma2 = sigma2_for_snr(u, float(db_to_linear(snr_db)))
    tag = args.model if args.model in ("flat", "natural") else "raster"
    obs = make_observations(u, k, _sampler(args), sigma2, trial, tag)
    write_observations(args.out, obs)
    if args.pgm_dir:
        d = Path(args.pgm_dir)
        d.mkdir(parents=True, exist_ok=True)
        for i, f in enumerate(obs.frames):
            write_pgm(d / f"frame_{i:03d}.pgm", f, bits=16)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="alignbounds", description="Bounds and Monte Carlo for multi-image alignment.")
    p.add_argument("--version", action="version", version=f"alignbounds {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common_out(sp):
        sp.add_argument("--out", default=None, help="output path (default: stdout)")

    def seed_opt(sp):
        sp.add_argument("--seed", type=int, default=None, help=f"master seed (default {DEFAULT_SEED})")

    b = sub.add_parser("bounds", help="evaluate a bound over an SNR grid")
    b.add_argument("--kind", required=True, help="one of " + ", ".join(k.replace("_", "-") for k in BOUND_KINDS))
    b.add_argument("--np", type=int, default=None, help="number of pixels (stochastic/EZZB kinds)")
    b.add_argument("--k", type=parse_ints, default=[1])
    b.add_argument("--snr-db", type=parse_grid, default=parse_grid("-40:1:40"))
    b.add_argument("--d", type=float, default=20.0, help="uniform prior width D (px)")
    b.add_argument("--c", type=float, default=2.0, help="generalized Gaussian shape")
    b.add_argument("--delta", type=float, default=1.0, help="generalized Gaussian scale")
    b.add_argument("--w", type=float, default=TWO_PI, help="bandwidth (rad/px)")
    b.add_argument("--source", default="flat", help="flat, natural or a PGM path (crbd/bcrb kinds)")
    b.add_argument("--size", type=parse_size, default=ImageGeometry(64, 64))
    b.add_argument("--format", choices=("csv", "json"), default="csv")
    seed_opt(b)
    common_out(b)
    b.set_defaults(func=cmd_bounds)

    t = sub.add_parser("thresholds", help="SNR region thresholds")
    t.add_argument("--np", type=parse_ints, default=[2500])
    t.add_argument("--k", type=parse_ints, default=[1, 10, 50])
    t.add_argument("--d", type=parse_floats, default=[20.0])
    t.add_argument("--w", type=float, default=TWO_PI)
    common_out(t)
    t.set_defaults(func=cmd_thresholds)

    def mc_opts(sp):
        sp.add_argument("--size", type=parse_size, default=ImageGeometry(64, 64))
        sp.add_argument("--box", type=float, default=5.0, help="shift box half-width (px)")
        sp.add_argument("--prior-d", type=float, default=None, help="use U[0, D] shifts instead of the box")
        seed_opt(sp)

    s = sub.add_parser("simulate", help="Monte Carlo evaluation of the multi-frame estimator")
    s.add_argument("--source", default="flat", help="flat, natural or a PGM path")
    s.add_argument("--k", type=parse_ints, default=[1, 10])
    s.add_argument("--snr-db", type=parse_grid, default=parse_grid("-40:2:40"))
    s.add_argument("--trials", type=int, default=100)
    s.add_argument("--upsample", type=int, default=100)
    s.add_argument("--tol", type=float, default=1e-3)
    s.add_argument("--max-iters", type=int, default=50)
    s.add_argument("--exclude-self", action="store_true", help="leave-one-out reference averages")
    s.add_argument("--workers", type=int, default=None, help=f"worker processes (default ${WORKERS_ENV} or 1)")
    s.add_argument("--json", default=None, help="also write a JSON report here")
    s.add_argument("--quiet", action="store_true")
    mc_opts(s)
    common_out(s)
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("compare", help="join simulation statistics with bound curves")
    c.add_argument("--stats", required=True)
    c.add_argument("--bounds", required=True)
    common_out(c)
    c.set_defaults(func=cmd_compare)

    y = sub.add_parser("synth", help="write one synthetic observation set")
    y.add_argument("--model", default="flat", help="flat, natural or a PGM path")
    y.add_argument("--k", type=parse_ints, default=[10])
    y.add_argument("--snr-db", type=parse_grid, default=[10.0])
    y.add_argument("--out", required=True, help="binary observation file")
    y.add_argument("--pgm-dir", default=None, help="also dump the frames as 16-bit PGM")
    mc_opts(y)
    y.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(_join_negative_values(argv))
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, ValueError, TypeError, LookupError, OSError) as exc:
        sys.stderr.write(f"alignbounds: error: {exc}\n")
        return 2
    except ArithmeticError as exc:
        sys.stderr.write(f"alignbounds: numerical failure: {type(exc).__name__}: {exc}\n")
        return 3


if __name__ == "__main__":
    sys.exit(main())
