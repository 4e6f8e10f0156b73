"""Command-line entry point ``stochks``.

Exit codes: 0 success, 2 configuration error, 3 domain-size abort.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import load_config
from .covariance import estimate_c_sigma, noise_report
from .criteria import evaluate_criteria
from .dynamics import ConfigError
from .ensemble import (
    DomainSizeError,
    _jsonable,
    build_noise,
    empirical_threshold,
    run_ensemble,
    single_path,
    sweep,
    write_sweep_csv,
)
from .grid import write_dump
from .particles import center_sd, oracle_slope, run_particles

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DOMAIN = 3


def _emit(obj, out: str | None, name: str):
    text = json.dumps(_jsonable(obj), indent=2)
    if out:
        path = Path(out)
        path.mkdir(parents=True, exist_ok=True)
        (path / name).write_text(text + "\n")
    print(text)


def _load(args):
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.master_seed = args.seed
    if getattr(args, "out", None):
        cfg.output_dir = args.out
    return cfg


def cmd_simulate(args) -> int:
    cfg = _load(args)
    res, residuals = single_path(cfg)
    out = Path(cfg.output_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    res.series.write_csv(out / "moments.csv")
    for t, u in res.snapshots:
        write_dump(out / f"u_t{t:.6f}.bin", u, cfg.solver.box_size, t, "u")
    summary = {**res.entry(), "warnings": res.warnings, "max_mass_drift": res.max_mass_drift, **residuals}
    (out / "residuals.json").write_text(json.dumps(_jsonable(residuals), indent=2) + "\n")
    print(json.dumps(_jsonable(summary), indent=2))
    return EXIT_OK


def cmd_ensemble(args) -> int:
    cfg = _load(args)
    rep = run_ensemble(cfg)
    print(json.dumps(_jsonable({"aggregate": rep.aggregate, "criteria": rep.criteria}), indent=2))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    rows = sweep(cfg)
    if cfg.output_dir:
        Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
        write_sweep_csv(rows, Path(cfg.output_dir) / "sweep.csv")
    print(json.dumps(_jsonable({"rows": rows, "empirical_threshold": empirical_threshold(rows)}), indent=2))
    return EXIT_OK


def cmd_criteria(args) -> int:
    if args.config:
        cfg = load_config(args.config)
        noise = build_noise(cfg)
        chi = cfg.solver.chi if args.chi is None else args.chi
        gamma = cfg.solver.gamma if args.gamma is None else args.gamma
        v0 = cfg.ic.V0 if args.v0 is None else args.v0
        c_sigma = estimate_c_sigma(noise, cfg.c_sigma_resolution).value if args.c_sigma is None else args.c_sigma
    else:
        missing = [n for n in ("chi", "gamma", "v0", "c_sigma") if getattr(args, n) is None]
        if missing:
            raise ConfigError(f"criteria needs --config or all of --chi --gamma --v0 --c-sigma (missing {missing})")
        chi, gamma, v0, c_sigma = args.chi, args.gamma, args.v0, args.c_sigma
    try:
        rep = evaluate_criteria(chi, gamma, v0, c_sigma)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    _emit(rep.to_dict(), args.out, "criteria.json")
    return EXIT_OK


def cmd_noise_check(args) -> int:
    cfg = load_config(args.config)
    noise = build_noise(cfg)
    rep = noise_report(noise, c_sigma_resolution=cfg.c_sigma_resolution, seed=args.seed or 0)
    _emit(rep, args.out, "noise_check.json")
    return EXIT_OK


def cmd_oracle(args) -> int:
    cfg = _load(args)
    scfg = cfg.solver
    if cfg.ic.family != "gaussian":
        raise ConfigError("the particle oracle samples the gaussian initial condition only")
    res, _ = single_path(cfg)
    noise = build_noise(cfg) if scfg.gamma > 0 else None
    t_end = res.series.t[-1]
    run = run_particles(
        args.particles,
        scfg.chi,
        scfg.gamma,
        noise,
        scfg.time_step,
        t_end,
        eps_core=scfg.h / 2,
        seed=cfg.master_seed,
        initial_scale=cfg.ic.params["s"],
        record_every=scfg.record_every,
    )
    a = res.series.arrays()
    m = min(len(a["t"]), len(run.t))
    sd = center_sd(scfg.gamma, args.particles, run.t[:m])
    dev = np.abs(a["C"][:m] - run.center[:m])
    band = np.max(dev / np.maximum(3 * sd[:, None], 1e-300)[: m], axis=1)
    out = {
        "pde_status": res.status,
        "particles": args.particles,
        "max_center_deviation_in_3sd": float(np.max(band[1:])) if m > 1 else 0.0,
        "particle_slope": float(np.polyfit(run.t, run.M2, 1)[0]),
        "oracle_slope": oracle_slope(scfg.chi, scfg.gamma, args.particles),
        "regularized_pairs": run.regularized_pairs,
    }
    if cfg.output_dir:
        Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
        run.write_csv(Path(cfg.output_dir) / "particles.csv")
        res.series.write_csv(Path(cfg.output_dir) / "moments.csv")
    print(json.dumps(_jsonable(out), indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stochks", description="Stochastic Keller-Segel numerical laboratory")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="experiment config file (INI)")
        sp.add_argument("--seed", type=int, default=None, help="override the master seed")
        sp.add_argument("--out", default=None, help="output directory")

    sp = sub.add_parser("simulate", help="integrate a single path")
    common(sp)
    sp.set_defaults(func=cmd_simulate)
    sp = sub.add_parser("ensemble", help="run a Monte-Carlo ensemble")
    common(sp)
    sp.set_defaults(func=cmd_ensemble)
    sp = sub.add_parser("sweep", help="ensembles over chi_list x gamma_list")
    common(sp)
    sp.set_defaults(func=cmd_sweep)
    sp = sub.add_parser("criteria", help="closed-form thresholds and blow-up times")
    common(sp, config_required=False)
    sp.add_argument("--chi", type=float)
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--v0", type=float)
    sp.add_argument("--c-sigma", dest="c_sigma", type=float)
    sp.set_defaults(func=cmd_criteria)
    sp = sub.add_parser("noise-check", help="validate the configured noise model")
    common(sp)
    sp.set_defaults(func=cmd_noise_check)
    sp = sub.add_parser("oracle", help="compare a PDE path with the particle system")
    common(sp)
    sp.add_argument("--particles", type=int, default=10_000)
    sp.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DomainSizeError as exc:
        print(f"domain too small: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
