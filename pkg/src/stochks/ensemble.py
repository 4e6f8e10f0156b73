"""Monte-Carlo ensembles, parameter sweeps and blow-up reports.

Path ``i`` of an ensemble with master seed ``s`` draws its common noise from
``SeedSequence(s, spawn_key=(i, 0))``; the particle oracle uses ``(i, 1)`` for
its independent diffusions and ``(i, 2)`` for its initial sample.  Paths are
merged in index order, so every aggregate is a pure function of the config and
the master seed, whatever the number of workers.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from .config import ExperimentConfig
from .covariance import NoiseModel, build_noise_model, estimate_c_sigma, noise_report
from .criteria import evaluate_criteria
from .dynamics import BLOWN_UP, BOUNDARY_BREACH, COMPLETED, RUNNING, ConfigError, Solver
from .grid import Grid, write_dump
from .moments import MomentSeries, expected_slope, fit_slope, residual_report


class DomainSizeError(RuntimeError):
    """Too many paths reached the box boundary; the box is too small."""


def wilson_interval(k: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if n <= 0:
        raise ValueError("n must be positive")
    p = k / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def exact_interval(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    ci = stats.binomtest(k, n).proportion_ci(confidence_level=level, method="exact")
    return float(ci.low), float(ci.high)


def proportion_summary(k: int, n: int) -> dict:
    """Point estimate with Wilson and Clopper-Pearson intervals; ``interval`` is their hull."""
    w = wilson_interval(k, n)
    e = exact_interval(k, n)
    return {
        "count": k,
        "n": n,
        "fraction": k / n,
        "wilson": list(w),
        "exact": list(e),
        "interval": [min(w[0], e[0]), max(w[1], e[1])],
    }


def build_noise(cfg: ExperimentConfig) -> NoiseModel:
    try:
        return build_noise_model(cfg.noise, cfg.mode_count, cfg.solver.box_size)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _run_one(task):
    solver_cfg, noise, u0, index = task
    try:
        res = Solver(solver_cfg, noise).run(u0)
    except Exception as exc:  # recorded, never aborts the ensemble
        return {"path_index": index, "status": "error", "error": repr(exc)}, None, []
    entry = {
        "path_index": index,
        "spawn_key": [index, 0],
        "status": res.status,
        "t_blow": res.t_blow,
        "trigger": res.trigger,
        "warnings": res.warnings,
        "steps": res.steps,
        "max_mass_drift": res.max_mass_drift,
    }
    return entry, res.series, res.snapshots


@dataclass
class BlowUpReport:
    per_path: list
    aggregate: dict
    criteria: dict
    detector: dict
    noise: dict
    config: dict
    series: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "per_path": self.per_path,
            "aggregate": self.aggregate,
            "criteria": self.criteria,
            "detector": self.detector,
            "noise": self.noise,
            "config": self.config,
        }

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(_jsonable(self.to_dict()), indent=2))
        for entry, series in zip(self.per_path, self.series):
            if series is not None:
                series.write_csv(out / f"path_{entry['path_index']:04d}.csv")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _map(tasks, workers: int):
    if workers == 1:
        return [_run_one(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, tasks))  # map preserves submission order


def run_ensemble(cfg: ExperimentConfig, noise: NoiseModel | None = None, check_noise: bool = True) -> BlowUpReport:
    """Run ``cfg.paths`` independent paths and aggregate their blow-up statistics."""
    scfg = cfg.solver
    if noise is None:
        noise = build_noise(cfg)
    if check_noise and scfg.gamma > 0:
        rep = noise_report(noise, c_sigma_resolution=cfg.c_sigma_resolution)
        if not (rep["q0_error"] < 1e-10 and rep["lower_bound_ok"]):
            raise ConfigError(f"noise model fails validity checks: {rep}")
    c_sigma = estimate_c_sigma(noise, cfg.c_sigma_resolution).value if noise.mode_count else 0.0
    crit = evaluate_criteria(scfg.chi, scfg.gamma, cfg.ic.V0, c_sigma) if scfg.chi > 0 else None

    u0 = cfg.ic.on_grid(Grid(scfg.n, scfg.box_size))
    tasks = [(scfg.with_(seed=cfg.master_seed, path_index=i), noise, u0, i) for i in range(cfg.paths)]
    results = _map(tasks, cfg.workers)
    per_path = [r[0] for r in results]
    series = [r[1] for r in results]

    n = len(per_path)
    statuses = [e["status"] for e in per_path]
    counts = {s: statuses.count(s) for s in (BLOWN_UP, BOUNDARY_BREACH, COMPLETED, "error")}
    blow_times = [e["t_blow"] for e in per_path if e["status"] == BLOWN_UP]
    tol = cfg.time_tolerance

    def before(T):
        if T is None:
            return None
        k = sum(1 for t in blow_times if t <= T * (1.0 + tol))
        return proportion_summary(k, n)

    aggregate = {
        "paths": n,
        "counts": counts,
        "blown_up_before_t_end": proportion_summary(len(blow_times), n),
        "blown_up_before_T1": before(crit.T1) if crit else None,
        "blown_up_before_T2": before(crit.T2) if crit else None,
        "time_tolerance": tol,
        "t_blow_median": statistics.median(blow_times) if blow_times else None,
        "t_blow_min": min(blow_times) if blow_times else None,
        "max_mass_drift": max((e.get("max_mass_drift", 0.0) for e in per_path), default=0.0),
        "boundary_breach_fraction": counts[BOUNDARY_BREACH] / n,
    }
    mom = aligned_moments([s for s in series if s is not None])
    if mom is not None and len(mom["t"]) > 1:
        aggregate["slope_fit"] = fit_slope(mom["t"], mom["lyap"].mean(axis=0))
        aggregate["slope_window"] = [float(mom["t"][0]), float(mom["t"][-1])]
    aggregate["slope_expected"] = expected_slope(scfg.chi, scfg.gamma)

    report = BlowUpReport(
        per_path=per_path,
        aggregate=aggregate,
        criteria=crit.to_dict() if crit else {},
        detector=scfg.detector.describe(),
        noise={**noise.describe(), "c_sigma": c_sigma},
        config=cfg.describe(),
        series=series,
    )
    if cfg.output_dir:
        report.write(cfg.output_dir)
        if cfg.snapshot_dumps:
            for entry, (_, _, snaps) in zip(per_path, results):
                for t, u in snaps:
                    name = f"path_{entry['path_index']:04d}_t{t:.6f}.bin"
                    write_dump(Path(cfg.output_dir) / name, u, scfg.box_size, t, "u")
    if aggregate["boundary_breach_fraction"] > cfg.max_breach_fraction:
        raise DomainSizeError(
            f"{counts[BOUNDARY_BREACH]} of {n} paths reached the box edge "
            f"(limit {cfg.max_breach_fraction:.0%}); enlarge box_size (now {scfg.box_size})"
        )
    return report


def aligned_moments(series_list: list[MomentSeries]) -> dict | None:
    """Per-path moment arrays on the record times where every path is still live.

    Returns ``t`` (T,), and (P, T) arrays ``V``, ``C2`` (= |C|^2 / 2) and
    ``lyap`` (= V + |C|^2 / 2), truncated at the first terminal record of any
    path.
    """
    if not series_list:
        return None
    live = []
    for s in series_list:
        k = 0
        while k < len(s.status) and s.status[k] in (RUNNING, COMPLETED):
            k += 1
        live.append(k)
    T = min(live)
    if T == 0:
        return None
    t = np.asarray(series_list[0].t[:T])
    V = np.array([s.V[:T] for s in series_list])
    C = np.array([np.asarray(s.center[:T]) for s in series_list])
    C2 = 0.5 * np.sum(C ** 2, axis=2)
    return {"t": t, "V": V, "C2": C2, "lyap": V + C2}


def sweep(cfg: ExperimentConfig, tolerances=(0.0, 0.15, 0.3)) -> list[dict]:
    """One ensemble per (chi, gamma) pair; the master seed is shared by all cells."""
    chis = cfg.chi_list or [cfg.solver.chi]
    gammas = cfg.gamma_list or [cfg.solver.gamma]
    noise = build_noise(cfg)
    rows = []
    for chi, gamma in itertools.product(chis, gammas):
        # keep the default time step tied to gamma unless one was given
        scfg = cfg.solver.with_(chi=chi, gamma=gamma)
        sub = ExperimentConfig(**{**cfg.__dict__, "solver": scfg, "output_dir": None})
        rep = run_ensemble(sub, noise=noise, check_noise=False)
        crit = rep.criteria
        blow = [e["t_blow"] for e in rep.per_path if e["status"] == BLOWN_UP]
        row = {
            "chi": chi,
            "gamma": gamma,
            "regime": crit.get("regime"),
            "T1": crit.get("T1"),
            "T2": crit.get("T2"),
            "fraction": rep.aggregate["blown_up_before_t_end"]["fraction"],
            "interval": rep.aggregate["blown_up_before_t_end"]["interval"],
            "slope_fit": rep.aggregate.get("slope_fit"),
            "slope_expected": rep.aggregate["slope_expected"],
            "t_blow_median": rep.aggregate["t_blow_median"],
        }
        t_star = crit.get("T_star")
        for tol in tolerances:
            key = f"fraction_before_Tstar_x{1 + tol:.2f}"
            row[key] = None if t_star is None else sum(t <= t_star * (1 + tol) for t in blow) / len(rep.per_path)
        rows.append(row)
    return rows


def empirical_threshold(rows: list[dict], level: float = 0.5) -> float | None:
    """Midpoint between the largest chi below ``level`` and the next chi at or above it."""
    ordered = sorted(rows, key=lambda r: r["chi"])
    for lo, hi in zip(ordered, ordered[1:]):
        if lo["fraction"] < level <= hi["fraction"]:
            return 0.5 * (lo["chi"] + hi["chi"])
    return None


def is_monotone(rows: list[dict], slack: float = 0.0) -> bool:
    """Blow-up fraction nondecreasing in chi up to ``slack``."""
    f = [r["fraction"] for r in sorted(rows, key=lambda r: r["chi"])]
    return all(b >= a - slack for a, b in zip(f, f[1:]))


def write_sweep_csv(rows: list[dict], path):
    keys = list(rows[0].keys()) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: json.dumps(v) if isinstance(v, list) else v for k, v in r.items()})


def detector_sensitivity(cfg: ExperimentConfig, variants: dict[str, dict], paths: int | None = None) -> list[dict]:
    """Blow-up statistics of the same paths under alternative detector settings.

    ``variants`` maps a label to keyword overrides of :class:`DetectorConfig`;
    every variant reuses the master seed, so differences come from the
    thresholds alone.
    """
    noise = build_noise(cfg) if cfg.solver.gamma > 0 else None
    rows = []
    for label, overrides in variants.items():
        det = replace(cfg.solver.detector, **overrides)
        sub = ExperimentConfig(
            **{**cfg.__dict__, "solver": cfg.solver.with_(detector=det), "output_dir": None, "paths": paths or cfg.paths}
        )
        rep = run_ensemble(sub, noise=noise, check_noise=False)
        blow = [e["t_blow"] for e in rep.per_path if e["status"] == BLOWN_UP]
        rows.append(
            {
                "variant": label,
                "overrides": dict(overrides),
                "fraction": rep.aggregate["blown_up_before_t_end"]["fraction"],
                "t_blow_median": statistics.median(blow) if blow else None,
                "triggers": sorted({e.get("trigger") for e in rep.per_path if e.get("trigger")}),
            }
        )
    return rows


def single_path(cfg: ExperimentConfig, seed: int | None = None, noise: NoiseModel | None = None):
    """Path 0 of ``cfg`` (``seed`` overrides the master seed); returns (result, residual report)."""
    scfg = cfg.solver.with_(seed=cfg.master_seed if seed is None else seed, path_index=0)
    if noise is None and scfg.gamma > 0:
        noise = build_noise(cfg)
    u0 = cfg.ic.on_grid(Grid(scfg.n, scfg.box_size))
    res = Solver(scfg, noise).run(u0)
    return res, residual_report(res.series, scfg.chi, scfg.gamma)

