"""Experiment configuration files (INI syntax, four fixed sections).

Example::

    [solver]
    chi = 20pi
    gamma = 1.0
    n = 128
    box_size = 20
    t_end = 1.2

    [noise]
    f.kind = shell
    f.params = radius=0.3141592653589793
    p = 0
    mode_count = 8

    [ic]
    family = gaussian
    params = s=1.0

    [ensemble]
    paths = 100
    master_seed = 1

Numbers may carry a ``pi`` factor (``16pi``, ``16*pi``, ``pi``).  Every key not
listed in :data:`SCHEMA` is an error, as is any unknown section.
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .covariance import CovarianceSpec, NoiseSpecError
from .dynamics import ConfigError, DetectorConfig, SolverConfig
from .initial import InitialCondition

_SOLVER_KEYS = {
    "chi": "float",
    "gamma": "float",
    "n": "int",
    "box_size": "float",
    "dt": "float",
    "t_end": "float",
    "integrator": "str",
    "dealias": "str",
    "chemical": "str",
    "record_every": "int",
    "snapshot_every": "int",
    "taper": "bool",
    "safety": "float",
    "brownian_substeps": "int",
}
_DETECTOR_KEYS = {
    "linf_factor": "float",
    "l2_factor": "float",
    "variance_floor": "float",
    "boundary_fraction": "float",
    "boundary_cells": "int",
    "edge_width": "float",
    "breach_filter": "float",
    "negativity_tol": "float",
    "spectral_tail": "float",
    "tail_start": "float",
}
SCHEMA = {
    "solver": {**_SOLVER_KEYS, **_DETECTOR_KEYS},
    "noise": {"f.kind": "str", "f.params": "params", "p": "float", "mode_count": "int", "c_sigma_resolution": "int"},
    "ic": {"family": "str", "params": "params"},
    "ensemble": {
        "paths": "int",
        "master_seed": "int",
        "workers": "int",
        "chi_list": "floats",
        "gamma_list": "floats",
        "output_dir": "str",
        "time_tolerance": "float",
        "max_breach_fraction": "float",
        "snapshot_dumps": "bool",
    },
}

_NUM = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)?\s*\*?\s*(pi)?\s*$")


def parse_number(text: str) -> float:
    m = _NUM.match(text)
    if not m or (m.group(1) is None and m.group(2) is None):
        raise ConfigError(f"cannot parse number {text!r}")
    value = float(m.group(1)) if m.group(1) is not None else 1.0
    return value * math.pi if m.group(2) else value


def parse_params(text: str) -> dict:
    out = {}
    text = text.strip()
    if not text:
        return out
    for item in text.split(","):
        if "=" not in item:
            raise ConfigError(f"parameter {item!r} is not of the form key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = parse_number(v)
    return out


def _convert(kind: str, raw: str, key: str):
    try:
        if kind == "float":
            return parse_number(raw)
        if kind == "int":
            return int(raw)
        if kind == "bool":
            low = raw.strip().lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(raw)
            return low in ("true", "yes", "1")
        if kind == "params":
            return parse_params(raw)
        if kind == "floats":
            return [parse_number(x) for x in raw.split(",") if x.strip()]
        return raw.strip()
    except (ValueError, ConfigError) as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


@dataclass
class ExperimentConfig:
    solver: SolverConfig
    noise: CovarianceSpec
    mode_count: int = 8
    c_sigma_resolution: int = 64
    ic: InitialCondition = field(default_factory=InitialCondition)
    paths: int = 1
    master_seed: int = 0
    workers: int = 1
    chi_list: list = field(default_factory=list)
    gamma_list: list = field(default_factory=list)
    output_dir: str | None = None
    time_tolerance: float = 0.15
    max_breach_fraction: float = 0.2
    snapshot_dumps: bool = False

    def __post_init__(self):
        if self.paths < 1:
            raise ConfigError("paths must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.mode_count < 1:
            raise ConfigError("mode_count must be >= 1")

    def describe(self) -> dict:
        return {
            "solver": self.solver.describe(),
            "noise": {**self.noise.describe(), "mode_count": self.mode_count},
            "ic": self.ic.describe(),
            "paths": self.paths,
            "master_seed": self.master_seed,
            "time_tolerance": self.time_tolerance,
        }


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return config_from_sections({s: dict(parser.items(s)) for s in parser.sections()})


def config_from_sections(sections: dict) -> ExperimentConfig:
    values = {}
    for name, items in sections.items():
        if name not in SCHEMA:
            raise ConfigError(f"unknown section [{name}]")
        for key, raw in items.items():
            if key not in SCHEMA[name]:
                raise ConfigError(f"unknown key {key!r} in section [{name}]")
            values[(name, key)] = _convert(SCHEMA[name][key], str(raw), key)

    solver_kw = {k: values[("solver", k)] for k in _SOLVER_KEYS if ("solver", k) in values}
    if "chi" not in solver_kw or "gamma" not in solver_kw:
        raise ConfigError("[solver] needs chi and gamma")
    det_kw = {k: values[("solver", k)] for k in _DETECTOR_KEYS if ("solver", k) in values}
    try:
        solver = SolverConfig(detector=DetectorConfig(**det_kw), **solver_kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

    if ("noise", "f.kind") in values:
        try:
            spec = CovarianceSpec(
                kind=values[("noise", "f.kind")],
                params=values.get(("noise", "f.params"), {}),
                p=values.get(("noise", "p"), 0.0),
            )
        except NoiseSpecError as exc:
            raise ConfigError(str(exc)) from exc
    elif solver.gamma > 0:
        raise ConfigError("[noise] f.kind is required when gamma > 0")
    else:
        spec = CovarianceSpec("constant")

    try:
        ic = InitialCondition(
            family=values.get(("ic", "family"), "gaussian"),
            params=values.get(("ic", "params"), {"s": 1.0}),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    ens = {k: values[("ensemble", k)] for k in SCHEMA["ensemble"] if ("ensemble", k) in values}
    return ExperimentConfig(
        solver=solver,
        noise=spec,
        mode_count=values.get(("noise", "mode_count"), 8 if spec.kind != "constant" else 2),
        c_sigma_resolution=values.get(("noise", "c_sigma_resolution"), 64),
        ic=ic,
        **ens,
    )
