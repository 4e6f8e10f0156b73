"""Interacting particle oracle driven by the same common noise as the PDE.

    dX_i = (chi / N) sum_{j != i} grad K_eps(X_i - X_j) dt + sqrt(2) dB_i
           - sqrt(2 gamma) sum_k sigma_k(X_i) dW^k

with ``grad K_eps(x) = -x / (2 pi max(|x|, eps)^2)``.  The Stratonovich and Ito
forms coincide because ``sum_k (sigma_k . grad) sigma_k = 0`` for the
synthesized modes, and the noise sign is the Lagrangian counterpart of the
PDE's ``+div(sigma_k u) dW^k``.

Ito calculus on this finite system gives the oracle used in the tests: with
``M2 = (1/2N) sum |X_i|^2 = V_N + |Xbar|^2 / 2``,

    d E[M2] / dt = 2 (1 + gamma) - (chi / 4 pi) (1 - 1/N)

as long as no pair is closer than ``eps``, and ``Xbar`` carries no
interaction drift because the pair terms cancel.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numba
import numpy as np

from .covariance import NoiseModel
from .dynamics import (
    STREAM_COMMON_NOISE,
    STREAM_PARTICLE_DIFFUSION,
    BrownianStream,
    path_seed_sequence,
)
from .grid import Grid
from .moments import CSV_COLUMNS

STREAM_PARTICLE_INIT = 2

# OpenMP avoids numba's TBB version warning on hosts with an old libtbb.
if numba.config.THREADING_LAYER == "default":
    numba.config.THREADING_LAYER = "omp"


@numba.njit(parallel=True, cache=True)
def _pair_drift(pos, eps2):
    """``sum_{j != i} grad K_eps(X_i - X_j)`` for every i, fixed summation order."""
    n = pos.shape[0]
    out = np.zeros((n, 2))
    events = np.zeros(n, dtype=np.int64)
    inv2pi = 1.0 / (2.0 * math.pi)
    for i in numba.prange(n):
        xi = pos[i, 0]
        yi = pos[i, 1]
        ax = 0.0
        ay = 0.0
        ev = 0
        for j in range(n):
            if j == i:
                continue
            dx = xi - pos[j, 0]
            dy = yi - pos[j, 1]
            r2 = dx * dx + dy * dy
            if r2 < eps2:
                r2 = eps2
                ev += 1
            inv = 1.0 / r2
            ax -= dx * inv
            ay -= dy * inv
        out[i, 0] = ax * inv2pi
        out[i, 1] = ay * inv2pi
        events[i] = ev
    return out, events


def pair_drift(positions: np.ndarray, eps_core: float) -> tuple[np.ndarray, int]:
    """Interaction sum per particle and the number of regularised pairs."""
    pos = np.ascontiguousarray(positions, dtype=np.float64)
    out, events = _pair_drift(pos, float(eps_core) ** 2)
    return out, int(events.sum()) // 2


@dataclass
class ParticleSystem:
    positions: np.ndarray
    chi: float
    gamma: float
    noise: NoiseModel | None
    eps_core: float
    t: float = 0.0
    regularized_pairs: int = 0
    W: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.array(self.positions, dtype=float)
        if self.positions.ndim != 2 or self.positions.shape[1] != 2 or self.positions.shape[0] < 2:
            raise ValueError("need an (N, 2) array of positions with N >= 2")
        if self.gamma > 0 and self.noise is None:
            raise ValueError("gamma > 0 requires a noise model")
        if self.W is None:
            m = self.noise.mode_count if self.noise is not None else 0
            self.W = np.zeros(m)

    @property
    def n(self) -> int:
        return self.positions.shape[0]


def step_particles(sys: ParticleSystem, dt: float, dW: np.ndarray | None, dB: np.ndarray) -> ParticleSystem:
    """One Euler-Maruyama step in place; ``dB`` has shape (N, 2) and variance ``dt``."""
    x = sys.positions
    drift, events = pair_drift(x, sys.eps_core) if sys.chi > 0 else (0.0, 0)
    new = x + (sys.chi / sys.n) * dt * drift + math.sqrt(2.0) * dB
    if sys.gamma > 0:
        sig = sys.noise.sigma(x)  # (M, N, 2)
        new -= math.sqrt(2.0 * sys.gamma) * np.tensordot(dW, sig, axes=(0, 0))
        sys.W = sys.W + dW
    sys.positions = new
    sys.t += dt
    sys.regularized_pairs += events
    return sys


def particle_moments(sys_or_positions) -> tuple[np.ndarray, float]:
    """``(Xbar, V_N)`` with ``V_N = (1/2N) sum |X_i - Xbar|^2``."""
    x = sys_or_positions.positions if isinstance(sys_or_positions, ParticleSystem) else np.asarray(sys_or_positions)
    c = x.mean(axis=0)
    d = x - c
    return c, 0.5 * float(np.mean(np.sum(d * d, axis=1)))


def oracle_slope(chi: float, gamma: float, n: int) -> float:
    """Drift of ``E[V_N + |Xbar|^2 / 2]`` for the unregularised system."""
    return 2.0 * (1.0 + gamma) - chi / (4.0 * math.pi) * (1.0 - 1.0 / n)


def center_sd(gamma: float, n: int, t) -> np.ndarray:
    """Finite-size standard deviation (per coordinate) of ``Xbar - C_pde``.

    ``Xbar`` adds ``(sqrt 2 / N) sum_i B_i`` (variance ``2 t / N``) and replaces
    ``<sigma_k, u>`` by an N-sample average, whose fluctuation is bounded by
    ``sum_k |sigma_k|^2 = 2`` and contributes at most ``2 gamma t / N``.
    """
    return np.sqrt((2.0 + 2.0 * gamma) * np.asarray(t, dtype=float) / n)


def sample_gaussian(n: int, s: float, seed_seq: np.random.SeedSequence) -> np.ndarray:
    """``n`` points from the isotropic Gaussian of scale ``s``, shifted to mean zero."""
    rng = np.random.default_rng(seed_seq)
    x = rng.normal(scale=s, size=(n, 2))
    return x - x.mean(axis=0)


def deposit_cic(positions: np.ndarray, grid: Grid) -> np.ndarray:
    """Cloud-in-cell density (unit total mass) on the periodic grid."""
    h = grid.h
    n = grid.n
    pos = (np.asarray(positions) + 0.5 * grid.box_size) / h
    i0 = np.floor(pos).astype(int)
    f = pos - i0
    rho = np.zeros((n, n))
    w = 1.0 / (positions.shape[0] * h * h)
    for di in (0, 1):
        wx = f[:, 0] if di else 1.0 - f[:, 0]
        for dj in (0, 1):
            wy = f[:, 1] if dj else 1.0 - f[:, 1]
            np.add.at(rho, ((i0[:, 0] + di) % n, (i0[:, 1] + dj) % n), w * wx * wy)
    return rho


@dataclass
class ParticleRun:
    t: np.ndarray
    center: np.ndarray
    V: np.ndarray
    M2: np.ndarray
    W: np.ndarray
    regularized_pairs: int
    n: int

    def write_csv(self, path):
        """Same schema as the PDE moment CSV; L2 is undefined for particles."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for i in range(len(self.t)):
                w.writerow(
                    [repr(float(self.t[i])), "1.0", repr(float(self.center[i, 0])), repr(float(self.center[i, 1])),
                     repr(float(self.V[i])), "nan", "0.0", "running"]
                )


def run_particles(
    n: int,
    chi: float,
    gamma: float,
    noise: NoiseModel | None,
    dt: float,
    t_end: float,
    eps_core: float,
    seed: int,
    path_index: int = 0,
    initial_scale: float = 1.0,
    record_every: int = 1,
    brownian_substeps: int = 1,
) -> ParticleRun:
    """Run the oracle with the PDE's common-noise stream for ``(seed, path_index)``."""
    x0 = sample_gaussian(n, initial_scale, path_seed_sequence(seed, path_index, STREAM_PARTICLE_INIT))
    sys = ParticleSystem(x0, chi, gamma, noise, eps_core)
    m = noise.mode_count if noise is not None else 1
    common = BrownianStream(path_seed_sequence(seed, path_index, STREAM_COMMON_NOISE), m, dt, brownian_substeps)
    rng = np.random.default_rng(path_seed_sequence(seed, path_index, STREAM_PARTICLE_DIFFUSION))
    n_steps = int(math.ceil(t_end / dt - 1e-9))
    ts, cs, vs, m2s, ws = [], [], [], [], []

    def record():
        c, v = particle_moments(sys)
        ts.append(sys.t)
        cs.append(c)
        vs.append(v)
        m2s.append(0.5 * float(np.mean(np.sum(sys.positions ** 2, axis=1))))
        ws.append(sys.W.copy())

    record()
    sqdt = math.sqrt(dt)
    for k in range(1, n_steps + 1):
        dW = common.next()
        dB = rng.standard_normal((n, 2)) * sqdt
        step_particles(sys, dt, dW if gamma > 0 else None, dB)
        sys.t = k * dt
        if k % record_every == 0 or k == n_steps:
            record()
    return ParticleRun(
        t=np.array(ts),
        center=np.array(cs),
        V=np.array(vs),
        M2=np.array(m2s),
        W=np.array(ws),
        regularized_pairs=sys.regularized_pairs,
        n=n,
    )
