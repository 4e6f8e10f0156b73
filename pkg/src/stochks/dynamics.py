"""Time integration of the stochastic Keller-Segel equation with transport noise.

Ito form (the primary integrator)::

    du = ((1 + gamma) Lap u - chi div(u grad c)) dt
         + sqrt(2 gamma) sum_k div(sigma_k u) dW^k

Stratonovich form (cross-check)::

    du = (Lap u - chi div(u grad c)) dt + sqrt(2 gamma) sum_k div(sigma_k u) o dW^k

The state is kept as the real FFT ``u_hat``.  Every non-diffusive term enters
as the divergence of a flux ``F``, added spectrally as ``i k . F_hat``, and the
diffusion multiplies by ``k^2``; neither touches the ``k = 0`` coefficient, so
the discrete mass is conserved to roundoff.  With this sign the centre of mass
obeys ``dC = -sqrt(2 gamma) sum_k <sigma_k, u> dW^k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .covariance import NoiseModel
from .grid import CHEMICAL_METHODS, DEALIAS_RULES, Grid, grad_c_free_space, grad_c_periodic_hat
from .moments import MomentSeries, compute_moments

INTEGRATORS = ("ito_euler", "strat_heun")

RUNNING = "running"
BLOWN_UP = "blown_up"
BOUNDARY_BREACH = "boundary_breach"
COMPLETED = "completed"
TERMINAL = (BLOWN_UP, BOUNDARY_BREACH, COMPLETED)

# Seed-sequence stream tags: path i uses spawn_key (i, stream).
STREAM_COMMON_NOISE = 0
STREAM_PARTICLE_DIFFUSION = 1


class ConfigError(ValueError):
    """Invalid solver or experiment configuration."""


@dataclass(frozen=True)
class DetectorConfig:
    """Numerical blow-up proxy; any single trigger ends the path.

    ``linf_factor`` and ``l2_factor`` multiply the initial norms,
    ``variance_floor`` multiplies ``V[u0]``.  ``boundary_fraction`` bounds the
    mass (as a fraction of the total) allowed in the outer ``boundary_cells``
    layers of cells; it is measured on the density low-passed with
    ``exp(-k^2 / (breach_filter * k_c)^2)`` (``k_c`` the dealiasing cutoff), so
    grid-scale ringing from an under-resolved core is not mistaken for mass
    reaching the boundary.  ``spectral_tail`` bounds the share of the spectral
    L2 energy at ``|k| > tail_start * k_c``: once the collapsing core is only a
    couple of cells wide the spectrum fills the resolved band, which counts as
    blow-up whatever the initial scale (a Gaussian of width ``s`` crosses 1e-3
    near ``s = 2.2 h``).  ``negativity_tol`` multiplies ``||u0||_2^2`` and only
    raises a warning.
    """

    linf_factor: float = 1e3
    l2_factor: float = 10.0
    variance_floor: float = 1e-3
    boundary_fraction: float = 1e-6
    boundary_cells: int = 1
    edge_width: float = 1.0 / 16.0
    breach_filter: float = 0.15
    negativity_tol: float = 1e-6
    spectral_tail: float = 1e-3
    tail_start: float = 2.0 / 3.0

    def describe(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class SolverConfig:
    chi: float
    gamma: float
    n: int = 128
    box_size: float = 20.0
    dt: float | None = None
    t_end: float = 1.0
    integrator: str = "ito_euler"
    dealias: str = "two_thirds"
    chemical: str = "free_space_padded"
    seed: int = 0
    path_index: int = 0
    record_every: int = 10
    snapshot_every: int = 0
    taper: bool = True
    safety: float = 0.9
    diffusion: bool = True
    record_noise: bool = False
    brownian_substeps: int = 1
    detector: DetectorConfig = field(default_factory=DetectorConfig)

    def __post_init__(self):
        if self.integrator not in INTEGRATORS:
            raise ConfigError(f"unknown integrator {self.integrator!r}")
        if self.dealias not in DEALIAS_RULES:
            raise ConfigError(f"unknown dealias rule {self.dealias!r}")
        if self.chemical not in CHEMICAL_METHODS:
            raise ConfigError(f"unknown chemical method {self.chemical!r}")
        if self.chi < 0 or self.gamma < 0:
            raise ConfigError("chi and gamma must be non-negative")
        if self.n < 32 or self.n & (self.n - 1):
            raise ConfigError("N must be a power of two >= 32")
        if self.box_size <= 0 or self.t_end <= 0:
            raise ConfigError("box_size and t_end must be positive")
        if self.record_every < 1 or self.brownian_substeps < 1:
            raise ConfigError("record_every and brownian_substeps must be >= 1")
        if self.dt is not None and not self.dt > 0:
            raise ConfigError("dt must be positive")
        if self.time_step > self.stability_bound:
            raise ConfigError(
                f"dt = {self.time_step:.3e} exceeds the stability bound {self.stability_bound:.3e}"
            )

    @property
    def h(self) -> float:
        return self.box_size / self.n

    @property
    def stability_bound(self) -> float:
        return self.safety * self.h ** 2 / (4.0 * (1.0 + self.gamma))

    @property
    def time_step(self) -> float:
        if self.dt is not None:
            return self.dt
        return 0.25 * self.h ** 2 / (4.0 * (1.0 + self.gamma))

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.t_end / self.time_step - 1e-9))

    def with_(self, **changes) -> "SolverConfig":
        return replace(self, **changes)

    def describe(self) -> dict:
        out = {k: v for k, v in self.__dict__.items() if k != "detector"}
        out["dt"] = self.time_step
        out["detector"] = self.detector.describe()
        return out


def path_seed_sequence(master_seed: int, path_index: int, stream: int) -> np.random.SeedSequence:
    """Counter-based splitting: ``SeedSequence(master_seed, spawn_key=(path_index, stream))``."""
    return np.random.SeedSequence(int(master_seed), spawn_key=(int(path_index), int(stream)))


class BrownianStream:
    """Increments ``dW^k`` over steps of length ``dt``, one per mode.

    Each step is the sum of ``substeps`` finer increments drawn sequentially,
    so a run at ``dt`` with ``substeps = 2`` sees exactly the Brownian path of
    a run at ``dt / 2`` with ``substeps = 1``.  Draws are made in blocks; the
    generator is sequential, so the block size does not change the stream.
    """

    def __init__(self, seed_seq: np.random.SeedSequence, n_modes: int, dt: float, substeps: int = 1, block: int = 512):
        self._rng = np.random.default_rng(seed_seq)
        self.n_modes = n_modes
        self.substeps = substeps
        self._scale = math.sqrt(dt / substeps)
        self._block = block
        self._buf = np.empty((0, n_modes))
        self._pos = 0

    def next(self) -> np.ndarray:
        if self._pos >= self._buf.shape[0]:
            z = self._rng.standard_normal((self._block, self.substeps, self.n_modes))
            self._buf = z.sum(axis=1) * self._scale
            self._pos = 0
        out = self._buf[self._pos]
        self._pos += 1
        return out


@dataclass
class SimState:
    u_hat: np.ndarray
    u: np.ndarray
    t: float
    step: int = 0
    status: str = RUNNING
    t_blow: float | None = None
    trigger: str | None = None
    A: np.ndarray = field(default_factory=lambda: np.zeros(2))
    B: float = 0.0
    W: np.ndarray | None = None
    warnings: set = field(default_factory=set)


@dataclass
class PathResult:
    series: MomentSeries
    status: str
    t_blow: float | None
    trigger: str | None
    warnings: list
    steps: int
    max_mass_drift: float
    snapshots: list = field(default_factory=list)

    def entry(self) -> dict:
        return {"status": self.status, "t_blow": self.t_blow, "trigger": self.trigger}


class Solver:
    """Pseudo-spectral stepper for one (config, noise model) pair."""

    def __init__(self, cfg: SolverConfig, noise: NoiseModel | None):
        self.cfg = cfg
        self.grid = Grid(cfg.n, cfg.box_size)
        self.noise = noise
        g = self.grid
        X, Y = g.mesh
        self._X, self._Y = X, Y
        if cfg.gamma > 0:
            if noise is None or noise.mode_count == 0:
                raise ConfigError("gamma > 0 requires a noise model")
            if not math.isclose(noise.box_size, cfg.box_size, rel_tol=1e-12):
                raise ConfigError("noise model and solver use different box sizes")
            if noise.max_wavenumber > g.dealias_cutoff + 1e-9:
                raise ConfigError(
                    f"noise wavenumber {noise.max_wavenumber:.3g} exceeds the resolved band "
                    f"{g.dealias_cutoff:.3g}; refine the grid or lower the spectrum"
                )
            self._sigma = noise.on_grid(g.x)  # (M, 2, N, N)
        else:
            self._sigma = None
        self._mask = g.dealias_mask if cfg.dealias == "two_thirds" else None
        self._diff = (1.0 + cfg.gamma) if cfg.integrator == "ito_euler" else 1.0
        if not cfg.diffusion:
            self._diff = 0.0
        # The whole-plane grad c is not periodic; it is windowed to zero in
        # the outer band so the spectral transport term sees no seam jump.
        self._taper = (
            g.edge_taper(cfg.detector.edge_width)
            if cfg.taper and cfg.chemical == "free_space_padded"
            else None
        )
        self._band = max(1, int(cfg.detector.boundary_cells))
        kf = cfg.detector.breach_filter * g.dealias_cutoff
        self._lowpass = np.exp(-g.k2 / kf ** 2) if kf > 0 else None
        self._noise_coef = math.sqrt(2.0 * cfg.gamma)
        # rfft half-spectrum weights for Parseval sums
        w = np.full(g.k2.shape, 2.0)
        w[:, 0] = 1.0
        w[:, -1] = 1.0
        self._parseval = w
        self._tail = g.k2 > (cfg.detector.tail_start * g.dealias_cutoff) ** 2

    # construction --------------------------------------------------------
    def initial_state(self, u0: np.ndarray) -> SimState:
        g = self.grid
        u_hat = g.forward(np.asarray(u0, dtype=float))
        if self._mask is not None:
            u_hat = u_hat * self._mask
        u = g.inverse(u_hat)
        m = self.noise.mode_count if self.noise is not None else 0
        state = SimState(u_hat=u_hat, u=u, t=0.0, W=np.zeros(m))
        m0 = compute_moments(u, g)
        self._ref = {
            "linf": float(np.max(np.abs(u))),
            "l2": m0.L2,
            "V": m0.V,
            "mass": m0.mass,
            "mass_hat": float(u_hat[0, 0].real),
        }
        return state

    def brownian(self, path_index: int | None = None) -> BrownianStream:
        cfg = self.cfg
        idx = cfg.path_index if path_index is None else path_index
        m = self.noise.mode_count if self.noise is not None else 0
        return BrownianStream(
            path_seed_sequence(cfg.seed, idx, STREAM_COMMON_NOISE), max(m, 1), cfg.time_step, cfg.brownian_substeps
        )

    # right-hand side -----------------------------------------------------
    def grad_c(self, u: np.ndarray, u_hat: np.ndarray):
        if self.cfg.chemical == "free_space_padded":
            gx, gy = grad_c_free_space(u, self.grid)
            if self._taper is not None:
                gx, gy = gx * self._taper, gy * self._taper
            return gx, gy
        gx_hat, gy_hat = grad_c_periodic_hat(u_hat, self.grid)
        return self.grid.inverse(gx_hat), self.grid.inverse(gy_hat)

    def noise_field(self, dW: np.ndarray) -> np.ndarray:
        """``sum_k sigma_k dW^k`` on the grid, shape (2, N, N)."""
        return np.tensordot(dW, self._sigma, axes=(0, 0))

    def increment(self, u_hat: np.ndarray, u: np.ndarray, dt: float, vfield: np.ndarray | None) -> np.ndarray:
        """Spectral increment ``-dt D k^2 u_hat + i k . F_hat`` with the step flux ``F``."""
        g, cfg = self.grid, self.cfg
        fx = fy = None
        if cfg.chi > 0:
            gx, gy = self.grad_c(u, u_hat)
            fx = -cfg.chi * dt * u * gx
            fy = -cfg.chi * dt * u * gy
        if vfield is not None:
            nx = self._noise_coef * u * vfield[0]
            ny = self._noise_coef * u * vfield[1]
            fx = nx if fx is None else fx + nx
            fy = ny if fy is None else fy + ny
        inc = (-dt * self._diff) * g.k2 * u_hat
        if fx is not None:
            inc = inc + 1j * (g.kx * g.forward(fx) + g.ky * g.forward(fy))
        if self._mask is not None:
            inc = inc * self._mask
        return inc

    # stepping ------------------------------------------------------------
    def step(self, state: SimState, dW: np.ndarray) -> SimState:
        """Advance one step in place with the given increments; returns ``state``."""
        if state.status != RUNNING:
            return state
        cfg, g = self.cfg, self.grid
        dt = cfg.time_step
        u_hat, u = state.u_hat, state.u
        vfield = None
        if self._sigma is not None:
            vfield = self.noise_field(dW)
            # left-point (Ito) sums with the increments used for the update
            w = self._noise_coef * g.cell_area
            ux, uy = u * vfield[0], u * vfield[1]
            state.A = state.A + w * np.array([ux.sum(), uy.sum()])
            state.B = state.B + w * float(np.vdot(self._X, ux) + np.vdot(self._Y, uy))
            state.W = state.W + dW
        inc = self.increment(u_hat, u, dt, vfield)
        if cfg.integrator == "ito_euler":
            new_hat = u_hat + inc
        else:
            pred_hat = u_hat + inc
            pred = g.inverse(pred_hat)
            new_hat = u_hat + 0.5 * (inc + self.increment(pred_hat, pred, dt, vfield))
        state.u_hat = new_hat
        state.u = g.inverse(new_hat)
        state.t = (state.step + 1) * dt
        state.step += 1
        self._detect(state, dt)
        return state

    def spectral_tail(self, u_hat: np.ndarray) -> float:
        """Share of the L2 energy beyond ``tail_start`` times the dealiasing cutoff."""
        e = self._parseval * (u_hat.real ** 2 + u_hat.imag ** 2)
        total = float(e.sum())
        return float(e[self._tail].sum()) / total if total > 0 else 0.0

    def _detect(self, state: SimState, dt: float):
        u = state.u
        det = self.cfg.detector
        ref = self._ref
        trigger = None
        if not np.all(np.isfinite(u)):
            trigger = "nan"
        else:
            m = compute_moments(u, self.grid)
            if np.max(np.abs(u)) > det.linf_factor * ref["linf"]:
                trigger = "linf"
            elif m.L2 > det.l2_factor * ref["l2"]:
                trigger = "l2"
            elif m.V < det.variance_floor * ref["V"]:
                trigger = "variance"
            elif det.spectral_tail > 0 and self.spectral_tail(state.u_hat) > det.spectral_tail:
                trigger = "resolution"
            if m.S_neg > det.negativity_tol * ref["l2"] ** 2:
                state.warnings.add("negativity")
        if trigger is not None:
            state.status = BLOWN_UP
            state.trigger = trigger
            state.t_blow = state.t - 0.5 * dt
            return
        b = self._band
        smooth = u if self._lowpass is None else self.grid.inverse(state.u_hat * self._lowpass)
        total = float(np.sum(np.abs(smooth)))
        interior = float(np.sum(np.abs(smooth[b:-b, b:-b])))
        if total - interior > det.boundary_fraction * total:
            state.status = BOUNDARY_BREACH
            state.trigger = "boundary"

    # driver --------------------------------------------------------------
    def _record(self, series: MomentSeries, state: SimState):
        m = compute_moments(state.u, self.grid)
        W = state.W if self.cfg.record_noise else None
        series.append(state.t, m, state.status, state.A, state.B, W)

    def run(self, u0: np.ndarray, stream: BrownianStream | None = None) -> PathResult:
        cfg = self.cfg
        state = self.initial_state(u0)
        if stream is None:
            stream = self.brownian()
        series = MomentSeries()
        snapshots = []
        self._record(series, state)
        mass0 = self._ref["mass"]
        drift = 0.0
        n_steps = cfg.n_steps
        for _ in range(n_steps):
            dW = stream.next()
            self.step(state, dW)
            if state.status == RUNNING and state.step == n_steps:
                state.status = COMPLETED
            if state.status != RUNNING or state.step % cfg.record_every == 0:
                self._record(series, state)
                if state.status != BLOWN_UP:
                    drift = max(drift, abs(series.mass[-1] - mass0) / abs(mass0))
            if cfg.snapshot_every and state.step % cfg.snapshot_every == 0 and state.status != BLOWN_UP:
                snapshots.append((state.t, state.u.copy()))
            if state.status != RUNNING:
                break
        # spectral mass is exactly the k = 0 coefficient
        drift_hat = abs(float(state.u_hat[0, 0].real) - self._ref["mass_hat"]) / abs(self._ref["mass_hat"])
        return PathResult(
            series=series,
            status=state.status,
            t_blow=state.t_blow,
            trigger=state.trigger,
            warnings=sorted(state.warnings),
            steps=state.step,
            max_mass_drift=max(drift, drift_hat) if np.isfinite(drift_hat) else drift,
            snapshots=snapshots,
        )


def run_path(cfg: SolverConfig, noise: NoiseModel | None, u0: np.ndarray) -> PathResult:
    """Integrate one path from ``u0`` to ``t_end`` or a terminal status."""
    return Solver(cfg, noise).run(u0)
