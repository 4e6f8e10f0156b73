"""Divergence-free, spatially stationary noise families.

The noise is a finite family of vector fields

    sigma_k(x) = a_k e_k cos(u_k . x)   or   a_k e_k sin(u_k . x)

with wavevectors ``u_k`` on the periodic lattice (2 pi / L) Z^2 and unit
polarisations ``e_k`` perpendicular to ``u_k``, so every field is smooth and
solenoidal.  Modes come in cos/sin pairs sharing ``(u, e, a)``, which makes the
two-point covariance ``q(x, y) = sum_k sigma_k(x) (x) sigma_k(y)`` a function of
``x - y`` only.  Each wavevector is accompanied by its 90 degree rotation with
the same amplitude, so ``Q(0) = Id`` holds identically; a final trace
renormalisation removes the remaining rounding.

The continuous covariance built from a radial spectral density ``f`` and the
projector ``Pi(u) = (1-p) Id + (2p-1) u u^T / |u|^2`` is available through
:func:`covariance_function` for any ``p`` in [0, 1]; only ``p = 0`` is
divergence free and accepted by :func:`build_noise_model`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

RADIAL_KINDS = ("gaussian", "exponential", "band", "shell", "constant")

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class NoiseSpecError(ValueError):
    """Raised for inadmissible covariance specifications or mode layouts."""


@dataclass(frozen=True)
class CovarianceSpec:
    """Radial spectral density ``f`` plus the incompressibility parameter ``p``.

    ``kind`` selects the profile, ``params`` its parameters:

    =============  =========================  ================================
    kind           params                     unnormalised profile g(r)
    =============  =========================  ================================
    gaussian       scale                      exp(-r^2 / (2 scale^2))
    exponential    scale                      exp(-r / scale)
    band           r_min, r_max               1 on [r_min, r_max]
    shell          radius                     delta(r - radius)
    constant       (none)                     delta at r = 0 (x-independent)
    =============  =========================  ================================

    ``f = g / (pi * int_0^inf r g(r) dr)`` so that ``int r f dr = 1/pi``.
    """

    kind: str
    params: dict = field(default_factory=dict)
    p: float = 0.0

    def __post_init__(self):
        if self.kind not in RADIAL_KINDS:
            raise NoiseSpecError(f"unknown spectral density kind {self.kind!r}")
        if not 0.0 <= self.p <= 1.0:
            raise NoiseSpecError(f"p must lie in [0, 1], got {self.p}")
        required = {
            "gaussian": {"scale"},
            "exponential": {"scale"},
            "band": {"r_min", "r_max"},
            "shell": {"radius"},
            "constant": set(),
        }[self.kind]
        given = set(self.params)
        if given != required:
            raise NoiseSpecError(
                f"{self.kind} density needs params {sorted(required)}, got {sorted(given)}"
            )
        for name, value in self.params.items():
            if not (math.isfinite(value) and value >= 0.0):
                raise NoiseSpecError(f"parameter {name} must be finite and >= 0")
        if self.kind in ("gaussian", "exponential") and self.params["scale"] <= 0:
            raise NoiseSpecError("scale must be positive")
        if self.kind == "band" and not 0 <= self.params["r_min"] < self.params["r_max"]:
            raise NoiseSpecError("band density needs 0 <= r_min < r_max")
        if self.kind == "shell" and self.params["radius"] <= 0:
            raise NoiseSpecError("shell radius must be positive")

    @property
    def is_singular(self) -> bool:
        """True for the delta-supported families (shell, constant)."""
        return self.kind in ("shell", "constant")

    def _profile(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "gaussian":
            s = self.params["scale"]
            return np.exp(-0.5 * (r / s) ** 2)
        if self.kind == "exponential":
            return np.exp(-r / self.params["scale"])
        if self.kind == "band":
            lo, hi = self.params["r_min"], self.params["r_max"]
            return ((r >= lo) & (r <= hi)).astype(float)
        raise NoiseSpecError(f"{self.kind} density has no pointwise profile")

    def _support(self) -> tuple[float, float]:
        if self.kind == "band":
            return self.params["r_min"], self.params["r_max"]
        return 0.0, math.inf

    @property
    def normalization(self) -> float:
        """Constant ``c`` with ``f = c g``."""
        if self.kind == "shell":
            return 1.0 / (math.pi * self.params["radius"])
        if self.kind == "constant":
            return math.nan
        lo, hi = self._support()
        m1, _ = integrate.quad(lambda r: r * self._profile(r), lo, hi, epsabs=1e-14, epsrel=1e-13, limit=200)
        return 1.0 / (math.pi * m1)

    def density(self, r):
        """Normalised radial density ``f(r)`` (smooth families only)."""
        return self.normalization * self._profile(r)

    def radial_integral(self, power: int) -> float:
        """``int_0^inf r^power f(r) dr``; ``power=1`` gives ``1/pi``."""
        if self.kind == "shell":
            r0 = self.params["radius"]
            return r0 ** power / (math.pi * r0)
        if self.kind == "constant":
            # point mass at the origin carrying the whole 2-D weight
            return 1.0 / math.pi if power == 1 else 0.0
        lo, hi = self._support()
        c = self.normalization
        val, _ = integrate.quad(
            lambda r: r ** power * self._profile(r), lo, hi, epsabs=1e-14, epsrel=1e-13, limit=200
        )
        return c * val

    def second_moment(self) -> float:
        """``int_{R^2} |u|^2 f(|u|) du = 2 pi int r^3 f dr`` (finite for every kind)."""
        return 2.0 * math.pi * self.radial_integral(3)

    def radial_quantile(self, q):
        """Inverse CDF of the radial law with density ``pi r f(r)``."""
        q = np.asarray(q, dtype=float)
        if self.kind == "gaussian":
            return self.params["scale"] * np.sqrt(-2.0 * np.log1p(-q))
        if self.kind == "band":
            lo, hi = self.params["r_min"], self.params["r_max"]
            return np.sqrt(lo ** 2 + q * (hi ** 2 - lo ** 2))
        if self.kind == "exponential":
            # CDF(r) = 1 - (1 + r/s) exp(-r/s); invert by Newton on s-scaled variable
            s = self.params["scale"]
            out = np.empty_like(q)
            for i, qi in np.ndenumerate(q):
                x = max(1.0, -math.log1p(-qi))
                for _ in range(100):
                    cdf = 1.0 - (1.0 + x) * math.exp(-x)
                    pdf = x * math.exp(-x)
                    step = (cdf - qi) / pdf
                    x = max(x - step, 0.5 * x)
                    if abs(step) < 1e-14 * max(x, 1.0):
                        break
                out[i] = s * x
            return out
        if self.kind == "shell":
            return np.full_like(q, self.params["radius"])
        return np.zeros_like(q)

    def describe(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params), "p": self.p}


def covariance_function(spec: CovarianceSpec, z) -> np.ndarray:
    """Continuous covariance ``Q(z) = int cos(u.z) Pi(u) f(|u|) du`` for any p.

    The antisymmetric ``sin`` part of the rotation kernel integrates to zero
    because ``Pi`` is even in ``u``.  The angular integral is done in closed
    form with Bessel functions, the radial one by adaptive quadrature.
    """
    z = np.asarray(z, dtype=float)
    rho = float(np.hypot(z[0], z[1]))
    p = spec.p
    if rho > 0:
        zhat = z / rho
        reflect = 2.0 * np.outer(zhat, zhat) - np.eye(2)
    else:
        reflect = np.zeros((2, 2))

    def angular(r):
        # int_0^{2pi} cos(r rho cos(theta - phi)) Pi(theta) dtheta
        j0 = special.jv(0, r * rho)
        j2 = special.jv(2, r * rho)
        iso = (1 - p) * 2 * math.pi * j0 + (2 * p - 1) * math.pi * j0
        return iso, -(2 * p - 1) * math.pi * j2

    if spec.kind == "shell":
        r0 = spec.params["radius"]
        iso, aniso = angular(r0)
        w = 1.0 / math.pi
        return w * (iso * np.eye(2) + aniso * reflect)
    if spec.kind == "constant":
        # x-independent noise: Q(z) = Q(0) = Id
        return np.eye(2)
    lo, hi = spec._support()
    c = spec.normalization
    opts = dict(epsabs=1e-13, epsrel=1e-12, limit=400)
    iso_int, _ = integrate.quad(lambda r: r * c * spec._profile(r) * angular(r)[0], lo, hi, **opts)
    aniso_int, _ = integrate.quad(lambda r: r * c * spec._profile(r) * angular(r)[1], lo, hi, **opts)
    return iso_int * np.eye(2) + aniso_int * reflect


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Finite family of trigonometric vector fields; immutable after construction.

    Arrays are indexed by mode ``k``: ``wavevectors[k]`` (physical units),
    ``polarizations[k]`` (unit, perpendicular to the wavevector),
    ``amplitudes[k] >= 0`` and ``phases[k]`` (0 for cos, 1 for sin).
    """

    wavevectors: np.ndarray
    polarizations: np.ndarray
    amplitudes: np.ndarray
    phases: np.ndarray
    box_size: float
    spec: CovarianceSpec | None = None

    @property
    def mode_count(self) -> int:
        return int(self.amplitudes.shape[0])

    @property
    def max_wavenumber(self) -> float:
        """Largest wavevector component magnitude over all modes."""
        return float(np.max(np.abs(self.wavevectors))) if self.mode_count else 0.0

    def _phase_values(self, arg):
        return np.where(self.phases[:, None] == 0, np.cos(arg), np.sin(arg))

    def sigma(self, points) -> np.ndarray:
        """All fields at ``points`` (shape (P, 2)); returns (M, P, 2)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        arg = self.wavevectors @ pts.T  # (M, P)
        trig = self._phase_values(arg) * self.amplitudes[:, None]
        return trig[:, :, None] * self.polarizations[:, None, :]

    def divergence(self, points) -> np.ndarray:
        """Analytic divergence of every field at ``points``; (M, P)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        arg = self.wavevectors @ pts.T
        dtrig = np.where(self.phases[:, None] == 0, -np.sin(arg), np.cos(arg))
        e_dot_u = np.einsum("ki,ki->k", self.polarizations, self.wavevectors)
        return self.amplitudes[:, None] * e_dot_u[:, None] * dtrig

    def on_grid(self, x: np.ndarray) -> np.ndarray:
        """Sample every field on the tensor grid ``x`` x ``x`` (indexing 'ij').

        Returns an array of shape (M, 2, N, N).  Uses separable trigonometry so
        the cost is O(M N^2) without forming a (M, N^2) argument matrix twice.
        """
        x = np.asarray(x, dtype=float)
        ux = self.wavevectors[:, 0][:, None] * x[None, :]
        uy = self.wavevectors[:, 1][:, None] * x[None, :]
        cx, sx, cy, sy = np.cos(ux), np.sin(ux), np.cos(uy), np.sin(uy)
        cos_part = cx[:, :, None] * cy[:, None, :] - sx[:, :, None] * sy[:, None, :]
        sin_part = sx[:, :, None] * cy[:, None, :] + cx[:, :, None] * sy[:, None, :]
        trig = np.where(self.phases[:, None, None] == 0, cos_part, sin_part)
        trig *= self.amplitudes[:, None, None]
        return trig[:, None, :, :] * self.polarizations[:, :, None, None]

    def describe(self) -> dict:
        return {
            "mode_count": self.mode_count,
            "box_size": self.box_size,
            "spec": None if self.spec is None else self.spec.describe(),
            "max_wavenumber": self.max_wavenumber,
        }


def _nearest_nonzero(n: np.ndarray, theta: float) -> np.ndarray:
    if n[0] == 0 and n[1] == 0:
        return np.array([1, 0]) if math.cos(theta) >= math.sin(theta) else np.array([0, 1])
    return n


def _shell_directions(radius_units: float) -> list[tuple[int, int]]:
    """Lattice points (a > 0, b >= 0) on the achievable circle nearest ``radius_units``."""
    top = int(math.ceil(radius_units)) + 2
    best, best_m = math.inf, None
    for a in range(0, top + 1):
        for b in range(0, top + 1):
            m = a * a + b * b
            if m == 0:
                continue
            d = abs(math.sqrt(m) - radius_units)
            if d < best - 1e-12 or (abs(d - best) <= 1e-12 and m < best_m):
                best, best_m = d, m
    dirs = [(a, b) for a in range(1, top + 1) for b in range(0, top + 1) if a * a + b * b == best_m]
    return sorted(dirs, key=lambda ab: math.atan2(ab[1], ab[0]))


def _lattice_groups(spec: CovarianceSpec, n_groups: int, box_size: float) -> list[np.ndarray]:
    k0 = 2.0 * math.pi / box_size
    if spec.kind == "shell":
        dirs = _shell_directions(spec.params["radius"] / k0)
        return [np.array(dirs[g % len(dirs)]) for g in range(n_groups)]
    q = (np.arange(n_groups) + 0.5) / n_groups
    radii = spec.radial_quantile(q)
    groups = []
    for g, r in enumerate(radii):
        theta = ((g * _GOLDEN) % 1.0) * 0.5 * math.pi
        target = r / k0 * np.array([math.cos(theta), math.sin(theta)])
        n = np.rint(target).astype(int)
        groups.append(_nearest_nonzero(n, theta))
    return groups


def build_noise_model(
    spec: CovarianceSpec,
    mode_count: int,
    box_size: float,
    *,
    require_divergence_free: bool = True,
) -> NoiseModel:
    """Deterministic finite-mode synthesis of the covariance described by ``spec``.

    Radii are stratified by the radial law ``pi r f(r) dr`` (mid-quantiles),
    angles follow a golden-ratio sequence in [0, pi/2), and each target
    wavevector is snapped to the nearest non-zero lattice vector.  Every lattice
    vector ``n`` contributes four modes: cos/sin along ``n`` and cos/sin along
    its quarter-turn rotation, all with equal amplitude.  ``mode_count`` must
    therefore be a multiple of 4 (of 2 for the ``constant`` family, whose fields
    are the unit vectors).
    """
    if mode_count < 1:
        raise NoiseSpecError("mode_count must be >= 1: an empty family cannot give Q(0) = Id")
    if box_size <= 0:
        raise NoiseSpecError("box_size must be positive")
    if require_divergence_free and spec.p != 0:
        raise NoiseSpecError("divergence-free synthesis requires p = 0")
    k0 = 2.0 * math.pi / box_size

    if spec.kind == "constant":
        if mode_count % 2:
            raise NoiseSpecError("constant family needs an even mode_count")
        n_groups = mode_count // 2
        wavevectors = np.zeros((mode_count, 2))
        polarizations = np.tile(np.eye(2), (n_groups, 1))
        phases = np.zeros(mode_count, dtype=np.int8)
    else:
        if mode_count % 4:
            raise NoiseSpecError("mode_count must be a multiple of 4 (cos/sin x two orientations)")
        if spec.kind == "shell" and spec.params["radius"] < 0.5 * k0:
            raise NoiseSpecError("shell radius rounds to the zero wavevector on this box")
        if spec.kind == "band" and spec.params["r_max"] < 0.5 * k0:
            raise NoiseSpecError("band density has no support on admissible lattice wavevectors")
        n_groups = mode_count // 4
        vecs, pols = [], []
        for n in _lattice_groups(spec, n_groups, box_size):
            rot = np.array([-n[1], n[0]])
            for m in (n, rot):
                u = k0 * m.astype(float)
                norm = math.hypot(u[0], u[1])
                e = np.array([-u[1], u[0]]) / norm
                vecs.extend([u, u])
                pols.extend([e, e])
        wavevectors = np.array(vecs)
        polarizations = np.array(pols)
        phases = np.tile(np.array([0, 1], dtype=np.int8), 2 * n_groups)

    amplitudes = np.full(mode_count, 1.0 / math.sqrt(n_groups))
    # exact renormalisation: Q(0) = sum_k a_k^2 e_k e_k^T (cos^2 + sin^2 pairs)
    q0 = np.einsum("k,ki,kj->ij", amplitudes ** 2 * (phases == 0), polarizations, polarizations)
    amplitudes = amplitudes * math.sqrt(2.0 / np.trace(q0))
    return NoiseModel(
        wavevectors=wavevectors,
        polarizations=polarizations,
        amplitudes=amplitudes,
        phases=phases,
        box_size=float(box_size),
        spec=spec,
    )


def evaluate_sigma(model: NoiseModel, k: int, points) -> np.ndarray:
    """Exact value of mode ``k`` at ``points``; shape (P, 2)."""
    if not 0 <= k < model.mode_count:
        raise IndexError(f"mode index {k} out of range for {model.mode_count} modes")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    arg = pts @ model.wavevectors[k]
    trig = np.cos(arg) if model.phases[k] == 0 else np.sin(arg)
    return model.amplitudes[k] * trig[:, None] * model.polarizations[k][None, :]


def empirical_covariance(model: NoiseModel, displacements, base_point=(0.0, 0.0)) -> np.ndarray:
    """``Q(z) = sum_k sigma_k(x) (x) sigma_k(x + z)`` at base point ``x``; (Z, 2, 2)."""
    z = np.atleast_2d(np.asarray(displacements, dtype=float))
    x = np.asarray(base_point, dtype=float)
    s_x = model.sigma(x[None, :])[:, 0, :]  # (M, 2)
    s_y = model.sigma(x[None, :] + z)  # (M, Z, 2)
    return np.einsum("ki,kzj->zij", s_x, s_y)


def q0_error(model: NoiseModel, points) -> float:
    """Max-norm deviation of ``sum_k sigma_k(x) (x) sigma_k(x)`` from Id over ``points``."""
    s = model.sigma(points)
    q = np.einsum("kpi,kpj->pij", s, s)
    return float(np.max(np.abs(q - np.eye(2))))


def stationarity_error(model: NoiseModel, n_samples: int = 64, seed: int = 0) -> float:
    """Max ``|q(x, x+z) - q(x', x'+z)|`` over random triples ``(x, x', z)``."""
    rng = np.random.default_rng(seed)
    L = model.box_size
    xs = rng.uniform(-L / 2, L / 2, size=(n_samples, 2))
    xps = rng.uniform(-L / 2, L / 2, size=(n_samples, 2))
    zs = rng.uniform(-L, L, size=(n_samples, 2))
    worst = 0.0
    for x, xp, z in zip(xs, xps, zs):
        a = empirical_covariance(model, z[None, :], x)[0]
        b = empirical_covariance(model, z[None, :], xp)[0]
        worst = max(worst, float(np.max(np.abs(a - b))))
    return worst


def increment_norms(model: NoiseModel, x, y) -> np.ndarray:
    """``sum_k |sigma_k(x) - sigma_k(y)|^2`` for paired rows of ``x`` and ``y``.

    Differences of cos/sin are rewritten as products of sines of half
    arguments so the value keeps full relative accuracy as ``y -> x``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    ax = model.wavevectors @ x.T
    ay = model.wavevectors @ y.T
    half_sum = 0.5 * (ax + ay)
    half_diff = np.sin(0.5 * (ax - ay))
    diff = np.where(
        model.phases[:, None] == 0,
        -2.0 * np.sin(half_sum) * half_diff,
        2.0 * np.cos(half_sum) * half_diff,
    )
    return np.sum((model.amplitudes[:, None] * diff) ** 2, axis=0)


@dataclass(frozen=True)
class CSigmaEstimate:
    value: float
    grid_resolution: int
    converged: bool
    coarse_value: float


def _c_sigma_sup(model: NoiseModel, resolution: int) -> float:
    L = model.box_size
    step = L / resolution
    idx = np.arange(-(resolution // 2), resolution // 2 + 1)
    i, j = np.meshgrid(idx, idx, indexing="ij")
    keep = (i > 0) | ((i == 0) & (j > 0))  # g(z) = g(-z): half plane suffices
    z = np.stack([i[keep], j[keep]], axis=1) * step
    # dyadic refinement towards z = 0 along the nearest-neighbour directions
    dirs = np.array([[1, 0], [0, 1], [1, 1], [1, -1], [2, 1], [1, 2], [2, -1], [1, -2]], float)
    scales = step * 0.5 ** np.arange(1, 41)
    z_small = (scales[:, None, None] * dirs[None, :, :]).reshape(-1, 2)
    z = np.concatenate([z, z_small])
    origin = np.zeros_like(z)
    vals = increment_norms(model, origin, z) / np.sum(z ** 2, axis=1)
    return float(np.max(vals))


def estimate_c_sigma(model: NoiseModel, grid_resolution: int = 64) -> CSigmaEstimate:
    """Supremum of ``sum_k |sigma_k(x) - sigma_k(y)|^2 / |x - y|^2`` over sampled pairs.

    Stationarity reduces the pair sup to a sup over displacements ``z``.  The
    sample set is the ``grid_resolution``-lattice of displacements in
    [-L/2, L/2]^2 together with dyadically shrinking displacements along eight
    directions, because for trigonometric families the supremum sits at
    ``z -> 0``.  ``converged`` compares against half the resolution (1%).
    """
    if grid_resolution < 8:
        raise ValueError("grid_resolution must be >= 8")
    fine = _c_sigma_sup(model, grid_resolution)
    coarse = _c_sigma_sup(model, grid_resolution // 2)
    scale = max(abs(fine), 1e-300)
    converged = abs(fine - coarse) <= 0.01 * scale or fine == coarse == 0.0
    return CSigmaEstimate(value=fine, grid_resolution=grid_resolution, converged=converged, coarse_value=coarse)


@dataclass(frozen=True)
class LowerBoundCheck:
    ok: bool
    worst_margin: float
    counterexample: tuple | None


def check_lower_bound(
    model: NoiseModel, c_sigma: float, sample_pairs: int = 10_000, seed: int = 0, tol: float = 1e-9
) -> LowerBoundCheck:
    """Check ``sum_k sigma_k(x) . sigma_k(y) >= 2 - c_sigma |x - y|^2 / 2`` on random pairs.

    Half the pairs are uniform in the box, half are close pairs with
    log-uniform separations in [1e-6, 1] * L to probe the diagonal.
    """
    rng = np.random.default_rng(seed)
    L = model.box_size
    n_far = sample_pairs // 2
    n_near = sample_pairs - n_far
    x = rng.uniform(-L / 2, L / 2, size=(sample_pairs, 2))
    y = np.empty_like(x)
    y[:n_far] = rng.uniform(-L / 2, L / 2, size=(n_far, 2))
    r = L * 10.0 ** rng.uniform(-6, 0, size=n_near)
    ang = rng.uniform(0, 2 * math.pi, size=n_near)
    y[n_far:] = x[n_far:] + np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)
    sx, sy = model.sigma(x), model.sigma(y)
    lhs = np.einsum("kpi,kpi->p", sx, sy)
    rhs = 2.0 - 0.5 * c_sigma * np.sum((x - y) ** 2, axis=1)
    margin = lhs - rhs
    worst = int(np.argmin(margin))
    ok = bool(margin[worst] >= -tol)
    counter = None if ok else (tuple(x[worst]), tuple(y[worst]))
    return LowerBoundCheck(ok=ok, worst_margin=float(margin[worst]), counterexample=counter)


def noise_report(
    model: NoiseModel, grid_points: int = 32, c_sigma_resolution: int = 64, sample_pairs: int = 10_000, seed: int = 0
) -> dict:
    """Summary used by the ``noise-check`` command."""
    L = model.box_size
    x = -L / 2 + L * np.arange(grid_points) / grid_points
    X, Y = np.meshgrid(x, x, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    c_sigma = estimate_c_sigma(model, c_sigma_resolution)
    lower = check_lower_bound(model, c_sigma.value, sample_pairs, seed=seed)
    div = model.divergence(pts)
    return {
        "q0_error": q0_error(model, pts),
        "stationarity_error": stationarity_error(model, seed=seed),
        "divergence_error": float(np.max(np.abs(div))) if div.size else 0.0,
        "c_sigma": c_sigma.value,
        "c_sigma_converged": c_sigma.converged,
        "lower_bound_ok": lower.ok,
        "lower_bound_worst_margin": lower.worst_margin,
        "noise": model.describe(),
    }
