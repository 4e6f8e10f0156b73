"""Moment functionals of the density and residuals of their exact identities.

For a unit-mass density ``u`` on the box:

    M = int u,  C = int x u,  V = 1/2 int |x|^2 u - 1/2 |C|^2,

all evaluated with cell sums times ``h^2`` (the solver's own mass quadrature).
Along a path the solver also accumulates, with the very increments it used,

    A_t = sqrt(2 gamma) sum_k int <sigma_k, u_s> dW^k_s       (vector)
    B_t = sqrt(2 gamma) sum_k int <x . sigma_k, u_s> dW^k_s   (scalar)

so that ``C_t - C_0 + A_t`` and
``V_t - V_0 - (2(1+gamma) - chi/4pi) t + |C_t|^2/2 + B_t`` should vanish.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .grid import Grid, GridField, grad_c_free_space, solve_chemical

CSV_COLUMNS = ("t", "mass", "Cx", "Cy", "V", "L2", "S_neg", "status")


@dataclass(frozen=True)
class Moments:
    mass: float
    center: np.ndarray
    V: float
    L2: float
    S_neg: float


def compute_moments(u: GridField | np.ndarray, grid: Grid | None = None) -> Moments:
    if isinstance(u, GridField):
        grid, values = u.grid, u.values
    else:
        values = np.asarray(u, dtype=float)
    w = grid.cell_area
    x = grid.x
    col = values.sum(axis=1)  # marginal along x
    row = values.sum(axis=0)
    mass = float(col.sum() * w)
    cx = float(col @ x * w)
    cy = float(row @ x * w)
    second = float((col @ (x * x) + row @ (x * x)) * w)
    V = 0.5 * second - 0.5 * (cx * cx + cy * cy)
    L2 = math.sqrt(float(np.vdot(values, values)) * w)
    neg = np.minimum(values, 0.0)
    S_neg = float(np.vdot(neg, neg)) * w
    return Moments(mass, np.array([cx, cy]), V, L2, S_neg)


@dataclass
class MomentSeries:
    """Recorded moments and noise-integral accumulators along one path."""

    t: list = field(default_factory=list)
    mass: list = field(default_factory=list)
    center: list = field(default_factory=list)
    V: list = field(default_factory=list)
    L2: list = field(default_factory=list)
    S_neg: list = field(default_factory=list)
    status: list = field(default_factory=list)
    A: list = field(default_factory=list)
    B: list = field(default_factory=list)
    W: list = field(default_factory=list)

    def append(self, t, m: Moments, status, A=None, B=None, W=None):
        self.t.append(float(t))
        self.mass.append(m.mass)
        self.center.append(np.array(m.center, dtype=float))
        self.V.append(m.V)
        self.L2.append(m.L2)
        self.S_neg.append(m.S_neg)
        self.status.append(status)
        if A is not None:
            self.A.append(np.array(A, dtype=float))
            self.B.append(float(B))
        if W is not None:
            self.W.append(np.array(W, dtype=float))

    def __len__(self):
        return len(self.t)

    def arrays(self) -> dict:
        out = {
            "t": np.asarray(self.t),
            "mass": np.asarray(self.mass),
            "C": np.asarray(self.center).reshape(-1, 2),
            "V": np.asarray(self.V),
            "L2": np.asarray(self.L2),
            "S_neg": np.asarray(self.S_neg),
        }
        if self.A:
            out["A"] = np.asarray(self.A).reshape(-1, 2)
            out["B"] = np.asarray(self.B)
        if self.W:
            out["W"] = np.asarray(self.W)
        return out

    def has_accumulators(self) -> bool:
        return len(self.A) == len(self.t) and len(self.t) > 0

    def truncate(self, t_max: float) -> "MomentSeries":
        keep = [i for i, t in enumerate(self.t) if t <= t_max]
        out = MomentSeries()
        for name in ("t", "mass", "center", "V", "L2", "S_neg", "status"):
            setattr(out, name, [getattr(self, name)[i] for i in keep])
        if self.has_accumulators():
            out.A = [self.A[i] for i in keep]
            out.B = [self.B[i] for i in keep]
        if len(self.W) == len(self.t):
            out.W = [self.W[i] for i in keep]
        return out

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for i in range(len(self.t)):
                c = self.center[i]
                writer.writerow(
                    [
                        repr(self.t[i]),
                        repr(self.mass[i]),
                        repr(float(c[0])),
                        repr(float(c[1])),
                        repr(self.V[i]),
                        repr(self.L2[i]),
                        repr(self.S_neg[i]),
                        self.status[i],
                    ]
                )


def read_csv(path) -> dict:
    """Read a moment CSV back into arrays (status kept as strings)."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = {c: np.array([float(r[c]) for r in rows]) for c in CSV_COLUMNS if c != "status"}
    out["status"] = [r["status"] for r in rows]
    return out


class MissingAccumulators(ValueError):
    pass


def _require(series: MomentSeries):
    if not series.has_accumulators():
        raise MissingAccumulators("series was recorded without noise-integral accumulators")


def com_identity_residual(series: MomentSeries) -> np.ndarray:
    """``R_C(t) = C_t - C_0 + A_t``, shape (T, 2)."""
    _require(series)
    a = series.arrays()
    return a["C"] - a["C"][0] + a["A"]


def expected_slope(chi: float, gamma: float) -> float:
    """Drift of ``V + |C|^2 / 2``: ``2 (1 + gamma) - chi / (4 pi)``."""
    return 2.0 * (1.0 + gamma) - chi / (4.0 * math.pi)


def var_identity_residual(series: MomentSeries, chi: float, gamma: float) -> np.ndarray:
    """``R_V(t) = V_t - V_0 - slope t + |C_t|^2 / 2 + B_t``, shape (T,)."""
    _require(series)
    a = series.arrays()
    t = a["t"] - a["t"][0]
    return a["V"] - a["V"][0] - expected_slope(chi, gamma) * t + 0.5 * np.sum(a["C"] ** 2, axis=1) + a["B"]


def fit_slope(t, y) -> float:
    """Least-squares slope of ``y`` against ``t``."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(np.polyfit(t, y, 1)[0])


def residual_report(series: MomentSeries, chi: float, gamma: float) -> dict:
    a = series.arrays()
    lyap = a["V"] + 0.5 * np.sum(a["C"] ** 2, axis=1)
    rc = com_identity_residual(series)
    rv = var_identity_residual(series, chi, gamma)
    return {
        "max_abs_RC": float(np.max(np.abs(rc))),
        "max_abs_RV": float(np.max(np.abs(rv))),
        "slope_fit": fit_slope(a["t"], lyap) if len(lyap) > 1 else math.nan,
        "slope_expected": expected_slope(chi, gamma),
    }


# drift bound -----------------------------------------------------------------

# Largest ||grad c||_inf / (||u||_1^{1/4} ||u||_2^{1/2} ||grad u||_2^{1/4}) over
# centred Gaussians (the ratio is scale invariant); measured once and frozen.
GAUSSIAN_DRIFT_RATIO = 0.1855
DRIFT_BOUND_MARGIN = 2.0
C_CAL = GAUSSIAN_DRIFT_RATIO * DRIFT_BOUND_MARGIN


@dataclass(frozen=True)
class DriftBound:
    lhs: float
    rhs: float
    ratio: float
    holds: bool


def drift_bound_terms(u: GridField, grad_c=None) -> tuple[float, float]:
    """``(||grad c||_inf, ||u||_1^{1/4} ||u||_2^{1/2} ||grad u||_2^{1/4})``.

    ``||grad u||_2`` is the homogeneous seminorm, computed spectrally, which
    makes the ratio exactly invariant under mass-preserving rescaling.
    """
    g = u.grid
    if grad_c is None:
        grad_c = grad_c_free_space(u.values, g)
    gx, gy = grad_c
    lhs = float(np.max(np.hypot(gx, gy)))
    w = g.cell_area
    l1 = float(np.sum(np.abs(u.values)) * w)
    l2 = math.sqrt(float(np.vdot(u.values, u.values)) * w)
    uh = g.forward(u.values)
    weight = np.full(uh.shape, 2.0)
    weight[:, 0] = 1.0
    if g.n % 2 == 0:
        weight[:, -1] = 1.0
    # Parseval for rfft: sum |grad u|^2 h^2 = L^2 / N^4 sum_k |k|^2 |u_hat|^2 (both halves)
    h1 = math.sqrt(float(np.sum(weight * g.k2 * np.abs(uh) ** 2)) * w / g.n ** 2)
    rhs = l1 ** 0.25 * l2 ** 0.5 * h1 ** 0.25
    return lhs, rhs


def drift_bound_check(u: GridField, c_cal: float = C_CAL, chemical: str = "free_space_padded") -> DriftBound:
    """``||grad c||_inf <= c_cal ||u||_1^{1/4} ||u||_2^{1/2} ||grad u||_2^{1/4}``."""
    grad_c = None
    if chemical != "free_space_padded":
        v = solve_chemical(u, chemical)
        grad_c = (v.x, v.y)
    lhs, rhs = drift_bound_terms(u, grad_c)
    ratio = lhs / rhs if rhs > 0 else 0.0
    return DriftBound(lhs=lhs, rhs=rhs, ratio=ratio, holds=bool(lhs <= c_cal * rhs))
