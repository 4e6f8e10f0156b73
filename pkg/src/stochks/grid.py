"""Periodic spectral fields on an N x N box and the chemical solver.

Coordinates are box-centred: ``x_j = -L/2 + j h`` with ``h = L / N`` and arrays
indexed ``[i, j] -> (x_i, y_j)``.  Transforms are real FFTs along both axes
(``scipy.fft.rfft2``), so spectral arrays have shape ``(N, N // 2 + 1)``.

The attraction field ``grad c`` with ``-Delta c = u`` is available in two
flavours:

* ``free_space_padded``: linear convolution with the whole-plane kernel
  ``grad K(x) = -x / (2 pi |x|^2)`` tabulated on a 2N x 2N zero-padded grid;
* ``periodic_spectral``: ``grad c_hat = i xi u_hat / |xi|^2`` with the zero
  mode removed.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path

import numpy as np
from scipy import fft

CHEMICAL_METHODS = ("free_space_padded", "periodic_spectral")
DEALIAS_RULES = ("two_thirds", "none")


@dataclass(frozen=True, eq=False)
class Grid:
    """Geometry and wavenumbers of an N x N periodic box of side ``box_size``."""

    n: int
    box_size: float

    def __post_init__(self):
        if self.n < 32 or self.n & (self.n - 1):
            raise ValueError(f"N must be a power of two >= 32, got {self.n}")
        if not self.box_size > 0:
            raise ValueError("box_size must be positive")

    @property
    def h(self) -> float:
        return self.box_size / self.n

    @property
    def cell_area(self) -> float:
        return self.h * self.h

    @cached_property
    def x(self) -> np.ndarray:
        return -0.5 * self.box_size + self.h * np.arange(self.n)

    @cached_property
    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.x, indexing="ij")

    @cached_property
    def kx(self) -> np.ndarray:
        """Wavenumbers along the first axis, shape (N, 1)."""
        return (2 * math.pi / self.box_size * fft.fftfreq(self.n, 1.0 / self.n))[:, None]

    @cached_property
    def ky(self) -> np.ndarray:
        """Wavenumbers along the (halved) second axis, shape (1, N//2+1)."""
        return (2 * math.pi / self.box_size * fft.rfftfreq(self.n, 1.0 / self.n))[None, :]

    @cached_property
    def k2(self) -> np.ndarray:
        return self.kx ** 2 + self.ky ** 2

    @cached_property
    def inv_k2(self) -> np.ndarray:
        out = np.zeros_like(self.k2)
        np.divide(1.0, self.k2, out=out, where=self.k2 > 0)
        return out

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """Boolean mask keeping integer modes ``|m| <= N // 3`` on each axis."""
        m = self.n // 3
        mx = np.abs(fft.fftfreq(self.n, 1.0 / self.n))[:, None]
        my = fft.rfftfreq(self.n, 1.0 / self.n)[None, :]
        return (mx <= m) & (my <= m)

    @property
    def dealias_cutoff(self) -> float:
        """Largest retained wavenumber component under the 2/3 rule."""
        return 2 * math.pi / self.box_size * (self.n // 3)

    def edge_mask(self, width_fraction: float = 1.0 / 16.0) -> np.ndarray:
        """Cells within ``width_fraction * L`` of the box boundary."""
        band = width_fraction * self.box_size
        half = 0.5 * self.box_size
        near = np.abs(self.x) >= half - band
        return near[:, None] | near[None, :]

    def edge_taper(self, width_fraction: float = 1.0 / 16.0) -> np.ndarray:
        """Smooth window: 1 for ``|x| <= L/2 - 2 w``, 0 for ``|x| >= L/2 - w``.

        ``w = width_fraction * L``.  The transition is the C-infinity
        ``exp(-1/s)`` blend, so a windowed field is smooth across the
        periodic seam.
        """
        w = width_fraction * self.box_size
        half = 0.5 * self.box_size
        s = np.clip((half - w - np.abs(self.x)) / w, 0.0, 1.0)
        a = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
        b = np.where(s < 1, np.exp(-1.0 / np.where(s < 1, 1.0 - s, 1.0)), 0.0)
        w1 = a / (a + b)
        return w1[:, None] * w1[None, :]

    # transforms -----------------------------------------------------------
    def forward(self, f: np.ndarray) -> np.ndarray:
        return fft.rfft2(f, workers=1)

    def inverse(self, f_hat: np.ndarray) -> np.ndarray:
        return fft.irfft2(f_hat, s=(self.n, self.n), workers=1)


@dataclass(eq=False)
class GridField:
    """Scalar field on a :class:`Grid`."""

    values: np.ndarray
    grid: Grid

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n, self.grid.n):
            raise ValueError(f"field shape {self.values.shape} does not match grid N={self.grid.n}")

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))


@dataclass(eq=False)
class VectorField:
    """Two-component field on a :class:`Grid`."""

    x: np.ndarray
    y: np.ndarray
    grid: Grid

    def stack(self) -> np.ndarray:
        return np.stack([self.x, self.y])

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y)))


# spectral calculus ---------------------------------------------------------


def gradient(f: GridField) -> VectorField:
    g = f.grid
    fh = g.forward(f.values)
    return VectorField(g.inverse(1j * g.kx * fh), g.inverse(1j * g.ky * fh), g)


def divergence(v: VectorField) -> GridField:
    g = v.grid
    out_hat = 1j * g.kx * g.forward(v.x) + 1j * g.ky * g.forward(v.y)
    return GridField(g.inverse(out_hat), g)


def laplacian(f: GridField) -> GridField:
    g = f.grid
    return GridField(g.inverse(-g.k2 * g.forward(f.values)), g)


def curl(v: VectorField) -> GridField:
    """Scalar curl ``d_x v_y - d_y v_x``."""
    g = v.grid
    out_hat = 1j * g.kx * g.forward(v.y) - 1j * g.ky * g.forward(v.x)
    return GridField(g.inverse(out_hat), g)


def dealias(f: GridField, rule: str = "two_thirds") -> GridField:
    if rule not in DEALIAS_RULES:
        raise ValueError(f"unknown dealias rule {rule!r}")
    if rule == "none":
        return GridField(f.values.copy(), f.grid)
    g = f.grid
    return GridField(g.inverse(g.forward(f.values) * g.dealias_mask), g)


# chemical solver -----------------------------------------------------------


@lru_cache(maxsize=8)
def _free_space_kernel_hat(n: int, box_size: float) -> tuple[np.ndarray, np.ndarray]:
    """FFT of ``grad K`` tabulated at offsets ``m h``, ``m in [-N, N-1]``, wrap order.

    The self cell and the unmatched ``m = -N`` row/column are set to zero so
    the table is exactly odd under ``m -> -m``.
    """
    h = box_size / n
    m = fft.fftfreq(2 * n, 1.0 / (2 * n))  # 0..N-1, -N..-1
    dx = (m * h)[:, None]
    dy = (m * h)[None, :]
    r2 = dx * dx + dy * dy
    with np.errstate(divide="ignore", invalid="ignore"):
        kx = np.where(r2 > 0, -dx / (2 * math.pi * r2), 0.0)
        ky = np.where(r2 > 0, -dy / (2 * math.pi * r2), 0.0)
    kx[n, :] = 0.0
    kx[:, n] = 0.0
    ky[n, :] = 0.0
    ky[:, n] = 0.0
    # cell-sum quadrature weight h^2 folded into the kernel
    kx_hat = fft.rfft2(kx * h * h, workers=1)
    ky_hat = fft.rfft2(ky * h * h, workers=1)
    kx_hat.flags.writeable = False
    ky_hat.flags.writeable = False
    return kx_hat, ky_hat


def grad_c_free_space(u: np.ndarray, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    n = grid.n
    kx_hat, ky_hat = _free_space_kernel_hat(n, float(grid.box_size))
    u_hat = fft.rfft2(u, s=(2 * n, 2 * n), workers=1)
    gx = fft.irfft2(u_hat * kx_hat, s=(2 * n, 2 * n), workers=1)[:n, :n]
    gy = fft.irfft2(u_hat * ky_hat, s=(2 * n, 2 * n), workers=1)[:n, :n]
    return gx, gy


def grad_c_periodic_hat(u_hat: np.ndarray, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    c_hat = u_hat * grid.inv_k2  # zero mode dropped by inv_k2[0, 0] = 0
    return 1j * grid.kx * c_hat, 1j * grid.ky * c_hat


def solve_chemical(u: GridField, method: str = "free_space_padded") -> VectorField:
    """Attraction field ``grad c`` for ``-Delta c = u``."""
    if method not in CHEMICAL_METHODS:
        raise ValueError(f"unknown chemical method {method!r}")
    if not u.is_finite():
        raise FloatingPointError("non-finite density passed to the chemical solver")
    g = u.grid
    if method == "free_space_padded":
        gx, gy = grad_c_free_space(u.values, g)
    else:
        gx_hat, gy_hat = grad_c_periodic_hat(g.forward(u.values), g)
        gx, gy = g.inverse(gx_hat), g.inverse(gy_hat)
    return VectorField(gx, gy, g)


# grid dumps ----------------------------------------------------------------


@dataclass(frozen=True)
class DumpHeader:
    N: int
    L: float
    time: float
    field_name: str
    checksum: str = field(default="")


def write_dump(path, values: np.ndarray, box_size: float, time: float, field_name: str) -> DumpHeader:
    """Write ``<path>`` (little-endian float64, row-major) and ``<path>.json``."""
    path = Path(path)
    arr = np.ascontiguousarray(values, dtype="<f8")
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError("grid dumps hold square N x N fields")
    payload = arr.tobytes(order="C")
    header = DumpHeader(
        N=arr.shape[0],
        L=float(box_size),
        time=float(time),
        field_name=field_name,
        checksum=hashlib.sha256(payload).hexdigest(),
    )
    path.write_bytes(payload)
    Path(str(path) + ".json").write_text(json.dumps(header.__dict__, indent=2))
    return header


def read_dump(path) -> tuple[np.ndarray, DumpHeader]:
    path = Path(path)
    header = DumpHeader(**json.loads(Path(str(path) + ".json").read_text()))
    payload = path.read_bytes()
    if hashlib.sha256(payload).hexdigest() != header.checksum:
        raise ValueError(f"checksum mismatch for {path}")
    arr = np.frombuffer(payload, dtype="<f8").reshape(header.N, header.N).copy()
    return arr, header
