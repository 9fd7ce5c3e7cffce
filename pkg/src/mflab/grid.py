"""Periodic grids, fields, and spectral/lattice differential operators.

Conventions used throughout the package:

* The torus [0, box_length)^dim is sampled on ``sites_per_dim`` points per
  axis, spacing ``h = box_length / sites_per_dim``.  Site values are stored
  in C order, axis 0 slowest.
* The momentum lattice per axis is ``2*pi/box_length * {-n/2, ..., n/2-1}``
  in FFT ordering (``numpy.fft.fftfreq`` convention).
* ``laplacian`` and ``gradient`` are the *spectral* operators (multipliers
  ``-|k|**2`` and ``i*k_axis``); the lattice (finite-difference) variants are
  exposed separately because they are genuinely different operators.  Which
  kinetic operator a Hamiltonian uses is controlled by ``Grid.kinetic_mode``.
* All inner products and norms carry the measure weight ``h**dim``, so that
  an orthonormal family of sampled continuum functions has unit L2 norm.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import GridMismatchError

KINETIC_MODES = ("spectral", "lattice")


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on [0, box_length)^dim.

    ``kinetic_mode`` selects which kinetic operator Hamiltonians built on
    this grid use: "spectral" (multiplier ``|k|**2``) or "lattice" (nearest
    neighbour ``(2*dim*I - sum of shifts)/h**2``).
    """

    dim: int
    sites_per_dim: int
    box_length: float
    kinetic_mode: str = "spectral"

    def __post_init__(self) -> None:
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if self.sites_per_dim < 2 or self.sites_per_dim % 2 != 0:
            raise ValueError(
                f"sites_per_dim must be even and >= 2, got {self.sites_per_dim}"
            )
        if not self.box_length > 0:
            raise ValueError(f"box_length must be positive, got {self.box_length}")
        if self.kinetic_mode not in KINETIC_MODES:
            raise ValueError(
                f"kinetic_mode must be one of {KINETIC_MODES}, got {self.kinetic_mode!r}"
            )

    @property
    def spacing(self) -> float:
        return self.box_length / self.sites_per_dim

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.sites_per_dim,) * self.dim

    @property
    def total_sites(self) -> int:
        return self.sites_per_dim**self.dim

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    def axis_coordinates(self) -> np.ndarray:
        """Sample points along one axis (all axes are identical)."""
        return self.spacing * np.arange(self.sites_per_dim)

    def axis_wavenumbers(self) -> np.ndarray:
        """Momentum lattice along one axis, FFT ordering."""
        return 2.0 * np.pi * np.fft.fftfreq(self.sites_per_dim, d=self.spacing)

    def coordinate_mesh(self) -> tuple[np.ndarray, ...]:
        x = self.axis_coordinates()
        return tuple(np.meshgrid(*([x] * self.dim), indexing="ij"))

    def displacement_mesh(self) -> tuple[np.ndarray, ...]:
        """Signed minimal-image displacement from the origin, per axis.

        Values lie in [-box_length/2, box_length/2); useful for sampling
        even periodic functions of the separation.
        """
        L = self.box_length
        out = []
        for x in self.coordinate_mesh():
            out.append(np.mod(x + 0.5 * L, L) - 0.5 * L)
        return tuple(out)

    def wavenumber_mesh(self) -> tuple[np.ndarray, ...]:
        k = self.axis_wavenumbers()
        return tuple(np.meshgrid(*([k] * self.dim), indexing="ij"))


@dataclass(frozen=True)
class Field:
    """Complex scalar field sampled on a grid."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.complex128)
        if vals.shape != self.grid.shape:
            raise GridMismatchError(
                f"field values shape {vals.shape} does not match grid shape {self.grid.shape}"
            )
        object.__setattr__(self, "values", vals)

    def __eq__(self, other: object) -> bool:  # arrays make dataclass eq unusable
        return self is other

    def __hash__(self) -> int:
        return id(self)


def make_field(grid: Grid, values: np.ndarray) -> Field:
    return Field(grid, np.asarray(values))


def zeros(grid: Grid) -> Field:
    return Field(grid, np.zeros(grid.shape))


def require_same_grid(*fields: Field) -> Grid:
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid != grid:
            raise GridMismatchError(
                f"fields live on different grids: {grid} vs {f.grid}"
            )
    return grid


# ---------------------------------------------------------------------------
# multipliers
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def kinetic_multiplier(grid: Grid, mode: str | None = None) -> np.ndarray:
    """Fourier multiplier of the kinetic operator -Laplace in the given mode.

    spectral: sum_a k_a**2.
    lattice:  sum_a 4*sin(k_a*h/2)**2 / h**2, which is exactly the Fourier
    diagonalisation of (2*dim*I - sum of nearest-neighbour shifts)/h**2.
    """
    mode = mode or grid.kinetic_mode
    ks = grid.wavenumber_mesh()
    h = grid.spacing
    if mode == "spectral":
        return sum(k**2 for k in ks)
    if mode == "lattice":
        return sum(4.0 * np.sin(0.5 * k * h) ** 2 / h**2 for k in ks)
    raise ValueError(f"unknown kinetic mode {mode!r}")


@lru_cache(maxsize=None)
def gradient_multipliers(grid: Grid, mode: str = "spectral") -> tuple[np.ndarray, ...]:
    """Fourier multipliers of d/dx_a (one per axis), times i already included.

    spectral: i*k_a.  lattice: i*sin(k_a*h)/h, the diagonalisation of the
    centred difference (u(x+h) - u(x-h)) / (2h).
    """
    ks = grid.wavenumber_mesh()
    h = grid.spacing
    if mode == "spectral":
        return tuple(1j * k for k in ks)
    if mode == "lattice":
        return tuple(1j * np.sin(k * h) / h for k in ks)
    raise ValueError(f"unknown gradient mode {mode!r}")


# ---------------------------------------------------------------------------
# field operations
# ---------------------------------------------------------------------------


def fft(f: Field) -> np.ndarray:
    return np.fft.fftn(f.values)


def ifft_field(grid: Grid, spectrum: np.ndarray) -> Field:
    return Field(grid, np.fft.ifftn(spectrum))


def apply_multiplier(f: Field, multiplier: np.ndarray) -> Field:
    return Field(f.grid, np.fft.ifftn(multiplier * np.fft.fftn(f.values)))


def laplacian(f: Field) -> Field:
    """Spectral Laplacian (multiplier -|k|**2)."""
    return apply_multiplier(f, -kinetic_multiplier(f.grid, "spectral"))


def gradient(f: Field, mode: str = "spectral") -> tuple[Field, ...]:
    """Gradient components, spectral by default, centred-difference if lattice."""
    if mode == "lattice":
        return lattice_gradient(f)
    spectrum = np.fft.fftn(f.values)
    mults = gradient_multipliers(f.grid, "spectral")
    return tuple(Field(f.grid, np.fft.ifftn(m * spectrum)) for m in mults)


def lattice_gradient(f: Field) -> tuple[Field, ...]:
    """Centred difference gradient, evaluated by rolls (exactly antisymmetric)."""
    h = f.grid.spacing
    out = []
    for axis in range(f.grid.dim):
        vals = (np.roll(f.values, -1, axis=axis) - np.roll(f.values, 1, axis=axis)) / (2.0 * h)
        out.append(Field(f.grid, vals))
    return tuple(out)


def divergence(components: tuple[Field, ...], mode: str = "spectral") -> Field:
    grid = require_same_grid(*components)
    if len(components) != grid.dim:
        raise ValueError("need one component per axis")
    if mode == "lattice":
        total = np.zeros(grid.shape, dtype=np.complex128)
        for axis, comp in enumerate(components):
            total += (
                np.roll(comp.values, -1, axis=axis) - np.roll(comp.values, 1, axis=axis)
            ) / (2.0 * grid.spacing)
        return Field(grid, total)
    mults = gradient_multipliers(grid, "spectral")
    total = np.zeros(grid.shape, dtype=np.complex128)
    for m, comp in zip(mults, components):
        total += np.fft.ifftn(m * np.fft.fftn(comp.values))
    return Field(grid, total)


def convolve_periodic(a: Field, b: Field) -> Field:
    """Periodic convolution (a * b)(x) = h^dim * sum_y a(x-y) b(y)."""
    grid = require_same_grid(a, b)
    vals = grid.cell_volume * np.fft.ifftn(np.fft.fftn(a.values) * np.fft.fftn(b.values))
    return Field(grid, vals)


def inner(a: Field, b: Field) -> complex:
    """L2 inner product with measure weight, conjugate-linear in ``a``."""
    grid = require_same_grid(a, b)
    return complex(grid.cell_volume * np.vdot(a.values, b.values))


def norm_l2(f: Field) -> float:
    return float(np.sqrt(f.grid.cell_volume) * np.linalg.norm(f.values))


def norm_l1(f: Field) -> float:
    return float(f.grid.cell_volume * np.sum(np.abs(f.values)))


def norm_sup(f: Field) -> float:
    return float(np.max(np.abs(f.values)))


# ---------------------------------------------------------------------------
# dense one-body matrices (small grids only; used by the many-body side)
# ---------------------------------------------------------------------------


def _dense_1d_shift(n: int, step: int) -> np.ndarray:
    """(S u)(x) = u(x + step*h) as a matrix on site values."""
    return np.roll(np.eye(n), -step, axis=0)


@lru_cache(maxsize=None)
def dense_kinetic(grid: Grid, mode: str | None = None) -> np.ndarray:
    """Dense matrix of -Laplace on flattened site values (C order)."""
    mode = mode or grid.kinetic_mode
    n = grid.sites_per_dim
    h = grid.spacing
    if mode == "lattice":
        one = (2.0 * np.eye(n) - _dense_1d_shift(n, 1) - _dense_1d_shift(n, -1)) / h**2
    elif mode == "spectral":
        k = grid.axis_wavenumbers()
        one = np.fft.ifft(k[:, None] ** 2 * np.fft.fft(np.eye(n), axis=0), axis=0)
    else:
        raise ValueError(f"unknown kinetic mode {mode!r}")
    total = np.zeros((grid.total_sites, grid.total_sites), dtype=one.dtype)
    for axis in range(grid.dim):
        mats = [np.eye(n)] * grid.dim
        mats[axis] = one
        term = mats[0]
        for m in mats[1:]:
            term = np.kron(term, m)
        total = total + term
    return np.ascontiguousarray(total)


def difference_matrix(f: Field) -> np.ndarray:
    """Matrix M[x, y] = f(x - y) over flattened sites (periodic differences).

    Only meaningful for fields sampled from periodic functions of the
    separation (interaction potentials, force components).
    """
    grid = f.grid
    n = grid.sites_per_dim
    idx = np.arange(grid.total_sites)
    multi = np.array(np.unravel_index(idx, grid.shape))
    diffs = tuple(np.mod(multi[a][:, None] - multi[a][None, :], n) for a in range(grid.dim))
    return f.values[diffs]


@lru_cache(maxsize=None)
def dense_gradient(grid: Grid, mode: str = "spectral") -> tuple[np.ndarray, ...]:
    """Dense matrices of d/dx_a on flattened site values, one per axis."""
    n = grid.sites_per_dim
    h = grid.spacing
    if mode == "lattice":
        one = (_dense_1d_shift(n, 1) - _dense_1d_shift(n, -1)) / (2.0 * h)
    elif mode == "spectral":
        k = grid.axis_wavenumbers()
        one = np.fft.ifft(1j * k[:, None] * np.fft.fft(np.eye(n), axis=0), axis=0)
    else:
        raise ValueError(f"unknown gradient mode {mode!r}")
    out = []
    for axis in range(grid.dim):
        mats = [np.eye(n, dtype=one.dtype)] * grid.dim
        mats[axis] = one
        term = mats[0]
        for m in mats[1:]:
            term = np.kron(term, m)
        out.append(np.ascontiguousarray(term))
    return tuple(out)
