"""Interaction potentials, scaling parameters, and initial orbital families.

Sign convention: the pair force stored on an :class:`InteractionPotential`
is ``force = +grad v``.  Every gauged generator in this package is written
in terms of that force field, and the convolution identities relating the
mean-field force to the time derivative of the Hartree potential hold with
this sign (see the gauge module tests).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.linalg import eigh

from .errors import ConfigError, ContractViolation, NumericalFailure
from .grid import (
    Field,
    Grid,
    gradient,
    inner,
    laplacian,
    norm_l1,
    norm_l2,
)

EPSILON_RULES = ("standard", "dimension_adapted")


@dataclass(frozen=True)
class ScalingParams:
    """Particle number and the coupling/time scales derived from it.

    ``epsilon`` may be given explicitly; otherwise it is resolved from
    ``epsilon_rule``: "standard" gives N**(-2/3) regardless of dimension,
    "dimension_adapted" gives N**(1/dim - 1).
    """

    N: int
    epsilon: float | None = None
    epsilon_rule: str = "standard"
    t_final: float = 1.0
    dt: float = 1e-3

    def __post_init__(self) -> None:
        if self.N < 1:
            raise ConfigError(f"N must be >= 1, got {self.N}")
        if self.epsilon_rule not in EPSILON_RULES:
            raise ConfigError(
                f"epsilon_rule must be one of {EPSILON_RULES}, got {self.epsilon_rule!r}"
            )
        if self.epsilon is not None and self.epsilon <= 0:
            raise ConfigError("explicit epsilon must be positive")


def epsilon_for(N: int, rule: str = "standard", dim: int = 3) -> float:
    if rule == "standard":
        return float(N) ** (-2.0 / 3.0)
    if rule == "dimension_adapted":
        return float(N) ** (1.0 / dim - 1.0)
    raise ConfigError(f"unknown epsilon rule {rule!r}")


def resolve_scaling(scaling: ScalingParams, grid: Grid) -> ScalingParams:
    """Return a copy with ``epsilon`` made concrete for this grid."""
    if scaling.epsilon is not None:
        return scaling
    eps = epsilon_for(scaling.N, scaling.epsilon_rule, grid.dim)
    return ScalingParams(
        N=scaling.N,
        epsilon=eps,
        epsilon_rule=scaling.epsilon_rule,
        t_final=scaling.t_final,
        dt=scaling.dt,
    )


# ---------------------------------------------------------------------------
# interaction potentials
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InteractionPotential:
    """Even periodic pair potential v and its force field ``force = grad v``."""

    v: Field
    force: tuple[Field, ...]
    kind: str
    params: dict = field(repr=False, default_factory=dict)

    def __eq__(self, other: object) -> bool:
        return self is other

    def __hash__(self) -> int:
        return id(self)

    @property
    def grid(self) -> Grid:
        return self.v.grid


def _evenness_defect(f: Field) -> float:
    vals = f.values
    rev = vals
    for axis in range(f.grid.dim):
        rev = np.roll(np.flip(rev, axis=axis), 1, axis=axis)
    return float(np.max(np.abs(vals - rev)))


def build_potential(grid: Grid, kind: str, **params) -> InteractionPotential:
    """Construct an even periodic pair potential.

    kinds:
      "gaussian":   amplitude * sum over periodic images of exp(-|x|^2/(2 width^2));
                    requires width >= 3*spacing so the profile is resolved.
      "cosine_sum": offset + sum_axes sum_j amplitudes[j-1]*cos(2*pi*j*x_a/L);
                    band-limited, harmonics must stay below the Nyquist mode.
    """
    disp = grid.displacement_mesh()
    if kind == "gaussian":
        amplitude = float(params.get("amplitude", 1.0))
        width = float(params.get("width", 1.0))
        if width < 3.0 * grid.spacing:
            raise ConfigError(
                f"gaussian width {width} under-resolved: need >= 3*spacing = {3*grid.spacing}"
            )
        vvals = np.zeros(grid.shape)
        fvals = [np.zeros(grid.shape) for _ in range(grid.dim)]
        for image in product((-1.0, 0.0, 1.0), repeat=grid.dim):
            shifted = [disp[a] + image[a] * grid.box_length for a in range(grid.dim)]
            r2 = sum(s**2 for s in shifted)
            bump = amplitude * np.exp(-r2 / (2.0 * width**2))
            vvals += bump
            for a in range(grid.dim):
                fvals[a] += bump * (-shifted[a] / width**2)
    elif kind == "cosine_sum":
        amplitudes = [float(a) for a in params.get("amplitudes", [])]
        offset = float(params.get("offset", 0.0))
        if len(amplitudes) >= grid.sites_per_dim // 2:
            raise ConfigError("cosine_sum harmonics reach the Nyquist mode")
        vvals = np.full(grid.shape, offset)
        fvals = [np.zeros(grid.shape) for _ in range(grid.dim)]
        for a in range(grid.dim):
            for j, amp in enumerate(amplitudes, start=1):
                kj = 2.0 * np.pi * j / grid.box_length
                vvals += amp * np.cos(kj * disp[a])
                fvals[a] += -amp * kj * np.sin(kj * disp[a])
    else:
        raise ConfigError(f"unknown potential kind {kind!r}")

    # Enforce exact odd parity of the sampled force under the grid's negation
    # map.  Truncated image sums leave a tiny parity defect at the half-box
    # seam, and downstream algebra (antisymmetric difference matrices,
    # exchange-symmetric pair kernels) needs the sampled force exactly odd.
    for a in range(grid.dim):
        rev = fvals[a]
        for axis in range(grid.dim):
            rev = np.roll(np.flip(rev, axis=axis), 1, axis=axis)
        fvals[a] = 0.5 * (fvals[a] - rev)

    v = Field(grid, vvals)
    force = tuple(Field(grid, f) for f in fvals)
    pot = InteractionPotential(v=v, force=force, kind=kind, params=dict(params))
    defect = _evenness_defect(v)
    if defect > 1e-12 * max(1.0, float(np.max(np.abs(vvals)))):
        raise ContractViolation(f"potential is not even: defect {defect}")
    return pot


def force_gradient_defect(potential: InteractionPotential) -> float:
    """Max deviation between the stored force and the spectral gradient of v."""
    grads = gradient(potential.v)
    return max(
        float(np.max(np.abs(g.values - f.values)))
        for g, f in zip(grads, potential.force)
    )


# ---------------------------------------------------------------------------
# initial orbital families
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InitialFamily:
    """Recipe for the t=0 orbitals.

    kind "delocalized": the N lowest plane waves (constant total density).
    kind "localized":   N periodic Gaussian bumps of the given width at
    equally spaced centres along axis 0, orthonormalised symmetrically
    (inverse square root of the overlap matrix), which perturbs each bump
    as little as possible.
    """

    kind: str
    width: float = 0.5

    def __post_init__(self) -> None:
        if self.kind not in ("delocalized", "localized"):
            raise ConfigError(f"unknown initial family {self.kind!r}")


def _plane_wave_modes(N: int, dim: int) -> list[tuple[int, ...]]:
    reach = 1
    while (2 * reach + 1) ** dim < 2 * N + 1:
        reach += 1

    def key(m: tuple[int, ...]):
        parts = tuple((abs(c), 0 if c >= 0 else 1) for c in m)
        return (sum(c * c for c in m),) + parts

    modes = sorted(product(range(-reach, reach + 1), repeat=dim), key=key)
    return modes[:N]


def make_orbitals(family: InitialFamily, N: int, grid: Grid,
                  scaling: ScalingParams | None = None):
    """Build the initial orthonormal orbitals for the given family."""
    from .hartree import OrbitalSet  # local import keeps module layering acyclic

    if N > grid.total_sites:
        raise ConfigError(f"cannot place {N} orthonormal orbitals on {grid.total_sites} sites")
    scaling = resolve_scaling(scaling or ScalingParams(N=N), grid)
    if scaling.N != N:
        raise ConfigError(f"scaling.N = {scaling.N} does not match N = {N}")

    if family.kind == "delocalized":
        xs = grid.coordinate_mesh()
        amp = grid.box_length ** (-grid.dim / 2.0)
        orbitals = []
        for m in _plane_wave_modes(N, grid.dim):
            phase = sum(
                (2.0 * np.pi * m[a] / grid.box_length) * xs[a] for a in range(grid.dim)
            )
            orbitals.append(Field(grid, amp * np.exp(1j * phase)))
    else:
        if family.width < grid.spacing:
            raise ConfigError(
                f"localized width {family.width} under-resolved: need >= spacing {grid.spacing}"
            )
        xs = grid.coordinate_mesh()
        L = grid.box_length
        w = family.width

        def periodic_bump(coord: np.ndarray, centre: float) -> np.ndarray:
            off = np.mod(coord - centre + 0.5 * L, L) - 0.5 * L
            total = np.zeros_like(off)
            for img in (-1.0, 0.0, 1.0):
                total += np.exp(-((off + img * L) ** 2) / (2.0 * w**2))
            return total

        raw = []
        for j in range(N):
            centre = (j + 0.5) * L / N
            g = periodic_bump(xs[0], centre)
            for a in range(1, grid.dim):
                g = g * periodic_bump(xs[a], 0.5 * L)
            fld = Field(grid, g)
            raw.append(Field(grid, g / norm_l2(fld)))
        S = np.array([[inner(a, b) for b in raw] for a in raw])
        evals, evecs = eigh(S)
        if evals.min() <= 0 or evals.max() / evals.min() > 1e8:
            raise NumericalFailure(
                f"bump overlap matrix ill-conditioned (cond {evals.max()/max(evals.min(), 1e-300):.2e})"
            )
        S_inv_half = (evecs * evals**-0.5) @ evecs.conj().T
        stack = np.stack([f.values for f in raw], axis=-1)
        mixed = stack @ S_inv_half
        orbitals = [Field(grid, mixed[..., j]) for j in range(N)]

    return OrbitalSet(orbitals=tuple(orbitals), time=0.0, scaling=scaling)


# ---------------------------------------------------------------------------
# semiclassical-structure diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AssumptionReport:
    """Scaled kinetic moments of an orbital family and the derived D value.

    kin_grad_scaled = N^(-5/3) * sum_k |grad phi_k|_2^2
    kin_lap_scaled  = N^(-7/3) * sum_k |Lap  phi_k|_2^2
    grad_rho_l1     = L1 norm of |grad rho| (pointwise Euclidean magnitude)
    d_value         = max(sqrt-scaled kinetic moments, 1)
    """

    kin_grad_scaled: float
    kin_lap_scaled: float
    grad_rho_l1: float
    d_value: float


def assumption_diagnostics(orbital_set) -> AssumptionReport:
    """Diagnose how the orbital family sits relative to the mean-field scaling.

    Uses the grid's kinetic mode for gradients/Laplacians, so lattice runs
    are judged by the operators that actually generate their dynamics.
    """
    grid = orbital_set.grid
    mode = grid.kinetic_mode
    N = orbital_set.scaling.N

    sum_grad = 0.0
    sum_lap = 0.0
    rho = np.zeros(grid.shape)
    for phi in orbital_set.orbitals:
        rho += np.abs(phi.values) ** 2
        for g in gradient(phi, mode):
            sum_grad += norm_l2(g) ** 2
        if mode == "lattice":
            from .grid import apply_multiplier, kinetic_multiplier

            lap = apply_multiplier(phi, -kinetic_multiplier(grid, "lattice"))
        else:
            lap = laplacian(phi)
        sum_lap += norm_l2(lap) ** 2

    rho_field = Field(grid, rho)
    grads = gradient(rho_field, mode)
    grad_mag = np.sqrt(sum(np.abs(g.values) ** 2 for g in grads))
    grad_rho_l1 = norm_l1(Field(grid, grad_mag))

    d_value = max(
        float(N) ** (-5.0 / 6.0) * np.sqrt(sum_grad),
        float(N) ** (-7.0 / 6.0) * np.sqrt(sum_lap),
        1.0,
    )
    return AssumptionReport(
        kin_grad_scaled=float(N) ** (-5.0 / 3.0) * sum_grad,
        kin_lap_scaled=float(N) ** (-7.0 / 3.0) * sum_lap,
        grad_rho_l1=grad_rho_l1,
        d_value=float(d_value),
    )
