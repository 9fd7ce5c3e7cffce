"""Rescaled self-consistent orbital dynamics.

The N orbitals evolve under

    i d/dt phi_k = epsilon * ( K + v * rho_t ) phi_k,      rho_t = sum_k |phi_k|^2,

where K is the grid's kinetic operator (spectral ``|k|**2`` multiplier or the
nearest-neighbour lattice kinetic, per ``Grid.kinetic_mode``) and ``v * rho``
is the periodic convolution.  Time stepping is Strang splitting: a half step
of the kinetic phase, a full step of the (self-consistently re-evaluated)
potential phase, and another kinetic half step — second order, exactly
unitary, hence exactly orbital-norm preserving.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, GridMismatchError, NumericalFailure
from .grid import (
    Field,
    Grid,
    apply_multiplier,
    convolve_periodic,
    gradient,
    inner,
    kinetic_multiplier,
    laplacian,
    norm_l1,
    norm_l2,
)
from .model import InteractionPotential, ScalingParams


@dataclass(frozen=True)
class OrbitalSet:
    """An ordered family of one-particle orbitals at a common time."""

    orbitals: tuple[Field, ...]
    time: float
    scaling: ScalingParams

    def __post_init__(self) -> None:
        if not self.orbitals:
            raise ConfigError("OrbitalSet needs at least one orbital")
        grid = self.orbitals[0].grid
        for phi in self.orbitals[1:]:
            if phi.grid != grid:
                raise GridMismatchError("orbitals live on different grids")
        if self.scaling.N != len(self.orbitals):
            raise ConfigError(
                f"scaling.N = {self.scaling.N} but {len(self.orbitals)} orbitals supplied"
            )
        if self.scaling.epsilon is None:
            raise ConfigError("OrbitalSet requires a resolved (concrete) epsilon")

    @property
    def grid(self) -> Grid:
        return self.orbitals[0].grid

    @property
    def N(self) -> int:
        return len(self.orbitals)

    def value_matrix(self) -> np.ndarray:
        """Site-value matrix, one orbital per column (flattened C order)."""
        return np.stack([phi.values.ravel() for phi in self.orbitals], axis=1)


def density(state: OrbitalSet) -> Field:
    rho = np.zeros(state.grid.shape)
    for phi in state.orbitals:
        rho += np.abs(phi.values) ** 2
    return Field(state.grid, rho)


def gram_matrix(state: OrbitalSet) -> np.ndarray:
    A = state.value_matrix()
    return state.grid.cell_volume * (A.conj().T @ A)


def orthonormality_defect(state: OrbitalSet) -> float:
    G = gram_matrix(state)
    return float(np.max(np.abs(G - np.eye(state.N))))


def kinetic_apply(phi: Field, mode: str | None = None) -> Field:
    """Apply the kinetic operator K = -Laplace in the given (or grid's) mode."""
    return apply_multiplier(phi, kinetic_multiplier(phi.grid, mode or phi.grid.kinetic_mode))


def hartree_energy(state: OrbitalSet, potential: InteractionPotential) -> float:
    """Conserved energy sum_k <phi_k, K phi_k> + (1/2) <rho, v * rho>."""
    if potential.grid != state.grid:
        raise GridMismatchError("potential and orbitals use different grids")
    kin = sum(inner(phi, kinetic_apply(phi)).real for phi in state.orbitals)
    rho = density(state)
    pot = 0.5 * inner(rho, convolve_periodic(potential.v, rho)).real
    return float(kin + pot)


def hartree_step(state: OrbitalSet, potential: InteractionPotential, dt: float) -> OrbitalSet:
    """One Strang step of the self-consistent evolution."""
    grid = state.grid
    eps = state.scaling.epsilon
    half_kin = np.exp(-0.5j * dt * eps * kinetic_multiplier(grid))

    mids = [np.fft.ifftn(half_kin * np.fft.fftn(phi.values)) for phi in state.orbitals]
    rho_mid = np.zeros(grid.shape)
    for m in mids:
        rho_mid += np.abs(m) ** 2
    u = convolve_periodic(potential.v, Field(grid, rho_mid)).values.real
    pot_phase = np.exp(-1j * dt * eps * u)
    new = [np.fft.ifftn(half_kin * np.fft.fftn(pot_phase * m)) for m in mids]

    orbitals = tuple(Field(grid, vals) for vals in new)
    return OrbitalSet(orbitals=orbitals, time=state.time + dt, scaling=state.scaling)


@dataclass(frozen=True)
class HartreeDiagnostics:
    """Per-snapshot health and structure measures.

    rho_grad = sum_k |grad phi_k|^2 and rho_lap = sum_k |K phi_k|^2 are the
    derivative densities entering the semiclassical-structure value

        d_value = max(N^(-5/6) |rho_grad|_1^(1/2), N^(-7/6) |rho_lap|_1^(1/2), 1).
    """

    time: float
    energy: float
    orthonormality_defect: float
    rho: Field
    rho_grad: Field
    rho_lap: Field
    d_value: float


def diagnostics(state: OrbitalSet, potential: InteractionPotential) -> HartreeDiagnostics:
    grid = state.grid
    mode = grid.kinetic_mode
    N = state.N
    rho_grad = np.zeros(grid.shape)
    rho_lap = np.zeros(grid.shape)
    for phi in state.orbitals:
        for g in gradient(phi, mode):
            rho_grad += np.abs(g.values) ** 2
        if mode == "lattice":
            lap = apply_multiplier(phi, -kinetic_multiplier(grid, "lattice"))
        else:
            lap = laplacian(phi)
        rho_lap += np.abs(lap.values) ** 2
    rho_grad_f = Field(grid, rho_grad)
    rho_lap_f = Field(grid, rho_lap)
    d_value = max(
        float(N) ** (-5.0 / 6.0) * np.sqrt(norm_l1(rho_grad_f)),
        float(N) ** (-7.0 / 6.0) * np.sqrt(norm_l1(rho_lap_f)),
        1.0,
    )
    return HartreeDiagnostics(
        time=state.time,
        energy=hartree_energy(state, potential),
        orthonormality_defect=orthonormality_defect(state),
        rho=density(state),
        rho_grad=rho_grad_f,
        rho_lap=rho_lap_f,
        d_value=float(d_value),
    )


@dataclass(frozen=True)
class HartreeTrajectory:
    """Snapshots of a self-consistent run (always includes t=0 and t_final)."""

    snapshots: tuple[OrbitalSet, ...]
    diagnostics: tuple[HartreeDiagnostics, ...]
    dt: float
    potential: InteractionPotential

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.snapshots])


def run_hartree(
    initial: OrbitalSet,
    potential: InteractionPotential,
    t_final: float,
    dt: float,
    snapshot_every: int | None = None,
) -> HartreeTrajectory:
    """Integrate to t_final with fixed step dt, recording ~100 snapshots.

    ``snapshot_every`` overrides the default cadence
    max(1, floor(t_final / (100*dt))) steps between recorded snapshots.
    """
    if dt <= 0 or t_final <= 0:
        raise ConfigError("t_final and dt must be positive")
    n_steps = int(round(t_final / dt))
    if abs(n_steps * dt - t_final) > 1e-9 * max(1.0, t_final):
        raise ConfigError(f"t_final = {t_final} is not an integer multiple of dt = {dt}")
    every = snapshot_every or max(1, int(np.floor(t_final / (100.0 * dt))))

    state = initial
    snaps = [state]
    diags = [diagnostics(state, potential)]
    for step in range(1, n_steps + 1):
        state = hartree_step(state, potential, dt)
        if not all(np.all(np.isfinite(phi.values)) for phi in state.orbitals):
            raise NumericalFailure(f"non-finite orbital values at step {step}")
        if step % every == 0 or step == n_steps:
            snaps.append(state)
            diags.append(diagnostics(state, potential))
    return HartreeTrajectory(
        snapshots=tuple(snaps), diagnostics=tuple(diags), dt=dt, potential=potential
    )
