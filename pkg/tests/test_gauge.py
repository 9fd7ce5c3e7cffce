"""Gauge transform, gauged generator forms, and the gauged orbital flow."""

import numpy as np
import pytest

from mflab.errors import ConfigError, ContractViolation
from mflab.gauge import (
    apply_h_gauged,
    cauchy_schwarz_report,
    continuity_residual,
    gauge_orbitals,
    mean_field_forces,
    run_gauged,
    ungauge_orbitals,
)
from mflab.grid import Field, Grid, inner, norm_l2
from mflab.hartree import OrbitalSet, run_hartree
from mflab.model import InitialFamily, ScalingParams, build_potential, make_orbitals


def random_orbital_set(grid, N, rng, time=0.0, epsilon=0.5):
    cols = rng.standard_normal((grid.total_sites, N)) + 1j * rng.standard_normal(
        (grid.total_sites, N)
    )
    Q, _ = np.linalg.qr(cols)
    orbitals = tuple(
        Field(grid, (Q[:, j] / np.sqrt(grid.cell_volume)).reshape(grid.shape))
        for j in range(N)
    )
    return OrbitalSet(
        orbitals=orbitals, time=time, scaling=ScalingParams(N=N, epsilon=epsilon)
    )


def setup(n=32, box=8.0, N=2, mode="spectral"):
    grid = Grid(dim=1, sites_per_dim=n, box_length=box, kinetic_mode=mode)
    pot = build_potential(grid, "gaussian", amplitude=2.0, width=max(1.0, 3 * grid.spacing))
    state = make_orbitals(InitialFamily("localized", width=0.6), N, grid)
    return grid, pot, state


def test_gauge_preserves_moduli_and_inverts():
    grid, pot, state = setup()
    moved = OrbitalSet(orbitals=state.orbitals, time=0.7, scaling=state.scaling)
    gauged = gauge_orbitals(moved, pot)
    for phi, psi in zip(moved.orbitals, gauged.orbitals):
        np.testing.assert_allclose(np.abs(psi.values), np.abs(phi.values), atol=1e-13)
    back = ungauge_orbitals(gauged, pot)
    for phi, psi in zip(moved.orbitals, back.orbitals):
        np.testing.assert_allclose(psi.values, phi.values, atol=1e-13)


def test_gauge_at_time_zero_is_identity():
    _, pot, state = setup()
    gauged = gauge_orbitals(state, pot)
    for phi, psi in zip(state.orbitals, gauged.orbitals):
        np.testing.assert_allclose(psi.values, phi.values, atol=1e-15)


@pytest.mark.parametrize("mode", ["spectral", "lattice"])
@pytest.mark.parametrize("dim", [1, 2])
def test_generator_forms_agree(mode, dim):
    rng = np.random.default_rng(9)
    grid = Grid(dim=dim, sites_per_dim=12, box_length=6.0, kinetic_mode=mode)
    pot = build_potential(grid, "gaussian", amplitude=1.5, width=1.6)
    state = random_orbital_set(grid, 3, rng, time=0.8)
    forces = mean_field_forces(state, pot)
    probe = Field(grid, rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape))
    a = apply_h_gauged(probe, forces, 0.8, 0.5, form="covariant")
    b = apply_h_gauged(probe, forces, 0.8, 0.5, form="expanded")
    scale = max(1.0, float(np.max(np.abs(a.values))))
    assert np.max(np.abs(a.values - b.values)) / scale < 1e-12


@pytest.mark.parametrize("mode", ["spectral", "lattice"])
def test_generator_hermitian(mode):
    rng = np.random.default_rng(3)
    grid = Grid(dim=1, sites_per_dim=24, box_length=6.0, kinetic_mode=mode)
    pot = build_potential(grid, "cosine_sum", amplitudes=[0.8, 0.3])
    state = random_orbital_set(grid, 2, rng, time=1.3)
    forces = mean_field_forces(state, pot)
    u = Field(grid, rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape))
    w = Field(grid, rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape))
    hu = apply_h_gauged(u, forces, 1.3, 0.4)
    hw = apply_h_gauged(w, forces, 1.3, 0.4)
    assert abs(inner(u, hw) - np.conj(inner(w, hu))) < 1e-10


def test_stale_forces_rejected():
    _, pot, state = setup()
    forces = mean_field_forces(state, pot)  # time 0.0
    probe = state.orbitals[0]
    with pytest.raises(ContractViolation):
        apply_h_gauged(probe, forces, 0.5, 0.4)


def test_forces_vanish_without_interaction():
    grid, _, state = setup()
    free = build_potential(grid, "cosine_sum", amplitudes=[], offset=0.9)
    forces = mean_field_forces(state, free)
    assert all(np.max(np.abs(f.values)) < 1e-14 for f in forces.f_bar)
    assert np.max(np.abs(forces.momentum_coupling.values)) < 1e-14
    assert np.max(np.abs(forces.quad_correction.values)) < 1e-14


@pytest.mark.parametrize("mode", ["spectral", "lattice"])
def test_zero_force_flow_matches_free_flow(mode):
    grid, _, state = setup(n=16, mode=mode)
    free = build_potential(grid, "cosine_sum", amplitudes=[], offset=0.0)
    traj_g = run_gauged(state, free, t_final=0.3, dt=0.01)
    traj_h = run_hartree(state, free, t_final=0.3, dt=0.01)
    for pg, ph in zip(traj_g.snapshots[-1].orbitals, traj_h.snapshots[-1].orbitals):
        np.testing.assert_allclose(pg.values, ph.values, atol=1e-11)


def test_two_route_consistency_and_order():
    _, pot, state = setup(n=64, box=10.0, N=2)
    t_final = 0.2

    def route_gap(dt):
        hart = run_hartree(state, pot, t_final, dt, snapshot_every=10**9)
        via_gauge = gauge_orbitals(hart.snapshots[-1], pot)
        direct = run_gauged(state, pot, t_final, dt, snapshot_every=10**9)
        return max(
            norm_l2(Field(a.grid, a.values - b.values))
            for a, b in zip(via_gauge.orbitals, direct.snapshots[-1].orbitals)
        )

    g1, g2 = route_gap(8e-3), route_gap(4e-3)
    assert g1 < 1e-4
    assert g1 > 1e-12  # above roundoff so the ratio is informative
    assert 3.0 < g1 / g2 < 5.5


def test_continuity_residual_refines():
    _, pot, state = setup(n=32, N=2)

    def worst(dt, every):
        traj = run_gauged(state, pot, t_final=0.2, dt=dt, snapshot_every=every)
        return float(np.max(continuity_residual(traj, pot)))

    coarse = worst(8e-3, 5)
    fine = worst(4e-3, 5)  # same snapshot count, half the spacing
    assert coarse / fine >= 3.0


def test_continuity_needs_three_snapshots():
    _, pot, state = setup(n=16)
    traj = run_gauged(state, pot, t_final=0.05, dt=0.025, snapshot_every=10**9)
    with pytest.raises(ConfigError):
        continuity_residual(traj, pot)


def test_cauchy_schwarz_bound_holds():
    rng = np.random.default_rng(11)
    for _ in range(20):
        n = int(rng.choice([12, 16, 24]))
        N = int(rng.integers(1, 4))
        grid = Grid(dim=1, sites_per_dim=n, box_length=6.0)
        pot = build_potential(
            grid,
            "gaussian",
            amplitude=float(rng.uniform(-3, 3)),
            width=float(rng.uniform(3 * grid.spacing, 2.0)),
        )
        state = random_orbital_set(grid, N, rng, time=float(rng.uniform(0, 2)))
        rep = cauchy_schwarz_report(state, pot)
        assert rep["lhs"] <= rep["rhs"] * (1 + 1e-12) + 1e-13
