"""Self-consistent orbital evolution: exactness, conservation, convergence."""

import numpy as np
import pytest

from mflab.errors import ConfigError
from mflab.grid import Grid, norm_l2
from mflab.hartree import (
    diagnostics,
    hartree_energy,
    hartree_step,
    orthonormality_defect,
    run_hartree,
)
from mflab.model import InitialFamily, ScalingParams, build_potential, make_orbitals


def localized_setup(n=32, box=8.0, N=2, mode="spectral"):
    grid = Grid(dim=1, sites_per_dim=n, box_length=box, kinetic_mode=mode)
    width = max(1.0, 3.0 * grid.spacing)
    pot = build_potential(grid, "gaussian", amplitude=2.0, width=width)
    state = make_orbitals(InitialFamily("localized", width=0.6), N, grid)
    return grid, pot, state


def test_free_evolution_of_plane_waves_is_exact():
    grid = Grid(dim=1, sites_per_dim=16, box_length=5.0)
    pot = build_potential(grid, "cosine_sum", amplitudes=[], offset=0.0)
    state = make_orbitals(InitialFamily("delocalized"), 3, grid)
    eps = state.scaling.epsilon
    traj = run_hartree(state, pot, t_final=0.5, dt=0.01)
    final = traj.snapshots[-1]
    k = grid.axis_wavenumbers()
    for phi0, phiT in zip(state.orbitals, final.orbitals):
        spec0 = np.fft.fft(phi0.values)
        expected = np.fft.ifft(np.exp(-1j * 0.5 * eps * k**2) * spec0)
        np.testing.assert_allclose(phiT.values, expected, atol=1e-12)


def test_constant_potential_adds_global_phase():
    grid = Grid(dim=1, sites_per_dim=16, box_length=5.0)
    c = 0.7
    free = build_potential(grid, "cosine_sum", amplitudes=[], offset=0.0)
    const = build_potential(grid, "cosine_sum", amplitudes=[], offset=c)
    state = make_orbitals(InitialFamily("delocalized"), 2, grid)
    eps = state.scaling.epsilon
    t_final = 0.3
    a = run_hartree(state, free, t_final, 0.01).snapshots[-1]
    b = run_hartree(state, const, t_final, 0.01).snapshots[-1]
    # v * rho = c * N when v is constant, a pure global phase
    phase = np.exp(-1j * t_final * eps * c * state.N)
    for pa, pb in zip(a.orbitals, b.orbitals):
        np.testing.assert_allclose(pb.values, phase * pa.values, atol=1e-12)


@pytest.mark.parametrize("mode", ["spectral", "lattice"])
def test_orthonormality_preserved_exactly(mode):
    _, pot, state = localized_setup(mode=mode)
    traj = run_hartree(state, pot, t_final=0.5, dt=5e-3)
    for snap in traj.snapshots:
        assert orthonormality_defect(snap) < 1e-12


@pytest.mark.parametrize("mode", ["spectral", "lattice"])
def test_energy_drift_is_second_order(mode):
    _, pot, state = localized_setup(mode=mode)
    e0 = hartree_energy(state, pot)

    def drift(dt):
        final = run_hartree(state, pot, t_final=0.5, dt=dt).snapshots[-1]
        return abs(hartree_energy(final, pot) - e0)

    d1, d2 = drift(4e-3), drift(2e-3)
    assert d1 > 1e-13  # not already at roundoff, so the ratio is meaningful
    assert 3.0 < d1 / d2 < 5.0


def test_self_convergence_order_two():
    _, pot, state = localized_setup()

    def final(dt):
        return run_hartree(state, pot, t_final=0.25, dt=dt).snapshots[-1]

    ref = final(6.25e-4)

    def dist(a, b):
        return max(
            norm_l2(_diff(pa, pb)) for pa, pb in zip(a.orbitals, b.orbitals)
        )

    from mflab.grid import Field

    def _diff(pa, pb):
        return Field(pa.grid, pa.values - pb.values)

    d1 = dist(final(5e-3), ref)
    d2 = dist(final(2.5e-3), ref)
    assert 3.5 < d1 / d2 < 4.5


def test_energy_matches_direct_formula():
    grid, pot, state = localized_setup(n=24)
    from mflab.grid import convolve_periodic, dense_kinetic, inner

    A = state.value_matrix()
    T = dense_kinetic(grid, "spectral")
    kin = grid.cell_volume * np.real(np.trace(A.conj().T @ (T @ A)))
    from mflab.hartree import density

    rho = density(state)
    potE = 0.5 * inner(rho, convolve_periodic(pot.v, rho)).real
    assert hartree_energy(state, pot) == pytest.approx(kin + potE, rel=1e-12)


def test_snapshot_cadence_and_endpoints():
    _, pot, state = localized_setup(n=16)
    traj = run_hartree(state, pot, t_final=1.0, dt=1e-2)
    # every = max(1, floor(1.0 / (100 * 0.01))) = 1 -> all 101 states kept
    assert len(traj.snapshots) == 101
    assert traj.snapshots[0].time == 0.0
    assert traj.snapshots[-1].time == pytest.approx(1.0, abs=1e-12)
    sparse = run_hartree(state, pot, t_final=1.0, dt=1e-2, snapshot_every=40)
    times = [s.time for s in sparse.snapshots]
    assert times == pytest.approx([0.0, 0.4, 0.8, 1.0], abs=1e-12)


def test_time_grid_mismatch_rejected():
    _, pot, state = localized_setup(n=16)
    with pytest.raises(ConfigError):
        run_hartree(state, pot, t_final=1.0, dt=3e-3)


def test_diagnostics_density_consistency():
    grid, pot, state = localized_setup(n=24)
    rep = diagnostics(state, pot)
    assert rep.orthonormality_defect < 1e-12
    assert abs(grid.cell_volume * np.sum(rep.rho.values.real) - state.N) < 1e-12
    assert rep.d_value >= 1.0
