"""Configuration basis, fermionic lifts, exact propagation.

The lift tables are checked against an independent oracle: embed the
configuration amplitudes into the full N-fold tensor space with explicit
permutation signs, apply slot-wise operators there, and read the matrix
elements back.
"""

from itertools import permutations

import numpy as np
import pytest

from mflab.errors import ConfigError, ContractViolation, GridMismatchError
from mflab.grid import Field, Grid, dense_kinetic
from mflab.hartree import density
from mflab.manybody import (
    ConfigBasis,
    ManyBodyState,
    build_hamiltonian,
    gauge_manybody,
    lift_diagonal,
    lift_one_body,
    lift_three_body,
    lift_two_body,
    load_state,
    load_state_json,
    observe,
    occupation_density,
    pairwise_potential_vector,
    propagate,
    propagate_dense,
    random_state,
    rdm1,
    save_state,
    save_state_json,
    slater_state,
)
from mflab.model import InitialFamily, ScalingParams, build_potential, make_orbitals


# ---------------------------------------------------------------------------
# tensor-space oracle
# ---------------------------------------------------------------------------


def embed(basis: ConfigBasis, idx: int) -> np.ndarray:
    """Antisymmetric tensor of one configuration, unit norm."""
    import math

    L, N = basis.n_modes, basis.n_particles
    full = np.zeros((L,) * N, dtype=complex)
    config = basis.configs[idx]
    for perm in permutations(range(N)):
        inv = sum(1 for i in range(N) for j in range(i + 1, N) if perm[i] > perm[j])
        full[tuple(config[p] for p in perm)] = (-1.0) ** inv
    return full / np.sqrt(math.factorial(N))


def slotwise_matrix(basis: ConfigBasis, apply_full) -> np.ndarray:
    """Matrix elements <embed(J), Op embed(I)> of a tensor-space operator."""
    dim = basis.dim
    out = np.zeros((dim, dim), dtype=complex)
    embeds = [embed(basis, i) for i in range(dim)]
    for i in range(dim):
        acted = apply_full(embeds[i])
        for j in range(dim):
            out[j, i] = np.vdot(embeds[j], acted)
    return out


@pytest.mark.parametrize("L,N", [(4, 2), (4, 3), (5, 2)])
def test_lift_one_body_against_tensor_oracle(L, N):
    rng = np.random.default_rng(L * 10 + N)
    basis = ConfigBasis(n_modes=L, n_particles=N)
    A = rng.standard_normal((L, L)) + 1j * rng.standard_normal((L, L))

    def apply_full(T):
        out = np.zeros_like(T)
        for slot in range(N):
            out += np.moveaxis(np.tensordot(A, T, axes=([1], [slot])), 0, slot)
        return out

    want = slotwise_matrix(basis, apply_full)
    got = lift_one_body(basis, A).toarray()
    np.testing.assert_allclose(got, want, atol=1e-12)


@pytest.mark.parametrize("L,N", [(4, 2), (4, 3)])
def test_lift_two_body_against_tensor_oracle(L, N):
    rng = np.random.default_rng(L * 100 + N)
    basis = ConfigBasis(n_modes=L, n_particles=N)
    W = rng.standard_normal((L * L, L * L)) + 1j * rng.standard_normal((L * L, L * L))
    # symmetrise under simultaneous slot exchange
    W4 = W.reshape(L, L, L, L)
    W4 = 0.5 * (W4 + W4.transpose(1, 0, 3, 2))
    W = W4.reshape(L * L, L * L)

    def apply_full(T):
        out = np.zeros_like(T)
        for i in range(N):
            for j in range(i + 1, N):
                # contract slots (i, j) with W4[p, q, r, s] (slot1, slot2)
                acted = np.tensordot(W4, T, axes=([2, 3], [i, j]))
                acted = np.moveaxis(acted, (0, 1), (i, j))
                out += acted
        return out

    want = slotwise_matrix(basis, apply_full)
    got = lift_two_body(basis, W).toarray()
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_lift_three_body_against_tensor_oracle():
    L, N = 4, 3
    rng = np.random.default_rng(7)
    basis = ConfigBasis(n_modes=L, n_particles=N)
    W = rng.standard_normal((L**3, L**3)) + 1j * rng.standard_normal((L**3, L**3))
    W6 = W.reshape(L, L, L, L, L, L)
    # symmetrise over simultaneous slot permutations
    acc = np.zeros_like(W6)
    for perm in permutations(range(3)):
        acc += W6.transpose(tuple(perm) + tuple(p + 3 for p in perm))
    W6 = acc / 6.0
    W = W6.reshape(L**3, L**3)

    def apply_full(T):
        # only one triple (0,1,2) at N=3: the operator is W itself
        return (W @ T.ravel()).reshape(T.shape)

    want = slotwise_matrix(basis, apply_full)
    got = lift_three_body(basis, W).toarray()
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_lift_three_body_vanishes_for_pairs():
    basis = ConfigBasis(n_modes=4, n_particles=2)
    W = np.eye(4**3)
    assert lift_three_body(basis, W).nnz == 0


def test_lift_diagonal_matches_one_body():
    rng = np.random.default_rng(2)
    basis = ConfigBasis(n_modes=6, n_particles=3)
    vals = rng.standard_normal(6)
    via_table = lift_one_body(basis, np.diag(vals)).toarray()
    via_occ = np.diag(lift_diagonal(basis, vals))
    np.testing.assert_allclose(via_table, via_occ, atol=1e-13)


# ---------------------------------------------------------------------------
# Hamiltonian, Slater embedding, reduced density matrix
# ---------------------------------------------------------------------------


def small_system(n=8, box=8.0, N=2, width=3.2, mode="lattice"):
    grid = Grid(dim=1, sites_per_dim=n, box_length=box, kinetic_mode=mode)
    pot = build_potential(grid, "gaussian", amplitude=1.5, width=width)
    basis = ConfigBasis(n_modes=grid.total_sites, n_particles=N)
    return grid, pot, basis


def test_pairwise_vector_matches_direct_sum():
    grid, pot, basis = small_system()
    from mflab.grid import difference_matrix

    V = difference_matrix(pot.v).real
    vec = pairwise_potential_vector(basis, pot)
    for idx in (0, 5, len(basis.configs) - 1):
        config = basis.configs[idx]
        direct = sum(
            V[config[i], config[j]]
            for i in range(len(config))
            for j in range(i + 1, len(config))
        )
        assert vec[idx] == pytest.approx(direct, rel=1e-13)


def test_hamiltonian_hermitian_and_norm_preserving():
    grid, pot, basis = small_system()
    H = build_hamiltonian(basis, pot, ScalingParams(N=2))
    dense = H.matrix.toarray()
    assert np.max(np.abs(dense - dense.conj().T)) < 1e-11
    rng = np.random.default_rng(0)
    state = random_state(basis, rng)
    out = propagate(state, H, t_final=1.0)
    assert abs(out.norm - 1.0) < 1e-12
    e0 = np.vdot(state.amplitudes, H.matrix @ state.amplitudes).real
    e1 = np.vdot(out.amplitudes, H.matrix @ out.amplitudes).real
    assert abs(e1 - e0) < 1e-11


def test_krylov_matches_dense_exponential():
    grid, pot, basis = small_system(N=3)
    H = build_hamiltonian(basis, pot, ScalingParams(N=3))
    rng = np.random.default_rng(4)
    state = random_state(basis, rng)
    a = propagate(state, H, t_final=0.9)
    b = propagate_dense(state, H, t_final=0.9)
    assert np.linalg.norm(a.amplitudes - b.amplitudes) < 1e-11


def test_time_dependent_midpoint_propagation():
    grid, pot, basis = small_system(N=2)
    H = build_hamiltonian(basis, pot, ScalingParams(N=2))

    def gen(t):
        return H  # constant in time: midpoint stepping must agree with one shot

    rng = np.random.default_rng(9)
    state = random_state(basis, rng)
    a = propagate(state, gen, t_final=0.5, dt=0.05)
    b = propagate(state, H, t_final=0.5)
    assert np.linalg.norm(a.amplitudes - b.amplitudes) < 1e-11


def test_slater_state_norm_and_rdm():
    grid, pot, basis = small_system(N=3)
    orbs = make_orbitals(InitialFamily("localized", width=1.2), 3, grid)
    psi = slater_state(orbs, basis)
    assert abs(psi.norm - 1.0) < 1e-12
    gamma = rdm1(psi).matrix
    A = np.sqrt(grid.cell_volume) * orbs.value_matrix()
    p = A @ A.conj().T
    np.testing.assert_allclose(gamma, p / 3.0, atol=1e-12)
    # gamma spectrum within [0, 1/N]; trace one
    evals = np.linalg.eigvalsh(gamma)
    assert evals.min() > -1e-12
    assert evals.max() < 1.0 / 3.0 + 1e-12
    assert abs(np.trace(gamma).real - 1.0) < 1e-12


def test_occupation_density_matches_orbital_density():
    grid, pot, basis = small_system(N=2)
    orbs = make_orbitals(InitialFamily("localized", width=1.0), 2, grid)
    psi = slater_state(orbs, basis)
    occ = occupation_density(psi)
    rho = density(orbs).values.real.ravel()
    np.testing.assert_allclose(occ, grid.cell_volume * rho, atol=1e-12)


def test_slater_rejects_nonorthonormal():
    grid, pot, basis = small_system(N=2)
    orbs = make_orbitals(InitialFamily("localized", width=1.0), 2, grid)
    skewed = type(orbs)(
        orbitals=(orbs.orbitals[0], orbs.orbitals[0]),  # repeated orbital
        time=0.0,
        scaling=orbs.scaling,
    )
    with pytest.raises(ContractViolation):
        slater_state(skewed, basis)


def test_gauge_manybody_preserves_moduli_and_observables():
    grid, pot, basis = small_system(N=2)
    rng = np.random.default_rng(3)
    state = ManyBodyState(basis, random_state(basis, rng).amplitudes, time=0.8)
    gauged = gauge_manybody(state, 0.8, 0.5, pot)
    np.testing.assert_allclose(
        np.abs(gauged.amplitudes), np.abs(state.amplitudes), atol=1e-13
    )
    at_zero = gauge_manybody(state, 0.0, 0.5, pot)
    np.testing.assert_allclose(at_zero.amplitudes, state.amplitudes, atol=1e-15)
    m = Field(grid, rng.standard_normal(grid.shape))
    occ_a = np.dot(m.values.ravel(), occupation_density(state))
    occ_b = np.dot(m.values.ravel(), occupation_density(gauged))
    assert abs(occ_a - occ_b) < 1e-13


def test_observe_slater_sides_agree():
    grid, pot, basis = small_system(N=2)
    orbs = make_orbitals(InitialFamily("localized", width=1.0), 2, grid)
    psi = slater_state(orbs, basis)
    box = np.zeros(grid.shape)
    box[2:5] = 1.0
    res = observe(Field(grid, box), psi, orbs)
    assert res.comparison < 1e-13


def test_observe_rejects_nondiagonal_without_flag():
    grid, pot, basis = small_system(N=2)
    orbs = make_orbitals(InitialFamily("localized", width=1.0), 2, grid)
    psi = slater_state(orbs, basis)
    from mflab.manybody import OneBodyMatrix

    M = dense_kinetic(grid, "lattice")
    with pytest.raises(ConfigError):
        observe(OneBodyMatrix(M), psi, orbs)
    res = observe(OneBodyMatrix(M), psi, orbs, allow_general=True)
    assert res.comparison < 1e-10


def test_basis_mismatch_rejected():
    grid, pot, basis = small_system(N=2)
    other = ConfigBasis(n_modes=basis.n_modes, n_particles=3)
    H = build_hamiltonian(basis, pot, ScalingParams(N=2))
    rng = np.random.default_rng(1)
    with pytest.raises(GridMismatchError):
        propagate(random_state(other, rng), H, t_final=0.1)


def test_serialization_round_trips(tmp_path):
    grid, pot, basis = small_system(N=3)
    rng = np.random.default_rng(12)
    state = ManyBodyState(basis, random_state(basis, rng).amplitudes, time=0.37)

    binary = tmp_path / "state.mbs"
    save_state(state, binary)
    back = load_state(binary)
    assert back.basis == state.basis
    assert back.time == state.time
    np.testing.assert_array_equal(back.amplitudes, state.amplitudes)

    jpath = tmp_path / "state.json"
    save_state_json(state, jpath)
    back_j = load_state_json(jpath)
    np.testing.assert_allclose(back_j.amplitudes, state.amplitudes, atol=1e-15)

    with pytest.raises(ConfigError):
        bad = tmp_path / "bad.mbs"
        bad.write_bytes(b"NOTASTATE" + b"\0" * 32)
        load_state(bad)
