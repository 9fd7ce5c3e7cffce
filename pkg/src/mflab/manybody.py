"""Exact fermionic dynamics on the antisymmetric configuration basis.

States live on ordered N-site configurations of the L = total_sites grid
modes (occupation-number basis, configurations sorted lexicographically).
The rescaled generator is

    i d/dt Psi = epsilon * H Psi,    H = lift1(K) + sum_{i<j} v(x_i - x_j),

with K the grid's kinetic matrix in its kinetic mode.  ``lift1``/``lift2``/
``lift3`` raise one-, two- and three-body mode-space operators to the
configuration basis through precomputed index/sign tables, so lifting a new
operator is a vectorised gather.

Conventions:
* |I> = a^dag_{i1} ... a^dag_{iN} |0> with i1 < ... < iN (flattened C-order
  site indices).
* Pair/triple operators are matrices on the tensor product of site-value
  spaces with C-order flattening ((x1, x2) -> x1*L + x2), slot 1 slowest.
* The Slater amplitude of an orbital family is the determinant of the
  measure-weighted value matrix, c_I = h^(dim N/2) det Phi[I, :], which makes
  the embedded state exactly unit-norm for orthonormal orbitals.
* ``rdm1`` returns gamma[x, y] = <a^dag_y a_x>/N, normalised to unit trace;
  for a Slater state gamma = p/N with p the orbital projector matrix.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from functools import cached_property
from itertools import combinations

import numpy as np
import scipy.sparse as sp
from scipy.linalg import expm

from ._lanczos import expm_multiply_hermitian
from .errors import ConfigError, ContractViolation, GridMismatchError, NumericalFailure
from .grid import Grid, dense_kinetic, difference_matrix
from .model import InteractionPotential, ScalingParams, resolve_scaling


def _parity_below(mask: int, m: int) -> int:
    return -1 if (mask & ((1 << m) - 1)).bit_count() & 1 else 1


def _annihilate(mask: int, m: int) -> tuple[int, int] | None:
    if not (mask >> m) & 1:
        return None
    return mask & ~(1 << m), _parity_below(mask, m)


def _create(mask: int, m: int) -> tuple[int, int] | None:
    if (mask >> m) & 1:
        return None
    return mask | (1 << m), _parity_below(mask, m)


@dataclass(frozen=True)
class ConfigBasis:
    """All N-of-L fermionic configurations, lexicographically ordered."""

    n_modes: int
    n_particles: int

    def __post_init__(self) -> None:
        if not 1 <= self.n_particles <= self.n_modes:
            raise ConfigError(
                f"need 1 <= N <= L, got N={self.n_particles}, L={self.n_modes}"
            )
        if self.n_modes > 62:
            raise ConfigError("mode count beyond the desk-scale bitmask range")

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, ConfigBasis)
            and other.n_modes == self.n_modes
            and other.n_particles == self.n_particles
        )

    def __hash__(self) -> int:
        return hash((self.n_modes, self.n_particles))

    @cached_property
    def configs(self) -> tuple[tuple[int, ...], ...]:
        return tuple(combinations(range(self.n_modes), self.n_particles))

    @property
    def dim(self) -> int:
        return len(self.configs)

    @cached_property
    def masks(self) -> tuple[int, ...]:
        return tuple(sum(1 << m for m in c) for c in self.configs)

    @cached_property
    def index(self) -> dict[int, int]:
        return {mask: i for i, mask in enumerate(self.masks)}

    @cached_property
    def occupancy(self) -> np.ndarray:
        """(dim, L) 0/1 array of mode occupations."""
        occ = np.zeros((self.dim, self.n_modes))
        for i, c in enumerate(self.configs):
            occ[i, list(c)] = 1.0
        return occ

    # ---- index/sign tables (built once, reused for every lifted operator) ----

    @cached_property
    def one_body_table(self) -> tuple[np.ndarray, ...]:
        rows, cols, bs, as_, signs = [], [], [], [], []
        for i, (config, mask) in enumerate(zip(self.configs, self.masks)):
            for a in config:
                m1, s1 = _annihilate(mask, a)
                for b in range(self.n_modes):
                    created = _create(m1, b)
                    if created is None:
                        continue
                    m2, s2 = created
                    rows.append(self.index[m2])
                    cols.append(i)
                    bs.append(b)
                    as_.append(a)
                    signs.append(s1 * s2)
        return (
            np.array(rows, dtype=np.int64),
            np.array(cols, dtype=np.int64),
            np.array(bs, dtype=np.int64),
            np.array(as_, dtype=np.int64),
            np.array(signs, dtype=np.int8),
        )

    @cached_property
    def two_body_table(self) -> tuple[np.ndarray, ...]:
        L = self.n_modes
        rows, cols, prow, pcol, signs = [], [], [], [], []
        for i, (config, mask) in enumerate(zip(self.configs, self.masks)):
            for r in config:
                m1, s1 = _annihilate(mask, r)
                for s in config:
                    if s == r:
                        continue
                    m2, s2 = _annihilate(m1, s)
                    for q in range(L):
                        cq = _create(m2, q)
                        if cq is None:
                            continue
                        m3, s3 = cq
                        for p in range(L):
                            cp = _create(m3, p)
                            if cp is None:
                                continue
                            m4, s4 = cp
                            rows.append(self.index[m4])
                            cols.append(i)
                            prow.append(p * L + q)
                            pcol.append(r * L + s)
                            signs.append(s1 * s2 * s3 * s4)
        return (
            np.array(rows, dtype=np.int64),
            np.array(cols, dtype=np.int64),
            np.array(prow, dtype=np.int64),
            np.array(pcol, dtype=np.int64),
            np.array(signs, dtype=np.int8),
        )

    @cached_property
    def three_body_table(self) -> tuple[np.ndarray, ...]:
        L = self.n_modes
        if L > 12:
            raise ConfigError("three-body lifts are desk-scale only (L <= 12)")
        rows, cols, trow, tcol, signs = [], [], [], [], []
        for i, (config, mask) in enumerate(zip(self.configs, self.masks)):
            for s in config:
                m1, ps = _annihilate(mask, s)
                for t in config:
                    if t == s:
                        continue
                    m2, pt = _annihilate(m1, t)
                    for u in config:
                        if u == s or u == t:
                            continue
                        m3, pu = _annihilate(m2, u)
                        for r in range(L):
                            cr = _create(m3, r)
                            if cr is None:
                                continue
                            m4, pr = cr
                            for q in range(L):
                                cq = _create(m4, q)
                                if cq is None:
                                    continue
                                m5, pq = cq
                                for p in range(L):
                                    cp = _create(m5, p)
                                    if cp is None:
                                        continue
                                    m6, pp = cp
                                    rows.append(self.index[m6])
                                    cols.append(i)
                                    trow.append((p * L + q) * L + r)
                                    tcol.append((s * L + t) * L + u)
                                    signs.append(ps * pt * pu * pr * pq * pp)
        return (
            np.array(rows, dtype=np.int64),
            np.array(cols, dtype=np.int64),
            np.array(trow, dtype=np.int64),
            np.array(tcol, dtype=np.int64),
            np.array(signs, dtype=np.int8),
        )


def lift_one_body(basis: ConfigBasis, A: np.ndarray) -> sp.csr_matrix:
    """sum_i A_i on the configuration basis (A acts on mode space)."""
    L = basis.n_modes
    if A.shape != (L, L):
        raise GridMismatchError(f"one-body matrix shape {A.shape} != ({L}, {L})")
    rows, cols, bs, as_, signs = basis.one_body_table
    data = signs * A[bs, as_]
    return sp.coo_matrix((data, (rows, cols)), shape=(basis.dim, basis.dim)).tocsr()


def lift_two_body(basis: ConfigBasis, W: np.ndarray) -> sp.csr_matrix:
    """sum_{i<j} W_ij for a pair-space operator W (exchange-symmetric)."""
    L = basis.n_modes
    if W.shape != (L * L, L * L):
        raise GridMismatchError(f"pair operator shape {W.shape} != ({L*L}, {L*L})")
    rows, cols, prow, pcol, signs = basis.two_body_table
    data = 0.5 * signs * W[prow, pcol]
    return sp.coo_matrix((data, (rows, cols)), shape=(basis.dim, basis.dim)).tocsr()


def lift_three_body(basis: ConfigBasis, W: np.ndarray) -> sp.csr_matrix:
    """sum_{i<j<k} W_ijk for a triple-space operator W (exchange-symmetric)."""
    L = basis.n_modes
    if W.shape != (L**3, L**3):
        raise GridMismatchError(f"triple operator shape {W.shape} != ({L**3}, {L**3})")
    rows, cols, trow, tcol, signs = basis.three_body_table
    data = signs * W[trow, tcol] / 6.0
    return sp.coo_matrix((data, (rows, cols)), shape=(basis.dim, basis.dim)).tocsr()


def lift_diagonal(basis: ConfigBasis, values: np.ndarray) -> np.ndarray:
    """Diagonal (config-space vector) of sum_i m(x_i) for a multiplication m."""
    return basis.occupancy @ np.asarray(values).ravel()


# ---------------------------------------------------------------------------
# states
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManyBodyState:
    basis: ConfigBasis
    amplitudes: np.ndarray
    time: float

    def __post_init__(self) -> None:
        amps = np.asarray(self.amplitudes, dtype=np.complex128)
        if amps.shape != (self.basis.dim,):
            raise ConfigError(
                f"amplitude vector length {amps.shape} != basis dimension {self.basis.dim}"
            )
        object.__setattr__(self, "amplitudes", amps)

    def __eq__(self, other: object) -> bool:
        return self is other

    def __hash__(self) -> int:
        return id(self)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))


def random_state(basis: ConfigBasis, rng: np.random.Generator, time: float = 0.0) -> ManyBodyState:
    amps = rng.standard_normal(basis.dim) + 1j * rng.standard_normal(basis.dim)
    return ManyBodyState(basis, amps / np.linalg.norm(amps), time)


def slater_state(orbital_set, basis: ConfigBasis) -> ManyBodyState:
    """Embed an orthonormal orbital family as a determinant state."""
    grid = orbital_set.grid
    if basis.n_modes != grid.total_sites:
        raise GridMismatchError(
            f"basis has {basis.n_modes} modes but the grid {grid.total_sites} sites"
        )
    if basis.n_particles != orbital_set.N:
        raise ConfigError(
            f"basis particle number {basis.n_particles} != orbital count {orbital_set.N}"
        )
    A = np.sqrt(grid.cell_volume) * orbital_set.value_matrix()
    defect = np.max(np.abs(A.conj().T @ A - np.eye(orbital_set.N)))
    if defect > 1e-8:
        raise ContractViolation(
            f"orbitals are not orthonormal (defect {defect:.2e}); "
            "a determinant state needs an orthonormal family"
        )
    idx = np.array(basis.configs)
    stacked = A[idx, :]  # (dim, N, N): rows = occupied sites, cols = orbitals
    amps = np.linalg.det(stacked)
    return ManyBodyState(basis, amps, orbital_set.time)


# ---------------------------------------------------------------------------
# Hamiltonian and propagation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManyBodyOperator:
    """A hermitian configuration-space operator plus the rescaling epsilon."""

    basis: ConfigBasis
    matrix: sp.csr_matrix
    epsilon: float

    def __eq__(self, other: object) -> bool:
        return self is other

    def __hash__(self) -> int:
        return id(self)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x


def pairwise_potential_vector(basis: ConfigBasis, potential: InteractionPotential) -> np.ndarray:
    """Config-space diagonal of sum_{i<j} v(x_i - x_j)."""
    V = difference_matrix(potential.v).real
    occ = basis.occupancy
    quad = np.einsum("ij,ij->i", occ @ V, occ)
    return 0.5 * (quad - occ @ np.diag(V))


def build_hamiltonian(
    basis: ConfigBasis,
    potential: InteractionPotential,
    scaling: ScalingParams,
) -> ManyBodyOperator:
    grid = potential.grid
    if basis.n_modes != grid.total_sites:
        raise GridMismatchError("basis mode count does not match the grid")
    scaling = resolve_scaling(scaling, grid)
    K = dense_kinetic(grid)
    H = lift_one_body(basis, K) + sp.diags(
        pairwise_potential_vector(basis, potential).astype(np.complex128)
    )
    H = H.tocsr()
    asym = abs(H - H.conjugate().transpose())
    if asym.nnz and asym.max() > 1e-10:
        raise ContractViolation(f"lifted Hamiltonian not hermitian: defect {asym.max()}")
    return ManyBodyOperator(basis=basis, matrix=H, epsilon=float(scaling.epsilon))


def propagate(
    state: ManyBodyState,
    hamiltonian,
    t_final: float,
    dt: float | None = None,
    krylov_tol: float = 1e-13,
    dt_min: float = 1e-10,
) -> ManyBodyState:
    """Evolve i d/dt Psi = eps H Psi to t_final.

    ``hamiltonian`` is either a fixed ManyBodyOperator (one Krylov
    exponential over the whole span, split internally as needed) or a
    callable t -> ManyBodyOperator, integrated with midpoint-frozen
    exponential steps of size ``dt``.  Krylov stagnation triggers step
    halving; below ``dt_min`` it is a hard failure.
    """
    span = t_final - state.time
    if span < 0:
        raise ConfigError("t_final lies before the state's time")
    if span == 0:
        return state

    if callable(hamiltonian):
        if dt is None or dt <= 0:
            raise ConfigError("time-dependent generators need a positive dt")
        if dt < dt_min:
            raise NumericalFailure(f"step size {dt} below dt_min {dt_min}")
        n_steps = int(round(span / dt))
        if abs(n_steps * dt - span) > 1e-9 * max(1.0, span):
            raise ConfigError(f"span {span} is not an integer multiple of dt {dt}")
        amps = state.amplitudes
        for step in range(n_steps):
            t_mid = state.time + (step + 0.5) * dt
            op = hamiltonian(t_mid)
            amps = expm_multiply_hermitian(
                op.matvec, amps, -1j * dt * op.epsilon, tol=krylov_tol
            )
        if not np.all(np.isfinite(amps)):
            raise NumericalFailure("non-finite amplitudes during propagation")
        return ManyBodyState(state.basis, amps, t_final)

    op = hamiltonian
    if op.basis != state.basis:
        raise GridMismatchError("operator and state use different bases")
    amps = expm_multiply_hermitian(
        op.matvec, state.amplitudes, -1j * span * op.epsilon, tol=krylov_tol
    )
    if not np.all(np.isfinite(amps)):
        raise NumericalFailure("non-finite amplitudes during propagation")
    return ManyBodyState(state.basis, amps, t_final)


def propagate_dense(
    state: ManyBodyState, hamiltonian: ManyBodyOperator, t_final: float
) -> ManyBodyState:
    """Dense-matrix-exponential oracle for small bases (dim <= 400)."""
    if state.basis.dim > 400:
        raise ConfigError("dense propagation oracle is limited to dim <= 400")
    span = t_final - state.time
    U = expm(-1j * span * hamiltonian.epsilon * hamiltonian.matrix.toarray())
    return ManyBodyState(state.basis, U @ state.amplitudes, t_final)


def gauge_manybody(
    state: ManyBodyState,
    t: float,
    epsilon: float,
    potential: InteractionPotential,
) -> ManyBodyState:
    """Multiply by the pair phase exp(+i t eps sum_{i<j} v(x_i - x_j))."""
    vsum = pairwise_potential_vector(state.basis, potential)
    phases = np.exp(1j * t * epsilon * vsum)
    return ManyBodyState(state.basis, phases * state.amplitudes, state.time)


# ---------------------------------------------------------------------------
# observation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OneBodyMatrix:
    """A mode-space matrix tagged with whether it is hermitian."""

    matrix: np.ndarray
    hermitian: bool = True


def rdm1(state: ManyBodyState) -> OneBodyMatrix:
    """gamma[x, y] = <a^dag_y a_x>/N (unit trace, 0 <= gamma <= 1/N)."""
    basis = state.basis
    rows, cols, bs, as_, signs = basis.one_body_table
    c = state.amplitudes
    contrib = signs * np.conj(c[rows]) * c[cols]
    M = np.zeros((basis.n_modes, basis.n_modes), dtype=np.complex128)
    np.add.at(M, (bs, as_), contrib)  # M[b, a] = <a^dag_b a_a>
    return OneBodyMatrix(matrix=M.T / basis.n_particles, hermitian=True)


def occupation_density(state: ManyBodyState) -> np.ndarray:
    """<n_x> per mode, i.e. N * diag(gamma), without building lift tables."""
    return state.basis.occupancy.T @ np.abs(state.amplitudes) ** 2


@dataclass(frozen=True)
class ObservationResult:
    trace_exact: float
    trace_hartree: float
    comparison: float


def observe(M, state: ManyBodyState, orbital_set, allow_general: bool = False) -> ObservationResult:
    """Compare <Psi, (1/N) sum_i M_i Psi> with Tr(M p)/N for one observable.

    ``M`` is a Field (multiplication observable, the supported dictionary
    case) or a OneBodyMatrix; non-diagonal matrices are rejected unless
    ``allow_general`` (they need the full one-body reduction, and only
    hermitian ones have real expectations).
    """
    from .grid import Field  # local import: grid does not know about states

    grid = orbital_set.grid
    N = orbital_set.N
    if isinstance(M, Field):
        mvals = M.values.ravel()
        if np.max(np.abs(mvals.imag)) > 1e-12:
            raise ConfigError("multiplication observables must be real-valued")
        exact = float(np.dot(mvals.real, occupation_density(state)).real) / N
        A = orbital_set.value_matrix()
        hart = grid.cell_volume * float(
            np.einsum("x,xk,xk->", mvals.real, A.conj(), A).real
        ) / N
    else:
        mat = M.matrix if isinstance(M, OneBodyMatrix) else np.asarray(M)
        offdiag = float(np.max(np.abs(mat - np.diag(np.diag(mat)))))
        if offdiag > 1e-12 and not allow_general:
            raise ConfigError(
                "non-diagonal observable: pass allow_general=True to accept "
                "a general hermitian one-body matrix"
            )
        if np.max(np.abs(mat - mat.conj().T)) > 1e-10:
            raise ConfigError("general observables must be hermitian")
        gamma = rdm1(state).matrix
        exact = float(np.trace(mat @ gamma).real)
        A = np.sqrt(grid.cell_volume) * orbital_set.value_matrix()
        hart = float(np.trace(mat @ (A @ A.conj().T)).real) / N
    return ObservationResult(
        trace_exact=exact, trace_hartree=hart, comparison=abs(exact - hart)
    )


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_MAGIC = b"MFLBMBS1"


def save_state(state: ManyBodyState, path) -> None:
    """Binary container: magic, L, N, dim, time, raw complex amplitudes."""
    header = _MAGIC + struct.pack(
        "<IIQd",
        state.basis.n_modes,
        state.basis.n_particles,
        state.basis.dim,
        state.time,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(state.amplitudes, dtype=np.complex128).tobytes())


def load_state(path) -> ManyBodyState:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(_MAGIC)] != _MAGIC:
        raise ConfigError(f"{path} is not a state container (bad magic)")
    off = len(_MAGIC)
    L, N, dim, time = struct.unpack_from("<IIQd", blob, off)
    off += struct.calcsize("<IIQd")
    basis = ConfigBasis(n_modes=L, n_particles=N)
    if basis.dim != dim:
        raise ConfigError("state container dimension mismatch")
    amps = np.frombuffer(blob[off:], dtype=np.complex128).copy()
    if amps.shape != (dim,):
        raise ConfigError("state container payload truncated")
    return ManyBodyState(basis, amps, time)


def save_state_json(state: ManyBodyState, path) -> None:
    doc = {
        "format": "mflab-state",
        "version": 1,
        "n_modes": state.basis.n_modes,
        "n_particles": state.basis.n_particles,
        "time": state.time,
        "amplitudes_re": state.amplitudes.real.tolist(),
        "amplitudes_im": state.amplitudes.imag.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_state_json(path) -> ManyBodyState:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "mflab-state":
        raise ConfigError(f"{path} is not a JSON state container")
    basis = ConfigBasis(n_modes=doc["n_modes"], n_particles=doc["n_particles"])
    amps = np.array(doc["amplitudes_re"]) + 1j * np.array(doc["amplitudes_im"])
    return ManyBodyState(basis, amps, float(doc["time"]))
