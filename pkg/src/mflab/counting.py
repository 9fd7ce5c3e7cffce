"""Occupancy counting: sector projectors, weight operators, comparison lemmas.

Given an orthonormal orbital family with projector p (and complement
q = 1 - p), an antisymmetric N-particle state decomposes into sectors by how
many particles sit outside Ran p.  The sector projector P^(k) is, literally,

    P^(k) = sum over k-subsets S of {1..N} of  prod_{i in S} q_i prod_{i not in S} p_i,

and a weight function f: {0..N} -> R lifts to the operator
f_hat = sum_k f(k) P^(k).  Two implementations are kept deliberately:

* a production route on the configuration basis: rotate to an orbital-adapted
  mode basis (first n columns span Ran p), where the sector index is just the
  count of occupied complement modes and every weight operator is diagonal;
* a literal route (:class:`SlotSpace`) on the full N-fold tensor space, used
  to validate the algebra (products of slot projectors, shifted weights,
  conversion lemmas) exactly as written above.

Shifted weights are f_d(k) = f(k+d) when 0 <= k+d <= N and 0 otherwise.
``lemma_suite`` exercises the comparison lemmas on random antisymmetric
states and reports defects; the shifted-complement bound is asserted only
for shifts d <= N^gamma, where it provably holds — outside that range it is
recorded without assertion (small-N counterexamples exist).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from itertools import combinations, permutations

import numpy as np
from scipy.linalg import qr

from .errors import ConfigError, ContractViolation, GridMismatchError
from .manybody import ConfigBasis, ManyBodyState, lift_one_body


# ---------------------------------------------------------------------------
# weights
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WeightFunction:
    """A weight f on occupancy sectors 0..N (table of N+1 values)."""

    table: tuple[float, ...]
    name: str
    gamma: float | None = None

    @property
    def n_particles(self) -> int:
        return len(self.table) - 1

    def values(self) -> np.ndarray:
        return np.array(self.table)

    def shifted(self, d: int) -> "WeightFunction":
        """f_d(k) = f(k+d) restricted to 0 <= k+d <= N, else 0."""
        N = self.n_particles
        table = tuple(
            self.table[k + d] if 0 <= k + d <= N else 0.0 for k in range(N + 1)
        )
        sign = "+" if d >= 0 else ""
        return WeightFunction(table, f"{self.name}_shift{sign}{d}", self.gamma)

    def __mul__(self, other: "WeightFunction") -> "WeightFunction":
        if self.n_particles != other.n_particles:
            raise ConfigError("weights for different particle numbers")
        table = tuple(a * b for a, b in zip(self.table, other.table))
        return WeightFunction(table, f"({self.name})*({other.name})", None)


def weight_number(N: int) -> WeightFunction:
    return WeightFunction(tuple(k / N for k in range(N + 1)), "n")


def weight_sqrt(N: int) -> WeightFunction:
    return WeightFunction(tuple(math.sqrt(k / N) for k in range(N + 1)), "l")


def weight_inverse_sqrt(N: int) -> WeightFunction:
    """Inverse of the sqrt weight on the complement of sector zero."""
    table = (0.0,) + tuple(math.sqrt(N / k) for k in range(1, N + 1))
    return WeightFunction(table, "l_inv")


def weight_threshold(N: int, gamma: float) -> WeightFunction:
    table = tuple(min(1.0, k / N**gamma) for k in range(N + 1))
    return WeightFunction(table, f"m({gamma:g})", gamma)


def weight_complement(N: int, gamma: float) -> WeightFunction:
    table = tuple(1.0 - min(1.0, k / N**gamma) for k in range(N + 1))
    return WeightFunction(table, f"w({gamma:g})", gamma)


def weight_power(base: WeightFunction, power: int) -> WeightFunction:
    table = tuple(v**power for v in base.table)
    return WeightFunction(table, f"({base.name})^{power}", base.gamma)


# ---------------------------------------------------------------------------
# projections and the occupancy rotation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Projections:
    """Orbital projector p, complement q, and an adapted unitary mode basis.

    ``basis_matrix`` is unitary with the first ``n_occupied`` columns spanning
    Ran p; in that mode basis the sector decomposition is by occupation count.
    """

    p: np.ndarray = field(repr=False)
    q: np.ndarray = field(repr=False)
    basis_matrix: np.ndarray = field(repr=False)
    n_occupied: int
    _rotations: dict = field(default_factory=dict, repr=False, compare=False)

    def __eq__(self, other: object) -> bool:
        return self is other

    def __hash__(self) -> int:
        return id(self)

    @property
    def n_modes(self) -> int:
        return self.p.shape[0]

    def rotation(self, basis: ConfigBasis) -> tuple[np.ndarray, np.ndarray]:
        """(Rot, exc): amplitudes in the adapted mode basis and sector index.

        Rot[K, I] = conj(det(basis_matrix[sites(I), modes(K)])); a state's
        adapted amplitudes are d = Rot @ c, and exc[K] counts the occupied
        complement modes of configuration K.
        """
        if basis.n_modes != self.n_modes:
            raise GridMismatchError(
                f"basis has {basis.n_modes} modes, projections {self.n_modes}"
            )
        key = (basis.n_modes, basis.n_particles)
        if key not in self._rotations:
            configs = np.array(basis.configs)
            U = self.basis_matrix
            dim, Npart = basis.dim, basis.n_particles
            Rot = np.empty((dim, dim), dtype=np.complex128)
            chunk = max(1, int(2**22 // max(1, dim * Npart * Npart)))
            for start in range(0, dim, chunk):
                Ks = configs[start : start + chunk]
                sub = U[configs[None, :, :, None], Ks[:, None, None, :]]
                Rot[start : start + chunk, :] = np.conj(np.linalg.det(sub))
            exc = (configs >= self.n_occupied).sum(axis=1)
            self._rotations[key] = (Rot, exc)
        return self._rotations[key]


def build_projections(orbital_set) -> Projections:
    """Projections onto the span of an orthonormal orbital family."""
    grid = orbital_set.grid
    A = np.sqrt(grid.cell_volume) * orbital_set.value_matrix()
    N = A.shape[1]
    defect = np.max(np.abs(A.conj().T @ A - np.eye(N)))
    if defect > 1e-8:
        raise ContractViolation(f"orbitals not orthonormal (defect {defect:.2e})")
    L = A.shape[0]
    p = A @ A.conj().T
    q = np.eye(L) - p
    Qfull, _, _ = qr(q, pivoting=True)
    U = np.hstack([A, Qfull[:, : L - N]])
    unitarity = np.max(np.abs(U.conj().T @ U - np.eye(L)))
    if unitarity > 1e-10:
        raise ContractViolation(
            f"adapted mode basis failed to be unitary (defect {unitarity:.2e})"
        )
    return Projections(p=p, q=q, basis_matrix=U, n_occupied=N)


def rotated_amplitudes(state: ManyBodyState, projections: Projections) -> np.ndarray:
    Rot, _ = projections.rotation(state.basis)
    return Rot @ state.amplitudes


def sector_masses(state: ManyBodyState, projections: Projections) -> np.ndarray:
    """|P^(k) psi|^2 for k = 0..N (sums to |psi|^2)."""
    Rot, exc = projections.rotation(state.basis)
    d = Rot @ state.amplitudes
    masses = np.zeros(state.basis.n_particles + 1)
    np.add.at(masses, exc, np.abs(d) ** 2)
    return masses


def sector_project(state: ManyBodyState, k: int, projections: Projections) -> ManyBodyState:
    Rot, exc = projections.rotation(state.basis)
    d = Rot @ state.amplitudes
    d = np.where(exc == k, d, 0.0)
    return ManyBodyState(state.basis, Rot.conj().T @ d, state.time)


def apply_weight(
    state: ManyBodyState, weight: WeightFunction, projections: Projections
) -> ManyBodyState:
    if weight.n_particles != state.basis.n_particles:
        raise ConfigError(
            f"weight is for N={weight.n_particles}, state has N={state.basis.n_particles}"
        )
    Rot, exc = projections.rotation(state.basis)
    d = Rot @ state.amplitudes
    d = weight.values()[exc] * d
    return ManyBodyState(state.basis, Rot.conj().T @ d, state.time)


def alpha(weight: WeightFunction, state: ManyBodyState, projections: Projections) -> float:
    """<psi, f_hat psi> = sum_k f(k) |P^(k) psi|^2."""
    masses = sector_masses(state, projections)
    return float(np.dot(weight.values(), masses))


def alpha_number_onebody(state: ManyBodyState, projections: Projections) -> float:
    """Independent route to alpha_n: <psi, q_1 psi> = <psi, lift1(q) psi>/N."""
    Q = lift_one_body(state.basis, projections.q)
    c = state.amplitudes
    return float(np.vdot(c, Q @ c).real / state.basis.n_particles)


# ---------------------------------------------------------------------------
# literal tensor-space laboratory
# ---------------------------------------------------------------------------


class SlotSpace:
    """Distinguishable N-slot tensor space over the mode basis.

    Implements the counting operators literally — slot-wise p/q products,
    subset sums, weights as sector sums — for validating the production
    route and for exercising the comparison lemmas on honest antisymmetric
    states (embedded from configuration amplitudes with permutation signs).
    """

    def __init__(self, projections: Projections, n_particles: int):
        self.p = projections.p
        self.q = projections.q
        self.n_modes = projections.n_modes
        self.n_particles = n_particles

    # -- embedding ---------------------------------------------------------

    def embed(self, state: ManyBodyState) -> np.ndarray:
        N, L = self.n_particles, self.n_modes
        if state.basis.n_particles != N or state.basis.n_modes != L:
            raise GridMismatchError("state does not match this slot space")
        T = np.zeros((L,) * N, dtype=np.complex128)
        root = 1.0 / math.sqrt(math.factorial(N))
        for c_I, config in zip(state.amplitudes, state.basis.configs):
            if c_I == 0:
                continue
            for perm in permutations(range(N)):
                inv = sum(
                    1 for i in range(N) for j in range(i + 1, N) if perm[i] > perm[j]
                )
                T[tuple(config[s] for s in perm)] += (-1.0) ** inv * c_I * root
        return T

    def extract(self, T: np.ndarray, basis: ConfigBasis) -> ManyBodyState:
        root = math.sqrt(math.factorial(self.n_particles))
        idx = tuple(np.array([c[i] for c in basis.configs]) for i in range(self.n_particles))
        return ManyBodyState(basis, root * T[idx], 0.0)

    # -- slot operators ------------------------------------------------------

    def apply_one(self, T: np.ndarray, M: np.ndarray, slot: int) -> np.ndarray:
        out = np.tensordot(M, T, axes=([1], [slot]))
        return np.moveaxis(out, 0, slot)

    def apply_on_slots(self, T: np.ndarray, mat: np.ndarray, slots: tuple[int, ...]) -> np.ndarray:
        """Apply a |slots|-particle operator (flat C-order matrix) to the slots."""
        L = self.n_modes
        r = len(slots)
        tens = mat.reshape((L,) * (2 * r))
        out = np.tensordot(tens, T, axes=(list(range(r, 2 * r)), list(slots)))
        return np.moveaxis(out, list(range(r)), list(slots))

    def product_q(self, T: np.ndarray, n0: int) -> np.ndarray:
        out = T
        for slot in range(n0):
            out = self.apply_one(out, self.q, slot)
        return out

    def sector(self, T: np.ndarray, k: int, slots: tuple[int, ...] | None = None) -> np.ndarray:
        """P^(k) over the given slots (all slots by default): literal subset sum."""
        slots = tuple(range(self.n_particles)) if slots is None else slots
        if not 0 <= k <= len(slots):
            return np.zeros_like(T)
        out = np.zeros_like(T)
        for S in combinations(slots, k):
            term = T
            for slot in slots:
                term = self.apply_one(term, self.q if slot in S else self.p, slot)
            out += term
        return out

    def weight(self, T: np.ndarray, weight: WeightFunction) -> np.ndarray:
        out = np.zeros_like(T)
        for k, f_k in enumerate(weight.table):
            if f_k != 0.0:
                out += f_k * self.sector(T, k)
        return out

    def inner(self, A: np.ndarray, B: np.ndarray) -> complex:
        return complex(np.vdot(A, B))

    def norm_sq(self, T: np.ndarray) -> float:
        return float(np.vdot(T, T).real)


# ---------------------------------------------------------------------------
# lemma suite
# ---------------------------------------------------------------------------


@dataclass
class CheckRecord:
    trials: int = 0
    max_ratio: float = 0.0  # lhs / rhs, > 1 is a violation
    violations: list = field(default_factory=list)


@dataclass
class LemmaReport:
    seed: int
    trials: int
    sizes: list
    gammas: list
    asserted: dict
    reported: dict

    @property
    def violation_count(self) -> int:
        return sum(len(rec["violations"]) for rec in self.asserted.values())

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2)


def _record(table: dict, name: str, lhs: float, rhs: float, context: dict) -> None:
    rec = table.setdefault(name, {"trials": 0, "max_ratio": 0.0, "violations": []})
    rec["trials"] += 1
    ratio = lhs / rhs if rhs > 0 else (0.0 if lhs <= 1e-15 else np.inf)
    rec["max_ratio"] = max(rec["max_ratio"], ratio)
    if lhs > rhs * (1 + 1e-9) + 1e-12:
        rec["violations"].append({"lhs": lhs, "rhs": rhs, **context})


def _random_antisymmetric(basis: ConfigBasis, rng: np.random.Generator) -> ManyBodyState:
    amps = rng.standard_normal(basis.dim) + 1j * rng.standard_normal(basis.dim)
    return ManyBodyState(basis, amps / np.linalg.norm(amps), 0.0)


def _random_projections(L: int, N: int, rng: np.random.Generator) -> Projections:
    M = rng.standard_normal((L, L)) + 1j * rng.standard_normal((L, L))
    U, _ = np.linalg.qr(M)
    A = U[:, :N]
    p = A @ A.conj().T
    return Projections(p=p, q=np.eye(L) - p, basis_matrix=U, n_occupied=N)


def lemma_suite(
    seed: int = 0,
    trials: int = 200,
    sizes: tuple[tuple[int, int], ...] = ((2, 6), (3, 8), (4, 8), (3, 12)),
    gammas: tuple[float, ...] = (1.0 / 6.0, 0.5, 1.0),
    out_path=None,
) -> LemmaReport:
    """Exercise the conversion and shifted-weight lemmas on random states.

    Asserted (recorded under ``asserted``, any violation is a bug):
      q-conversion      |prod_{i<=n0+1} q_i psi|^2 <= 2 <psi, n_hat^(n0+1) psi>
      sqrt-conversion   |l_inv_hat prod_{i<=n0} q_i psi|^2 <= 2 <psi, n_hat^(n0-1) psi>
      shifted-complement |prod q_i w_hat^gamma_{+-d} psi|^2
                          <= 2 N^(n0(gamma-1)) <psi, m_hat^gamma psi>   (for d <= N^gamma)
      threshold-difference operator bounds and their sandwich factorisation.

    The shifted-complement bound for d > N^gamma is recorded under
    ``reported`` without assertion — it provably fails there at small N.
    """
    rng = np.random.default_rng(seed)
    asserted: dict = {}
    reported: dict = {}

    for trial in range(trials):
        N, L = sizes[trial % len(sizes)]
        basis = ConfigBasis(n_modes=L, n_particles=N)
        proj = _random_projections(L, N, rng)
        space = SlotSpace(proj, N)
        state = _random_antisymmetric(basis, rng)
        T = space.embed(state)
        ctx_base = {"trial": trial, "N": N, "L": L, "seed": seed}

        # sector components of T, computed once; sectors are orthogonal and
        # complete, so weights of T are linear combinations of these.
        comps = [space.sector(T, k) for k in range(N + 1)]
        masses = np.array([space.norm_sq(c) for c in comps])

        def combo(weight: WeightFunction) -> np.ndarray:
            out = np.zeros_like(T)
            for f_k, c in zip(weight.table, comps):
                if f_k != 0.0:
                    out += f_k * c
            return out

        def alpha_of(weight: WeightFunction) -> float:
            return float(np.dot(weight.values(), masses))

        # algebra sanity: completeness and agreement with the production route
        completeness = float(np.max(np.abs(sum(comps) - T)))
        _record(asserted, "sector_completeness", completeness, 1e-12, ctx_base)
        cross = float(np.max(np.abs(space.p @ space.q)))
        _record(asserted, "projector_orthogonality", cross, 1e-12, ctx_base)
        prod_masses = sector_masses(state, proj)
        _record(
            asserted,
            "mass_route_agreement",
            float(np.max(np.abs(prod_masses - masses))),
            1e-12,
            ctx_base,
        )

        n_w = weight_number(N)

        # q-conversion: n0 such that n0 + 1 <= N
        for n0 in range(0, min(3, N - 1) + 1):
            lhs = space.norm_sq(space.product_q(T, n0 + 1))
            rhs = 2.0 * alpha_of(weight_power(n_w, n0 + 1))
            _record(asserted, "q_conversion", lhs, rhs, {**ctx_base, "n0": n0})

        # sqrt-conversion: 1 <= n0 < N
        linv = weight_inverse_sqrt(N)
        for n0 in range(1, min(3, N - 1) + 1):
            v = space.weight(space.product_q(T, n0), linv)
            lhs = space.norm_sq(v)
            rhs = 2.0 * (space.norm_sq(T) if n0 == 1 else alpha_of(weight_power(n_w, n0 - 1)))
            _record(asserted, "sqrt_conversion", lhs, rhs, {**ctx_base, "n0": n0})

        # one random local operator per trial for the sandwich identities;
        # keep the acting slot set small when the mode count is large.
        size_C = min(3, N) if L**3 <= 1024 else min(2, N)
        slots = tuple(range(size_C))
        A_C = rng.standard_normal((L**size_C, L**size_C)) + 1j * rng.standard_normal(
            (L**size_C, L**size_C)
        )

        # shift identity: f_hat (P^(a) A_C P^(b)) = (P^(a) A_C P^(b)) f_hat_{a-b}
        a_sh = int(rng.integers(0, size_C + 1))
        b_sh = int(rng.integers(0, size_C + 1))
        sandwich_sh = space.sector(
            space.apply_on_slots(space.sector(T, b_sh, slots), A_C, slots), a_sh, slots
        )
        lhs_vec = space.weight(sandwich_sh, n_w)
        rhs_vec = space.sector(
            space.apply_on_slots(
                space.sector(combo(n_w.shifted(a_sh - b_sh)), b_sh, slots), A_C, slots
            ),
            a_sh,
            slots,
        )
        defect = float(np.max(np.abs(lhs_vec - rhs_vec)))
        scale = max(float(np.max(np.abs(sandwich_sh))), 1e-6)
        _record(
            asserted,
            "shift_identity",
            defect,
            1e-11 * scale,
            {**ctx_base, "a": a_sh, "b": b_sh},
        )

        for gamma in gammas:
            m_w = weight_threshold(N, gamma)
            w_w = weight_complement(N, gamma)
            alpha_m = alpha_of(m_w)

            # shifted-complement bound
            for d in range(0, min(3, N) + 1):
                for sign in (+1, -1):
                    if d == 0 and sign == -1:
                        continue
                    shifted = w_w.shifted(sign * d)
                    W_shift_T = combo(shifted)
                    for n0 in range(1, min(3, N) + 1):
                        lhs = space.norm_sq(space.product_q(W_shift_T, n0))
                        rhs = 2.0 * N ** (n0 * (gamma - 1.0)) * alpha_m
                        ctx = {**ctx_base, "gamma": gamma, "d": sign * d, "n0": n0}
                        target = asserted if d <= N**gamma + 1e-9 else reported
                        _record(target, "shifted_complement", lhs, rhs, ctx)

            # threshold-difference operators and factorisation
            for d in range(1, min(3, N) + 1):
                m_minus = m_w.shifted(-d)
                m_plus = m_w.shifted(+d)
                D_w = WeightFunction(
                    tuple(
                        math.sqrt(max(x - y, 0.0))
                        for x, y in zip(m_w.table, m_minus.table)
                    ),
                    f"D(-{d})",
                    gamma,
                )
                E_w = WeightFunction(
                    tuple(
                        math.sqrt(max(x - y, 0.0))
                        for x, y in zip(m_plus.table, m_w.table)
                    ),
                    f"E(-{d})",
                    gamma,
                )
                ctx = {**ctx_base, "gamma": gamma, "d": d}

                DT = combo(D_w)
                ET = combo(E_w)
                norm_T = space.norm_sq(T)
                _record(asserted, "diff_D_plain", space.norm_sq(DT), d * N**-gamma * norm_T, ctx)
                _record(asserted, "diff_E_plain", space.norm_sq(ET), d * N**-gamma * norm_T, ctx)
                if alpha_m > 1e-14:
                    _record(asserted, "diff_D_q1", space.norm_sq(space.product_q(DT, 1)),
                            d * (d + 1) * N**-1.0 * alpha_m, ctx)
                    _record(asserted, "diff_E_q1", space.norm_sq(space.product_q(ET, 1)),
                            d * N**-1.0 * alpha_m, ctx)
                    if N >= 2:
                        _record(asserted, "diff_D_q1q2", space.norm_sq(space.product_q(DT, 2)),
                                d * (d + 1) ** 2 * N ** (gamma - 2.0) * alpha_m, ctx)
                        _record(asserted, "diff_E_q1q2", space.norm_sq(space.product_q(ET, 2)),
                                d * N ** (gamma - 2.0) * alpha_m, ctx)

                # factorisation through a sandwiched local operator
                if d <= size_C:
                    a = int(rng.integers(0, size_C - d + 1))
                    sandwich = space.sector(
                        space.apply_on_slots(space.sector(T, a, slots), A_C, slots),
                        a + d,
                        slots,
                    )
                    diff_w = WeightFunction(
                        tuple(x - y for x, y in zip(m_w.table, m_minus.table)),
                        "m-m_-d",
                        gamma,
                    )
                    lhs_vec = space.weight(sandwich, diff_w)
                    rhs_vec = space.weight(
                        space.sector(
                            space.apply_on_slots(space.sector(combo(E_w), a, slots), A_C, slots),
                            a + d,
                            slots,
                        ),
                        D_w,
                    )
                    defect = float(np.max(np.abs(lhs_vec - rhs_vec)))
                    scale = max(float(np.max(np.abs(sandwich))), 1e-6)
                    _record(
                        asserted,
                        "difference_factorisation",
                        defect,
                        1e-11 * scale,
                        {**ctx, "a": a},
                    )

    report = LemmaReport(
        seed=seed,
        trials=trials,
        sizes=[list(s) for s in sizes],
        gammas=list(gammas),
        asserted=asserted,
        reported=reported,
    )
    if out_path is not None:
        report.to_json(out_path)
    return report
