"""Counting particles outside a reference orbital set.

Any N-fermion state decomposes over excitation sectors P^(k) -- eigenspaces
of the number of particles outside the occupied orbitals.  The weighted sector
masses give the counting functionals alpha_f; alpha_n (f(k) = k/N) also equals
a one-body expectation, giving two independent routes that must agree.

A Slater state sits entirely in sector 0; mixing in one excited configuration
moves mass to sector 1.  The randomized inequality suite at the end checks the
conversion bounds between q-projections and weight operators with their
explicit constants.
"""

import numpy as np

from mflab.counting import (
    alpha,
    alpha_number_onebody,
    build_projections,
    lemma_suite,
    sector_masses,
    weight_number,
    weight_sqrt,
)
from mflab.grid import Grid
from mflab.manybody import ConfigBasis, ManyBodyState, slater_state
from mflab.model import InitialFamily, make_orbitals

grid = Grid(dim=1, sites_per_dim=8, box_length=8.0, kinetic_mode="lattice")
N = 3
orbitals = make_orbitals(InitialFamily("localized", width=1.2), N, grid)
projections = build_projections(orbitals)
basis = ConfigBasis(grid.total_sites, N)

slater = slater_state(orbitals, basis)
print("sector masses of the Slater state:", np.round(sector_masses(slater, projections), 12))

rng = np.random.default_rng(5)
mix = slater.amplitudes + 0.3 * (rng.standard_normal(basis.dim)
                                 + 1j * rng.standard_normal(basis.dim))
mixed = ManyBodyState(basis, mix / np.linalg.norm(mix), 0.0)
masses = sector_masses(mixed, projections)
print("sector masses after mixing:      ", np.round(masses, 6))
print(f"masses sum to {masses.sum():.12f}")
print()

a_sector = alpha(weight_number(N), mixed, projections)
a_onebody = alpha_number_onebody(mixed, projections)
print(f"alpha_n via sector weights:   {a_sector:.12f}")
print(f"alpha_n via one-body route:   {a_onebody:.12f}")
print(f"disagreement:                 {abs(a_sector - a_onebody):.2e}")
print(f"alpha_sqrt (f = sqrt(k/N)):   {alpha(weight_sqrt(N), mixed, projections):.12f}")
print()

report = lemma_suite(seed=1, trials=25)
checks = sum(rec["trials"] for rec in report.asserted.values())
print(f"inequality suite: {checks} asserted checks, "
      f"{report.violation_count} violations")
print(f"sharpest q-conversion ratio lhs/rhs: "
      f"{report.asserted['q_conversion']['max_ratio']:.3f}  (bound allows 1.0)")
