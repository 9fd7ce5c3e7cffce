"""Desk-scale laboratory for rescaled fermionic mean-field dynamics.

Subpackages are organised bottom-up:

* ``grid``      periodic grids, fields, spectral/lattice operators
* ``model``     interaction potentials, scaling, initial orbital families
* ``hartree``   the rescaled self-consistent orbital evolution
* ``gauge``     pair-phase gauge transforms and the gauged orbital flow
* ``manybody``  exact dynamics on the antisymmetric configuration basis
* ``counting``  occupancy sectors, weight operators, their comparison lemmas
* ``auxiliary`` the projected (truncated) auxiliary dynamics and energies
* ``cli``       reproducible command-line drivers
"""

from .errors import (
    ConfigError,
    ContractViolation,
    GridMismatchError,
    MflabError,
    NumericalFailure,
)
from .grid import Field, Grid

__all__ = [
    "Field",
    "Grid",
    "MflabError",
    "GridMismatchError",
    "ConfigError",
    "NumericalFailure",
    "ContractViolation",
]

__version__ = "0.1.0"
