"""Variational space-time solver for shear-dependent incompressible flow.

Minimises a weighted inertia-dissipation-energy functional over discrete
space-time velocity trajectories on the periodic torus, compares the
small-weight limit against a classical semi-implicit reference solver, and
implements a solenoidal Lipschitz truncation pipeline on discrete
space-time fields.
"""

from .grid import TorusGrid, VectorField, TensorField
from .laws import ConstitutiveLaw, newtonian, power_law, build_ellis

__all__ = [
    "TorusGrid",
    "VectorField",
    "TensorField",
    "ConstitutiveLaw",
    "newtonian",
    "power_law",
    "build_ellis",
]

__version__ = "0.1.0"
