"""Nonlinear time-history FE engine for 3D seismic ground response.

The engine runs one physics (quadratic tets, multi-spring hysteretic soil,
implicit average-acceleration time integration) under four interchangeable
execution strategies that model a machine with a small fast memory tier and
a large slow one. Strategy selection changes where work runs and what moves
across the tier channel; it must never change the physics.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    CapacityError,
    IndefiniteOperatorError,
    InputError,
    MaxIterationsError,
    MeshError,
    NonFiniteError,
    SolverError,
    TransferError,
)
