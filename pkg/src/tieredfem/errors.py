"""Error taxonomy shared across the engine.

The CLI maps these onto distinct exit codes (input 2, solver 3, capacity 4).
"""


class InputError(ValueError):
    """Bad user input: config values, malformed files, geometry requests."""


class MeshError(InputError):
    """Mesh generation/serialization failure (inverted cells, bad interfaces)."""


class SolverError(RuntimeError):
    """Iterative or direct solve failed."""


class IndefiniteOperatorError(SolverError):
    """CG breakdown: operator not positive definite (p^T A p <= 0)."""


class MaxIterationsError(SolverError):
    """Iteration cap reached before the residual target."""


class NonFiniteError(SolverError):
    """NaN or Inf detected in a state vector; carries the step index."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class CapacityError(RuntimeError):
    """Fast-arena capacity exceeded (the memory wall)."""


class TransferError(RuntimeError):
    """Tier-transfer protocol violation (double transfer, bad residency)."""
