"""Implicit time integration (average-acceleration Newmark).

Each step solves A du = rhs with

    A   = (4/dt^2) M + (2/dt) C + K,
    rhs = f - q + C v + M (a + (4/dt) v),

where M is the lumped mass, C = alpha M + beta K plus boundary dashpots, K
the current tangent stiffness and q the accumulated internal force; then

    u <- u + du,
    v <- -v + (2/dt) du,
    a <- -a - (4/dt) v_prev + (4/dt^2) du.

C v is built matrix-free: K v is recovered from the assembled operator as
(A v - dvec * v) / scale_k, so no separate stiffness matrix is stored.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError


@dataclass
class NewmarkCoeffs:
    """Time step and the three recurring coefficients."""

    dt: float
    four_over_dt2: float
    two_over_dt: float
    four_over_dt: float

    @classmethod
    def from_dt(cls, dt):
        if not dt > 0.0:
            raise InputError(f"time step must be positive, got {dt}")
        return cls(dt, 4.0 / dt**2, 2.0 / dt, 4.0 / dt)


@dataclass
class RayleighCoeffs:
    """Mass and stiffness proportional damping factors (1/s and s)."""

    alpha: float
    beta: float

    def __post_init__(self):
        if self.alpha < 0.0 or self.beta < 0.0:
            raise InputError(
                f"damping factors must be nonnegative, got "
                f"alpha={self.alpha}, beta={self.beta}")


@dataclass
class TimeState:
    """Nodal displacement, velocity, acceleration and internal force."""

    u: np.ndarray
    v: np.ndarray
    a: np.ndarray
    q: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n_dofs):
        return cls(np.zeros(n_dofs), np.zeros(n_dofs), np.zeros(n_dofs),
                   np.zeros(n_dofs))

    def time(self, dt):
        return self.step * dt


def operator_terms(newmark, damp, mass_dofs, dash_dofs):
    """(scale_k, dvec) with A = scale_k * K + diag(dvec)."""
    scale_k = 1.0 + newmark.two_over_dt * damp.beta
    dvec = ((newmark.four_over_dt2 + newmark.two_over_dt * damp.alpha)
            * mass_dofs + newmark.two_over_dt * dash_dofs)
    return scale_k, dvec


def build_rhs(state, f_ext, newmark, damp, mass_dofs, dash_dofs, a_op,
              constrained):
    """Right-hand side of the incremental solve for the next step.

    `a_op` is the current assembled operator (block-CRS or element-by-
    element); constrained entries are zeroed so the solve keeps du = 0
    there.
    """
    v = state.v
    scale_k, dvec = operator_terms(newmark, damp, mass_dofs, dash_dofs)
    kv = (a_op.matvec(v) - dvec * v) / scale_k
    cv = damp.alpha * mass_dofs * v + dash_dofs * v + damp.beta * kv
    rhs = (f_ext - state.q + cv
           + mass_dofs * (state.a + newmark.four_over_dt * v))
    if constrained.size:
        rhs[constrained] = 0.0
    return rhs


def apply_updates(state, du, newmark, dq=None):
    """Advance the state one step; dq is the internal-force increment."""
    u = state.u + du
    v = -state.v + newmark.two_over_dt * du
    a = (-state.a - newmark.four_over_dt * state.v
         + newmark.four_over_dt2 * du)
    q = state.q if dq is None else state.q + dq
    return TimeState(u, v, a, q, state.step + 1)


def update_rayleigh(hbar, band):
    """Damping factors fitting the target level over a frequency band.

    Minimizes the integral of (hbar - (alpha/(2w) + beta*w/2))^2 over the
    band in closed form.
    """
    fmin, fmax = band
    if not (0.0 < fmin < fmax):
        raise InputError(f"need 0 < fmin < fmax, got [{fmin}, {fmax}]")
    if hbar < 0.0:
        raise InputError(f"damping level must be nonnegative, got {hbar}")
    w1 = 2.0 * math.pi * fmin
    w2 = 2.0 * math.pi * fmax
    s11 = 1.0 / w1 - 1.0 / w2
    s12 = w2 - w1
    s22 = (w2**3 - w1**3) / 3.0
    r1 = hbar * math.log(w2 / w1)
    r2 = hbar * (w2**2 - w1**2) / 2.0
    det = s11 * s22 - s12**2
    a = (s22 * r1 - s12 * r2) / det
    b = (s11 * r2 - s12 * r1) / det
    return RayleighCoeffs(2.0 * a, 2.0 * b)
