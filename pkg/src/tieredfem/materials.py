"""Material records: elastic moduli plus hysteretic backbone parameters.

The backbone is tau = G0*gamma / (1 + a*|gamma/gamma_r|^b), saturated at
tau_f = G0*gamma_r. gamma_r follows the usual convention (secant modulus
G0/2 at gamma_r), which pins a = 1. b is derived once from hmax so the
Masing-loop damping at large strain approaches hmax:

    h_inf = (2/pi) * b / (2 - b)   =>   b = 2*pi*hmax / (2 + pi*hmax)

hmax must sit in [0, 2/pi) or no such b < 1 exists.
"""

import math
from dataclasses import dataclass, field

from .errors import InputError

MASING_DAMPING_SUP = 2.0 / math.pi


def ro_beta_from_hmax(hmax):
    """Backbone exponent giving large-strain Masing damping hmax."""
    if not 0.0 <= hmax < MASING_DAMPING_SUP:
        raise InputError(f"hmax must be in [0, 2/pi), got {hmax}")
    return 2.0 * math.pi * hmax / (2.0 + math.pi * hmax)


def masing_damping_limit(beta_ro):
    """Large-strain equivalent damping of the Masing loop for exponent b."""
    return (2.0 / math.pi) * beta_ro / (2.0 - beta_ro)


@dataclass
class Material:
    name: str
    rho: float          # kg/m^3
    vs: float           # m/s
    vp: float           # m/s
    gamma_r: float = 1e-3
    hmax: float = 0.0
    linear: bool = False
    alpha_ro: float = field(init=False)
    beta_ro: float = field(init=False)

    def __post_init__(self):
        if min(self.rho, self.vs, self.vp) <= 0.0:
            raise InputError(f"material {self.name}: rho/vs/vp must be positive")
        if self.vp <= self.vs * math.sqrt(4.0 / 3.0):
            # Kb = rho*(vp^2 - 4/3 vs^2) must stay positive
            raise InputError(f"material {self.name}: vp too low for positive bulk modulus")
        if self.gamma_r <= 0.0:
            raise InputError(f"material {self.name}: gamma_r must be positive")
        self.alpha_ro = 1.0
        self.beta_ro = 0.0 if self.linear else ro_beta_from_hmax(self.hmax)

    @property
    def g0(self):
        return self.rho * self.vs**2

    @property
    def kb(self):
        return self.rho * (self.vp**2 - 4.0 / 3.0 * self.vs**2)

    @property
    def tau_f(self):
        return self.g0 * self.gamma_r

    def to_dict(self):
        return {
            "name": self.name,
            "rho": self.rho,
            "vs": self.vs,
            "vp": self.vp,
            "gamma_r": self.gamma_r,
            "hmax": self.hmax,
            "linear": self.linear,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class MaterialTable:
    """Ordered material list; element material ids index into it."""

    def __init__(self, materials):
        if not materials:
            raise InputError("material table must not be empty")
        self.materials = list(materials)

    def __len__(self):
        return len(self.materials)

    def __getitem__(self, i):
        return self.materials[i]

    def __iter__(self):
        return iter(self.materials)

    def to_dicts(self):
        return [m.to_dict() for m in self.materials]

    @classmethod
    def from_dicts(cls, ds):
        return cls([Material.from_dict(d) for d in ds])


def desk_materials():
    """Two-layer desk model: soft nonlinear soil over linear bedrock."""
    return MaterialTable(
        [
            Material("soft_soil", rho=1700.0, vs=100.0, vp=330.0, gamma_r=1e-3, hmax=0.24),
            Material("bedrock", rho=2000.0, vs=400.0, vp=750.0, linear=True),
        ]
    )
