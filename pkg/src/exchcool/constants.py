"""Physical constants, ion species and unit conversions.

Everything inside the package is SI. Configuration files and reports use the
mm-based units the trap community quotes potential coefficients in; the
helpers at the bottom convert at that boundary.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from scipy import constants as _sc


@dataclass(frozen=True)
class PhysicalConstants:
    vacuum_permittivity: float = _sc.epsilon_0
    reduced_planck: float = _sc.hbar
    boltzmann: float = _sc.k

    def __post_init__(self):
        for name in ("vacuum_permittivity", "reduced_planck", "boltzmann"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def coulomb_prefactor(self, charge1: float, charge2: float | None = None) -> float:
        """q1*q2/(4*pi*eps0) in J*m."""
        if charge2 is None:
            charge2 = charge1
        return charge1 * charge2 / (4.0 * math.pi * self.vacuum_permittivity)


@dataclass(frozen=True)
class IonSpecies:
    mass: float
    charge: float
    name: str = ""

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError("ion mass must be positive")
        if not self.charge > 0:
            raise ValueError("ion charge must be positive")


CODATA = PhysicalConstants()

# 40Ca+ : neutral atomic mass minus one electron.
CA40 = IonSpecies(
    mass=39.962590863 * _sc.atomic_mass - _sc.electron_mass,
    charge=_sc.elementary_charge,
    name="40Ca+",
)

# --- unit conversions (mm-based config units <-> SI) ---
UM = 1e-6
PER_MM2 = 1e6  # V/mm^2 -> V/m^2
PER_MM3 = 1e9  # V/mm^3 -> V/m^3
PER_MM4 = 1e12  # V/mm^4 -> V/m^4
US = 1e-6


def khz_to_rad(f_khz: float) -> float:
    return 2.0 * math.pi * 1e3 * f_khz


def rad_to_khz(omega: float) -> float:
    return omega / (2.0 * math.pi * 1e3)
