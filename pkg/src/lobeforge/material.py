"""Printed TPE elastomer: datasheet points and a small-strain linear fit."""
from __future__ import annotations

from dataclasses import dataclass, field

from .errors import EmptyDatasheet

# Fiberflex 40D technical datasheet values (stress in MPa at the given strain)
TPE_DATASHEET = ((0.05, 2.0), (0.10, 4.0), (0.50, 9.0))
TPE_STRESS_AT_BREAK_MPA = 28.0
TPE_ELONGATION_AT_BREAK = 7.0
TPE_DENSITY_G_CM3 = 1.16
DEFAULT_POISSON = 0.45


@dataclass(frozen=True)
class DatasheetPoint:
    strain: float
    stress: float

    def __post_init__(self):
        if self.strain <= 0 or self.stress <= 0:
            raise ValueError("datasheet strain and stress must be positive")

    @property
    def secant(self) -> float:
        return self.stress / self.strain


@dataclass(frozen=True)
class Material:
    E: float
    nu: float = DEFAULT_POISSON
    density: float = TPE_DENSITY_G_CM3
    secants: tuple[float, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if self.E <= 0:
            raise ValueError("Young's modulus must be positive")
        if not 0.0 <= self.nu < 0.5:
            raise ValueError("Poisson ratio must lie in [0, 0.5)")

    @property
    def plane_stress_modulus(self) -> float:
        """E / (1 - nu^2), the membrane stiffness per unit thickness."""
        return self.E / (1.0 - self.nu**2)

    def membrane_stiffness(self, t):
        return self.plane_stress_modulus * t

    def bending_stiffness(self, t):
        return self.plane_stress_modulus * t**3 / 12.0

    def lame(self) -> tuple[float, float]:
        """Plane-stress (lambda, mu)."""
        lam = self.E * self.nu / (1.0 - self.nu**2)
        mu = self.E / (2.0 * (1.0 + self.nu))
        return lam, mu


def fit_material(points, nu: float = DEFAULT_POISSON, density: float = TPE_DENSITY_G_CM3) -> Material:
    """Secant modulus at the smallest-strain datasheet point.

    Points are ``DatasheetPoint`` or ``(strain, stress)`` pairs sorted by strain.
    The secants of all points are kept on the result for reporting.
    """
    pts = [p if isinstance(p, DatasheetPoint) else DatasheetPoint(*p) for p in points]
    if not pts:
        raise EmptyDatasheet("no datasheet points given")
    strains = [p.strain for p in pts]
    if any(b <= a for a, b in zip(strains, strains[1:])):
        raise ValueError("datasheet strains must be sorted and unique")
    return Material(pts[0].secant, nu, density, tuple(p.secant for p in pts))


def default_material() -> Material:
    return fit_material(TPE_DATASHEET, DEFAULT_POISSON)
