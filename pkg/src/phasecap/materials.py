"""Phase-field material interpolation and the double-well potential.

phi = 1 is electrolyte, phi = 0 is electrode. All functions accept scalars
or numpy arrays.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PhysicalParams:
    """PNP coefficients and boundary data.

    Defaults are the reference two-dimensional rectangle setup.
    """

    eps0: float = 0.01
    epsm: float = 5.0
    d0: float = 0.5
    dm: float = 0.01
    alpha0: float = 1.0
    p: int = 2
    z: tuple = (1, -1)
    g_gamma2: float = -0.5
    g_gammain: float = 0.0
    c_inf: float = 0.5
    # bulk concentration imposed on Gamma_2; zero models a blocking electrode
    c_inf_gamma2: float = 0.0

    def validate(self):
        errors = []
        if not (0.0 < self.dm < self.d0):
            errors.append(f"need 0 < dm < d0, got dm={self.dm}, d0={self.d0}")
        if not (0.0 < self.eps0 < self.epsm):
            errors.append(f"need 0 < eps0 < epsm, got eps0={self.eps0}, epsm={self.epsm}")
        if int(self.p) != self.p or self.p < 1:
            errors.append(f"p must be a positive integer, got {self.p}")
        if self.alpha0 < 0:
            errors.append(f"alpha0 must be >= 0, got {self.alpha0}")
        if tuple(self.z) != (1, -1):
            errors.append(f"valences must be (1, -1), got {self.z}")
        if self.c_inf < 0 or self.c_inf_gamma2 < 0:
            errors.append("bulk concentrations must be nonnegative")
        if errors:
            raise ValueError("; ".join(errors))
        return self


def clamp01(v):
    return np.clip(v, 0.0, 1.0)


def _fraction(phi, p):
    return clamp01(np.asarray(phi, dtype=float) ** p)


def _fraction_derivative(phi, p):
    # derivative of clamp01(phi**p); zero wherever the clamp is active and
    # exactly at phi = 1 so that pure phases carry no sensitivity
    phi = np.asarray(phi, dtype=float)
    inside = (phi > 0.0) & (phi < 1.0)
    return np.where(inside, p * np.where(inside, phi, 0.0) ** (p - 1), 0.0)


def _blend(f, pure_electrode, pure_electrolyte):
    # convex form keeps the endpoint values exact in floating point
    return (1.0 - f) * pure_electrode + f * pure_electrolyte


def diffusion(phi, params: PhysicalParams):
    return _blend(_fraction(phi, params.p), params.dm, params.d0)


def dielectric(phi, params: PhysicalParams):
    return _blend(_fraction(phi, params.p), params.epsm, params.eps0)


def diffusion_derivative(phi, params: PhysicalParams):
    return _fraction_derivative(phi, params.p) * (params.d0 - params.dm)


def dielectric_derivative(phi, params: PhysicalParams):
    return _fraction_derivative(phi, params.p) * (params.eps0 - params.epsm)


def double_well(phi):
    phi = np.asarray(phi, dtype=float)
    return 0.25 * phi ** 2 * (phi - 1.0) ** 2


def double_well_derivative(phi):
    phi = np.asarray(phi, dtype=float)
    return 0.5 * phi * (phi - 1.0) * (2.0 * phi - 1.0)
