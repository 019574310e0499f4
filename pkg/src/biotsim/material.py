"""Constitutive algebra for a fluid-saturated poroelastic medium.

Holds the six-parameter description of the porous solid (porosity,
tortuosity, solid/frame bulk moduli, shear modulus, solid density), the
ambient-fluid properties, and the derived quantities that enter the wave
equations: the generalized elastic constants P, Q, R and the mass coupling
coefficients rho11, rho12, rho22.  All quantities are SI.

Everything here is an immutable value object and every function is pure,
so material data can be shared freely across concurrent solver instances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

PARAM_NAMES = ("phi", "alpha", "Ks", "Kb", "N", "rho_s")


class AdmissibilityError(ValueError):
    """Nonphysical parameter combination.

    Raised at construction of material objects or inside the constitutive
    algebra.  Recoverable by design: samplers and optimizers treat it as
    zero prior density rather than a crash.
    """


@dataclass(frozen=True)
class FluidProps:
    """Acoustic fluid surrounding (and saturating) the porous medium.

    rho_f : mass density [kg/m^3]
    K_f   : bulk modulus [Pa]

    The sound speed is derived, never set independently.
    """

    rho_f: float
    K_f: float

    def __post_init__(self):
        if not (self.rho_f > 0):
            raise AdmissibilityError(f"rho_f must be > 0, got {self.rho_f}")
        if not (self.K_f > 0):
            raise AdmissibilityError(f"K_f must be > 0, got {self.K_f}")

    @property
    def c(self) -> float:
        """Acoustic speed sqrt(K_f / rho_f) [m/s]."""
        return math.sqrt(self.K_f / self.rho_f)


@dataclass(frozen=True)
class BiotParams:
    """The six unknowns of the inverse problem.

    phi   : porosity, in (0, 1)
    alpha : tortuosity, >= 1
    Ks    : solid (grain) bulk modulus [Pa]
    Kb    : skeletal-frame bulk modulus [Pa]
    N     : solid shear modulus [Pa]
    rho_s : solid density [kg/m^3]

    Bound violations raise AdmissibilityError.  Note that satisfying the
    bounds does not guarantee admissibility of the derived constants;
    see :func:`elastic_constants`.
    """

    phi: float
    alpha: float
    Ks: float
    Kb: float
    N: float
    rho_s: float

    def __post_init__(self):
        if not (0.0 < self.phi < 1.0):
            raise AdmissibilityError(f"phi must be in (0, 1), got {self.phi}")
        if not (self.alpha >= 1.0):
            raise AdmissibilityError(f"alpha must be >= 1, got {self.alpha}")
        for name in ("Ks", "Kb", "N", "rho_s"):
            v = getattr(self, name)
            if not (v > 0):
                raise AdmissibilityError(f"{name} must be > 0, got {v}")

    def to_array(self) -> np.ndarray:
        return np.array([self.phi, self.alpha, self.Ks, self.Kb, self.N, self.rho_s])

    @classmethod
    def from_array(cls, u) -> "BiotParams":
        u = np.asarray(u, dtype=float)
        if u.shape != (6,):
            raise ValueError(f"expected 6 parameters, got shape {u.shape}")
        return cls(*u)


def check_hard_bounds(u) -> bool:
    """True if a raw 6-vector satisfies the physical bounds of BiotParams.

    Cheap support test used by priors so that out-of-bounds proposals can
    be rejected without constructing objects or touching the solver.
    """
    u = np.asarray(u, dtype=float)
    return bool(
        np.all(np.isfinite(u))
        and 0.0 < u[0] < 1.0
        and u[1] >= 1.0
        and np.all(u[2:] > 0.0)
    )


@dataclass(frozen=True)
class ElasticConstants:
    """Derived coefficients of the coupled solid/fluid wave system.

    P, Q, R [Pa] couple solid dilatation and fluid dilatation in the
    stress law; Delta is the (dimensionless) shared denominator; rho11,
    rho12, rho22 [kg/m^3] form the symmetric mass matrix; b [kg/(m^3 s)]
    is the constant viscous damping coefficient.
    """

    P: float
    Q: float
    R: float
    Delta: float
    rho11: float
    rho12: float
    rho22: float
    b: float

    def __post_init__(self):
        if not (self.Delta > 0):
            raise AdmissibilityError(f"Delta must be > 0, got {self.Delta}")
        if not (self.R > 0):
            raise AdmissibilityError(f"R must be > 0, got {self.R}")
        if not (self.P > 0):
            raise AdmissibilityError(f"P must be > 0, got {self.P}")
        if not (self.b >= 0):
            raise AdmissibilityError(f"b must be >= 0, got {self.b}")
        # density matrix [[rho11, rho12], [rho12, rho22]] must be SPD
        det = self.rho11 * self.rho22 - self.rho12 * self.rho12
        if not (self.rho11 > 0 and det > 0):
            raise AdmissibilityError(
                f"density matrix not positive definite "
                f"(rho11={self.rho11}, rho12={self.rho12}, rho22={self.rho22})"
            )

    @property
    def density_det(self) -> float:
        return self.rho11 * self.rho22 - self.rho12 * self.rho12


def elastic_constants(bp: BiotParams, fl: FluidProps, b: float = 0.0) -> ElasticConstants:
    """Generalized elastic constants and mass coupling coefficients.

    Raises AdmissibilityError when Delta <= 0 or the density matrix is not
    positive definite, which signals a nonphysical parameter combination.
    """
    phi = bp.phi
    kb_ks = bp.Kb / bp.Ks
    delta = 1.0 - phi - kb_ks + phi * bp.Ks / fl.K_f
    if not (delta > 0):
        raise AdmissibilityError(f"Delta must be > 0, got {delta}")
    p = ((1.0 - phi) * (1.0 - phi - kb_ks) * bp.Ks + phi * (bp.Ks / fl.K_f) * bp.Kb) / delta \
        + 4.0 * bp.N / 3.0
    q = (1.0 - phi - kb_ks) * phi * bp.Ks / delta
    r = phi * phi * bp.Ks / delta
    rho12 = -(bp.alpha - 1.0) * phi * fl.rho_f
    rho11 = (1.0 - phi) * bp.rho_s - rho12
    rho22 = phi * fl.rho_f - rho12
    return ElasticConstants(P=p, Q=q, R=r, Delta=delta,
                            rho11=rho11, rho12=rho12, rho22=rho22, b=b)


def max_wave_speed(ec: ElasticConstants) -> float:
    """Fast compressional wave speed of the lossless system [m/s].

    Largest V with det([[P,Q],[Q,R]] - V^2 [[rho11,rho12],[rho12,rho22]]) = 0,
    i.e. the largest generalized eigenvalue of the 2x2 stiffness/mass pencil.
    Used to bound the CFL time step of the explicit solver.
    """
    a = ec.density_det
    if not (ec.rho11 > 0 and a > 0):
        raise AdmissibilityError("density matrix not positive definite")
    det_k = ec.P * ec.R - ec.Q * ec.Q
    if not (ec.P > 0 and det_k > 0):
        raise AdmissibilityError(
            f"elastic matrix not positive definite (P={ec.P}, Q={ec.Q}, R={ec.R})"
        )
    bcoef = ec.P * ec.rho22 + ec.R * ec.rho11 - 2.0 * ec.Q * ec.rho12
    # both roots of a*x^2 - bcoef*x + det_k are real and positive for SPD pairs;
    # guard the discriminant against roundoff
    disc = max(bcoef * bcoef - 4.0 * a * det_k, 0.0)
    lam = (bcoef + math.sqrt(disc)) / (2.0 * a)
    return math.sqrt(lam)
