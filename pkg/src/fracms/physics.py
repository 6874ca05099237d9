"""Storage and transport coefficients for the shale matrix and the fractures.

All coefficient functions accept scalars or arrays of concentration ``c``
(mol/m^3) and broadcast.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Union

import numpy as np

log = logging.getLogger(__name__)

KEROGEN, INORGANIC = 0, 1
GAS_CONSTANT = 8.314


class PhysicsDomainError(ValueError):
    pass


@dataclass
class Diagnostics:
    clamped_permeability: int = 0

    def reset(self):
        self.clamped_permeability = 0


diagnostics = Diagnostics()


@dataclass(frozen=True)
class LangmuirParams:
    s: float = 0.26e-3
    c_mus: float = 0.25e-5

    def __post_init__(self):
        if self.s <= 0 or self.c_mus < 0:
            raise ValueError("Langmuir parameters need s > 0 and c_mus >= 0")


@dataclass(frozen=True)
class FixedPermeability:
    kappa0: float = 1e-18

    def __post_init__(self):
        if self.kappa0 <= 0:
            raise ValueError("kappa0 must be positive")


@dataclass(frozen=True)
class StressDependentPermeability:
    kappa0: float = 1e-18
    p_c: float = 1e9
    p_1: float = 1.8e9
    alpha: float = 0.5
    exponent: float = 0.5

    def __post_init__(self):
        if self.kappa0 <= 0 or self.p_1 <= 0 or self.exponent <= 0 or not 0 <= self.alpha <= 1:
            raise ValueError("invalid stress-dependent permeability parameters")


PermModel = Union[FixedPermeability, StressDependentPermeability]


@dataclass(frozen=True)
class ConstantCoefficients:
    a_m: float = 0.8
    b_m: float = 1.3e-7
    a_f: float = 0.001
    b_f: float = 1.0

    is_constant = True

    def __post_init__(self):
        if min(self.a_m, self.b_m, self.a_f, self.b_f) <= 0:
            raise ValueError("constant coefficients must be positive")


@dataclass(frozen=True)
class NonlinearCoefficients:
    """Sorption and pressure dependent coefficients.

    ``D_k``/``D_i`` are the kerogen and inorganic diffusivities, selected per
    triangle by the mesh material tag (0 kerogen, 1 inorganic).
    """

    phi: float = 0.04
    phi_f: float = 0.001
    D_k: float = 1e-7
    D_i: float = 1e-8
    D_s: float = 1e-7
    kappa_f: float = 1e-12
    mu: float = 2e-5
    T: float = 413.0
    R: float = GAS_CONSTANT
    gamma: float = 1.0
    sorption: LangmuirParams = field(default_factory=LangmuirParams)
    permeability: PermModel = field(default_factory=FixedPermeability)

    is_constant = False

    def __post_init__(self):
        if not (0 < self.phi < 1 and 0 < self.phi_f < 1):
            raise ValueError("porosities must lie in (0, 1)")
        if min(self.D_k, self.D_i, self.D_s, self.kappa_f, self.mu, self.T, self.R, self.gamma) <= 0:
            raise ValueError("physical parameters must be positive")


CoefficientModel = Union[ConstantCoefficients, NonlinearCoefficients]


def _check_conc(c):
    c = np.asarray(c, dtype=float)
    if np.any(c < 0):
        raise PhysicsDomainError("concentration must be non-negative")
    return c


def sorption_slope(params: LangmuirParams, c):
    """Slope dF/dc of the adsorbed amount, ``c_mus * s / (1 + s c)^2``."""
    c = _check_conc(c)
    return params.c_mus * params.s / (1.0 + params.s * c) ** 2


def permeability(model: PermModel, c, R: float = GAS_CONSTANT, T: float = 413.0):
    c = _check_conc(c)
    if isinstance(model, FixedPermeability):
        return np.full_like(c, model.kappa0)
    base = (model.p_c - model.alpha * R * T * c) / model.p_1
    neg = base < 0
    if np.any(neg):
        n = int(np.count_nonzero(neg))
        diagnostics.clamped_permeability += n
        log.warning("stress-dependent permeability: %d negative bases clamped to 0", n)
        base = np.where(neg, 0.0, base)
    return model.kappa0 * (1.0 - base ** model.exponent) ** 3


def eval_matrix_coeffs(model: CoefficientModel, c, material=None):
    """Return ``(a_m, b_m)`` at concentration ``c``.

    ``material`` broadcasts against ``c`` and selects the free-gas diffusivity.
    """
    c = _check_conc(c)
    if model.is_constant:
        return np.full_like(c, model.a_m), np.full_like(c, model.b_m)
    slope = sorption_slope(model.sorption, c)
    kappa = permeability(model.permeability, c, model.R, model.T)
    if material is None:
        D = model.D_k
    else:
        D = np.where(np.asarray(material) == INORGANIC, model.D_i, model.D_k)
    phi, g = model.phi, model.gamma
    a_m = phi + (1.0 - phi) * g * slope
    b_m = phi * D + (1.0 - phi) * g * model.D_s * slope + phi * kappa / model.mu * model.R * model.T * c
    return a_m, b_m


def eval_fracture_coeffs(model: CoefficientModel, c):
    c = _check_conc(c)
    if model.is_constant:
        return np.full_like(c, model.a_f), np.full_like(c, model.b_f)
    return np.full_like(c, model.phi_f), model.kappa_f / model.mu * model.R * model.T * c


def pressure(c, R: float = GAS_CONSTANT, T: float = 413.0):
    return R * T * np.asarray(c, dtype=float)
