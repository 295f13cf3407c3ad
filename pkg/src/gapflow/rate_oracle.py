"""Predicted blow-up rates, normalized to unit constant.

Every bound proved for the two-particle problem reduces, at the closest
point x' = 0, to a pure power of eps times (possibly) a |log eps| factor:

    dimension 2: |grad u| ~ eps^(-1/2), pressure oscillation ~ eps^(-1/2),
                 |grad^2 u| + |grad p| ~ eps^(-3/2);
    dimension 3: |grad u| ~ 1/(eps |log eps|), pressure ~ 1/(eps |log eps|),
                 |grad^2 u| + |grad p| ~ 1/(eps^2 |log eps|).

The x'-profiles, the coefficient-difference scalings, and the
balance-matrix entry scalings are evaluated here as plain formulas with
C = 1. Comparisons downstream are slope comparisons on log-log axes; the
constants are never used in absolute terms.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

__all__ = ["Quantity", "RatePrediction", "predicted_upper", "predicted_lower",
           "predicted_scaling", "prediction", "UnsupportedRateError"]


class UnsupportedRateError(ValueError):
    """No rate formula for this quantity/dimension/index combination."""


class Quantity(Enum):
    GRAD_U = "grad_u"
    GRAD_U_LOWER = "grad_u_lower"
    PRESSURE_OSC = "pressure_osc"
    GRAD2U_GRADP = "grad2u_gradp"
    CAUCHY_STRESS = "cauchy_stress"
    COEFF_GAP = "coeff_gap"
    MATRIX_ENTRY = "matrix_entry"
    NS_VS_STOKES_GAP = "ns_vs_stokes_gap"


def _hnorm(xp) -> float:
    if xp is None:
        return 0.0
    xp = np.atleast_1d(np.asarray(xp, dtype=float))
    return float(np.sqrt(np.sum(xp**2)))


def _L(eps: float) -> float:
    """|log eps| (natural log)."""
    return abs(np.log(eps))


def _check_eps(eps: float):
    if not 0.0 < eps < 0.5:
        raise UnsupportedRateError(f"eps={eps} outside (0, 1/2)")


def predicted_upper(quantity: Quantity, dimension: int, eps: float, xp=None) -> float:
    """Upper-bound formula with C = 1, evaluated at horizontal offset xp."""
    _check_eps(eps)
    r = _hnorm(xp)
    if dimension == 2:
        if quantity == Quantity.GRAD_U:
            return (np.sqrt(eps) + r) / (eps + r**2)
        if quantity == Quantity.PRESSURE_OSC:
            return 1.0 / np.sqrt(eps)
        if quantity == Quantity.GRAD2U_GRADP:
            return (eps + r**2) ** -1.5
        if quantity == Quantity.CAUCHY_STRESS:
            return 1.0 / np.sqrt(eps)
        if quantity == Quantity.NS_VS_STOKES_GAP:
            return 1.0
    elif dimension == 3:
        L = _L(eps)
        if quantity == Quantity.GRAD_U:
            return (1.0 + L * r) / (L * (eps + r**2))
        if quantity == Quantity.PRESSURE_OSC:
            return 1.0 / (eps * L)
        if quantity == Quantity.GRAD2U_GRADP:
            return (1.0 + L * r) / (L * (eps + r**2) ** 2)
        if quantity == Quantity.CAUCHY_STRESS:
            return 1.0 / (eps * L)
        if quantity == Quantity.NS_VS_STOKES_GAP:
            return 1.0
    raise UnsupportedRateError(f"no upper bound for {quantity} in dimension {dimension}")


def predicted_lower(dimension: int, eps: float) -> float:
    """Lower bound for |grad u| on the closest-approach axis, C = 1."""
    _check_eps(eps)
    if dimension == 2:
        return eps**-0.5
    if dimension == 3:
        return 1.0 / (eps * _L(eps))
    raise UnsupportedRateError(f"dimension {dimension}")


# coefficient-difference scalings |C_1^a - C_2^a|
_COEFF_2D = {1: lambda e: np.sqrt(e), 2: lambda e: e**1.5, 3: lambda e: np.sqrt(e)}
_COEFF_3D = {1: lambda e: 1 / _L(e), 2: lambda e: 1 / _L(e), 3: lambda e: e,
             4: lambda e: 1.0, 5: lambda e: 1 / _L(e), 6: lambda e: 1 / _L(e)}
# balance-matrix diagonal scalings a_11^{aa}
_DIAG_2D = {1: lambda e: e**-0.5, 2: lambda e: e**-1.5, 3: lambda e: e**-0.5}
_DIAG_3D = {1: _L, 2: _L, 3: lambda e: 1 / e, 4: lambda e: 1.0, 5: _L, 6: _L}

# pure eps-exponent of each law at x'=0 (log factors excluded; their drift
# vanishes as eps -> 0, so slope fits must use small eps when a log is present)
_EXPONENT = {
    (Quantity.GRAD_U, 2): -0.5, (Quantity.GRAD_U, 3): -1.0,
    (Quantity.GRAD_U_LOWER, 2): -0.5, (Quantity.GRAD_U_LOWER, 3): -1.0,
    (Quantity.PRESSURE_OSC, 2): -0.5, (Quantity.PRESSURE_OSC, 3): -1.0,
    (Quantity.GRAD2U_GRADP, 2): -1.5, (Quantity.GRAD2U_GRADP, 3): -2.0,
    (Quantity.CAUCHY_STRESS, 2): -0.5, (Quantity.CAUCHY_STRESS, 3): -1.0,
    (Quantity.NS_VS_STOKES_GAP, 2): 0.0, (Quantity.NS_VS_STOKES_GAP, 3): 0.0,
}
_COEFF_EXP_2D = {1: 0.5, 2: 1.5, 3: 0.5}
_COEFF_EXP_3D = {1: 0.0, 2: 0.0, 3: 1.0, 4: 0.0, 5: 0.0, 6: 0.0}
_DIAG_EXP_2D = {1: -0.5, 2: -1.5, 3: -0.5}
_DIAG_EXP_3D = {1: 0.0, 2: 0.0, 3: -1.0, 4: 0.0, 5: 0.0, 6: 0.0}


def predicted_scaling(kind: Quantity, dimension: int, indices, eps: float) -> float:
    """Coefficient-gap or matrix-entry scaling with C = 1.

    indices: alpha for COEFF_GAP, (alpha, beta) for MATRIX_ENTRY (diagonal
    entries only; off-diagonal scalings are not separately predicted).
    """
    _check_eps(eps)
    if kind == Quantity.COEFF_GAP:
        alpha = int(indices if np.isscalar(indices) else indices[0])
        table = _COEFF_2D if dimension == 2 else _COEFF_3D
        if alpha not in table:
            raise UnsupportedRateError(f"coefficient index {alpha} in dimension {dimension}")
        return float(table[alpha](eps))
    if kind == Quantity.MATRIX_ENTRY:
        if np.isscalar(indices):
            a = b = int(indices)
        else:
            a, b = (int(i) for i in indices)
        if a != b:
            raise UnsupportedRateError("only diagonal entry scalings are predicted")
        table = _DIAG_2D if dimension == 2 else _DIAG_3D
        if a not in table:
            raise UnsupportedRateError(f"entry index {a} in dimension {dimension}")
        return float(table[a](eps))
    raise UnsupportedRateError(f"{kind} is not a scaling kind")


@dataclass(frozen=True)
class RatePrediction:
    """A named rate law: formula(eps, xp) plus its pure eps-exponent at x'=0."""

    quantity: Quantity
    dimension: int
    formula: Callable[[float, object], float]
    epsilon_exponent: float
    indices: tuple = ()

    def __call__(self, eps: float, xp=None) -> float:
        return self.formula(eps, xp)


def prediction(quantity: Quantity, dimension: int, indices=()) -> RatePrediction:
    """Bundle a rate law with its exponent, for fitting and tabulation."""
    if quantity == Quantity.COEFF_GAP:
        alpha = int(indices if np.isscalar(indices) else indices[0])
        exp = (_COEFF_EXP_2D if dimension == 2 else _COEFF_EXP_3D)[alpha]
        return RatePrediction(quantity, dimension,
                              lambda e, xp=None: predicted_scaling(quantity, dimension, alpha, e),
                              exp, (alpha,))
    if quantity == Quantity.MATRIX_ENTRY:
        if np.isscalar(indices):
            a = b = int(indices)
        else:
            a, b = (int(i) for i in indices)
        exp = (_DIAG_EXP_2D if dimension == 2 else _DIAG_EXP_3D)[a]
        return RatePrediction(quantity, dimension,
                              lambda e, xp=None: predicted_scaling(quantity, dimension, (a, b), e),
                              exp, (a, b))
    if quantity == Quantity.GRAD_U_LOWER:
        return RatePrediction(quantity, dimension,
                              lambda e, xp=None: predicted_lower(dimension, e),
                              _EXPONENT[(quantity, dimension)])
    key = (quantity, dimension)
    if key not in _EXPONENT:
        raise UnsupportedRateError(f"{quantity} in dimension {dimension}")
    return RatePrediction(quantity, dimension,
                          lambda e, xp=None: predicted_upper(quantity, dimension, e, xp),
                          _EXPONENT[key])
