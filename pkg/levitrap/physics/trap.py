"""
Paul-trap mathematics.

Mathieu parameters for an end-cap trap, stability tests and secular
frequencies. The equation of motion per axis, in drive phase tau = Omega t / 2,
is u'' + (a - 2 q cos 2 tau) u = 0.
"""

import logging
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq
from scipy.special import mathieu_a, mathieu_b

from ..core.constants import Q_STABILITY_LIMIT
from ..core.exceptions import DomainError, NonConvergenceError, ValidationError
from ..core.models import ParticleSpec, TrapConfig

logger = logging.getLogger(__name__)

SECULAR_METHODS = ("approx", "series", "exact")
CONTINUED_FRACTION_DEPTH = 40
MONODROMY_TOLERANCE = 1e-9


@dataclass(frozen=True)
class MathieuPoint:
    """Per-axis Mathieu parameters (x, y, z)."""
    a: Tuple[float, float, float]
    q: Tuple[float, float, float]

    @property
    def a_z(self) -> float:
        return self.a[2]

    @property
    def q_z(self) -> float:
        return self.q[2]

    def axes(self):
        """Iterate (a_i, q_i) pairs in x, y, z order."""
        return zip(self.a, self.q)


def _split(axial: float, asymmetry: float) -> Tuple[float, float, float]:
    return (-(1.0 + asymmetry) * axial / 2.0, -(1.0 - asymmetry) * axial / 2.0, axial)


def q_axial(charge_to_mass: float, trap: TrapConfig, drive_amplitude: float | None = None) -> float:
    """q_z = 4 (Q/m) eta V0 / (d^2 Omega^2)."""
    v0 = trap.drive_amplitude if drive_amplitude is None else drive_amplitude
    d, omega = trap.characteristic_distance, trap.drive_frequency
    return 4.0 * charge_to_mass * trap.geometric_efficiency * v0 / (d**2 * omega**2)


def a_axial(charge_to_mass: float, trap: TrapConfig) -> float:
    """a_z = 8 (Q/m) eta_dc U_dc / (d^2 Omega^2)."""
    d, omega = trap.characteristic_distance, trap.drive_frequency
    return 8.0 * charge_to_mass * trap.effective_dc_efficiency * trap.dc_voltage / (d**2 * omega**2)


def mathieu_parameters(particle: ParticleSpec, trap: TrapConfig) -> MathieuPoint:
    """
    Mathieu parameters on all three axes.

    The radial values follow the Laplace constraint, split by the radial
    asymmetry: q_x = -(1+eps) q_z / 2, q_y = -(1-eps) q_z / 2.
    """
    qm = particle.charge_to_mass
    eps = trap.radial_asymmetry
    return MathieuPoint(a=_split(a_axial(qm, trap), eps), q=_split(q_axial(qm, trap), eps))


def stability_edges(q: float) -> Tuple[float, float]:
    """Lower and upper a bounds of the first stability zone at ``q``."""
    q = abs(q)
    return float(mathieu_a(0, q)), float(mathieu_b(1, q))


def floquet_trace(a: float, q: float) -> float:
    """Half trace of the one-period monodromy matrix of the Mathieu equation."""

    def rhs(tau, y):
        k = a - 2.0 * q * math.cos(2.0 * tau)
        return [y[1], -k * y[0], y[3], -k * y[2]]

    sol = solve_ivp(rhs, (0.0, math.pi), [1.0, 0.0, 0.0, 1.0], method="DOP853", rtol=1e-11, atol=1e-13)
    if not sol.success:
        raise NonConvergenceError("monodromy integration", sol.message)
    y = sol.y[:, -1]
    return 0.5 * (y[0] + y[3])


def floquet_exponent(a: float, q: float) -> float:
    """Characteristic exponent beta in [0, 1] from the monodromy matrix."""
    half_trace = floquet_trace(a, q)
    if abs(half_trace) > 1.0 + MONODROMY_TOLERANCE:
        raise NonConvergenceError(
            "floquet_exponent", f"(a={a:g}, q={q:g}) lies outside the stability region"
        )
    return math.acos(max(-1.0, min(1.0, half_trace))) / math.pi


def is_stable(mp: MathieuPoint, method: str = "approx") -> bool:
    """
    Whether every axis lies in the first stability zone.

    ``approx`` applies the |q| <= 0.908 bound (inclusive) with the a-range
    from the Mathieu characteristic values; ``exact`` uses the monodromy trace.
    """
    if method not in ("approx", "exact"):
        raise ValidationError("method", method, "approx or exact")
    for a, q in mp.axes():
        if method == "exact":
            if abs(floquet_trace(a, q)) > 1.0 + MONODROMY_TOLERANCE:
                return False
            continue
        if abs(q) > Q_STABILITY_LIMIT:
            return False
        if a != 0.0:
            lower, upper = stability_edges(q)
            if not lower <= a <= upper:
                return False
    return True


def beta_approx(a: float, q: float) -> float:
    """Lowest-order secular exponent, beta^2 = a + q^2/2."""
    value = a + q**2 / 2.0
    if value < 0:
        raise DomainError("beta_approx", f"a + q^2/2 = {value:g} < 0, no real secular frequency")
    return math.sqrt(value)


def beta_series(a: float, q: float) -> float:
    """Power series in q with a-dependent coefficients, good to O(q^8)."""
    beta_sq = a + (0.5 + a / 2.0) * q**2
    beta_sq += (25.0 / 128.0 + 273.0 * a / 512.0) * q**4
    beta_sq += (317.0 / 2304.0 + 59525.0 * a / 82944.0) * q**6
    if beta_sq < 0:
        raise DomainError("beta_series", f"beta^2 = {beta_sq:g} < 0")
    return math.sqrt(beta_sq)


def _continued_fraction(beta: float, a: float, q2: float, sign: int) -> float:
    tail = 0.0
    for k in range(CONTINUED_FRACTION_DEPTH, 0, -1):
        tail = q2 / ((beta + sign * 2 * k) ** 2 - a - tail)
    return tail


def _characteristic(beta: float, a: float, q2: float) -> float:
    return a + _continued_fraction(beta, a, q2, 1) + _continued_fraction(beta, a, q2, -1) - beta**2


def beta_exact(a: float, q: float) -> float:
    """
    Secular exponent from the continued-fraction characteristic equation.

    Falls back to the monodromy solver when the root is not bracketed in
    [0, 1] (stability edge) or the fraction has a pole near the root.

    Raises:
        NonConvergenceError: if (a, q) is outside the first stability zone
    """
    q2 = q * q
    lo, hi = _characteristic(0.0, a, q2), _characteristic(1.0, a, q2)
    if lo == 0.0:
        return 0.0
    if lo > 0 > hi:
        beta = brentq(_characteristic, 0.0, 1.0, args=(a, q2), xtol=1e-14, rtol=1e-13)
        if abs(_characteristic(beta, a, q2)) < 1e-9:
            return beta
        logger.debug(f"Continued fraction pole near beta={beta:.6f}, using monodromy")
    return floquet_exponent(a, q)


_BETA = {"approx": beta_approx, "series": beta_series, "exact": beta_exact}


def secular_frequencies(mp: MathieuPoint, drive_frequency: float, method: str = "approx") -> np.ndarray:
    """
    Secular angular frequencies omega_i = beta_i Omega / 2.

    Args:
        mp: Mathieu parameters
        drive_frequency: Omega in rad/s
        method: approx, series or exact

    Returns:
        Array (omega_x, omega_y, omega_z) in rad/s
    """
    if method not in _BETA:
        raise ValidationError("method", method, f"one of {', '.join(SECULAR_METHODS)}")
    beta = _BETA[method]
    return np.array([beta(a, q) * drive_frequency / 2.0 for a, q in mp.axes()])


def micromotion_ratio(q: float) -> float:
    """Micromotion amplitude relative to the secular amplitude."""
    return abs(q) / 2.0
