"""
Parameter extraction from scans.

Charge-to-mass from the axial secular frequency as a function of drive
amplitude, and radius/mass from the gas damping rate as a function of
pressure. The synthetic scan helpers run the full
simulate -> transduce -> PSD -> fit chain for each scan point.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import curve_fit

from ..core.constants import EPSTEIN_PREFACTOR, Q_STABILITY_LIMIT
from ..core.exceptions import (
    DegenerateFitError,
    FitError,
    UnphysicalScanError,
    ValidationError,
)
from ..core.models import DetectionConfig, Environment, ParticleSpec, TrapConfig, axis_index, sphere_mass
from ..physics.dynamics import epstein_damping, mean_molecular_speed, simulate
from ..physics.trap import beta_exact, mathieu_parameters, q_axial, secular_frequencies
from .signal import (
    fit_lorentzian,
    noise_floor_for_snr,
    resolving_segment_length,
    thermal_peak_height,
    transduce,
    welch_psd,
)

logger = logging.getLogger(__name__)

QM_MODELS = ("approx", "exact")


@dataclass(frozen=True)
class QmFit:
    """Charge-to-mass ratio fitted to a drive-amplitude scan."""
    charge_to_mass: float  # C/kg
    standard_error: float  # C/kg
    scan_points: Tuple[Tuple[float, float], ...]  # (V0 in V, omega_z in rad/s)
    model: str
    q_max: float

    def __post_init__(self):
        if not self.charge_to_mass > 0:
            raise UnphysicalScanError(f"fitted charge_to_mass={self.charge_to_mass:g} C/kg must be positive")
        if len(self.scan_points) < 3:
            raise DegenerateFitError("a charge-to-mass fit needs at least three scan points")


@dataclass(frozen=True)
class RadiusFit:
    """Radius and mass inverted from a damping-versus-pressure scan."""
    slope: float  # 1/(s Pa)
    slope_error: float
    radius: float  # m
    radius_error: float
    mass: float  # kg
    assumed_density: float  # kg/m^3
    scan_points: Tuple[Tuple[float, float], ...]  # (P in Pa, gamma in 1/s)
    intercept: float = 0.0  # 1/s, zero unless fitted
    free_intercept: bool = False
    reliable: bool = True


def _scan_arrays(points, label: str) -> Tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValidationError(label, points, "a list of (x, y) pairs")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(label, points, "finite values")
    return arr[:, 0], arr[:, 1]


def _approx_slope_to_qm(c: float, trap: TrapConfig) -> float:
    """Invert omega_z = c V0 for the lowest-order secular model."""
    d, omega, eta = trap.characteristic_distance, trap.drive_frequency, trap.geometric_efficiency
    return c * d**2 * omega / (math.sqrt(2.0) * eta)


def fit_charge_to_mass(
    points: Sequence[Tuple[float, float]], trap: TrapConfig, model: str = "approx"
) -> QmFit:
    """
    Least-squares Q/m from (V0, omega_z) pairs at a_z = 0.

    ``approx`` fits omega_z = c V0 through the origin (beta = q / sqrt 2);
    ``exact`` fits omega_z = beta_exact(0, q_z(V0)) Omega / 2.

    Raises:
        DegenerateFitError: fewer than three points or a single distinct V0
        UnphysicalScanError: fitted q_z above 0.908 at the largest V0, or Q/m <= 0
    """
    if model not in QM_MODELS:
        raise ValidationError("model", model, "approx or exact")
    v0, omega_z = _scan_arrays(points, "points")
    if v0.size < 3:
        raise DegenerateFitError(f"{v0.size} scan point(s), at least three required")
    if np.unique(v0).size < 2:
        raise DegenerateFitError("all scan points share one drive amplitude")
    if trap.dc_voltage != 0:
        raise ValidationError("trap.dc_voltage", trap.dc_voltage, "a_z = 0 for charge-to-mass scans")
    if np.any(omega_z <= 0) or np.any(v0 <= 0):
        raise ValidationError("points", points, "V0 > 0 and omega_z > 0")

    c = float(np.sum(v0 * omega_z) / np.sum(v0**2))
    dof = v0.size - 1
    c_err = math.sqrt(float(np.sum((omega_z - c * v0) ** 2)) / dof / float(np.sum(v0**2)))
    qm = _approx_slope_to_qm(c, trap)
    qm_err = _approx_slope_to_qm(c_err, trap)

    if model == "exact":
        if qm <= 0:
            raise UnphysicalScanError(f"negative charge-to-mass {qm:g} C/kg")
        v_max = float(np.max(v0))
        per_unit_q = q_axial(1.0, trap, v_max)
        qm_limit = Q_STABILITY_LIMIT / per_unit_q
        half_omega = trap.drive_frequency / 2.0

        def model_fn(v, qm_value):
            return np.array([beta_exact(0.0, q_axial(qm_value, trap, vi)) * half_omega for vi in v])

        start = min(qm, 0.95 * qm_limit)
        try:
            popt, pcov = curve_fit(model_fn, v0, omega_z, p0=[start], bounds=([0.0], [qm_limit]))
        except (RuntimeError, ValueError) as exc:
            raise FitError(str(exc)) from exc
        qm = float(popt[0])
        qm_err = float(math.sqrt(max(pcov[0, 0], 0.0))) if np.isfinite(pcov[0, 0]) else float("nan")

    if qm <= 0:
        raise UnphysicalScanError(f"negative charge-to-mass {qm:g} C/kg")
    q_max = q_axial(qm, trap, float(np.max(v0)))
    if q_max > Q_STABILITY_LIMIT * (1.0 - 1e-9):
        raise UnphysicalScanError(
            f"fitted q_z={q_max:.4f} at V0={np.max(v0):g} V lies outside the stability region"
        )

    logger.info(f"Q/m = {qm:.5g} +/- {qm_err:.2g} C/kg ({model}, q_max={q_max:.3f}, {v0.size} points)")
    return QmFit(
        charge_to_mass=qm,
        standard_error=qm_err,
        scan_points=tuple(zip(v0.tolist(), omega_z.tolist())),
        model=model,
        q_max=q_max,
    )


def radius_from_slope(slope: float, density: float, env: Environment) -> float:
    """Closed-form inversion R = 3 c_E / (4 pi rho v slope)."""
    return 3.0 * EPSTEIN_PREFACTOR / (4.0 * math.pi * density * mean_molecular_speed(env) * slope)


def fit_radius(
    points: Sequence[Tuple[float, float]],
    density: float,
    env: Environment,
    free_intercept: bool = False,
) -> RadiusFit:
    """
    Linear fit of gamma(P) and inversion of the slope for the radius.

    The intercept is fixed at zero unless ``free_intercept`` is set. Two
    points are accepted but the result is marked unreliable.

    Raises:
        DegenerateFitError: fewer than two points or a single distinct pressure
        FitError: non-positive slope
    """
    if not density > 0:
        raise ValidationError("density", density, "density > 0")
    pressure, gamma = _scan_arrays(points, "points")
    if np.any(pressure < 0) or np.any(gamma < 0):
        raise ValidationError("points", points, "pressures in Pa and damping rates in 1/s, both >= 0")
    if pressure.size < 2 or np.unique(pressure).size < 2:
        raise DegenerateFitError("a damping scan needs at least two distinct pressures")

    intercept = 0.0
    if free_intercept:
        dof = pressure.size - 2
        if dof >= 1:
            coeffs, cov = np.polyfit(pressure, gamma, 1, cov=True)
            slope_err = float(math.sqrt(cov[0, 0]))
        else:
            coeffs = np.polyfit(pressure, gamma, 1)
            slope_err = float("nan")
        slope, intercept = float(coeffs[0]), float(coeffs[1])
    else:
        slope = float(np.sum(pressure * gamma) / np.sum(pressure**2))
        dof = pressure.size - 1
        rss = float(np.sum((gamma - slope * pressure) ** 2))
        slope_err = math.sqrt(rss / dof / float(np.sum(pressure**2))) if dof > 0 else float("nan")

    if not slope > 0:
        raise FitError(f"non-positive damping slope {slope:g} 1/(s Pa)")

    reliable = pressure.size >= 3 and dof > 0
    if not reliable:
        logger.warning(f"Radius fit from {pressure.size} points has no residual degrees of freedom; error unreliable")

    radius = radius_from_slope(slope, density, env)
    radius_err = radius * slope_err / slope if np.isfinite(slope_err) else float("nan")
    fit = RadiusFit(
        slope=slope,
        slope_error=slope_err,
        radius=radius,
        radius_error=radius_err,
        mass=sphere_mass(radius, density),
        assumed_density=density,
        scan_points=tuple(zip(pressure.tolist(), gamma.tolist())),
        intercept=intercept,
        free_intercept=free_intercept,
        reliable=reliable,
    )
    logger.info(f"R = {fit.radius * 1e9:.2f} nm, m = {fit.mass:.4g} kg (slope {slope:.5g} 1/(s Pa))")
    return fit


def _detection_for_snr(
    detection: DetectionConfig, particle: ParticleSpec, omega: float, gamma: float,
    temperature: float, axis: int, snr_db: Optional[float],
) -> DetectionConfig:
    if snr_db is None:
        return detection
    peak = thermal_peak_height(detection.conversion_per_axis[axis], temperature, particle.mass, omega, gamma)
    return replace(detection, noise_floor=noise_floor_for_snr(peak, snr_db))


def _measure_mode(
    particle: ParticleSpec,
    trap: TrapConfig,
    env: Environment,
    detection: DetectionConfig,
    axis: str,
    duration: float,
    sample_rate: Optional[float],
    seed: int,
    snr_db: Optional[float],
    segment_length: Optional[int],
    decimation: int,
):
    idx = axis_index(axis)
    omega = secular_frequencies(mathieu_parameters(particle, trap), trap.drive_frequency, "exact")[idx]
    gamma = epstein_damping(particle, env)
    det = _detection_for_snr(detection, particle, omega, gamma, env.gas_temperature, idx, snr_db)
    traj = simulate(particle, trap, env, None, duration, sample_rate, seed, decimation=decimation)
    trace = transduce(traj, det, rng_seed=seed + 1)[axis]
    if segment_length is None:
        segment_length = resolving_segment_length(trace.samples.size, trace.sample_rate, gamma / (2.0 * math.pi))
    psd = welch_psd(trace, segment_length)
    f0 = omega / (2.0 * math.pi)
    half = min(0.4 * f0, max(8.0 * gamma / (2.0 * math.pi), 20.0 * psd.bin_width))
    return fit_lorentzian(psd, (f0 - half, f0 + half), model="thermal")


def synthetic_voltage_scan(
    particle: ParticleSpec,
    trap: TrapConfig,
    env: Environment,
    voltages: Sequence[float],
    detection: Optional[DetectionConfig] = None,
    duration: float = 1.0,
    sample_rate: Optional[float] = None,
    seed: int = 0,
    snr_db: Optional[float] = 30.0,
    segment_length: Optional[int] = None,
    decimation: int = 1,
) -> List[Tuple[float, float]]:
    """Simulated (V0, omega_z) scan measured from the axial PSD peak."""
    detection = detection or DetectionConfig()
    seeds = np.random.SeedSequence(seed).generate_state(len(voltages))
    points = []
    for v0, s in zip(voltages, seeds):
        fit = _measure_mode(
            particle, trap.with_amplitude(float(v0)), env, detection, "z",
            duration, sample_rate, int(s), snr_db, segment_length, decimation,
        )
        points.append((float(v0), 2.0 * math.pi * fit.center_frequency))
        logger.debug(f"V0={v0:g} V -> f_z={fit.center_frequency:.6g} Hz")
    return points


def synthetic_pressure_scan(
    particle: ParticleSpec,
    trap: TrapConfig,
    env: Environment,
    pressures: Sequence[float],
    detection: Optional[DetectionConfig] = None,
    duration: float = 1.0,
    sample_rate: Optional[float] = None,
    seed: int = 0,
    snr_db: Optional[float] = 30.0,
    axis: str = "z",
    segment_length: Optional[int] = None,
    decimation: int = 1,
) -> List[Tuple[float, float]]:
    """Simulated (P, gamma) scan measured from the fitted linewidth of ``axis``."""
    detection = detection or DetectionConfig()
    seeds = np.random.SeedSequence(seed).generate_state(len(pressures))
    points = []
    for p, s in zip(pressures, seeds):
        fit = _measure_mode(
            particle, trap, env.with_pressure(float(p)), detection, axis,
            duration, sample_rate, int(s), snr_db, segment_length, decimation,
        )
        points.append((float(p), fit.damping_rate))
        logger.debug(f"P={p:g} Pa -> gamma={fit.damping_rate:.5g} 1/s")
    return points
