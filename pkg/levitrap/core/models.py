"""Domain types shared by the physics and analysis packages."""

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from .constants import (
    AXES,
    CARBON_ATOM_MASS,
    DEFAULT_CHARACTERISTIC_DISTANCE,
    DEFAULT_ELECTRODE_FIELD_FACTOR,
    DEFAULT_GEOMETRIC_EFFICIENCY,
    N2_MOLECULE_MASS,
    NANODIAMOND_DENSITY,
    ROOM_TEMPERATURE,
)
from .exceptions import ValidationError

Vector3 = Tuple[float, float, float]

MASS_CONSISTENCY_TOLERANCE = 1e-9
IDENTITY_3 = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))


def axis_index(axis: str) -> int:
    """Map an axis label (x, y, z) to its array index."""
    try:
        return AXES.index(axis)
    except ValueError:
        raise ValidationError("axis", axis, "must be one of x, y, z") from None


def sphere_mass(radius: float, density: float) -> float:
    return density * (4.0 / 3.0) * math.pi * radius**3


def _check_vector(name: str, values, allow_negative: bool = True) -> None:
    if len(values) != 3:
        raise ValidationError(name, values, "needs exactly three components")
    for v in values:
        if not math.isfinite(v):
            raise ValidationError(name, values, "components must be finite")
        if not allow_negative and v < 0:
            raise ValidationError(name, values, "components must be >= 0")


@dataclass(frozen=True)
class ParticleSpec:
    """
    A levitated nanosphere.

    Build instances with ``from_radius``, ``from_mass`` or ``from_atom_count``
    so mass, radius and density stay consistent.
    """
    mass: float  # kg
    radius: float  # m
    density: float  # kg/m^3
    charge: float = 0.0  # C, signed
    absorption_coefficient: float = 0.0  # 1/m

    def __post_init__(self):
        if not self.radius > 0:
            raise ValidationError("particle.radius", self.radius, "radius > 0")
        if not self.density > 0:
            raise ValidationError("particle.density", self.density, "density > 0")
        if not self.mass > 0:
            raise ValidationError("particle.mass", self.mass, "mass > 0")
        if not math.isfinite(self.charge):
            raise ValidationError("particle.charge", self.charge, "charge must be finite")
        if self.absorption_coefficient < 0:
            raise ValidationError(
                "particle.absorption_coefficient", self.absorption_coefficient, "alpha >= 0"
            )
        expected = sphere_mass(self.radius, self.density)
        if abs(self.mass - expected) / self.mass > MASS_CONSISTENCY_TOLERANCE:
            raise ValidationError(
                "particle.mass",
                self.mass,
                f"mass = density*(4/3)*pi*radius^3 = {expected:.6g} kg",
            )

    @classmethod
    def from_radius(
        cls,
        radius: float,
        density: float = NANODIAMOND_DENSITY,
        charge: Optional[float] = None,
        charge_to_mass: Optional[float] = None,
        absorption_coefficient: float = 0.0,
    ) -> "ParticleSpec":
        """Create a particle from its radius; charge may be given directly or as Q/m."""
        if not radius > 0:
            raise ValidationError("particle.radius", radius, "radius > 0")
        if not density > 0:
            raise ValidationError("particle.density", density, "density > 0")
        mass = sphere_mass(radius, density)
        return cls(
            mass=mass,
            radius=radius,
            density=density,
            charge=_resolve_charge(mass, charge, charge_to_mass),
            absorption_coefficient=absorption_coefficient,
        )

    @classmethod
    def from_mass(
        cls,
        mass: float,
        density: float = NANODIAMOND_DENSITY,
        charge: Optional[float] = None,
        charge_to_mass: Optional[float] = None,
        absorption_coefficient: float = 0.0,
    ) -> "ParticleSpec":
        """Create a particle from its mass, deriving the radius from the density."""
        if not mass > 0:
            raise ValidationError("particle.mass", mass, "mass > 0")
        if not density > 0:
            raise ValidationError("particle.density", density, "density > 0")
        radius = (3.0 * mass / (4.0 * math.pi * density)) ** (1.0 / 3.0)
        return cls.from_radius(radius, density, charge, charge_to_mass, absorption_coefficient)

    @classmethod
    def from_atom_count(
        cls,
        atom_count: float,
        density: float = NANODIAMOND_DENSITY,
        charge: Optional[float] = None,
        charge_to_mass: Optional[float] = None,
        absorption_coefficient: float = 0.0,
    ) -> "ParticleSpec":
        """Create a carbon particle holding ``atom_count`` atoms."""
        if not atom_count > 0:
            raise ValidationError("particle.atom_count", atom_count, "atom_count > 0")
        return cls.from_mass(
            atom_count * CARBON_ATOM_MASS, density, charge, charge_to_mass, absorption_coefficient
        )

    @property
    def charge_to_mass(self) -> float:
        return self.charge / self.mass

    @property
    def volume(self) -> float:
        return (4.0 / 3.0) * math.pi * self.radius**3

    @property
    def atom_count(self) -> float:
        return self.mass / CARBON_ATOM_MASS

    def require_charge(self) -> None:
        """Trapping needs a charged particle."""
        if self.charge == 0:
            raise ValidationError("particle.charge", self.charge, "|charge| > 0 for trapping")


def _resolve_charge(mass: float, charge: Optional[float], charge_to_mass: Optional[float]) -> float:
    if charge is not None and charge_to_mass is not None:
        raise ValidationError(
            "particle.charge", charge, "give either charge or charge_to_mass, not both"
        )
    if charge_to_mass is not None:
        return charge_to_mass * mass
    return 0.0 if charge is None else charge


@dataclass(frozen=True)
class TrapConfig:
    """End-cap Paul trap drive and geometry."""
    drive_amplitude: float  # V zero-to-peak
    drive_frequency: float  # rad/s
    geometric_efficiency: float = DEFAULT_GEOMETRIC_EFFICIENCY
    characteristic_distance: float = DEFAULT_CHARACTERISTIC_DISTANCE  # m
    dc_voltage: float = 0.0  # V on the end caps, source of a_i
    dc_efficiency: Optional[float] = None  # defaults to geometric_efficiency
    dc_offset_per_axis: Vector3 = (0.0, 0.0, 0.0)  # V on the compensation electrodes
    radial_asymmetry: float = 0.0
    electrode_coupling_per_axis: Optional[Vector3] = None  # N/V, derived from charge if None

    def __post_init__(self):
        if not self.drive_frequency > 0:
            raise ValidationError("trap.drive_frequency", self.drive_frequency, "drive_frequency > 0")
        if not self.characteristic_distance > 0:
            raise ValidationError(
                "trap.characteristic_distance", self.characteristic_distance, "characteristic_distance > 0"
            )
        if not 0 < self.geometric_efficiency <= 1:
            raise ValidationError(
                "trap.geometric_efficiency", self.geometric_efficiency, "0 < geometric_efficiency <= 1"
            )
        if self.dc_efficiency is not None and not 0 < self.dc_efficiency <= 1:
            raise ValidationError("trap.dc_efficiency", self.dc_efficiency, "0 < dc_efficiency <= 1")
        if not 0 <= self.radial_asymmetry <= 0.2:
            raise ValidationError("trap.radial_asymmetry", self.radial_asymmetry, "0 <= radial_asymmetry <= 0.2")
        if not (math.isfinite(self.drive_amplitude) and self.drive_amplitude >= 0):
            raise ValidationError("trap.drive_amplitude", self.drive_amplitude, "finite and >= 0")
        _check_vector("trap.dc_offset_per_axis", self.dc_offset_per_axis)
        if self.electrode_coupling_per_axis is not None:
            _check_vector("trap.electrode_coupling_per_axis", self.electrode_coupling_per_axis)

    @property
    def drive_frequency_hz(self) -> float:
        return self.drive_frequency / (2.0 * math.pi)

    @property
    def effective_dc_efficiency(self) -> float:
        return self.geometric_efficiency if self.dc_efficiency is None else self.dc_efficiency

    @property
    def geometry_is_default(self) -> bool:
        return (
            self.geometric_efficiency == DEFAULT_GEOMETRIC_EFFICIENCY
            and self.characteristic_distance == DEFAULT_CHARACTERISTIC_DISTANCE
        )

    def coupling(self, particle: ParticleSpec) -> np.ndarray:
        """Electrode force per applied volt on each axis (N/V)."""
        if self.electrode_coupling_per_axis is not None:
            return np.asarray(self.electrode_coupling_per_axis, dtype=float)
        per_volt = particle.charge * DEFAULT_ELECTRODE_FIELD_FACTOR / self.characteristic_distance
        return np.full(3, per_volt)

    def offset_force(self, particle: ParticleSpec) -> np.ndarray:
        """Static force from the compensation-electrode offsets (N)."""
        return self.coupling(particle) * np.asarray(self.dc_offset_per_axis, dtype=float)

    def with_amplitude(self, drive_amplitude: float) -> "TrapConfig":
        return replace(self, drive_amplitude=drive_amplitude)


@dataclass(frozen=True)
class StrayDrift:
    """Slowly decaying stray field, plus an optional drift of the effective drive."""
    decay_time: float  # s
    initial_field: Vector3 = (0.0, 0.0, 0.0)  # V/m
    drive_drift: float = 0.0  # relative V0 excess at t=0

    def __post_init__(self):
        if not self.decay_time > 0:
            raise ValidationError("drift.decay_time", self.decay_time, "decay_time > 0")
        _check_vector("drift.initial_field", self.initial_field)
        if not math.isfinite(self.drive_drift) or self.drive_drift <= -1:
            raise ValidationError("drift.drive_drift", self.drive_drift, "finite and > -1")


@dataclass(frozen=True)
class Environment:
    """Background gas and stray fields around the particle."""
    pressure: float  # Pa
    gas_temperature: float = ROOM_TEMPERATURE  # K
    gas_molecule_mass: float = N2_MOLECULE_MASS  # kg
    stray_drift: Optional[StrayDrift] = None

    def __post_init__(self):
        if not (math.isfinite(self.pressure) and self.pressure >= 0):
            raise ValidationError("environment.pressure", self.pressure, "pressure >= 0")
        if not self.gas_temperature > 0:
            raise ValidationError("environment.gas_temperature", self.gas_temperature, "gas_temperature > 0")
        if not self.gas_molecule_mass > 0:
            raise ValidationError(
                "environment.gas_molecule_mass", self.gas_molecule_mass, "gas_molecule_mass > 0"
            )

    def with_pressure(self, pressure: float) -> "Environment":
        return replace(self, pressure=pressure)


@dataclass(frozen=True)
class DetectionConfig:
    """Motion-to-volts transduction of the split detector."""
    conversion_per_axis: Vector3 = (1.0, 1.0, 1.0)  # V/m
    noise_floor: float = 0.0  # V^2/Hz, one-sided white
    crosstalk: Tuple[Vector3, Vector3, Vector3] = IDENTITY_3
    quadratic_coefficient: float = 0.0  # 1/V

    def __post_init__(self):
        _check_vector("detection.conversion_per_axis", self.conversion_per_axis, allow_negative=False)
        if not (math.isfinite(self.noise_floor) and self.noise_floor >= 0):
            raise ValidationError("detection.noise_floor", self.noise_floor, "noise_floor >= 0")
        if len(self.crosstalk) != 3:
            raise ValidationError("detection.crosstalk", self.crosstalk, "must be 3x3")
        for row in self.crosstalk:
            _check_vector("detection.crosstalk", row)
        if not math.isfinite(self.quadratic_coefficient):
            raise ValidationError(
                "detection.quadratic_coefficient", self.quadratic_coefficient, "must be finite"
            )

    def gain_matrix(self) -> np.ndarray:
        """Volts on each channel per metre of displacement on each axis."""
        return np.asarray(self.crosstalk, dtype=float) * np.asarray(self.conversion_per_axis, dtype=float)


@dataclass(frozen=True)
class IqFeedbackConfig:
    """
    IQ-demodulation feedback controller settings.

    Defaults mirror the lab controller listing: frequency 6.168 kHz,
    bandwidth 200 Hz, gain 12, phase 270 deg, AC coupling 150 Hz.
    """
    center_frequency: float = 6.168e3  # Hz
    filter_bandwidth: float = 200.0  # Hz
    gain: float = 12.0
    demodulation_phase: float = 270.0  # degrees
    ac_coupling_bandwidth: float = 150.0  # Hz
    target_axis: str = "y"
    electrode_coupling: Optional[Vector3] = None  # N/V, taken from the trap when None
    loop_delay: int = 1  # samples
    max_output: float = 1.0  # V

    def __post_init__(self):
        if not self.center_frequency > 0:
            raise ValidationError("feedback.frequency", self.center_frequency, "center_frequency > 0")
        if not self.filter_bandwidth > 0:
            raise ValidationError("feedback.bandwidth", self.filter_bandwidth, "bandwidth > 0")
        if not self.ac_coupling_bandwidth >= 0:
            raise ValidationError("feedback.acbandwidth", self.ac_coupling_bandwidth, "acbandwidth >= 0")
        if not 0 <= self.demodulation_phase < 360:
            raise ValidationError("feedback.phase", self.demodulation_phase, "0 <= phase < 360")
        if not math.isfinite(self.gain):
            raise ValidationError("feedback.gain", self.gain, "gain must be finite")
        if self.loop_delay < 0:
            raise ValidationError("feedback.delay", self.loop_delay, "loop_delay >= 0")
        if not self.max_output > 0:
            raise ValidationError("feedback.max_output", self.max_output, "max_output > 0")
        axis_index(self.target_axis)
        if self.electrode_coupling is not None:
            _check_vector("feedback.electrode_coupling", self.electrode_coupling)

    @property
    def axis(self) -> int:
        return axis_index(self.target_axis)

    def with_gain(self, gain: float) -> "IqFeedbackConfig":
        return replace(self, gain=gain)

    def with_phase(self, phase: float) -> "IqFeedbackConfig":
        return replace(self, demodulation_phase=phase % 360.0)


@dataclass(frozen=True)
class DriveSpec:
    """External electrode drive applied during a simulation."""
    kind: str = "none"  # none | tickler | feedback
    frequency: float = 0.0  # rad/s, tickler only
    amplitude: float = 0.0  # V
    axis: str = "z"
    feedback_source: Tuple[IqFeedbackConfig, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.kind not in ("none", "tickler", "feedback"):
            raise ValidationError("drive.kind", self.kind, "one of none, tickler, feedback")
        if not self.amplitude >= 0:
            raise ValidationError("drive.amplitude", self.amplitude, "amplitude >= 0")
        if self.kind == "tickler" and not self.frequency > 0:
            raise ValidationError("drive.frequency", self.frequency, "tickler frequency > 0")
        if self.kind == "feedback" and not self.feedback_source:
            raise ValidationError("drive.feedback_source", self.feedback_source, "at least one controller")
        axis_index(self.axis)
