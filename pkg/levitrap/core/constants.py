"""
Physical constants and shared defaults.

CODATA values come from scipy.constants; everything else here is a
modelling default that configuration can override.
"""

from dataclasses import dataclass

from scipy import constants as sc


@dataclass(frozen=True)
class PhysicalConstants:
    """Fundamental constants used throughout the package."""
    k_B: float = sc.Boltzmann  # J/K
    hbar: float = sc.hbar  # J s
    G: float = sc.G  # m^3 / (kg s^2)
    c: float = sc.c  # m/s
    atomic_mass: float = sc.atomic_mass  # kg


CONSTANTS = PhysicalConstants()

# Particle presets
NANODIAMOND_DENSITY = 3040.0  # kg/m^3, reproduces 91 nm <-> 9.6e-18 kg
BULK_DIAMOND_DENSITY = 3500.0  # kg/m^3
CARBON_ATOM_MASS = 12.011 * sc.atomic_mass  # kg

# Trap geometry defaults (flagged in reports when used)
DEFAULT_GEOMETRIC_EFFICIENCY = 0.8
DEFAULT_CHARACTERISTIC_DISTANCE = 0.5e-3  # m
DEFAULT_ELECTRODE_FIELD_FACTOR = 0.3  # field per applied volt, in units of 1/d

# Mathieu stability
Q_STABILITY_LIMIT = 0.908

# Gas
N2_MOLECULE_MASS = 4.65e-26  # kg
ROOM_TEMPERATURE = 300.0  # K
EPSTEIN_PREFACTOR = 15.8

# Reference operating points
CALIBRATION_PRESSURE = 1.62  # Pa (1.62e-2 mbar)
COOLING_PRESSURE = 8.0e-3  # Pa (8.0e-5 mbar)

# Simulation
MIN_SAMPLES_PER_DRIVE_PERIOD = 50
ESCAPE_DISTANCE_FACTOR = 100.0  # escape when |u| > factor * d
MBAR_TO_PA = 100.0

AXES = ("x", "y", "z")
