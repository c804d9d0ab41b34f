"""Unit tests for the domain types."""

import math

import pytest

from levitrap.core.constants import CARBON_ATOM_MASS
from levitrap.core.exceptions import ValidationError
from levitrap.core.models import (
    DetectionConfig,
    DriveSpec,
    Environment,
    IqFeedbackConfig,
    ParticleSpec,
    StrayDrift,
    TrapConfig,
    axis_index,
)


def test_particle_from_radius_reproduces_reference_mass(particle):
    """A 91 nm sphere at 3040 kg/m^3 weighs 9.6e-18 kg."""
    assert particle.mass == pytest.approx(9.6e-18, rel=5e-3)
    assert particle.charge_to_mass == pytest.approx(75.0)
    assert particle.charge > 0


def test_particle_from_mass_and_atom_count_agree():
    """from_mass and from_atom_count land on the same sphere."""
    by_mass = ParticleSpec.from_mass(1e-18)
    by_atoms = ParticleSpec.from_atom_count(1e-18 / CARBON_ATOM_MASS)
    assert by_atoms.radius == pytest.approx(by_mass.radius, rel=1e-12)
    assert by_mass.atom_count == pytest.approx(1e-18 / CARBON_ATOM_MASS)


def test_particle_rejects_inconsistent_mass():
    """Mass, radius and density must describe one sphere."""
    with pytest.raises(ValidationError):
        ParticleSpec(mass=1e-17, radius=91e-9, density=3040.0)


def test_particle_rejects_charge_and_charge_to_mass_together():
    with pytest.raises(ValidationError):
        ParticleSpec.from_radius(91e-9, charge=1e-16, charge_to_mass=75.0)


def test_neutral_particle_cannot_be_trapped():
    neutral = ParticleSpec.from_radius(91e-9)
    with pytest.raises(ValidationError):
        neutral.require_charge()


@pytest.mark.parametrize("radius", [0.0, -1e-9, float("nan")])
def test_particle_rejects_bad_radius(radius):
    with pytest.raises(ValidationError):
        ParticleSpec.from_radius(radius)


def test_trap_coupling_from_charge(particle, trap):
    """Default electrode coupling is Q * 0.3 / d on every axis."""
    coupling = trap.coupling(particle)
    assert coupling.shape == (3,)
    assert coupling[0] == pytest.approx(particle.charge * 0.3 / 0.5e-3)
    assert coupling[1] == pytest.approx(4.32e-13, rel=1e-2)


def test_trap_explicit_coupling_and_offsets(particle):
    """Per-axis coupling overrides the charge estimate and scales the offsets."""
    trap = TrapConfig(
        drive_amplitude=3.0,
        drive_frequency=2.0 * math.pi * 20e3,
        dc_offset_per_axis=(0.0, 2.0, -1.0),
        electrode_coupling_per_axis=(1e-13, 2e-13, 3e-13),
    )
    assert trap.offset_force(particle).tolist() == pytest.approx([0.0, 4e-13, -3e-13])


def test_trap_validation():
    """Invalid trap settings are rejected."""
    with pytest.raises(ValidationError):
        TrapConfig(drive_amplitude=3.0, drive_frequency=0.0)
    with pytest.raises(ValidationError):
        TrapConfig(drive_amplitude=3.0, drive_frequency=1e5, radial_asymmetry=0.3)
    with pytest.raises(ValidationError):
        TrapConfig(drive_amplitude=3.0, drive_frequency=1e5, geometric_efficiency=1.5)
    with pytest.raises(ValidationError):
        TrapConfig(drive_amplitude=-1.0, drive_frequency=1e5)


def test_trap_default_geometry_flag(trap):
    assert trap.geometry_is_default
    assert not TrapConfig(3.0, 1e5, geometric_efficiency=0.7).geometry_is_default
    assert trap.effective_dc_efficiency == trap.geometric_efficiency


def test_environment_and_drift_validation():
    with pytest.raises(ValidationError):
        Environment(pressure=-1.0)
    with pytest.raises(ValidationError):
        StrayDrift(decay_time=0.0)
    env = Environment(pressure=7.0).with_pressure(1.0)
    assert env.pressure == 1.0


def test_detection_gain_matrix_applies_crosstalk():
    """Row i of the gain matrix is channel i; columns are motion axes."""
    det = DetectionConfig(
        conversion_per_axis=(2.0, 3.0, 4.0),
        crosstalk=((1.0, 0.1, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)),
    )
    g = det.gain_matrix()
    assert g[0, 0] == 2.0
    assert g[0, 1] == pytest.approx(0.3)
    assert g[2, 2] == 4.0


def test_feedback_defaults_match_lab_controller():
    cfg = IqFeedbackConfig()
    assert cfg.center_frequency == 6.168e3
    assert cfg.filter_bandwidth == 200.0
    assert cfg.gain == 12.0
    assert cfg.demodulation_phase == 270.0
    assert cfg.ac_coupling_bandwidth == 150.0
    assert cfg.axis == 1


def test_feedback_phase_wraps_and_validates():
    cfg = IqFeedbackConfig()
    assert cfg.with_phase(400.0).demodulation_phase == pytest.approx(40.0)
    assert cfg.with_gain(50.0).gain == 50.0
    with pytest.raises(ValidationError):
        IqFeedbackConfig(demodulation_phase=360.0)
    with pytest.raises(ValidationError):
        IqFeedbackConfig(target_axis="w")


def test_drive_spec_requirements():
    with pytest.raises(ValidationError):
        DriveSpec(kind="tickler", amplitude=1.0)
    with pytest.raises(ValidationError):
        DriveSpec(kind="feedback")
    with pytest.raises(ValidationError):
        DriveSpec(kind="laser")


def test_axis_index():
    assert [axis_index(a) for a in "xyz"] == [0, 1, 2]
    with pytest.raises(ValidationError):
        axis_index("r")
