"""Unit tests for Mathieu parameters, stability and secular frequencies."""

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levitrap.core.exceptions import DomainError, NonConvergenceError, ValidationError
from levitrap.core.models import ParticleSpec, TrapConfig
from levitrap.physics.trap import (
    MathieuPoint,
    beta_approx,
    beta_exact,
    beta_series,
    floquet_exponent,
    is_stable,
    mathieu_parameters,
    micromotion_ratio,
    q_axial,
    secular_frequencies,
    stability_edges,
)


def test_q_axial_scales_with_drive_amplitude(particle, trap):
    """q_z = 0.0608 V0 for the 20 kHz trap and Q/m = 75 C/kg."""
    assert q_axial(75.0, trap) == pytest.approx(0.0608 * 3.0, rel=5e-3)
    assert q_axial(75.0, trap, 6.0) == pytest.approx(2.0 * q_axial(75.0, trap))


def test_mathieu_parameters_obey_laplace(particle):
    """Radial q values sum to -q_z and split by the asymmetry."""
    trap = TrapConfig(drive_amplitude=151.0, drive_frequency=2.0 * math.pi * 100e3, radial_asymmetry=0.05, dc_voltage=1.0)
    mp = mathieu_parameters(particle, trap)
    assert mp.q_z == pytest.approx(0.367, abs=1e-3)
    assert mp.q[0] + mp.q[1] == pytest.approx(-mp.q_z)
    assert mp.a[0] + mp.a[1] == pytest.approx(-mp.a_z)
    assert mp.q[0] / mp.q[1] == pytest.approx(1.05 / 0.95)


def test_beta_values_at_q_03():
    """Exact exponent sits above the lowest-order estimate."""
    assert beta_approx(0.0, 0.3) == pytest.approx(0.3 / math.sqrt(2.0))
    assert beta_exact(0.0, 0.3) == pytest.approx(0.2161, abs=1e-3)
    assert beta_series(0.0, 0.3) == pytest.approx(beta_exact(0.0, 0.3), abs=1e-4)


def test_continued_fraction_matches_monodromy():
    for a, q in [(0.0, 0.4), (0.02, 0.3), (-0.01, 0.5), (0.0, 0.85)]:
        assert beta_exact(a, q) == pytest.approx(floquet_exponent(a, q), abs=1e-6)


@settings(max_examples=40, deadline=None)
@given(q=st.floats(min_value=0.01, max_value=0.8))
def test_beta_exact_is_bounded(q):
    """At a = 0 the exact exponent lies in (q/sqrt 2, 1)."""
    beta = beta_exact(0.0, q)
    assert beta_approx(0.0, q) < beta < 1.0


def test_beta_approx_rejects_negative_square():
    with pytest.raises(DomainError):
        beta_approx(-0.1, 0.1)


def test_beta_exact_outside_stability_region():
    with pytest.raises(NonConvergenceError):
        beta_exact(0.0, 1.0)


def test_stability_boundary():
    """|q| = 0.9 is inside the first zone at a = 0, 0.95 is outside."""
    assert is_stable(MathieuPoint(a=(0.0, 0.0, 0.0), q=(-0.45, -0.45, 0.9)))
    assert not is_stable(MathieuPoint(a=(0.0, 0.0, 0.0), q=(-0.475, -0.475, 0.95)))
    assert not is_stable(MathieuPoint(a=(0.0, 0.0, 0.0), q=(-0.5, -0.5, 1.0)), method="exact")
    with pytest.raises(ValidationError):
        is_stable(MathieuPoint(a=(0.0, 0.0, 0.0), q=(0.0, 0.0, 0.1)), method="guess")


def test_stability_edges_bracket_zero_for_small_q():
    lower, upper = stability_edges(0.3)
    assert lower < 0.0 < upper


def test_axial_to_radial_ratio_near_two(particle, trap):
    """Symmetric trap: omega_z / omega_r is close to 2, slightly above with the exact exponent."""
    small = trap.with_amplitude(0.2 / q_axial(75.0, trap, 1.0))
    mp = mathieu_parameters(particle, small)
    omegas = secular_frequencies(mp, small.drive_frequency, "exact")
    assert 2.0 <= omegas[2] / omegas[0] <= 2.1
    assert omegas[0] == pytest.approx(omegas[1])


def test_radial_asymmetry_splits_modes(particle):
    trap = TrapConfig(drive_amplitude=151.0, drive_frequency=2.0 * math.pi * 100e3, radial_asymmetry=0.05)
    omegas = secular_frequencies(mathieu_parameters(particle, trap), trap.drive_frequency)
    assert omegas[0] / omegas[1] == pytest.approx(1.05 / 0.95)


def test_cooling_mode_frequency(particle):
    """The y mode of the 100 kHz cooling trap sits near 6.17 kHz."""
    trap = TrapConfig(drive_amplitude=151.0, drive_frequency=2.0 * math.pi * 100e3, radial_asymmetry=0.05)
    omegas = secular_frequencies(mathieu_parameters(particle, trap), trap.drive_frequency, "exact")
    assert omegas[1] / (2.0 * math.pi) == pytest.approx(6.168e3, rel=1e-2)


def test_secular_frequencies_rejects_unknown_method(particle, trap):
    with pytest.raises(ValidationError):
        secular_frequencies(mathieu_parameters(particle, trap), trap.drive_frequency, "fast")


def test_micromotion_ratio():
    assert micromotion_ratio(-0.4) == pytest.approx(0.2)


def test_heavier_particle_lowers_q(trap):
    light = ParticleSpec.from_radius(91e-9, charge=1e-15)
    heavy = ParticleSpec.from_radius(120e-9, charge=1e-15)
    assert mathieu_parameters(heavy, trap).q_z < mathieu_parameters(light, trap).q_z
