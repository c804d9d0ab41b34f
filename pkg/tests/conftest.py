"""Shared fixtures: the 91 nm nanodiamond and the desk-scale 20 kHz trap."""

import math

import pytest

from levitrap.core.models import Environment, ParticleSpec, TrapConfig


@pytest.fixture
def particle():
    """91 nm nanodiamond with Q/m = 75 C/kg."""
    return ParticleSpec.from_radius(91e-9, density=3040.0, charge_to_mass=75.0)


@pytest.fixture
def trap():
    """End-cap trap driven at 20 kHz, 3 V zero-to-peak, default geometry."""
    return TrapConfig(drive_amplitude=3.0, drive_frequency=2.0 * math.pi * 20e3)


@pytest.fixture
def env():
    """Nitrogen at 7 Pa and room temperature (gamma near 200 1/s)."""
    return Environment(pressure=7.0)


@pytest.fixture(autouse=True)
def isolated_settings(monkeypatch):
    """Keep developer environment variables out of the tests."""
    for name in ("LEVITRAP_OUTPUT_DIR", "LEVITRAP_LEDGER_URL", "LEVITRAP_LOG_LEVEL", "LEVITRAP_MAX_SAMPLES"):
        monkeypatch.delenv(name, raising=False)
