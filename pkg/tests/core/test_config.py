"""Unit tests for config parsing, overrides and environment settings."""

import math

import pytest

from levitrap.core.config import (
    LevitrapSettings,
    apply_overrides,
    build_config,
    load_config,
    parse_config_text,
    serialize,
)
from levitrap.core.exceptions import ConfigParseError, ValidationError

SAMPLE = """
# nanodiamond in the 20 kHz trap
particle.radius = 91e-9
particle.charge_to_mass = 75

trap.drive_amplitude_vpp = 6
trap.drive_frequency_khz = 20
environment.pressure_mbar = 8e-5   # cooling pressure

feedback.frequency_khz = 6.168
feedback.phase_deg = 270
feedback.axis = 1
run.duration = 0.5
"""


def test_parse_converts_units_to_si():
    """Unit suffixes are stripped and values converted to SI."""
    raw = parse_config_text(SAMPLE)
    assert raw["trap.drive_amplitude"] == pytest.approx(3.0)
    assert raw["trap.drive_frequency"] == pytest.approx(2.0 * math.pi * 20e3)
    assert raw["environment.pressure"] == pytest.approx(8e-3)
    assert raw["feedback.frequency"] == pytest.approx(6168.0)
    assert raw["feedback.phase"] == 270.0


def test_build_config_from_text():
    config = build_config(parse_config_text(SAMPLE))
    assert config.particle.mass == pytest.approx(9.6e-18, rel=5e-3)
    assert config.trap.drive_amplitude == pytest.approx(3.0)
    assert config.feedback.target_axis == "y"
    assert config.run.duration == 0.5
    assert config.run.resolved_sample_rate(config.trap) == pytest.approx(1e6)


def test_unknown_key_reports_line():
    with pytest.raises(ConfigParseError) as exc_info:
        parse_config_text("particle.radius = 1e-7\ntrap.voltage = 3\n", source="bad.cfg")
    assert exc_info.value.line == 2
    assert "trap.voltage" in exc_info.value.detail


@pytest.mark.parametrize(
    "text",
    [
        "particle.radius = 1e-7\nparticle.radius = 2e-7\n",
        "particle.radius = big\n",
        "particle.radius\n",
    ],
)
def test_malformed_config_is_rejected(text):
    """Duplicates, non-numbers and missing values are parse errors."""
    with pytest.raises(ConfigParseError):
        parse_config_text(text)


def test_missing_required_key():
    raw = parse_config_text("particle.radius = 91e-9\ntrap.drive_frequency_khz = 20\nenvironment.pressure = 1\n")
    with pytest.raises(ValidationError):
        build_config(raw)


def test_overrides_follow_suffix_rules():
    raw = apply_overrides(parse_config_text(SAMPLE), ["environment.pressure_mbar=1e-2", "run.duration=2"])
    assert raw["environment.pressure"] == pytest.approx(1.0)
    assert raw["run.duration"] == 2.0
    with pytest.raises(ConfigParseError):
        apply_overrides(raw, ["run.duration"])
    with pytest.raises(ConfigParseError):
        apply_overrides(raw, ["run.colour=2"])


def test_serialize_then_parse_gives_same_config():
    """A serialized config loads back to an equal configuration."""
    config = build_config(parse_config_text(SAMPLE))
    again = build_config(parse_config_text(serialize(config)))
    assert again == config


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigParseError):
        load_config(tmp_path / "missing.cfg")


def test_load_config_with_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(SAMPLE)
    config = load_config(path, ["trap.drive_amplitude=4"])
    assert config.trap.drive_amplitude == 4.0


def test_settings_read_environment(monkeypatch, tmp_path):
    """Process settings come from LEVITRAP_* variables."""
    monkeypatch.setenv("LEVITRAP_OUTPUT_DIR", str(tmp_path))
    monkeypatch.setenv("LEVITRAP_LOG_LEVEL", "DEBUG")
    settings = LevitrapSettings()
    assert settings.output_dir == str(tmp_path)
    assert settings.log_level == "DEBUG"
    assert settings.ledger_url.startswith("sqlite:///")
    assert settings.ledger_url.endswith("runs.sqlite")

    monkeypatch.setenv("LEVITRAP_LEDGER_URL", "sqlite://")
    assert LevitrapSettings().ledger_url == "sqlite://"
