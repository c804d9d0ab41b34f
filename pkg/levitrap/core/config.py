"""
Configuration for levitrap runs.

Two layers:
- LevitrapSettings: process-level settings read from environment variables (.env aware)
- SimulationConfig: the physical scenario, parsed from a ``section.key = number`` file
"""

import io
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Mapping, Optional

from dotenv.parser import parse_stream

from .constants import AXES, MBAR_TO_PA, MIN_SAMPLES_PER_DRIVE_PERIOD, NANODIAMOND_DENSITY
from .exceptions import ConfigParseError, ValidationError
from .models import (
    DetectionConfig,
    Environment,
    IqFeedbackConfig,
    ParticleSpec,
    StrayDrift,
    TrapConfig,
)

_AXIS_KEYS = {f"{prefix}_{a}" for prefix in ("dc_offset", "coupling") for a in AXES}

KNOWN_KEYS = {
    "particle": {
        "radius", "mass", "density", "atom_count", "charge", "charge_to_mass", "absorption_coefficient",
    },
    "trap": {
        "drive_amplitude", "drive_frequency", "geometric_efficiency", "dc_efficiency",
        "characteristic_distance", "dc_voltage", "radial_asymmetry",
    } | _AXIS_KEYS,
    "environment": {"pressure", "gas_temperature", "gas_molecule_mass"},
    "drift": {"decay_time", "drive_drift"} | {f"field_{a}" for a in AXES},
    "detection": {"noise_floor", "quadratic"}
    | {f"conversion_{a}" for a in AXES}
    | {f"crosstalk_{a}{b}" for a in AXES for b in AXES},
    "feedback": {"frequency", "bandwidth", "gain", "phase", "acbandwidth", "axis", "delay", "max_output"},
    "run": {"duration", "sample_rate", "seed", "decimation"},
}

INTEGER_KEYS = {"run.seed", "run.decimation", "feedback.axis", "feedback.delay"}


@dataclass
class LevitrapSettings:
    """Process settings taken from the environment."""
    output_dir: str = field(default_factory=lambda: os.getenv("LEVITRAP_OUTPUT_DIR", "output"))
    log_level: str = field(default_factory=lambda: os.getenv("LEVITRAP_LOG_LEVEL", "INFO"))
    ledger_url_override: Optional[str] = field(default_factory=lambda: os.getenv("LEVITRAP_LEDGER_URL"))
    max_samples: int = field(default_factory=lambda: int(float(os.getenv("LEVITRAP_MAX_SAMPLES", "2e8"))))

    @property
    def ledger_url(self) -> str:
        """SQLAlchemy URL of the run ledger."""
        if self.ledger_url_override:
            return self.ledger_url_override
        return f"sqlite:///{Path(self.output_dir).resolve() / 'runs.sqlite'}"


@dataclass(frozen=True)
class RunSettings:
    """Integration settings for a single run."""
    duration: float = 1.0  # s
    sample_rate: Optional[float] = None  # Hz, defaults to the minimum for the drive
    seed: int = 0
    decimation: int = 1

    def __post_init__(self):
        if not self.duration > 0:
            raise ValidationError("run.duration", self.duration, "duration > 0")
        if self.sample_rate is not None and not self.sample_rate > 0:
            raise ValidationError("run.sample_rate", self.sample_rate, "sample_rate > 0")
        if self.decimation < 1:
            raise ValidationError("run.decimation", self.decimation, "decimation >= 1")

    def resolved_sample_rate(self, trap: TrapConfig) -> float:
        if self.sample_rate is not None:
            return self.sample_rate
        return MIN_SAMPLES_PER_DRIVE_PERIOD * trap.drive_frequency_hz


@dataclass(frozen=True)
class SimulationConfig:
    """Everything a simulation run needs."""
    particle: ParticleSpec
    trap: TrapConfig
    environment: Environment
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    feedback: Optional[IqFeedbackConfig] = None
    run: RunSettings = field(default_factory=RunSettings)


def _normalize(key: str, value: float) -> tuple[str, float]:
    """Strip a unit suffix from ``key`` and convert ``value`` to SI."""
    if key.endswith("_mbar"):
        return key[: -len("_mbar")], value * MBAR_TO_PA
    if key.endswith("_vpp"):
        return key[: -len("_vpp")], value / 2.0
    if key.endswith("_khz"):
        base = key[: -len("_khz")]
        if base == "trap.drive_frequency":
            return base, 2.0 * math.pi * value * 1e3
        return base, value * 1e3
    if key.endswith("_hz"):
        base = key[: -len("_hz")]
        if base == "trap.drive_frequency":
            return base, 2.0 * math.pi * value
        return base, value
    if key.endswith("_deg"):
        return key[: -len("_deg")], value
    return key, value


def _check_key(key: str, source: str, line: Optional[int]) -> None:
    section, _, name = key.partition(".")
    if section not in KNOWN_KEYS or name not in KNOWN_KEYS[section]:
        raise ConfigParseError(source, f"unknown key '{key}'", line)


def parse_config_text(text: str, source: str = "<string>") -> Dict[str, float]:
    """
    Parse key-value config text into canonical SI keys.

    Args:
        text: File contents
        source: Name used in error messages

    Returns:
        Dict mapping ``section.key`` to a float in SI units
    """
    raw: Dict[str, float] = {}
    for binding in parse_stream(io.StringIO(text)):
        line = binding.original.line
        if binding.error:
            raise ConfigParseError(source, f"malformed statement {binding.original.string.strip()!r}", line)
        if binding.key is None:
            continue
        if binding.value is None:
            raise ConfigParseError(source, f"key '{binding.key}' has no value", line)
        try:
            number = float(binding.value)
        except ValueError:
            raise ConfigParseError(source, f"'{binding.value}' is not a number", line) from None
        key, value = _normalize(binding.key.strip(), number)
        _check_key(key, source, line)
        if key in raw:
            raise ConfigParseError(source, f"duplicate key '{key}'", line)
        raw[key] = value
    return raw


def apply_overrides(raw: Mapping[str, float], overrides: Iterable[str]) -> Dict[str, float]:
    """Apply ``key=value`` overrides (same suffix rules) on top of parsed values."""
    merged = dict(raw)
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigParseError("<override>", f"expected key=value, got '{item}'")
        try:
            number = float(value)
        except ValueError:
            raise ConfigParseError("<override>", f"'{value}' is not a number") from None
        key, number = _normalize(key.strip(), number)
        _check_key(key, "<override>", None)
        merged[key] = number
    return merged


def _get(raw: Mapping[str, float], key: str, default=None, required: bool = False):
    if key in raw:
        return raw[key]
    if required:
        raise ValidationError(key, None, "required key is missing")
    return default


def _axis_vector(raw: Mapping[str, float], prefix: str, default: float):
    keys = [f"{prefix}_{a}" for a in AXES]
    if not any(k in raw for k in keys):
        return None
    return tuple(float(raw.get(k, default)) for k in keys)


def _build_particle(raw: Mapping[str, float]) -> ParticleSpec:
    density = _get(raw, "particle.density", NANODIAMOND_DENSITY)
    charge = _get(raw, "particle.charge")
    qm = _get(raw, "particle.charge_to_mass")
    alpha = _get(raw, "particle.absorption_coefficient", 0.0)
    radius = _get(raw, "particle.radius")
    mass = _get(raw, "particle.mass")
    if radius is not None and mass is not None:
        if qm is not None:
            charge = qm * mass
        return ParticleSpec(mass, radius, density, 0.0 if charge is None else charge, alpha)
    if radius is not None:
        return ParticleSpec.from_radius(radius, density, charge, qm, alpha)
    if mass is not None:
        return ParticleSpec.from_mass(mass, density, charge, qm, alpha)
    if "particle.atom_count" in raw:
        return ParticleSpec.from_atom_count(raw["particle.atom_count"], density, charge, qm, alpha)
    raise ValidationError("particle.radius", None, "one of radius, mass or atom_count is required")


def _build_trap(raw: Mapping[str, float]) -> TrapConfig:
    kwargs = {
        "drive_amplitude": _get(raw, "trap.drive_amplitude", required=True),
        "drive_frequency": _get(raw, "trap.drive_frequency", required=True),
    }
    for name in ("geometric_efficiency", "characteristic_distance", "dc_voltage", "dc_efficiency", "radial_asymmetry"):
        if f"trap.{name}" in raw:
            kwargs[name] = raw[f"trap.{name}"]
    offsets = _axis_vector(raw, "trap.dc_offset", 0.0)
    if offsets is not None:
        kwargs["dc_offset_per_axis"] = offsets
    coupling = _axis_vector(raw, "trap.coupling", 0.0)
    if coupling is not None:
        kwargs["electrode_coupling_per_axis"] = coupling
    return TrapConfig(**kwargs)


def _build_environment(raw: Mapping[str, float]) -> Environment:
    drift = None
    if "drift.decay_time" in raw:
        drift = StrayDrift(
            decay_time=raw["drift.decay_time"],
            initial_field=_axis_vector(raw, "drift.field", 0.0) or (0.0, 0.0, 0.0),
            drive_drift=_get(raw, "drift.drive_drift", 0.0),
        )
    kwargs = {"pressure": _get(raw, "environment.pressure", required=True), "stray_drift": drift}
    for name in ("gas_temperature", "gas_molecule_mass"):
        if f"environment.{name}" in raw:
            kwargs[name] = raw[f"environment.{name}"]
    return Environment(**kwargs)


def _build_detection(raw: Mapping[str, float]) -> DetectionConfig:
    crosstalk = tuple(
        tuple(float(raw.get(f"detection.crosstalk_{a}{b}", 1.0 if a == b else 0.0)) for b in AXES)
        for a in AXES
    )
    return DetectionConfig(
        conversion_per_axis=_axis_vector(raw, "detection.conversion", 1.0) or (1.0, 1.0, 1.0),
        noise_floor=_get(raw, "detection.noise_floor", 0.0),
        crosstalk=crosstalk,
        quadratic_coefficient=_get(raw, "detection.quadratic", 0.0),
    )


def _build_feedback(raw: Mapping[str, float]) -> Optional[IqFeedbackConfig]:
    if not any(k.startswith("feedback.") for k in raw):
        return None
    names = {
        "frequency": "center_frequency",
        "bandwidth": "filter_bandwidth",
        "gain": "gain",
        "phase": "demodulation_phase",
        "acbandwidth": "ac_coupling_bandwidth",
        "max_output": "max_output",
    }
    kwargs = {field_name: raw[f"feedback.{key}"] for key, field_name in names.items() if f"feedback.{key}" in raw}
    if "feedback.axis" in raw:
        index = int(raw["feedback.axis"])
        if index not in (0, 1, 2):
            raise ValidationError("feedback.axis", raw["feedback.axis"], "0 (x), 1 (y) or 2 (z)")
        kwargs["target_axis"] = AXES[index]
    if "feedback.delay" in raw:
        kwargs["loop_delay"] = int(raw["feedback.delay"])
    return IqFeedbackConfig(**kwargs)


def _build_run(raw: Mapping[str, float]) -> RunSettings:
    return RunSettings(
        duration=_get(raw, "run.duration", 1.0),
        sample_rate=_get(raw, "run.sample_rate"),
        seed=int(_get(raw, "run.seed", 0)),
        decimation=int(_get(raw, "run.decimation", 1)),
    )


def build_config(raw: Mapping[str, float]) -> SimulationConfig:
    """Validate canonical values and assemble the domain objects."""
    return SimulationConfig(
        particle=_build_particle(raw),
        trap=_build_trap(raw),
        environment=_build_environment(raw),
        detection=_build_detection(raw),
        feedback=_build_feedback(raw),
        run=_build_run(raw),
    )


def read_raw_config(path: str | Path) -> Dict[str, float]:
    """Read and parse a config file without building domain objects."""
    path = Path(path)
    if not path.is_file():
        raise ConfigParseError(str(path), "file does not exist")
    return parse_config_text(path.read_text(), source=str(path))


def load_config(path: str | Path, overrides: Iterable[str] = ()) -> SimulationConfig:
    """
    Load and validate a configuration file.

    Args:
        path: Path to the key-value config file
        overrides: Optional ``key=value`` strings applied after parsing

    Returns:
        SimulationConfig with all values in SI units
    """
    raw = apply_overrides(read_raw_config(path), overrides)
    return build_config(raw)


def config_to_raw(config: SimulationConfig) -> Dict[str, float]:
    """Flatten a configuration back into canonical SI keys."""
    p, t, e, d, r = config.particle, config.trap, config.environment, config.detection, config.run
    raw: Dict[str, float] = {
        "particle.mass": p.mass,
        "particle.radius": p.radius,
        "particle.density": p.density,
        "particle.charge": p.charge,
        "particle.absorption_coefficient": p.absorption_coefficient,
        "trap.drive_amplitude": t.drive_amplitude,
        "trap.drive_frequency": t.drive_frequency,
        "trap.geometric_efficiency": t.geometric_efficiency,
        "trap.characteristic_distance": t.characteristic_distance,
        "trap.dc_voltage": t.dc_voltage,
        "trap.radial_asymmetry": t.radial_asymmetry,
    }
    if t.dc_efficiency is not None:
        raw["trap.dc_efficiency"] = t.dc_efficiency
    for a, v in zip(AXES, t.dc_offset_per_axis):
        raw[f"trap.dc_offset_{a}"] = v
    if t.electrode_coupling_per_axis is not None:
        for a, v in zip(AXES, t.electrode_coupling_per_axis):
            raw[f"trap.coupling_{a}"] = v
    raw["environment.pressure"] = e.pressure
    raw["environment.gas_temperature"] = e.gas_temperature
    raw["environment.gas_molecule_mass"] = e.gas_molecule_mass
    if e.stray_drift is not None:
        raw["drift.decay_time"] = e.stray_drift.decay_time
        raw["drift.drive_drift"] = e.stray_drift.drive_drift
        for a, v in zip(AXES, e.stray_drift.initial_field):
            raw[f"drift.field_{a}"] = v
    for a, v in zip(AXES, d.conversion_per_axis):
        raw[f"detection.conversion_{a}"] = v
    raw["detection.noise_floor"] = d.noise_floor
    raw["detection.quadratic"] = d.quadratic_coefficient
    for a, row in zip(AXES, d.crosstalk):
        for b, v in zip(AXES, row):
            raw[f"detection.crosstalk_{a}{b}"] = v
    if config.feedback is not None:
        f = config.feedback
        raw.update({
            "feedback.frequency": f.center_frequency,
            "feedback.bandwidth": f.filter_bandwidth,
            "feedback.gain": f.gain,
            "feedback.phase": f.demodulation_phase,
            "feedback.acbandwidth": f.ac_coupling_bandwidth,
            "feedback.axis": f.axis,
            "feedback.delay": f.loop_delay,
            "feedback.max_output": f.max_output,
        })
    raw["run.duration"] = r.duration
    if r.sample_rate is not None:
        raw["run.sample_rate"] = r.sample_rate
    raw["run.seed"] = r.seed
    raw["run.decimation"] = r.decimation
    return raw


def serialize(config: SimulationConfig) -> str:
    """Write a configuration in canonical SI form; floats use round-trip repr."""
    lines = ["# levitrap configuration (SI units)"]
    section = None
    for key, value in config_to_raw(config).items():
        current = key.split(".", 1)[0]
        if current != section:
            lines.append("")
            section = current
        text = str(int(value)) if key in INTEGER_KEYS else repr(float(value))
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"
