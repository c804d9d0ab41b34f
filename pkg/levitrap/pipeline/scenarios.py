"""
Built-in desk-scale scenarios used by ``--synthetic`` runs.

They are written in the same key-value format as user config files and go
through the same parser, so a scenario can be dumped, edited and passed
back with ``--config``.
"""

from typing import Dict, Iterable

from ..core.config import SimulationConfig, apply_overrides, build_config, parse_config_text

# Charge-to-mass scan: 20 kHz drive, q_z between 0.1 and 0.3 over the voltage list,
# gas damping near 200 1/s so each point is resolved in a one second record.
QM_SCAN = """
particle.radius = 91e-9
particle.density = 3040
particle.charge_to_mass = 75
trap.drive_amplitude = 3.0
trap.drive_frequency_khz = 20
environment.pressure = 7.0
run.duration = 1.0
run.sample_rate = 1e6
run.decimation = 50
"""

QM_SCAN_VOLTAGES = (2.0, 2.5, 3.0, 3.5, 4.0)

# Mass scan: q_z near 0.4, one decade of pressure with damping between 400 and 4000 1/s.
MASS_SCAN = """
particle.radius = 91e-9
particle.density = 3040
particle.charge_to_mass = 75
trap.drive_amplitude = 6.6
trap.drive_frequency_khz = 20
environment.pressure = 14.0
run.duration = 4.0
run.sample_rate = 1e6
run.decimation = 50
"""

MASS_SCAN_PRESSURES = (14.0, 24.9, 44.3, 78.7, 140.0)

# Feedback cooling of the y mode near 6.17 kHz at 8.0e-5 mbar.
COOLING = """
particle.radius = 91e-9
particle.density = 3040
particle.charge_to_mass = 75
trap.drive_amplitude = 151.0
trap.drive_frequency_khz = 100
trap.radial_asymmetry = 0.05
environment.pressure_mbar = 8.0e-5
feedback.frequency_khz = 6.168
feedback.bandwidth = 200
feedback.gain = 12
feedback.phase_deg = 270
feedback.acbandwidth = 150
feedback.axis = 1
run.duration = 2.0
run.sample_rate = 5e6
run.decimation = 50
"""

# gain 0 would need 50 / gamma = 220 s to settle at this pressure
COOLING_GAINS = (12.0, 50.0, 150.0, 400.0, 1000.0)
COOLING_SNR_DB = 35.0

SCENARIOS: Dict[str, str] = {
    "qm-scan": QM_SCAN,
    "mass-scan": MASS_SCAN,
    "cooling": COOLING,
}


def scenario_config(name: str, overrides: Iterable[str] = ()) -> SimulationConfig:
    """Build a named scenario, optionally with ``key=value`` overrides."""
    raw = parse_config_text(SCENARIOS[name], source=f"<scenario {name}>")
    return build_config(apply_overrides(raw, overrides))
