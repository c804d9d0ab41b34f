"""Tests for the IQ controller, cold-damping theory and closed-loop cooling."""

import math
from dataclasses import replace

import numpy as np
import pytest

from levitrap.analysis.feedback import (
    HEATING_FACTOR,
    CoolingScenario,
    IqState,
    ModeTemperature,
    closed_loop_cool,
    cold_damping_temperature,
    feedback_damping_rate,
    gain_for_damping,
    gain_sweep,
    iq_filter,
    iq_step,
    is_heating,
    loop_damping,
    mode_temperature,
    optimal_phase,
    phase_scan,
    steady_state_duration,
)
from levitrap.analysis.signal import Psd, demodulate_amplitude
from levitrap.core.constants import CONSTANTS
from levitrap.core.exceptions import ValidationError
from levitrap.core.models import DetectionConfig, Environment, IqFeedbackConfig
from levitrap.physics.trap import mathieu_parameters, secular_frequencies
from levitrap.pipeline.runner import ExperimentRunner


def tone(frequency, amplitude, sample_rate, duration, phase=0.0):
    t = np.arange(int(round(duration * sample_rate))) / sample_rate
    return amplitude * np.cos(2.0 * math.pi * frequency * t + phase)


def phasor(samples, sample_rate, frequency):
    t = np.arange(samples.size) / sample_rate
    return np.mean(samples * np.exp(-2j * math.pi * frequency * t))


def axial_mode(particle, trap):
    """Exact axial secular angular frequency of the 20 kHz trap."""
    return secular_frequencies(mathieu_parameters(particle, trap), trap.drive_frequency, "exact")[2]


def axial_scenario(particle, trap, pressure, duration, bandwidth=100.0):
    """Noise-free closed loop on the axial mode, phased for pure velocity damping."""
    fs = 1e6
    cfg = IqFeedbackConfig(
        center_frequency=axial_mode(particle, trap) / (2.0 * math.pi), filter_bandwidth=bandwidth, gain=0.0,
        ac_coupling_bandwidth=0.0, target_axis="z", max_output=10.0,
    )
    cfg = replace(cfg, demodulation_phase=optimal_phase(cfg, fs))
    return CoolingScenario(
        particle, trap, Environment(pressure=pressure), DetectionConfig(), cfg, duration, fs, decimation=50,
    )


def gain_for(scenario, gamma_fb):
    particle = scenario.particle
    coupling = float(scenario.trap.coupling(particle)[2])
    return gain_for_damping(gamma_fb, coupling, 1.0, particle.mass, axial_mode(particle, scenario.trap))


def test_iq_state_needs_oversampling():
    cfg = IqFeedbackConfig(center_frequency=1e3)
    with pytest.raises(ValidationError):
        IqState.start(cfg, 1e4)
    state = IqState.start(cfg, 2e4)
    assert state.in_phase == 0.0 and state.quadrature == 0.0


def test_iq_step_silent_input_gives_silent_output():
    cfg = IqFeedbackConfig(center_frequency=1e3)
    state = IqState.start(cfg, 5e4)
    assert all(iq_step(0.0, state) == 0.0 for _ in range(100))


def test_iq_filter_regenerates_tone_with_gain():
    """A tone at the centre frequency comes back at gain times its amplitude."""
    cfg = IqFeedbackConfig(center_frequency=1e3, gain=2.0, demodulation_phase=0.0, ac_coupling_bandwidth=0.0)
    fs = 5e4
    out = iq_filter(tone(1e3, 0.1, fs, 1.0), cfg, fs)
    tail = out[out.size // 2:]
    assert demodulate_amplitude(tail, fs, 1e3) == pytest.approx(0.2, rel=0.03)


def test_iq_filter_clips_at_max_output():
    cfg = IqFeedbackConfig(center_frequency=1e3, gain=1e4, ac_coupling_bandwidth=0.0, max_output=0.5)
    out = iq_filter(tone(1e3, 0.1, 5e4, 0.2), cfg, 5e4)
    assert np.max(np.abs(out)) == pytest.approx(0.5)


def test_iq_filter_rejects_off_band_tone():
    cfg = IqFeedbackConfig(center_frequency=1e3, filter_bandwidth=50.0, gain=1.0, ac_coupling_bandwidth=0.0)
    fs = 5e4
    out = iq_filter(tone(3e3, 0.1, fs, 1.0), cfg, fs)
    assert np.std(out[out.size // 2:]) < 0.05 * 0.1


def test_iq_step_retunes_in_place():
    cfg = IqFeedbackConfig(center_frequency=1e3, gain=1.0)
    state = IqState.start(cfg, 5e4)
    iq_step(0.1, state)
    iq_step(0.1, state, cfg.with_gain(3.0))
    assert state.cfg.gain == 3.0
    assert state.params[2] == 3.0


def test_damping_rate_and_gain_are_inverse():
    coupling, conversion, mass, omega = 4.32e-13, 1.0, 9.6e-18, 2.0 * math.pi * 6.168e3
    gamma_fb = feedback_damping_rate(coupling, 12.0, conversion, mass, omega)
    assert gamma_fb == pytest.approx(13.9, rel=1e-2)
    assert gain_for_damping(gamma_fb, coupling, conversion, mass, omega) == pytest.approx(12.0)


def test_cold_damping_temperature():
    assert cold_damping_temperature(1.0, 0.0, 300.0) == pytest.approx(300.0)
    assert cold_damping_temperature(1.0, 99.0, 300.0) == pytest.approx(3.0)
    noisy = cold_damping_temperature(1.0, 99.0, 300.0, mass=1e-17, coupling=1e-12, gain=100.0, noise_floor=1e-14)
    assert noisy > 3.0
    with pytest.raises(ValidationError):
        cold_damping_temperature(1.0, -2.0, 300.0)


def test_optimal_phase_compensates_delay_and_highpass():
    cfg = IqFeedbackConfig(center_frequency=1e3, ac_coupling_bandwidth=0.0, loop_delay=0)
    assert optimal_phase(cfg, 1e6) == pytest.approx(270.18)
    lead = replace(cfg, ac_coupling_bandwidth=1e3)
    assert optimal_phase(lead, 1e6) == pytest.approx(270.18 - 45.0)


def test_mode_temperature_validation_and_occupation():
    point = ModeTemperature(temperature=1.0, uncertainty=0.1, mode="y", method="kinetic", frequency=6e3)
    assert point.phonon_occupation == pytest.approx(3.473e6, rel=1e-3)
    assert ModeTemperature(1.0, 0.0, "y", "kinetic").phonon_occupation == 0.0
    with pytest.raises(ValidationError):
        ModeTemperature(temperature=0.0, uncertainty=0.0, mode="y", method="kinetic")


def test_area_ratio_thermometry():
    """A peak with a hundredth of the calibration area is a hundred times colder."""
    f = np.arange(5000.0, 7000.0, 2.0)

    def peak(area, width):
        half = width / 2.0
        return 1e-16 + (area / math.pi) * half / ((f - 6000.0) ** 2 + half**2)

    calibration = Psd(f, peak(1e-8, 40.0), 3.0, 16)
    cooled = Psd(f, peak(1e-10, 120.0), 3.0, 16)
    result = mode_temperature(cooled, calibration, 300.0, (5600.0, 6400.0))
    assert result.temperature == pytest.approx(3.0, rel=1e-2)
    assert result.method == "area-ratio"
    assert result.frequency == pytest.approx(6000.0, abs=0.5)


def test_iq_filter_at_270_degrees_leads_by_three_quarters_of_a_cycle():
    cfg = IqFeedbackConfig(
        center_frequency=1e3, filter_bandwidth=20.0, gain=1.0, demodulation_phase=270.0, ac_coupling_bandwidth=0.0,
    )
    fs = 5e4
    x = tone(1e3, 0.1, fs, 1.0, phase=0.3)
    out = iq_filter(x, cfg, fs)
    half = x.size // 2
    ratio = phasor(out[half:], fs, 1e3) / phasor(x[half:], fs, 1e3)
    assert abs(ratio) == pytest.approx(1.0, rel=0.02)
    assert math.degrees(np.angle(ratio)) % 360.0 == pytest.approx(270.0, abs=1.0)


def test_iq_filter_passband_width_equals_bandwidth():
    """Half the bandwidth away from the centre the response is down 3 dB."""
    cfg = IqFeedbackConfig(
        center_frequency=5e3, filter_bandwidth=200.0, gain=1.0, demodulation_phase=0.0, ac_coupling_bandwidth=0.0,
    )
    fs = 2e5
    levels = []
    for f in (5e3, 5e3 + 100.0):
        out = iq_filter(tone(f, 0.1, fs, 0.5), cfg, fs)
        levels.append(demodulate_amplitude(out[out.size // 2:], fs, f))
    # within 10% on the width: |H| between 1/sqrt(1 + 1.1^2) and 1/sqrt(1 + 0.9^2)
    assert 0.673 < levels[1] / levels[0] < 0.743


def test_iq_filter_is_linear_below_saturation():
    cfg = IqFeedbackConfig(center_frequency=1e3, gain=5.0, max_output=1e6)
    fs = 5e4
    rng = np.random.default_rng(0)
    x1 = tone(1.02e3, 0.1, fs, 0.2)
    x2 = rng.standard_normal(x1.size)
    combined = iq_filter(2.0 * x1 - 0.5 * x2, cfg, fs)
    separate = 2.0 * iq_filter(x1, cfg, fs) - 0.5 * iq_filter(x2, cfg, fs)
    np.testing.assert_allclose(combined, separate, rtol=1e-9, atol=1e-12)


def test_loop_damping_follows_phase_offset(particle, trap):
    scenario = axial_scenario(particle, trap, pressure=1.0, duration=1.0)
    cfg = scenario.feedback.with_gain(10.0)
    coupling = float(trap.coupling(particle)[2])
    ideal = feedback_damping_rate(coupling, 10.0, 1.0, particle.mass, axial_mode(particle, trap))
    args = (particle, trap, scenario.detection)
    assert loop_damping(*args, cfg, 1e6) == pytest.approx(ideal)
    assert loop_damping(*args, cfg.with_phase(cfg.demodulation_phase + 180.0), 1e6) == pytest.approx(-ideal)
    assert loop_damping(*args, cfg.with_phase(cfg.demodulation_phase + 90.0), 1e6) == pytest.approx(0.0, abs=1e-9 * ideal)


def test_steady_state_duration_and_heating_rule():
    assert steady_state_duration(50.0) == pytest.approx(1.0)
    assert steady_state_duration(0.0) == math.inf
    assert steady_state_duration(-3.0) == math.inf
    kT = CONSTANTS.k_B * 300.0
    assert not is_heating(HEATING_FACTOR * kT * 0.99, 300.0)
    assert is_heating(HEATING_FACTOR * kT * 1.01, 300.0)
    assert is_heating(0.0, 300.0, escaped=True)


def test_run_length_reaches_steady_state(particle, trap):
    """Runs are stretched to 50 / (gamma + gamma_fb); anti-damping keeps the scenario duration."""
    scenario = axial_scenario(particle, trap, pressure=1.0, duration=0.1)
    gamma = scenario.gas_damping
    assert scenario.run_length(scenario.feedback) == pytest.approx(50.0 / gamma)
    damped = scenario.feedback.with_gain(gain_for(scenario, gamma))
    assert scenario.run_length(damped) == pytest.approx(25.0 / gamma, rel=1e-6)
    flipped = damped.with_phase(damped.demodulation_phase + 180.0)
    assert scenario.run_length(flipped) == 0.1
    with pytest.raises(ValidationError):
        replace(scenario, max_samples=10**6).run_length(scenario.feedback)


def test_short_run_is_flagged_not_steady(particle, trap):
    scenario = axial_scenario(particle, trap, pressure=1.0, duration=0.01)
    run = scenario.run(scenario.feedback, seed=1)
    assert not run.steady_state
    assert run.temperature > 0
    assert not run.heating


def test_cooling_rejects_mistuned_controller():
    scenario = ExperimentRunner(record=False).cooling_scenario()
    cfg = replace(scenario.feedback, center_frequency=scenario.feedback.center_frequency + 1e3)
    with pytest.raises(ValidationError):
        closed_loop_cool(
            scenario.particle, scenario.trap, scenario.environment, scenario.detection, cfg, 0.01,
            sample_rate=scenario.sample_rate,
        )


def test_antiphase_feedback_flags_heating_and_escape(particle, trap):
    """Anti-damping three times the gas damping throws the particle out; the sweep still reports it."""
    scenario = axial_scenario(particle, trap, pressure=1.0, duration=1.0)
    cfg = scenario.feedback.with_gain(gain_for(scenario, 3.0 * scenario.gas_damping))
    scenario = replace(scenario, feedback=cfg)
    (point,) = phase_scan(scenario, [cfg.demodulation_phase + 180.0])
    assert point.heating
    assert point.escaped
    assert point.temperature > HEATING_FACTOR * 300.0


@pytest.mark.slow
def test_cold_damping_scaling_without_detector_noise(particle, trap):
    """Gain 0 stays at 300 K; gamma_fb = gamma and 3 gamma give T0 gamma / (gamma + gamma_fb) within 20%."""
    scenario = axial_scenario(particle, trap, pressure=1.0, duration=20.0)
    gamma = scenario.gas_damping
    ratios = (0.0, 1.0, 3.0)
    points = gain_sweep(scenario, [gain_for(scenario, r * gamma) for r in ratios])
    for ratio, point in zip(ratios, points):
        assert not point.heating
        assert point.temperature == pytest.approx(300.0 / (1.0 + ratio), rel=0.2)


@pytest.mark.slow
def test_phase_scan_minimum_near_optimal_phase(particle, trap):
    """Scanning in 30 degree steps, the coldest phase lies within 30 degrees of the delay-compensated optimum."""
    scenario = axial_scenario(particle, trap, pressure=7.0, duration=5.0, bandwidth=400.0)
    cfg = scenario.feedback.with_gain(gain_for(scenario, 0.9 * scenario.gas_damping))
    scenario = replace(scenario, feedback=cfg)
    best = cfg.demodulation_phase
    phases = [best + 30.0 * k for k in (-2, -1, 0, 1, 2)]
    points = phase_scan(scenario, phases)
    coldest = phases[int(np.argmin([p.temperature for p in points]))]
    assert abs(coldest - best) <= 30.0 + 1e-9


@pytest.mark.slow
def test_closed_loop_cools_and_antiphase_heats():
    """Gain 150 takes the y mode to 1 K or below; the opposite phase heats it."""
    scenario = ExperimentRunner(record=False).cooling_scenario()
    cooled = scenario.run(scenario.feedback.with_gain(150.0), seed=1)
    assert cooled.steady_state
    assert not cooled.heating
    assert cooled.temperature <= 1.0
    assert cooled.feedback_trace.samples.size == cooled.trajectory.n_samples

    flipped = scenario.feedback.with_gain(150.0).with_phase(scenario.feedback.demodulation_phase + 180.0)
    heated = scenario.run(flipped, seed=1)
    assert heated.heating


@pytest.mark.slow
def test_noisy_gain_sweep_reaches_one_kelvin():
    """With the detector floor 35 dB under the calibration peak the best gain cools below 1 K."""
    scenario = replace(ExperimentRunner(record=False).cooling_scenario(), duration=3.0)
    points = gain_sweep(scenario, [100.0, 150.0, 250.0])
    assert not any(p.heating for p in points)
    assert min(p.temperature for p in points) <= 1.0


@pytest.mark.slow
def test_gain_sweep_independent_of_workers():
    """Seeds are spawned per gain, so the worker count does not change results."""
    scenario = replace(ExperimentRunner(record=False).cooling_scenario(), duration=0.05)
    serial = gain_sweep(scenario, [50.0, 150.0], workers=1)
    parallel = gain_sweep(scenario, [50.0, 150.0], workers=2)
    assert [p.temperature for p in serial] == [p.temperature for p in parallel]
