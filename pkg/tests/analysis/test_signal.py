"""Unit tests for detection, Welch spectra and lineshape fits."""

import math

import numpy as np
import pytest

from levitrap.core.constants import CONSTANTS
from levitrap.core.exceptions import ModeNotFoundError, MultiplePeaksError, SegmentTooLongError, ValidationError
from levitrap.core.models import DetectionConfig
from levitrap.analysis.signal import (
    Psd,
    VoltageTrace,
    calibrate_conversion,
    default_segment_length,
    demodulate_amplitude,
    fit_lorentzian,
    noise_floor_for_snr,
    resolving_segment_length,
    thermal_peak_height,
    transduce,
    welch_psd,
)
from levitrap.physics.dynamics import SimTrajectory


def lorentzian(f, f0, width, area, offset=0.0):
    half = width / 2.0
    return offset + (area / math.pi) * half / ((f - f0) ** 2 + half**2)


def make_psd(values, frequencies):
    return Psd(frequencies=frequencies, values=values, resolution_bandwidth=1.5, n_averages=16)


def test_welch_psd_of_white_noise():
    """Unit-variance white noise at 1 kHz has a flat one-sided PSD of 2e-3 V^2/Hz."""
    rng = np.random.default_rng(0)
    trace = VoltageTrace(sample_rate=1e3, samples=rng.standard_normal(1 << 16), axis="z")
    psd = welch_psd(trace, segment_length=1024)
    assert np.mean(psd.values[1:-1]) == pytest.approx(2e-3, rel=0.05)
    assert psd.total_power() == pytest.approx(trace.variance, rel=0.05)
    assert psd.bin_width == pytest.approx(1e3 / 1024)
    assert psd.n_averages == 127


def test_welch_psd_rejects_long_segment():
    trace = VoltageTrace(sample_rate=1e3, samples=np.zeros(100), axis="x")
    with pytest.raises(SegmentTooLongError):
        welch_psd(trace, segment_length=128)
    with pytest.raises(ValidationError):
        welch_psd(trace, segment_length=64, overlap=1.0)


def test_default_segment_length_gives_eight_segments():
    assert default_segment_length(1_000_000) == 65536
    assert default_segment_length(10) == 16


def test_voltage_trace_rejects_nan():
    with pytest.raises(ValidationError):
        VoltageTrace(sample_rate=1e3, samples=np.array([0.0, np.nan]), axis="z")


def test_transduce_applies_gain_and_quadratic_term():
    positions = np.vstack([np.linspace(0, 1e-6, 50), np.zeros(50), np.full(50, 2e-6)])
    traj = SimTrajectory(
        sample_rate=1e3, times=np.arange(50) / 1e3, positions=positions,
        velocities=np.zeros((3, 50)), rng_seed=0, config_snapshot={},
    )
    traces = transduce(traj, DetectionConfig(conversion_per_axis=(2.0, 2.0, 3.0)))
    np.testing.assert_allclose(traces["x"].samples, 2.0 * positions[0])
    np.testing.assert_allclose(traces["z"].samples, 6e-6)

    quad = transduce(traj, DetectionConfig(conversion_per_axis=(1e6, 1e6, 1e6), quadratic_coefficient=0.1))
    assert quad["z"].samples[0] == pytest.approx(2.0 + 0.1 * 4.0)


def test_transduce_noise_leaves_motion_untouched():
    positions = np.zeros((3, 1000))
    traj = SimTrajectory(
        sample_rate=1e3, times=np.arange(1000) / 1e3, positions=positions,
        velocities=np.zeros((3, 1000)), rng_seed=0, config_snapshot={},
    )
    traces = transduce(traj, DetectionConfig(noise_floor=2e-3), rng_seed=5)
    assert traces["y"].variance == pytest.approx(1.0, rel=0.15)
    assert np.all(traj.positions == 0.0)


def test_fit_lorentzian_recovers_noiseless_peak():
    f = np.arange(0.0, 2000.0, 1.0)
    psd = make_psd(lorentzian(f, 1000.3, 20.0, 1e-6, 1e-12), f)
    fit = fit_lorentzian(psd, (850.0, 1150.0), check_multiple=False)
    assert fit.center_frequency == pytest.approx(1000.3, abs=0.01)
    assert fit.linewidth == pytest.approx(20.0, rel=1e-3)
    assert fit.damping_rate == pytest.approx(2.0 * math.pi * 20.0, rel=1e-3)
    assert fit.area == pytest.approx(1e-6, rel=1e-3)
    assert fit.peak_height == pytest.approx(2e-6 / (math.pi * 20.0), rel=1e-3)


def test_fit_lorentzian_flags_second_peak():
    f = np.arange(0.0, 2000.0, 1.0)
    values = lorentzian(f, 950.0, 10.0, 1e-6) + lorentzian(f, 1050.0, 10.0, 1e-6) + 1e-12
    with pytest.raises(MultiplePeaksError) as exc_info:
        fit_lorentzian(make_psd(values, f), (900.0, 1100.0))
    assert {round(exc_info.value.primary_hz), round(exc_info.value.second_peak_hz)} == {950, 1050}


def test_fit_lorentzian_needs_points_in_window():
    f = np.arange(0.0, 2000.0, 1.0)
    psd = make_psd(lorentzian(f, 1000.0, 20.0, 1e-6), f)
    with pytest.raises(ModeNotFoundError):
        fit_lorentzian(psd, (1000.0, 1004.0))
    with pytest.raises(ValidationError):
        fit_lorentzian(psd, (900.0, 1100.0), model="gaussian")


def test_calibrate_conversion_inverts_equipartition():
    mass, omega, temperature = 9.6e-18, 2.0 * math.pi * 6e3, 300.0
    variance = 4.0 * CONSTANTS.k_B * temperature / (mass * omega**2)
    assert calibrate_conversion(variance, temperature, mass, omega) == pytest.approx(0.5)
    with pytest.raises(ValidationError):
        calibrate_conversion(0.0, temperature, mass, omega)


def test_thermal_peak_and_noise_floor():
    peak = thermal_peak_height(1.0, 300.0, 9.6e-18, 2.0 * math.pi * 6e3, 46.3)
    area = CONSTANTS.k_B * 300.0 / (9.6e-18 * (2.0 * math.pi * 6e3) ** 2)
    assert peak == pytest.approx(2.0 * area / (math.pi * 46.3 / (2.0 * math.pi)))
    assert noise_floor_for_snr(1.0, 30.0) == pytest.approx(1e-3)


def test_demodulate_amplitude():
    t = np.arange(1000) / 1e3
    samples = 0.3 * np.cos(2.0 * math.pi * 50.0 * t + 0.4) + 0.1 * np.cos(2.0 * math.pi * 120.0 * t)
    assert demodulate_amplitude(samples, 1e3, 50.0) == pytest.approx(0.3, rel=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_fit_lorentzian_on_averaged_periodogram(seed):
    """A 200-average periodogram scatters each bin by about 7%; the width stays within 10%."""
    rng = np.random.default_rng(seed)
    f = np.arange(0.0, 2000.0, 1.0)
    clean = lorentzian(f, 1000.0, 20.0, 1e-6, 1e-11)
    psd = Psd(frequencies=f, values=clean * rng.gamma(200.0, 1.0 / 200.0, f.size), resolution_bandwidth=1.5, n_averages=200)
    fit = fit_lorentzian(psd, (900.0, 1100.0))
    assert fit.linewidth == pytest.approx(20.0, rel=0.1)
    assert fit.center_frequency == pytest.approx(1000.0, abs=1.0)
    assert fit.area == pytest.approx(1e-6, rel=0.1)


def test_fit_lorentzian_narrow_line_seeded_off_peak():
    """A line a few bins wide, offset from the bin grid, still fits from the half-maximum seed."""
    f = np.arange(0.0, 2000.0, 1.0)
    psd = make_psd(lorentzian(f, 1000.5, 3.0, 1e-6, 1e-12), f)
    fit = fit_lorentzian(psd, (800.0, 1200.0))
    assert fit.linewidth == pytest.approx(3.0, rel=1e-3)
    assert fit.center_frequency == pytest.approx(1000.5, abs=0.01)


def test_resolving_segment_length():
    # 10 x 1.5 bins x 1e4 Hz / 1 Hz = 150000 samples, next power of two
    assert resolving_segment_length(10_000_000, 1e4, 1.0) == 262144
    # capped at a quarter of the record
    assert resolving_segment_length(100_000, 1e4, 1.0) == 16384
    assert resolving_segment_length(1_000_000, 1e4, 1000.0) == 256
    with pytest.raises(ValidationError):
        resolving_segment_length(1000, 1e4, 0.0)
