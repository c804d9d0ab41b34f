"""
IQ-demodulation cold-damping controller, closed-loop runs and thermometry.

The controller high-passes its input, demodulates it against a reference at
the centre frequency, low-passes both quadratures and re-modulates with an
adjustable phase. Around the centre frequency it behaves as a narrow
band-pass with a phase knob; at 90 or 270 degrees the output is proportional
to the velocity of a displacement signal.
"""

import logging
import math
import multiprocessing as mp
import os
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..core.constants import CALIBRATION_PRESSURE, CONSTANTS
from ..core.exceptions import ValidationError
from ..core.models import (
    DetectionConfig,
    DriveSpec,
    Environment,
    IqFeedbackConfig,
    ParticleSpec,
    TrapConfig,
)
from ..physics import kernels
from ..physics.dynamics import (
    DEFAULT_MAX_SAMPLES,
    SimTrajectory,
    epstein_damping,
    iq_parameters,
    resolve_sample_rate,
    secular_energy,
    secular_temperature,
    simulate,
)
from ..physics.trap import mathieu_parameters, secular_frequencies
from .signal import Psd, VoltageTrace, fit_lorentzian, transduce, welch_psd

logger = logging.getLogger(__name__)

HEATING_FACTOR = 10.0
TEMPERATURE_BLOCKS = 8
STEADY_STATE_RELAXATIONS = 50.0
SETTLE_RELAXATIONS = 5.0


@dataclass
class IqState:
    """Filter state of one controller, advanced in sample order."""
    cfg: IqFeedbackConfig
    sample_rate: float
    params: np.ndarray
    values: np.ndarray

    @classmethod
    def start(cls, cfg: IqFeedbackConfig, sample_rate: float) -> "IqState":
        if sample_rate < 20.0 * cfg.center_frequency:
            raise ValidationError("sample_rate", sample_rate, "sample_rate >= 20 * center_frequency")
        return cls(cfg, sample_rate, iq_parameters(cfg, sample_rate), np.zeros(kernels.IQ_STATE_SIZE))

    @property
    def in_phase(self) -> float:
        return float(self.values[2])

    @property
    def quadrature(self) -> float:
        return float(self.values[3])


def iq_step(input_sample: float, state: IqState, cfg: Optional[IqFeedbackConfig] = None) -> float:
    """
    Feed one detector sample through the controller and return its output (V).

    Passing a different ``cfg`` retunes the controller in place; the filter
    memory is kept.
    """
    if cfg is not None and cfg != state.cfg:
        state.cfg = cfg
        state.params = iq_parameters(cfg, state.sample_rate)
    return kernels.iq_update(float(input_sample), state.values, state.params)


def iq_filter(
    samples: np.ndarray, cfg: IqFeedbackConfig, sample_rate: float, state: Optional[IqState] = None
) -> np.ndarray:
    """Run ``iq_step`` over a whole record."""
    state = state or IqState.start(cfg, sample_rate)
    out = np.empty(len(samples))
    kernels.iq_filter_block(np.asarray(samples, dtype=float), state.values, state.params, out)
    return out


def feedback_damping_rate(coupling: float, gain: float, conversion: float, mass: float, omega: float) -> float:
    """Extra damping kappa g c / (m omega) of an ideal velocity-phase loop (1/s)."""
    return coupling * gain * conversion / (mass * omega)


def gain_for_damping(gamma_fb: float, coupling: float, conversion: float, mass: float, omega: float) -> float:
    return gamma_fb * mass * omega / (coupling * conversion)


def cold_damping_temperature(
    gamma: float,
    gamma_fb: float,
    temperature: float,
    mass: float = 0.0,
    coupling: float = 0.0,
    gain: float = 0.0,
    noise_floor: float = 0.0,
) -> float:
    """
    Steady-state mode temperature under cold damping.

    T = (4 m k_B gamma T0 + kappa^2 g^2 S_n) / (4 m k_B (gamma + gamma_fb));
    the second numerator term is the detector noise fed back as force noise.
    """
    if gamma + gamma_fb <= 0:
        raise ValidationError("gamma + gamma_fb", gamma + gamma_fb, "total damping > 0")
    kB = CONSTANTS.k_B
    noise = 0.0
    if noise_floor > 0:
        noise = (coupling * gain) ** 2 * noise_floor / (4.0 * mass * kB)
    return (gamma * temperature + noise) / (gamma + gamma_fb)


def optimal_phase(cfg: IqFeedbackConfig, sample_rate: float) -> float:
    """
    Demodulation phase (deg) giving pure velocity damping at the centre frequency.

    Adds back the loop delay plus the half-sample hold and removes the
    lead of the AC-coupling high-pass.
    """
    delay = 360.0 * cfg.center_frequency * (cfg.loop_delay + 0.5) / sample_rate
    lead = math.degrees(math.atan2(cfg.ac_coupling_bandwidth, cfg.center_frequency))
    return (270.0 + delay - lead) % 360.0


def loop_damping(
    particle: ParticleSpec, trap: TrapConfig, det: DetectionConfig, cfg: IqFeedbackConfig, sample_rate: float
) -> float:
    """
    Feedback damping of the target mode at the configured phase (1/s).

    The ideal rate scaled by the cosine of the offset from ``optimal_phase``;
    negative when the loop pumps energy in.
    """
    omega = secular_frequencies(mathieu_parameters(particle, trap), trap.drive_frequency, "exact")[cfg.axis]
    coupling = trap.coupling(particle) if cfg.electrode_coupling is None else np.asarray(cfg.electrode_coupling)
    conversion = det.gain_matrix()[cfg.axis, cfg.axis]
    ideal = feedback_damping_rate(float(coupling[cfg.axis]), cfg.gain, conversion, particle.mass, omega)
    offset = math.radians(cfg.demodulation_phase - optimal_phase(cfg, sample_rate))
    return ideal * math.cos(offset)


def steady_state_duration(gamma_total: float) -> float:
    """Run length covering 50 energy relaxation times; infinite without net damping."""
    if gamma_total <= 0:
        return math.inf
    return STEADY_STATE_RELAXATIONS / gamma_total


def is_heating(mean_energy: float, gas_temperature: float, escaped: bool = False) -> bool:
    """A mode heats when it escapes or its secular energy exceeds ten times the bath energy."""
    return escaped or mean_energy > HEATING_FACTOR * CONSTANTS.k_B * gas_temperature


@dataclass(frozen=True)
class ModeTemperature:
    """Temperature of one motional mode."""
    temperature: float  # K
    uncertainty: float  # K
    mode: str
    method: str  # area-ratio | kinetic
    frequency: float = 0.0  # Hz
    heating: bool = False
    escaped: bool = False

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValidationError("temperature", self.temperature, "temperature > 0")
        if not self.uncertainty >= 0:
            raise ValidationError("uncertainty", self.uncertainty, "uncertainty >= 0")

    @property
    def phonon_occupation(self) -> float:
        """Mean occupation k_B T / (hbar omega); zero when the frequency is unknown."""
        if self.frequency <= 0:
            return 0.0
        return CONSTANTS.k_B * self.temperature / (CONSTANTS.hbar * 2.0 * math.pi * self.frequency)


def mode_temperature(
    cooled_psd: Psd,
    calibration_psd: Psd,
    calibration_temperature: float,
    window: Tuple[float, float],
    mode: str = "y",
    model: str = "lorentzian",
) -> ModeTemperature:
    """
    Area-ratio thermometry against a calibration spectrum taken at a known temperature.

    T = T_cal A_cooled / A_cal with floor-subtracted fitted areas; the
    uncertainty is the gap between numeric and fitted cooled areas,
    scaled the same way.
    """
    cooled = fit_lorentzian(cooled_psd, window, model=model)
    cal = fit_lorentzian(calibration_psd, window, model=model)
    temperature = calibration_temperature * cooled.area / cal.area
    uncertainty = abs(cooled.numeric_area - cooled.area) / cal.area * calibration_temperature
    logger.info(
        f"Mode {mode}: T = {temperature:.4g} K +/- {uncertainty:.2g} K "
        f"(area ratio {cooled.area / cal.area:.4g} against {calibration_temperature:g} K)"
    )
    return ModeTemperature(
        temperature=temperature,
        uncertainty=uncertainty,
        mode=mode,
        method="area-ratio",
        frequency=cooled.center_frequency,
    )


@dataclass
class CoolingRun:
    """Outcome of one closed-loop run."""
    trajectory: SimTrajectory
    detector_trace: VoltageTrace
    feedback_trace: VoltageTrace
    heating: bool
    temperature: float  # K, kinetic temperature of the target mode after settling
    temperature_error: float
    mode: str
    mode_frequency: float  # Hz
    settle: float = 0.0  # s
    steady_state: bool = True

    @property
    def ledger(self):
        return self.trajectory.ledger

    @property
    def escaped(self) -> bool:
        return self.trajectory.escaped

    @property
    def phonon_occupation(self) -> float:
        return CONSTANTS.k_B * self.temperature / (CONSTANTS.hbar * 2.0 * math.pi * self.mode_frequency)

    def kinetic_temperature(self) -> ModeTemperature:
        return ModeTemperature(
            temperature=self.temperature,
            uncertainty=self.temperature_error,
            mode=self.mode,
            method="kinetic",
            frequency=self.mode_frequency,
            heating=self.heating,
            escaped=self.escaped,
        )


def _block_temperature(
    traj: SimTrajectory, axis: str, start: float, gamma_total: float
) -> Tuple[float, float]:
    """
    Kinetic temperature after ``start`` and its standard error.

    The error is the larger of the block-mean scatter and the
    correlation-time estimate T sqrt(2 / (gamma_total * span)).
    """
    temperature = secular_temperature(traj, axis, start=start)
    energy = secular_energy(traj, axis)[traj.times >= start]
    means = np.array([c.mean() for c in np.array_split(energy, TEMPERATURE_BLOCKS) if c.size]) / CONSTANTS.k_B
    error = float(np.std(means, ddof=1) / math.sqrt(means.size)) if means.size > 1 else 0.0
    span = energy.size / traj.sample_rate
    if gamma_total > 0 and span > 0:
        error = max(error, temperature * math.sqrt(2.0 / (gamma_total * span)))
    return temperature, error


def closed_loop_cool(
    particle: ParticleSpec,
    trap: TrapConfig,
    env: Environment,
    det: DetectionConfig,
    cfg: IqFeedbackConfig,
    duration: float,
    seed: int = 0,
    *,
    sample_rate: Optional[float] = None,
    settle: Optional[float] = None,
    decimation: int = 1,
    extra_controllers: Sequence[IqFeedbackConfig] = (),
    max_samples: int = DEFAULT_MAX_SAMPLES,
) -> CoolingRun:
    """
    Simulate the particle with the IQ controller closing the loop.

    The target mode starts from the thermal distribution at its predicted
    cold-damping temperature, the other axes at the gas temperature.

    Args:
        particle: levitated particle
        trap: trap, supplies the electrode coupling unless ``cfg`` overrides it
        env: gas bath
        det: in-loop detector
        cfg: controller for the target mode
        duration: run length in s; shorter than 50 / (gamma + gamma_fb) is
            logged and flagged as not steady
        seed: random seed
        sample_rate: integration rate, defaults to the trap minimum
        settle: time excluded from the temperature estimate, by default
            5 / (gamma + gamma_fb) capped at a quarter of the run
        decimation: stored-sample block averaging
        extra_controllers: further controllers on the same electrode
        max_samples: cap on duration * sample_rate

    Returns:
        CoolingRun; ``heating`` follows ``is_heating`` on the last quarter
        of the run
    """
    mp_point = mathieu_parameters(particle, trap)
    omegas = secular_frequencies(mp_point, trap.drive_frequency, method="exact")
    mode_hz = omegas[cfg.axis] / (2.0 * math.pi)
    if abs(cfg.center_frequency - mode_hz) > 2.0 * cfg.filter_bandwidth:
        raise ValidationError(
            "feedback.frequency",
            cfg.center_frequency,
            f"within 2*bandwidth of the {cfg.target_axis} mode at {mode_hz:.6g} Hz",
        )

    fs = resolve_sample_rate(trap, sample_rate)
    gamma = epstein_damping(particle, env)
    gamma_fb = loop_damping(particle, trap, det, cfg, fs)
    gamma_total = gamma + gamma_fb
    required = steady_state_duration(gamma_total)
    steady = duration >= required
    if not steady:
        logger.warning(
            f"{duration:g} s run is shorter than {STEADY_STATE_RELAXATIONS:g} relaxation times "
            f"({required:.3g} s at gamma + gamma_fb = {gamma_total:.4g} 1/s)"
        )

    start_temperatures = [env.gas_temperature] * 3
    if gamma_total > 0:
        coupling = trap.coupling(particle) if cfg.electrode_coupling is None else np.asarray(cfg.electrode_coupling)
        start_temperatures[cfg.axis] = cold_damping_temperature(
            gamma, gamma_fb, env.gas_temperature, particle.mass, float(coupling[cfg.axis]), cfg.gain, det.noise_floor,
        )

    drive = DriveSpec(kind="feedback", axis=cfg.target_axis, feedback_source=(cfg, *extra_controllers))
    traj = simulate(
        particle, trap, env, drive, duration, fs, seed,
        detection=det, initial_temperature=start_temperatures, decimation=decimation, max_samples=max_samples,
    )
    if settle is None:
        settle = duration / 4.0
        if gamma_total > 0:
            settle = min(settle, max(SETTLE_RELAXATIONS / gamma_total, 10.0 / (math.pi * cfg.filter_bandwidth)))

    if traj.n_samples == 0:
        temperature, error, heating = math.inf, math.inf, True
    else:
        # an escaped run keeps whatever it recorded
        start = settle if traj.times[-1] > settle else 0.0
        temperature, error = _block_temperature(traj, cfg.target_axis, start, gamma_total)
        energy = secular_energy(traj, cfg.target_axis)
        tail = energy[traj.times >= 0.75 * traj.times[-1]]
        heating = is_heating(float(tail.mean()), env.gas_temperature, traj.escaped)
    if heating:
        logger.warning(
            f"Feedback on {cfg.target_axis} heats the mode (phase {cfg.demodulation_phase:g} deg, gain {cfg.gain:g})"
        )

    return CoolingRun(
        trajectory=traj,
        detector_trace=VoltageTrace(traj.sample_rate, traj.detector_voltages[cfg.axis], cfg.target_axis),
        feedback_trace=VoltageTrace(traj.sample_rate, traj.feedback_voltage, "feedback"),
        heating=heating,
        temperature=temperature,
        temperature_error=error,
        mode=cfg.target_axis,
        mode_frequency=mode_hz,
        settle=settle,
        steady_state=steady,
    )


@dataclass(frozen=True)
class Calibration:
    """Reference spectrum of a mode in equilibrium with the gas."""
    psd: Psd
    temperature: float  # K


@dataclass(frozen=True)
class CoolingScenario:
    """Everything needed to repeat a closed-loop run at different controller settings."""
    particle: ParticleSpec
    trap: TrapConfig
    environment: Environment
    detection: DetectionConfig
    feedback: IqFeedbackConfig
    duration: float
    sample_rate: Optional[float] = None
    seed: int = 0
    settle: Optional[float] = None
    decimation: int = 1
    window_halfwidth: Optional[float] = None  # Hz, defaults to twice the filter bandwidth
    segment_length: Optional[int] = None
    max_samples: int = DEFAULT_MAX_SAMPLES

    @property
    def window(self) -> Tuple[float, float]:
        half = 2.0 * self.feedback.filter_bandwidth if self.window_halfwidth is None else self.window_halfwidth
        return (self.feedback.center_frequency - half, self.feedback.center_frequency + half)

    @property
    def gas_damping(self) -> float:
        return epstein_damping(self.particle, self.environment)

    @property
    def integration_rate(self) -> float:
        return resolve_sample_rate(self.trap, self.sample_rate)

    def run_length(self, cfg: IqFeedbackConfig) -> float:
        """
        Scenario duration extended to 50 / (gamma + gamma_fb) at ``cfg``.

        Settings without net damping keep the scenario duration.
        """
        gamma_fb = loop_damping(self.particle, self.trap, self.detection, cfg, self.integration_rate)
        required = steady_state_duration(self.gas_damping + gamma_fb)
        if not math.isfinite(required) or required <= self.duration:
            return self.duration
        if required * self.integration_rate > self.max_samples:
            raise ValidationError(
                "duration", required,
                f"steady state at gain {cfg.gain:g} needs more than {self.max_samples} samples",
            )
        return required

    def run(self, cfg: IqFeedbackConfig, seed: int, duration: Optional[float] = None) -> CoolingRun:
        return closed_loop_cool(
            self.particle, self.trap, self.environment, self.detection, cfg, duration or self.duration, seed,
            sample_rate=self.sample_rate, settle=self.settle, decimation=self.decimation,
            max_samples=self.max_samples,
        )


def calibrate(scenario: CoolingScenario, pressure: float = CALIBRATION_PRESSURE, duration: Optional[float] = None) -> Calibration:
    """
    Free-running reference spectrum at ``pressure`` (1.62e-2 mbar by default).

    The run lasts at least 50 damping times at that pressure.
    """
    env = scenario.environment.with_pressure(pressure)
    length = max(duration or scenario.duration, steady_state_duration(epstein_damping(scenario.particle, env)))
    traj = simulate(
        scenario.particle, scenario.trap, env, None, length,
        scenario.sample_rate, scenario.seed, decimation=scenario.decimation, max_samples=scenario.max_samples,
    )
    trace = transduce(traj, scenario.detection, rng_seed=scenario.seed + 1)[scenario.feedback.target_axis]
    return Calibration(psd=welch_psd(trace, scenario.segment_length), temperature=env.gas_temperature)


@dataclass(frozen=True)
class _SweepTask:
    scenario: CoolingScenario
    cfg: IqFeedbackConfig
    seed: int
    detector_seed: int
    calibration: Optional[Calibration] = None
    duration: Optional[float] = None


def _run_sweep_task(task: _SweepTask) -> ModeTemperature:
    """Top-level worker so process pools can pickle it."""
    run = task.scenario.run(task.cfg, task.seed, task.duration)
    if task.calibration is None or run.escaped:
        return run.kinetic_temperature()
    # out-of-loop record of the same motion with an independent detector
    trace = transduce(run.trajectory, task.scenario.detection, rng_seed=task.detector_seed)[run.mode]
    skip = int(round(run.settle * trace.sample_rate))
    cooled = welch_psd(replace(trace, samples=trace.samples[skip:]), task.scenario.segment_length)
    measured = mode_temperature(cooled, task.calibration.psd, task.calibration.temperature, task.scenario.window, run.mode)
    return replace(measured, heating=run.heating)


def _child_seeds(master_seed: int, n: int) -> List[Tuple[int, int]]:
    children = np.random.SeedSequence(master_seed).spawn(n)
    return [tuple(int(s) for s in child.generate_state(2)) for child in children]


def _fan_out(tasks: List[_SweepTask], workers: int) -> List[ModeTemperature]:
    n_workers = min(workers, os.cpu_count() or 1, len(tasks))
    if n_workers <= 1:
        return [_run_sweep_task(t) for t in tasks]
    with mp.Pool(processes=n_workers) as pool:
        return pool.map(_run_sweep_task, tasks)


def gain_sweep(
    scenario: CoolingScenario,
    gains: Sequence[float],
    calibration: Optional[Calibration] = None,
    workers: int = 1,
) -> List[ModeTemperature]:
    """
    Closed-loop temperature at each gain, in input order.

    Every run owns a seed spawned from the scenario seed, so results do
    not depend on ``workers``. Each run is stretched to
    ``CoolingScenario.run_length`` so it reaches steady state. Without a
    calibration the kinetic temperature of the simulated mode is reported.
    """
    seeds = _child_seeds(scenario.seed, len(gains))
    cfgs = [scenario.feedback.with_gain(g) for g in gains]
    tasks = [
        _SweepTask(scenario, cfg, s, d, calibration, scenario.run_length(cfg))
        for cfg, (s, d) in zip(cfgs, seeds)
    ]
    logger.info(f"Gain sweep over {len(tasks)} gains with {workers} worker(s)")
    return _fan_out(tasks, workers)


def phase_scan(
    scenario: CoolingScenario,
    phases: Sequence[float],
    workers: int = 1,
) -> List[ModeTemperature]:
    """
    Kinetic temperature of the target mode at each demodulation phase (deg).

    All phases run for the scenario duration; phases near the anti-damping
    side have no steady state to wait for.
    """
    seeds = _child_seeds(scenario.seed, len(phases))
    tasks = [
        _SweepTask(scenario, scenario.feedback.with_phase(p), s, d)
        for p, (s, d) in zip(phases, seeds)
    ]
    logger.info(f"Phase scan over {len(tasks)} phases with {workers} worker(s)")
    return _fan_out(tasks, workers)
