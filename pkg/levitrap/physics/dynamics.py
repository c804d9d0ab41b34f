"""
Time-domain stochastic simulation of the trapped particle.

Per axis the particle obeys

    u'' + gamma u' + (Omega^2/4)(a + 2 q s(t) cos Omega t) u = [F_th + F_ext + F_fb] / m

with s(t) = 1 + delta exp(-t/tau) the optional drive drift. The loop is run
in numba kernels (see ``kernels``) in fixed-size chunks so long runs keep a
bounded noise buffer.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.signal import butter, sosfiltfilt

from ..core.constants import (
    CONSTANTS,
    EPSTEIN_PREFACTOR,
    ESCAPE_DISTANCE_FACTOR,
    MIN_SAMPLES_PER_DRIVE_PERIOD,
)
from ..core.exceptions import InvalidSampleRateError, NonConvergenceError, ValidationError
from ..core.models import (
    DetectionConfig,
    DriveSpec,
    Environment,
    IqFeedbackConfig,
    ParticleSpec,
    TrapConfig,
    axis_index,
)
from . import kernels
from .trap import beta_exact, mathieu_parameters, secular_frequencies

logger = logging.getLogger(__name__)

CHUNK_SIZE = 1 << 18
DEFAULT_MAX_SAMPLES = 200_000_000


@dataclass(frozen=True)
class EnergyLedger:
    """
    Per-axis energy bookkeeping of one run (J).

    ``flows`` columns: bath heat, feedback work, other external work
    (tickler, stray and offset fields), work done by the time-dependent
    RF potential.
    """
    initial_energy: np.ndarray
    final_energy: np.ndarray
    flows: np.ndarray

    @property
    def bath_heat(self) -> np.ndarray:
        return self.flows[:, kernels.LEDGER_BATH]

    @property
    def feedback_work(self) -> np.ndarray:
        return self.flows[:, kernels.LEDGER_FEEDBACK]

    @property
    def external_work(self) -> np.ndarray:
        return self.flows[:, kernels.LEDGER_EXTERNAL]

    @property
    def drive_work(self) -> np.ndarray:
        return self.flows[:, kernels.LEDGER_DRIVE]

    @property
    def energy_change(self) -> np.ndarray:
        return self.final_energy - self.initial_energy

    @property
    def residual(self) -> np.ndarray:
        return self.energy_change - self.flows.sum(axis=1)

    def closure_error(self, axis: Optional[str] = None) -> float:
        """Unaccounted energy relative to the total throughput."""
        rows = slice(None) if axis is None else axis_index(axis)
        scale = np.abs(self.flows[rows]).sum() + np.abs(self.energy_change[rows]).sum()
        if scale == 0:
            return 0.0
        return float(np.abs(self.residual[rows]).sum() / scale)


@dataclass
class SimTrajectory:
    """Sampled motion of one run, block-averaged when ``decimation`` > 1."""
    sample_rate: float  # Hz, of the stored samples
    times: np.ndarray  # s
    positions: np.ndarray  # m, 3 x N
    velocities: np.ndarray  # m/s, 3 x N
    rng_seed: int
    config_snapshot: Dict[str, Any]
    escaped: bool = False
    integration_rate: float = 0.0  # Hz
    decimation: int = 1
    ledger: Optional[EnergyLedger] = None
    detector_voltages: Optional[np.ndarray] = None  # V, 3 x N, closed-loop runs only
    feedback_voltage: Optional[np.ndarray] = None  # V, N, closed-loop runs only

    @property
    def n_samples(self) -> int:
        return self.times.shape[0]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    @property
    def particle(self) -> ParticleSpec:
        return self.config_snapshot["particle"]

    @property
    def trap(self) -> TrapConfig:
        return self.config_snapshot["trap"]


def mean_molecular_speed(env: Environment) -> float:
    """v = sqrt(8 k_B T / (pi m_a))."""
    return math.sqrt(8.0 * CONSTANTS.k_B * env.gas_temperature / (math.pi * env.gas_molecule_mass))


def epstein_damping(particle: ParticleSpec, env: Environment) -> float:
    """Free-molecular gas damping rate gamma = c_E P R^2 / (m v) in 1/s."""
    return EPSTEIN_PREFACTOR * env.pressure * particle.radius**2 / (particle.mass * mean_molecular_speed(env))


def thermal_force_strength(gamma: float, mass: float, temperature: float) -> float:
    """White-noise force intensity D = 2 m gamma k_B T (N^2 s)."""
    if gamma < 0:
        raise ValidationError("gamma", gamma, "gamma >= 0")
    if not temperature > 0:
        raise ValidationError("temperature", temperature, "temperature > 0")
    return 2.0 * mass * gamma * CONSTANTS.k_B * temperature


def apply_stray_drift(env: Environment, t) -> np.ndarray:
    """
    Stray field E(t) = E0 exp(-t/tau) on each axis (V/m).

    Returns shape (3,) for scalar ``t`` and (3, len(t)) for arrays.
    """
    drift = env.stray_drift
    if drift is None:
        raise ValidationError("environment.stray_drift", None, "a stray drift must be configured")
    decay = np.exp(-np.asarray(t, dtype=float) / drift.decay_time)
    return np.multiply.outer(np.asarray(drift.initial_field, dtype=float), decay)


def secular_frequency_drift(
    particle: ParticleSpec,
    trap: TrapConfig,
    env: Environment,
    times,
    axis: str = "z",
    method: str = "exact",
) -> np.ndarray:
    """Secular angular frequency of ``axis`` under V0_eff(t) = V0 (1 + delta exp(-t/tau))."""
    times = np.asarray(times, dtype=float)
    drift = env.stray_drift
    if drift is None or drift.drive_drift == 0:
        scale = np.ones_like(times)
    else:
        scale = 1.0 + drift.drive_drift * np.exp(-times / drift.decay_time)
    idx = axis_index(axis)
    out = np.empty_like(times)
    for k, s in enumerate(scale.flat):
        mp = mathieu_parameters(particle, trap.with_amplitude(trap.drive_amplitude * s))
        out.flat[k] = secular_frequencies(mp, trap.drive_frequency, method)[idx]
    return out


def tickler_response_amplitude(
    coupling: float, voltage: float, mass: float, omega0: float, gamma: float, drive_frequency: float
) -> float:
    """Steady-state displacement amplitude of a damped oscillator driven by kappa V cos(w t)."""
    denom = math.sqrt((omega0**2 - drive_frequency**2) ** 2 + (gamma * drive_frequency) ** 2)
    return abs(coupling) * voltage / (mass * denom)


def tickler_voltage_for_amplitude(
    coupling: float, amplitude: float, mass: float, omega0: float, gamma: float, drive_frequency: float
) -> float:
    """Drive voltage producing a given steady-state amplitude."""
    return amplitude / tickler_response_amplitude(coupling, 1.0, mass, omega0, gamma, drive_frequency)


def resolve_sample_rate(trap: TrapConfig, sample_rate: Optional[float]) -> float:
    minimum = MIN_SAMPLES_PER_DRIVE_PERIOD * trap.drive_frequency_hz
    if sample_rate is None:
        return minimum
    if not sample_rate >= minimum * (1.0 - 1e-12):
        raise InvalidSampleRateError(sample_rate, minimum)
    return float(sample_rate)


def iq_parameters(cfg: IqFeedbackConfig, sample_rate: float) -> np.ndarray:
    """Pack a controller configuration into the kernel parameter vector."""
    dt = 1.0 / sample_rate
    params = np.empty(kernels.IQ_PARAM_SIZE)
    if cfg.ac_coupling_bandwidth > 0:
        params[0] = 1.0 / (1.0 + 2.0 * math.pi * cfg.ac_coupling_bandwidth * dt)
    else:
        params[0] = 1.0
    params[1] = 1.0 - math.exp(-2.0 * math.pi * (cfg.filter_bandwidth / 2.0) * dt)
    params[2] = cfg.gain
    params[3] = math.radians(cfg.demodulation_phase)
    params[4] = 2.0 * math.pi * cfg.center_frequency * dt
    params[5] = cfg.max_output
    return params


def _axis_frequencies(particle: ParticleSpec, trap: TrapConfig) -> np.ndarray:
    """Exact secular frequencies, Omega/2 on axes without a bound secular mode."""
    mp = mathieu_parameters(particle, trap)
    fallback = trap.drive_frequency / 2.0
    omegas = np.full(3, fallback)
    for i, (a, q) in enumerate(mp.axes()):
        try:
            beta = beta_exact(a, q)
        except NonConvergenceError:
            continue
        if beta > 0:
            omegas[i] = beta * trap.drive_frequency / 2.0
    return omegas


def thermal_state(
    particle: ParticleSpec,
    trap: TrapConfig,
    temperature: Union[float, Sequence[float]],
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Draw positions and velocities from the Gibbs distribution of the secular potential.

    ``temperature`` is one value for all axes or one per axis.
    """
    omegas = _axis_frequencies(particle, trap)
    kT_m = CONSTANTS.k_B * np.broadcast_to(np.asarray(temperature, dtype=float), (3,)) / particle.mass
    u = rng.standard_normal(3) * np.sqrt(kT_m) / omegas
    v = rng.standard_normal(3) * np.sqrt(kT_m)
    return u, v


@dataclass
class _Controllers:
    params: np.ndarray = field(default_factory=lambda: np.zeros((0, kernels.IQ_PARAM_SIZE)))
    state: np.ndarray = field(default_factory=lambda: np.zeros((0, kernels.IQ_STATE_SIZE)))
    acc: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    channel: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    ring: np.ndarray = field(default_factory=lambda: np.zeros((0, 1)))
    delay: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def count(self) -> int:
        return self.params.shape[0]


def _build_controllers(
    drive: DriveSpec, particle: ParticleSpec, trap: TrapConfig, sample_rate: float
) -> _Controllers:
    if drive.kind != "feedback":
        return _Controllers()
    cfgs = drive.feedback_source
    ring_size = max(cfg.loop_delay for cfg in cfgs) + 1
    acc = []
    for cfg in cfgs:
        coupling = trap.coupling(particle) if cfg.electrode_coupling is None else np.asarray(cfg.electrode_coupling)
        acc.append(coupling / particle.mass)
    return _Controllers(
        params=np.array([iq_parameters(cfg, sample_rate) for cfg in cfgs]),
        state=np.zeros((len(cfgs), kernels.IQ_STATE_SIZE)),
        acc=np.array(acc, dtype=float),
        channel=np.array([cfg.axis for cfg in cfgs], dtype=np.int64),
        ring=np.zeros((len(cfgs), ring_size)),
        delay=np.array([cfg.loop_delay for cfg in cfgs], dtype=np.int64),
    )


def simulate(
    particle: ParticleSpec,
    trap: TrapConfig,
    env: Environment,
    drive: Optional[DriveSpec] = None,
    duration: float = 1.0,
    sample_rate: Optional[float] = None,
    rng_seed: int = 0,
    *,
    detection: Optional[DetectionConfig] = None,
    thermal_noise: bool = True,
    initial_state: Optional[Tuple[np.ndarray, np.ndarray]] = None,
    initial_temperature: Optional[Union[float, Sequence[float]]] = None,
    decimation: int = 1,
    max_samples: int = DEFAULT_MAX_SAMPLES,
) -> SimTrajectory:
    """
    Integrate the Langevin equation of motion.

    Args:
        particle: levitated particle
        trap: trap drive and geometry
        env: gas bath and optional stray drift
        drive: tickler or closed-loop feedback drive, none by default
        duration: simulated time in s
        sample_rate: integration rate in Hz, at least 50 samples per drive period
        rng_seed: seed of the run's random stream
        detection: detector used inside the feedback loop
        thermal_noise: draw the thermal force and a thermal initial state
        initial_state: explicit (positions, velocities), overrides the thermal draw
        initial_temperature: temperature of the thermal draw (K, scalar or per axis),
            the gas temperature by default
        decimation: store block averages of this many samples
        max_samples: cap on duration * sample_rate

    Returns:
        SimTrajectory, truncated and flagged ``escaped`` if |u| exceeds 100 d
    """
    drive = drive or DriveSpec()
    detection = detection or DetectionConfig()
    if drive.kind != "none":
        particle.require_charge()
    fs = resolve_sample_rate(trap, sample_rate)
    if not duration > 0:
        raise ValidationError("duration", duration, "duration > 0")
    if decimation < 1:
        raise ValidationError("decimation", decimation, "decimation >= 1")
    n_total = int(round(duration * fs))
    if n_total > max_samples:
        raise ValidationError("duration", duration, f"duration*sample_rate <= {max_samples}")
    n_blocks = n_total // decimation
    if n_blocks < 1:
        raise ValidationError("duration", duration, "at least one stored sample")
    n_steps = n_blocks * decimation

    dt = 1.0 / fs
    mp = mathieu_parameters(particle, trap)
    gamma = epstein_damping(particle, env)
    temperature = env.gas_temperature
    rng = np.random.default_rng(rng_seed)

    if initial_state is not None:
        u = np.array(initial_state[0], dtype=float)
        v = np.array(initial_state[1], dtype=float)
    elif thermal_noise:
        start = temperature if initial_temperature is None else initial_temperature
        u, v = thermal_state(particle, trap, start, rng)
    else:
        u, v = np.zeros(3), np.zeros(3)

    damping_factor = math.exp(-gamma * dt)
    kick_sigma = 0.0
    if thermal_noise:
        kick_sigma = math.sqrt(CONSTANTS.k_B * temperature / particle.mass * (1.0 - damping_factor**2))

    stray = env.stray_drift
    decay_rate = 0.0 if stray is None else 1.0 / stray.decay_time
    drive_drift = 0.0 if stray is None else stray.drive_drift
    stray_acc = np.zeros(3) if stray is None else particle.charge * np.asarray(stray.initial_field) / particle.mass
    static_acc = trap.offset_force(particle) / particle.mass

    tickle_acc = np.zeros(3)
    tickle_omega = 0.0
    if drive.kind == "tickler":
        idx = axis_index(drive.axis)
        tickle_acc[idx] = trap.coupling(particle)[idx] * drive.amplitude / particle.mass
        tickle_omega = drive.frequency

    ctrl = _build_controllers(drive, particle, trap, fs)
    gain_matrix = detection.gain_matrix()
    det_sigma = math.sqrt(detection.noise_floor * fs / 2.0)
    a = np.asarray(mp.a, dtype=float)
    q = np.asarray(mp.q, dtype=float)

    positions = np.zeros((3, n_blocks))
    velocities = np.zeros((3, n_blocks))
    detector = np.zeros((3, n_blocks))
    feedback = np.zeros(n_blocks)
    flows = np.zeros((3, kernels.LEDGER_SIZE))
    e_start = np.zeros(3)
    kernels.trap_energy(u, v, 0.0, a, q, trap.drive_frequency, particle.mass, drive_drift, decay_rate, e_start)

    logger.info(
        f"Simulating {n_steps} steps at {fs:.6g} Hz (q_z={mp.q_z:.4f}, gamma={gamma:.4g} 1/s, "
        f"drive={drive.kind}, seed={rng_seed})"
    )

    chunk = max(decimation, (CHUNK_SIZE // decimation) * decimation)
    zeros = np.zeros((3, chunk))
    escape_distance = ESCAPE_DISTANCE_FACTOR * trap.characteristic_distance
    done = 0
    recorded = 0
    escaped = False
    while done < n_steps:
        n = min(chunk, n_steps - done)
        bath_noise = rng.standard_normal((3, n)) if thermal_noise else zeros
        if ctrl.count and det_sigma > 0:
            detector_noise = det_sigma * rng.standard_normal((3, n))
        else:
            detector_noise = zeros
        b0 = done // decimation
        b1 = b0 + n // decimation
        steps, escaped = kernels.integrate_chunk(
            u, v, done, n, dt,
            trap.drive_frequency, a, q, drive_drift, decay_rate,
            damping_factor, kick_sigma, particle.mass,
            static_acc, stray_acc, tickle_acc, tickle_omega,
            gain_matrix, detection.quadratic_coefficient,
            ctrl.params, ctrl.state, ctrl.acc, ctrl.channel, ctrl.ring, ctrl.delay,
            bath_noise, detector_noise, escape_distance, decimation,
            positions[:, b0:b1], velocities[:, b0:b1], detector[:, b0:b1], feedback[b0:b1], flows,
        )
        done += steps
        recorded = b0 + steps // decimation
        if escaped:
            break

    e_end = np.zeros(3)
    kernels.trap_energy(u, v, done * dt, a, q, trap.drive_frequency, particle.mass, drive_drift, decay_rate, e_end)
    if escaped:
        logger.warning(f"Particle escaped after {done * dt:.6g} s (|u| > {escape_distance:g} m)")

    times = (np.arange(recorded) * decimation + (decimation - 1) / 2.0) * dt
    closed_loop = ctrl.count > 0
    return SimTrajectory(
        sample_rate=fs / decimation,
        times=times,
        positions=positions[:, :recorded].copy() if escaped else positions,
        velocities=velocities[:, :recorded].copy() if escaped else velocities,
        rng_seed=rng_seed,
        config_snapshot={
            "particle": particle,
            "trap": trap,
            "environment": env,
            "drive": drive,
            "detection": detection,
            "thermal_noise": thermal_noise,
            "duration": duration,
        },
        escaped=escaped,
        integration_rate=fs,
        decimation=decimation,
        ledger=EnergyLedger(initial_energy=e_start, final_energy=e_end, flows=flows),
        detector_voltages=detector[:, :recorded] if closed_loop else None,
        feedback_voltage=feedback[:recorded] if closed_loop else None,
    )


def run_tickler(
    particle: ParticleSpec,
    trap: TrapConfig,
    env: Environment,
    axis: str,
    drive_voltage: float,
    drive_frequency: float,
    duration: float = 1.0,
    sample_rate: Optional[float] = None,
    rng_seed: int = 0,
    **kwargs,
) -> SimTrajectory:
    """Simulate with a sinusoidal tickler voltage on one electrode axis."""
    drive = DriveSpec(kind="tickler", frequency=drive_frequency, amplitude=drive_voltage, axis=axis)
    return simulate(particle, trap, env, drive, duration, sample_rate, rng_seed, **kwargs)


def _lowpass(traj: SimTrajectory, data: np.ndarray, cutoff: Optional[float]) -> np.ndarray:
    if cutoff is None:
        cutoff = traj.trap.drive_frequency_hz / 4.0
    cutoff = min(cutoff, 0.4 * traj.sample_rate)
    sos = butter(4, cutoff, btype="low", fs=traj.sample_rate, output="sos")
    # escaped runs can be shorter than the default pad
    padlen = min(3 * (2 * sos.shape[0] + 1), max(data.shape[-1] - 1, 0))
    return sosfiltfilt(sos, data, axis=-1, padlen=padlen)


def _block_gain(traj: SimTrajectory, omega: float) -> float:
    """Amplitude response of the stored block averages at ``omega``."""
    if traj.decimation == 1:
        return 1.0
    return float(np.sinc(omega / (2.0 * math.pi) / traj.sample_rate))


def secular_energy(traj: SimTrajectory, axis: str, cutoff: Optional[float] = None) -> np.ndarray:
    """
    Secular-mode energy per stored sample (J).

    Micromotion is removed with a zero-phase low-pass at ``cutoff`` Hz
    (a quarter of the drive frequency by default).
    """
    idx = axis_index(axis)
    omega = _axis_frequencies(traj.particle, traj.trap)[idx]
    u = _lowpass(traj, traj.positions[idx], cutoff)
    v = _lowpass(traj, traj.velocities[idx], cutoff)
    m = traj.particle.mass
    return (0.5 * m * v**2 + 0.5 * m * omega**2 * u**2) / _block_gain(traj, omega) ** 2


def secular_temperature(
    traj: SimTrajectory, axis: str, start: float = 0.0, cutoff: Optional[float] = None
) -> float:
    """Kinetic temperature m <v_sec^2> / k_B of ``axis`` for samples after ``start`` seconds."""
    idx = axis_index(axis)
    v = _lowpass(traj, traj.velocities[idx], cutoff)
    v = v[traj.times >= start]
    if v.size == 0:
        raise ValidationError("start", start, "start < trajectory duration")
    gain = _block_gain(traj, _axis_frequencies(traj.particle, traj.trap)[idx])
    return float(traj.particle.mass * np.mean(v**2) / CONSTANTS.k_B) / gain**2
