"""
Experiment runner.

Coordinates one command run:
1. Manifest - created and written before any other output
2. Execute - simulate, analyse and export artifacts tagged with the manifest
3. Record - store status and outputs in the run ledger
"""

import itertools
import logging
import math
import multiprocessing as mp
import os
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel

from .. import __version__
from ..analysis.characterize import (
    fit_charge_to_mass,
    fit_radius,
    synthetic_pressure_scan,
    synthetic_voltage_scan,
)
from ..analysis.feedback import (
    CoolingScenario,
    calibrate,
    cold_damping_temperature,
    feedback_damping_rate,
    gain_sweep,
    optimal_phase,
    phase_scan,
)
from ..analysis.signal import (
    demodulate_amplitude,
    fit_lorentzian,
    noise_floor_for_snr,
    thermal_peak_height,
    transduce,
    welch_psd,
)
from ..core.config import LevitrapSettings, SimulationConfig, apply_overrides, build_config
from ..core.constants import CALIBRATION_PRESSURE, CONSTANTS, NANODIAMOND_DENSITY
from ..core.exceptions import ValidationError
from ..core.models import DetectionConfig, axis_index
from ..core.schemas import (
    BatchRecord,
    ComparisonRow,
    CoolingReport,
    DpQueryRecord,
    GasQueryRecord,
    HeatBalancePoint,
    HeatBalanceReport,
    LorentzianFitReport,
    ModeTemperatureReport,
    QmFitReport,
    RadiusFitReport,
    RunManifest,
    SimulationReport,
    SweepReport,
    TicklerReport,
)
from ..physics.decohere import (
    HeatAnchor,
    HeatBalanceModel,
    evaluate_batch,
    evaluate_query,
    internal_temperature_balance,
)
from ..physics.dynamics import SimTrajectory, epstein_damping, run_tickler, simulate, tickler_voltage_for_amplitude
from ..physics.trap import mathieu_parameters, secular_frequencies
from .exporters import ArtifactExporter, read_scan, read_trajectory
from .ledger import LedgerManager
from .scenarios import (
    COOLING_GAINS,
    COOLING_SNR_DB,
    MASS_SCAN_PRESSURES,
    QM_SCAN_VOLTAGES,
    scenario_config,
)

logger = logging.getLogger(__name__)

# Published values printed next to the computed ones
REFERENCE_CHARGE_TO_MASS = 75.0  # C/kg
REFERENCE_RADIUS = 91e-9  # m
REFERENCE_MASS = 9.6e-18  # kg
REFERENCE_MIN_TEMPERATURE = 0.57  # K
REFERENCE_TICKLER_GAIN_DB = 10.0
REFERENCE_DP_LIFETIME = 0.6  # s
REFERENCE_GAS_PRESSURE_MBAR = 6e-8
REFERENCE_ANCHOR = HeatAnchor(intensity=165e6, absorption_coefficient=3.0, balance_temperature=500.0)

HEAT_BALANCE_GRID_W_PER_MM2 = np.geomspace(0.1, 200.0, 60)

Body = Callable[[ArtifactExporter], Tuple[str, Optional[BaseModel], List[ComparisonRow]]]


@dataclass
class CommandResult:
    """Outcome of one command: manifest, final status and reference comparisons."""
    manifest: RunManifest
    status: str
    report: Optional[BaseModel] = None
    comparisons: List[ComparisonRow] = field(default_factory=list)


@dataclass(frozen=True)
class _SimulateMember:
    raw: Dict[str, float]
    seed: int
    duration: Optional[float]
    manifest: RunManifest


def _simulation_body(config: SimulationConfig, seed: int, duration: Optional[float], max_samples: int) -> Body:
    def body(exporter: ArtifactExporter):
        run = config.run
        traj = simulate(
            config.particle, config.trap, config.environment, None,
            duration or run.duration, run.sample_rate, seed,
            detection=config.detection, decimation=run.decimation, max_samples=max_samples,
        )
        exporter.write_trajectory(traj)
        report = SimulationReport(
            n_samples=traj.n_samples,
            sample_rate=traj.sample_rate,
            integration_rate=traj.integration_rate,
            decimation=traj.decimation,
            duration=traj.duration,
            rng_seed=traj.rng_seed,
            escaped=traj.escaped,
            ledger_closure=traj.ledger.closure_error() if traj.ledger is not None and not traj.escaped else None,
            default_geometry=config.trap.geometry_is_default,
        )
        exporter.write_report("report.json", report)
        q_z = mathieu_parameters(config.particle, config.trap).q_z
        comparisons = [ComparisonRow(quantity="q_z", unit="", reference=0.908, computed=q_z)]
        return ("escaped" if traj.escaped else "ok"), report, comparisons

    return body


def _run_simulate_member(task: _SimulateMember) -> RunManifest:
    """Top-level worker so process pools can pickle it; writes its own directory."""
    manifest = task.manifest
    exporter = ArtifactExporter(manifest.output_directory, manifest)
    exporter.write_manifest()
    body = _simulation_body(build_config(task.raw), task.seed, task.duration, LevitrapSettings().max_samples)
    try:
        status, _, _ = body(exporter)
    except Exception:
        manifest.status = "failed"
        exporter.write_manifest()
        raise
    manifest.status = status
    exporter.write_manifest()
    return manifest


def expand_sweep(sweep: Mapping[str, Sequence[float]]) -> List[List[str]]:
    """Cartesian product of ``key -> values`` as lists of ``key=value`` overrides."""
    keys = list(sweep)
    return [
        [f"{k}={v!r}" for k, v in zip(keys, combo)]
        for combo in itertools.product(*(sweep[k] for k in keys))
    ]


class ExperimentRunner:
    """
    Runs levitrap commands with manifests, exports and a run ledger.

    Usage:
        runner = ExperimentRunner(output_dir="output/fig5")
        result = runner.fit_qm(synthetic=True, charge_to_mass=75)
    """

    def __init__(
        self,
        output_dir: Optional[str] = None,
        settings: Optional[LevitrapSettings] = None,
        ledger: Optional[LedgerManager] = None,
        record: bool = True,
    ):
        self.settings = settings or LevitrapSettings()
        self.output_dir = Path(output_dir or self.settings.output_dir)
        if ledger is None and record:
            url = self.settings.ledger_url_override or f"sqlite:///{self.output_dir.resolve() / 'runs.sqlite'}"
            ledger = LedgerManager(self.settings, url=url)
        self.ledger = ledger

    def _new_manifest(
        self, command: str, seed: int, flags: Mapping, config_path: Optional[str], output_dir: Path
    ) -> RunManifest:
        return RunManifest(
            command=command,
            config_path=config_path,
            master_seed=seed,
            output_directory=str(output_dir),
            tool_version=__version__,
            flags=dict(flags),
        )

    def _record(self, manifest: RunManifest, start: bool) -> None:
        if self.ledger is None:
            return
        if start:
            self.ledger.create_tables()
            self.ledger.record_start(manifest)
        else:
            self.ledger.record_finish(manifest)

    def _execute(
        self,
        command: str,
        seed: int,
        flags: Mapping,
        config_path: Optional[str],
        body: Body,
    ) -> CommandResult:
        logger.info("=" * 60)
        logger.info(f"Starting {command}: {datetime.now()}")
        logger.info("=" * 60)

        manifest = self._new_manifest(command, seed, flags, config_path, self.output_dir)
        exporter = ArtifactExporter(self.output_dir, manifest)
        exporter.write_manifest()
        self._record(manifest, start=True)

        try:
            status, report, comparisons = body(exporter)
        except Exception as e:
            logger.error(f"{command} failed: {e}")
            manifest.status = "failed"
            exporter.write_manifest()
            self._record(manifest, start=False)
            raise

        manifest.status = status
        exporter.write_manifest()
        self._record(manifest, start=False)

        stats = {"command": command, "status": status, "outputs": len(manifest.outputs), "seed": seed}
        logger.info("=" * 60)
        logger.info(f"{command} complete: {stats}")
        logger.info("=" * 60)
        return CommandResult(manifest=manifest, status=status, report=report, comparisons=comparisons)

    # Commands

    def simulate(
        self,
        raw: Dict[str, float],
        config_path: Optional[str] = None,
        seed: Optional[int] = None,
        duration: Optional[float] = None,
        sweep: Optional[Mapping[str, Sequence[float]]] = None,
        workers: int = 1,
    ) -> CommandResult:
        """Free simulation from a config, or a sweep of simulations over config keys."""
        config = build_config(raw)
        seed = config.run.seed if seed is None else seed
        flags = {"duration": duration, "sweep": dict(sweep or {}), "workers": workers}
        if not sweep:
            body = _simulation_body(config, seed, duration, self.settings.max_samples)
            return self._execute("simulate", seed, flags, config_path, body)
        return self._execute("simulate", seed, flags, config_path, self._sweep_body(raw, config_path, seed, duration, sweep, workers))

    def _sweep_body(self, raw, config_path, seed, duration, sweep, workers) -> Body:
        def body(exporter: ArtifactExporter):
            members = expand_sweep(sweep)
            seeds = np.random.SeedSequence(seed).generate_state(len(members))
            tasks = []
            for i, (overrides, member_seed) in enumerate(zip(members, seeds)):
                member_raw = apply_overrides(raw, overrides)
                build_config(member_raw)
                manifest = self._new_manifest(
                    "simulate", int(member_seed), {"overrides": overrides, "sweep_parent": exporter.manifest.manifest_id},
                    config_path, exporter.output_dir / f"member_{i:03d}",
                )
                tasks.append(_SimulateMember(member_raw, int(member_seed), duration, manifest))
                self._record(manifest, start=True)

            n_workers = min(workers, os.cpu_count() or 1, len(tasks))
            logger.info(f"Sweep over {len(tasks)} configurations with {n_workers} worker(s)")
            if n_workers <= 1:
                finished = [_run_simulate_member(t) for t in tasks]
            else:
                with mp.Pool(processes=n_workers) as pool:
                    finished = pool.map(_run_simulate_member, tasks)

            rows = []
            for overrides, manifest in zip(members, finished):
                self._record(manifest, start=False)
                exporter.manifest.outputs.extend(manifest.outputs)
                rows.append({"member": manifest.manifest_id, "overrides": ";".join(overrides), "status": manifest.status})
            exporter.write_frame("sweep.csv", pd.DataFrame(rows))
            status = "ok" if all(r["status"] == "ok" for r in rows) else "escaped"
            return status, None, []

        return body

    def psd(
        self,
        trajectory_path: str,
        raw: Optional[Dict[str, float]] = None,
        config_path: Optional[str] = None,
        axis: str = "z",
        segment_length: Optional[int] = None,
        fit_window: Optional[Tuple[float, float]] = None,
        seed: int = 0,
    ) -> CommandResult:
        """Transduce a stored trajectory, estimate its PSD and optionally fit one resonance."""
        axis_index(axis)

        def body(exporter: ArtifactExporter):
            columns, header = read_trajectory(trajectory_path)
            config = build_config(raw) if raw else None
            traj = SimTrajectory(
                sample_rate=header["sample_rate"],
                times=columns[0],
                positions=columns[1:4],
                velocities=columns[4:7],
                rng_seed=header["seed"],
                config_snapshot={"particle": config.particle, "trap": config.trap} if config else {},
            )
            detection = config.detection if config else DetectionConfig()
            trace = transduce(traj, detection, rng_seed=seed)[axis]
            spectrum = welch_psd(trace, segment_length)
            exporter.write_psd(spectrum)
            if fit_window is None:
                return "ok", None, []
            fit = fit_lorentzian(spectrum, fit_window)
            report = LorentzianFitReport.model_validate(fit)
            exporter.write_report("fit.json", report)
            comparisons = [ComparisonRow(quantity="center_frequency", unit="Hz", reference=None, computed=fit.center_frequency)]
            return "ok", report, comparisons

        flags = {"axis": axis, "segment_length": segment_length, "fit_window": fit_window}
        return self._execute("psd", seed, flags, config_path, body)

    def fit_qm(
        self,
        scan_path: Optional[str] = None,
        raw: Optional[Dict[str, float]] = None,
        config_path: Optional[str] = None,
        model: str = "approx",
        synthetic: bool = False,
        charge_to_mass: float = REFERENCE_CHARGE_TO_MASS,
        voltages: Sequence[float] = QM_SCAN_VOLTAGES,
        snr_db: float = 30.0,
        seed: int = 0,
    ) -> CommandResult:
        """Fit Q/m to a (V0, omega_z) scan read from CSV or generated in-process."""

        def body(exporter: ArtifactExporter):
            overrides = [f"particle.charge_to_mass={charge_to_mass!r}"] if synthetic else []
            config = build_config(apply_overrides(raw, overrides)) if raw else scenario_config("qm-scan", overrides)
            if synthetic:
                points = synthetic_voltage_scan(
                    config.particle, config.trap, config.environment, voltages, config.detection,
                    config.run.duration, config.run.sample_rate, seed, snr_db=snr_db, decimation=config.run.decimation,
                )
            else:
                points = read_scan(scan_path)
            exporter.write_scan("qm_scan.csv", ("v0_volt", "omega_z_rad_s"), points)
            fit = fit_charge_to_mass(points, config.trap, model)
            default_geometry = config.trap.geometry_is_default
            if default_geometry:
                logger.warning("Using default trap geometry (eta=0.8, d=0.5 mm) for the Q/m fit")
            report = QmFitReport.model_validate(fit).model_copy(update={"default_geometry": default_geometry})
            exporter.write_report("qm_fit.json", report)
            comparisons = [
                ComparisonRow(quantity="charge_to_mass", unit="C/kg", reference=REFERENCE_CHARGE_TO_MASS, computed=fit.charge_to_mass)
            ]
            if synthetic:
                comparisons.append(
                    ComparisonRow(quantity="charge_to_mass (ground truth)", unit="C/kg", reference=charge_to_mass, computed=fit.charge_to_mass)
                )
            return "ok", report, comparisons

        flags = {"model": model, "synthetic": synthetic, "scan": scan_path, "snr_db": snr_db}
        return self._execute("fit-qm", seed, flags, config_path, body)

    def fit_mass(
        self,
        scan_path: Optional[str] = None,
        raw: Optional[Dict[str, float]] = None,
        config_path: Optional[str] = None,
        density: float = NANODIAMOND_DENSITY,
        free_intercept: bool = False,
        synthetic: bool = False,
        pressures: Sequence[float] = MASS_SCAN_PRESSURES,
        snr_db: float = 30.0,
        seed: int = 0,
    ) -> CommandResult:
        """Fit radius and mass to a (P, gamma) scan read from CSV or generated in-process."""

        def body(exporter: ArtifactExporter):
            config = build_config(raw) if raw else scenario_config("mass-scan")
            if synthetic:
                points = synthetic_pressure_scan(
                    config.particle, config.trap, config.environment, pressures, config.detection,
                    config.run.duration, config.run.sample_rate, seed, snr_db=snr_db, decimation=config.run.decimation,
                )
            else:
                points = read_scan(scan_path)
            exporter.write_scan("mass_scan.csv", ("pressure_pa", "gamma_per_s"), points)
            fit = fit_radius(points, density, config.environment, free_intercept=free_intercept)
            report = RadiusFitReport.model_validate(fit)
            exporter.write_report("mass_fit.json", report)
            comparisons = [
                ComparisonRow(quantity="radius", unit="m", reference=REFERENCE_RADIUS, computed=fit.radius),
                ComparisonRow(quantity="mass", unit="kg", reference=REFERENCE_MASS, computed=fit.mass),
            ]
            return ("ok" if fit.reliable else "unreliable"), report, comparisons

        flags = {"density": density, "free_intercept": free_intercept, "synthetic": synthetic, "scan": scan_path}
        return self._execute("fit-mass", seed, flags, config_path, body)

    def cooling_scenario(self, raw: Optional[Dict[str, float]] = None, snr_db: float = COOLING_SNR_DB) -> CoolingScenario:
        """
        Closed-loop scenario from a config, or the built-in one.

        The built-in scenario tunes the controller onto the exact mode
        frequency, uses the delay-compensated phase and places the detector
        floor ``snr_db`` below the thermal peak at the calibration pressure.
        """
        if raw:
            config = build_config(raw)
            if config.feedback is None:
                raise ValidationError("feedback", None, "a [feedback] section is required for cooling runs")
            return CoolingScenario(
                config.particle, config.trap, config.environment, config.detection, config.feedback,
                config.run.duration, config.run.sample_rate, config.run.seed, decimation=config.run.decimation,
                max_samples=self.settings.max_samples,
            )

        config = scenario_config("cooling")
        cfg = config.feedback
        fs = config.run.sample_rate
        omega = secular_frequencies(mathieu_parameters(config.particle, config.trap), config.trap.drive_frequency, "exact")[cfg.axis]
        cfg = replace(cfg, center_frequency=omega / (2.0 * math.pi))
        cfg = replace(cfg, demodulation_phase=optimal_phase(cfg, fs))
        gamma_cal = epstein_damping(config.particle, config.environment.with_pressure(CALIBRATION_PRESSURE))
        peak = thermal_peak_height(
            config.detection.conversion_per_axis[cfg.axis], config.environment.gas_temperature,
            config.particle.mass, omega, gamma_cal,
        )
        detection = replace(config.detection, noise_floor=noise_floor_for_snr(peak, snr_db))
        return CoolingScenario(
            config.particle, config.trap, config.environment, detection, cfg,
            config.run.duration, fs, config.run.seed, decimation=config.run.decimation,
            max_samples=self.settings.max_samples,
        )

    def cool(
        self,
        raw: Optional[Dict[str, float]] = None,
        config_path: Optional[str] = None,
        gains: Sequence[float] = COOLING_GAINS,
        phases: Optional[Sequence[float]] = None,
        use_calibration: bool = False,
        workers: int = 1,
        seed: Optional[int] = None,
    ) -> CommandResult:
        """Gain sweep (or phase scan) of the closed loop with predicted cold-damping temperatures."""
        scenario = self.cooling_scenario(raw)
        if seed is not None:
            scenario = replace(scenario, seed=seed)

        def body(exporter: ArtifactExporter):
            cfg = scenario.feedback
            particle, env = scenario.particle, scenario.environment
            omega = 2.0 * math.pi * cfg.center_frequency
            coupling = float(scenario.trap.coupling(particle)[cfg.axis]) if cfg.electrode_coupling is None else cfg.electrode_coupling[cfg.axis]
            conversion = scenario.detection.conversion_per_axis[cfg.axis]
            gamma = scenario.gas_damping

            if phases:
                settings = [(cfg.gain, p % 360.0) for p in phases]
                results = phase_scan(scenario, phases, workers)
                parameter, values = "phase", list(phases)
            else:
                calibration = calibrate(scenario) if use_calibration else None
                settings = [(g, cfg.demodulation_phase) for g in gains]
                results = gain_sweep(scenario, gains, calibration, workers)
                parameter, values = "gain", list(gains)

            reports, rows = [], []
            for (gain, phase), point in zip(settings, results):
                gamma_fb = feedback_damping_rate(coupling, gain, conversion, particle.mass, omega)
                predicted = None
                if not phases and gamma + gamma_fb > 0:
                    predicted = cold_damping_temperature(
                        gamma, gamma_fb, env.gas_temperature, particle.mass, coupling, gain, scenario.detection.noise_floor,
                    )
                heating = point.heating
                if heating:
                    logger.warning(f"Heating at gain {gain:g}, phase {phase:g} deg: T = {point.temperature:.4g} K")
                reports.append(
                    CoolingReport(
                        gain=gain, phase=phase, mode=point.mode, mode_frequency=cfg.center_frequency,
                        temperature=point.temperature, temperature_error=point.uncertainty,
                        phonon_occupation=point.phonon_occupation, heating=heating,
                        predicted_temperature=predicted,
                    )
                )
                rows.append({
                    parameter: gain if parameter == "gain" else phase,
                    "gamma_fb_per_s": gamma_fb,
                    "temperature_k": point.temperature,
                    "uncertainty_k": point.uncertainty,
                    "predicted_k": np.nan if predicted is None else predicted,
                })
            exporter.write_frame(f"{parameter}_sweep.csv", pd.DataFrame(rows))
            sweep_report = SweepReport(
                parameter=parameter, values=values,
                points=[ModeTemperatureReport.model_validate(p) for p in results],
            )
            exporter.write_report("cooling.json", sweep_report)
            for i, r in enumerate(reports):
                exporter.write_report(f"cooling_{i:03d}.json", r)

            coldest = min(reports, key=lambda r: r.temperature)
            comparisons = [
                ComparisonRow(quantity="minimum temperature", unit="K", reference=REFERENCE_MIN_TEMPERATURE, computed=coldest.temperature)
            ]
            status = "heating" if any(r.heating for r in reports) else "ok"
            return status, sweep_report, comparisons

        flags = {"gains": list(gains), "phases": list(phases or []), "calibration": use_calibration, "workers": workers}
        return self._execute("cool", scenario.seed, flags, config_path, body)

    def tickle(
        self,
        raw: Optional[Dict[str, float]] = None,
        config_path: Optional[str] = None,
        axis: str = "z",
        amplitude_factor: float = 10.0,
        detuning: float = 1.5,
        seed: int = 0,
    ) -> CommandResult:
        """
        Resonant tickler sized to ``amplitude_factor`` times the thermal rms.

        Reports the PSD rise at the drive frequency and the voltage an
        equal-amplitude drive needs at ``detuning`` times the mode frequency.
        """
        idx = axis_index(axis)

        def body(exporter: ArtifactExporter):
            config = build_config(raw) if raw else scenario_config("qm-scan")
            particle, trap, env, run = config.particle, config.trap, config.environment, config.run
            omega0 = secular_frequencies(mathieu_parameters(particle, trap), trap.drive_frequency, "exact")[idx]
            gamma = epstein_damping(particle, env)
            coupling = float(trap.coupling(particle)[idx])
            rms = math.sqrt(CONSTANTS.k_B * env.gas_temperature / (particle.mass * omega0**2))
            target = amplitude_factor * rms
            voltage = tickler_voltage_for_amplitude(coupling, target, particle.mass, omega0, gamma, omega0)
            off_voltage = tickler_voltage_for_amplitude(coupling, target, particle.mass, omega0, gamma, detuning * omega0)

            quiet = simulate(particle, trap, env, None, run.duration, run.sample_rate, seed)
            driven = run_tickler(particle, trap, env, axis, voltage, omega0, run.duration, run.sample_rate, seed)
            drive_hz = omega0 / (2.0 * math.pi)
            spectra = []
            for name, traj in (("quiet", quiet), ("driven", driven)):
                trace = transduce(traj, config.detection, rng_seed=seed + 1)[axis]
                spectrum = welch_psd(trace)
                exporter.write_psd(spectrum, f"psd_{name}.csv")
                spectra.append(spectrum)
            gain_db = spectra[1].level_db(drive_hz) - spectra[0].level_db(drive_hz)
            measured = demodulate_amplitude(driven.positions[idx], driven.sample_rate, drive_hz)
            report = TicklerReport(
                axis=axis,
                drive_voltage=voltage,
                drive_frequency=drive_hz,
                peak_gain_db=gain_db,
                predicted_amplitude=target,
                measured_amplitude=measured,
                off_resonance_frequency=detuning * drive_hz,
                off_resonance_voltage_ratio=off_voltage / voltage,
            )
            exporter.write_report("tickler.json", report)
            comparisons = [ComparisonRow(quantity="peak rise", unit="dB", reference=REFERENCE_TICKLER_GAIN_DB, computed=gain_db)]
            return "ok", report, comparisons

        flags = {"axis": axis, "amplitude_factor": amplitude_factor, "detuning": detuning}
        return self._execute("tickle", seed, flags, config_path, body)

    def decohere(
        self,
        dp: Optional[DpQueryRecord] = None,
        gas: Optional[GasQueryRecord] = None,
        batch_lines: Optional[Iterable[str]] = None,
        batch_path: Optional[str] = None,
    ) -> CommandResult:
        """Collapse lifetime, gas decoherence budget, or a JSON-lines batch of queries."""

        def body(exporter: ArtifactExporter):
            if batch_lines is not None:
                exporter.write_lines("results.jsonl", evaluate_batch(batch_lines))
                return "ok", None, []
            comparisons: List[ComparisonRow] = []
            report = None
            for name, query in (("dp", dp), ("gas", gas)):
                if query is None:
                    continue
                evaluated = evaluate_query(query)
                report = BatchRecord(input=query.model_dump(), **evaluated)
                exporter.write_report(f"{name}.json", report)
                result = evaluated["result"]
                if name == "dp":
                    comparisons.append(
                        ComparisonRow(quantity="DP lifetime", unit="s", reference=REFERENCE_DP_LIFETIME, computed=result["lifetime_s"])
                    )
                elif "min_pressure_pa" in result:
                    comparisons.append(
                        ComparisonRow(
                            quantity="minimum pressure", unit="mbar",
                            reference=REFERENCE_GAS_PRESSURE_MBAR, computed=result["min_pressure_pa"] / 100.0,
                        )
                    )
                else:
                    comparisons.append(ComparisonRow(quantity="decoherence rate", unit="1/s", reference=None, computed=result["rate_per_s"]))
            return "ok", report, comparisons

        flags = {
            "dp": dp.model_dump() if dp else None,
            "gas": gas.model_dump() if gas else None,
            "batch": batch_path,
        }
        return self._execute("decohere", 0, flags, None, body)

    def heat_balance(
        self,
        intensities: Sequence[float] = (0.637e6,),
        absorption_coefficients: Sequence[float] = (3.0, 0.3),
        anchor: HeatAnchor = REFERENCE_ANCHOR,
    ) -> CommandResult:
        """Balance temperature curves over 0.1-200 W/mm^2 plus the requested intensities (W/m^2)."""

        def body(exporter: ArtifactExporter):
            grid = sorted(set(float(i) for i in HEAT_BALANCE_GRID_W_PER_MM2 * 1e6) | set(float(i) for i in intensities))
            rows, points = [], []
            anchor_model = HeatBalanceModel.from_anchor(anchor)
            for alpha in absorption_coefficients:
                model = HeatBalanceModel.from_anchor(anchor, alpha)
                for intensity in grid:
                    temperature = internal_temperature_balance(intensity, None, model)
                    rows.append({
                        "intensity_w_per_mm2": intensity / 1e6,
                        "alpha_per_cm": alpha / 100.0,
                        "temperature_k": temperature,
                    })
                    if intensity in intensities:
                        points.append(HeatBalancePoint(intensity=intensity, absorption_coefficient=alpha, temperature=temperature))
            exporter.write_frame("heat_balance.csv", pd.DataFrame(rows))
            report = HeatBalanceReport(
                radiative_constant=anchor_model.radiative_constant,
                anchor_intensity=anchor.intensity,
                anchor_absorption_coefficient=anchor.absorption_coefficient,
                anchor_temperature=anchor.balance_temperature,
                environment_temperature=anchor.environment_temperature,
                provenance=anchor_model.provenance,
                points=points,
            )
            exporter.write_report("heat_balance.json", report)
            comparisons = [
                ComparisonRow(
                    quantity="anchor temperature", unit="K", reference=anchor.balance_temperature,
                    computed=internal_temperature_balance(anchor.intensity, None, anchor_model),
                )
            ]
            for p in points:
                comparisons.append(
                    ComparisonRow(
                        quantity=f"T at {p.intensity / 1e6:g} W/mm^2, alpha {p.absorption_coefficient / 100:g}/cm",
                        unit="K", reference=None, computed=p.temperature,
                    )
                )
            return "ok", report, comparisons

        flags = {"intensities": list(intensities), "absorption_coefficients": list(absorption_coefficients)}
        return self._execute("heat-balance", 0, flags, None, body)
