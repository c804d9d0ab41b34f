"""
levitrap command line.

Each subcommand wraps one pipeline, writes its artifacts next to a run
manifest and prints the published reference value next to the computed one.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from dotenv import load_dotenv
from pydantic import ValidationError as PydanticValidationError

from ..core.config import LevitrapSettings, apply_overrides, read_raw_config
from ..core.exceptions import EXIT_OK, EXIT_VALIDATION, ConfigParseError, LevitrapError
from ..core.schemas import ComparisonRow, DpQueryRecord, GasQueryRecord
from ..physics.decohere import HeatAnchor
from .runner import REFERENCE_ANCHOR, CommandResult, ExperimentRunner

logger = logging.getLogger(__name__)

W_PER_MM2 = 1e6
PER_CM = 100.0


def parse_sweep(items: Sequence[str]) -> Dict[str, List[float]]:
    """``key=v1,v2,...`` items into a key -> values mapping."""
    sweep: Dict[str, List[float]] = {}
    for item in items:
        key, sep, values = item.partition("=")
        if not sep or not values:
            raise ConfigParseError("--sweep", f"expected key=v1,v2,..., got '{item}'")
        try:
            sweep[key.strip()] = [float(v) for v in values.split(",")]
        except ValueError:
            raise ConfigParseError("--sweep", f"non-numeric value in '{item}'") from None
    return sweep


def _load_raw(path: Optional[str], overrides: Sequence[str]) -> Optional[Dict[str, float]]:
    if path is None:
        if overrides:
            raise ConfigParseError("--set", "overrides need --config")
        return None
    return apply_overrides(read_raw_config(path), overrides)


def format_comparisons(rows: Sequence[ComparisonRow]) -> str:
    lines = [f"{'quantity':<40} {'reference':>14} {'computed':>14}  unit"]
    for row in rows:
        ref = "-" if row.reference is None else f"{row.reference:.6g}"
        val = "-" if row.computed is None else f"{row.computed:.6g}"
        lines.append(f"{row.quantity:<40} {ref:>14} {val:>14}  {row.unit}")
    return "\n".join(lines)


def build_parser(settings: LevitrapSettings) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="levitrap", description="Levitated nanodiamond trap simulation and analysis")
    parser.add_argument("--out", "-o", default=settings.output_dir, help="Output folder (LEVITRAP_OUTPUT_DIR)")
    parser.add_argument("--seed", type=int, default=None, help="Master random seed")
    parser.add_argument("--log-level", default=settings.log_level, help="Logging level (LEVITRAP_LOG_LEVEL)")
    parser.add_argument("--no-ledger", action="store_true", help="Do not record the run in the sqlite ledger")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Free Langevin simulation from a config file")
    p.add_argument("config", help="Key-value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="Override a config value")
    p.add_argument("--duration", type=float, default=None, help="Run length in s")
    p.add_argument("--sweep", action="append", default=[], metavar="KEY=V1,V2", help="Sweep a config key")
    p.add_argument("--workers", type=int, default=1, help="Parallel processes for sweeps")

    p = sub.add_parser("psd", help="Detector PSD of a stored trajectory")
    p.add_argument("trajectory", help="trajectory.npz written by simulate")
    p.add_argument("--config", default=None, help="Config supplying the detection settings")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--axis", default="z", choices=["x", "y", "z"])
    p.add_argument("--segment", type=int, default=None, help="Welch segment length in samples")
    p.add_argument("--fit", type=float, nargs=2, default=None, metavar=("LO_HZ", "HI_HZ"), help="Fit window")

    p = sub.add_parser("fit-qm", help="Charge-to-mass from an axial frequency vs drive amplitude scan")
    p.add_argument("scan", nargs="?", default=None, help="CSV with v0_volt, omega_z_rad_s columns")
    p.add_argument("--config", default=None, help="Config supplying the trap geometry")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--model", default="approx", choices=["approx", "exact"])
    p.add_argument("--synthetic", action="store_true", help="Generate the scan by simulation")
    p.add_argument("--qm", type=float, default=75.0, help="Ground-truth Q/m in C/kg for --synthetic")
    p.add_argument("--snr-db", type=float, default=30.0)

    p = sub.add_parser("fit-mass", help="Radius and mass from a damping vs pressure scan")
    p.add_argument("scan", nargs="?", default=None, help="CSV with pressure_pa, gamma_per_s columns")
    p.add_argument("--config", default=None, help="Config supplying the gas")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--density", type=float, default=3040.0, help="Assumed density in kg/m^3")
    p.add_argument("--free-intercept", action="store_true")
    p.add_argument("--synthetic", action="store_true", help="Generate the scan by simulation")
    p.add_argument("--snr-db", type=float, default=30.0)

    p = sub.add_parser("cool", help="Closed-loop feedback cooling gain sweep")
    p.add_argument("--config", default=None, help="Config with a feedback section")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--gain", type=float, nargs="+", default=None, help="Controller gains")
    p.add_argument("--phase-scan", type=float, nargs="+", default=None, metavar="DEG")
    p.add_argument("--calibrate", action="store_true", help="Area-ratio thermometry against a calibration run")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("tickle", help="Resonant tickler drive and PSD response")
    p.add_argument("--config", default=None)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--axis", default="z", choices=["x", "y", "z"])
    p.add_argument("--factor", type=float, default=10.0, help="Drive amplitude over thermal rms")
    p.add_argument("--detuning", type=float, default=1.5, help="Off-resonant drive frequency over mode frequency")

    p = sub.add_parser("decohere", help="Collapse lifetime and gas decoherence budgets")
    p.add_argument("--dp", action="store_true", help="Gravitational self-energy and lifetime")
    p.add_argument("--mass", type=float, help="kg")
    p.add_argument("--sep", type=float, help="Superposition size in m")
    p.add_argument("--radius", type=float, default=None, help="m")
    p.add_argument("--density", type=float, default=3500.0, help="kg/m^3, used when --radius is absent")
    p.add_argument("--gas", action="store_true", help="Gas-collision decoherence")
    p.add_argument("--pressure", type=float, default=0.0, help="Pa")
    p.add_argument("--time", type=float, default=None, help="Interferometer time in s")
    p.add_argument("--budget", type=float, default=1.0)
    p.add_argument("--batch", default=None, help="JSON-lines query file")

    p = sub.add_parser("heat-balance", help="Laser heating vs radiative cooling temperature")
    p.add_argument("--intensity", type=float, nargs="+", default=[0.637], help="W/mm^2")
    p.add_argument("--alpha", type=float, nargs="+", default=[0.03, 0.003], help="Absorption coefficients in 1/cm")
    p.add_argument("--anchor-intensity", type=float, default=REFERENCE_ANCHOR.intensity / W_PER_MM2, help="W/mm^2")
    p.add_argument("--anchor-alpha", type=float, default=REFERENCE_ANCHOR.absorption_coefficient / PER_CM, help="1/cm")
    p.add_argument("--anchor-temperature", type=float, default=REFERENCE_ANCHOR.balance_temperature, help="K")
    return parser


def run_command(args: argparse.Namespace, runner: ExperimentRunner) -> CommandResult:
    seed = 0 if args.seed is None else args.seed
    if args.command == "simulate":
        raw = _load_raw(args.config, args.set)
        return runner.simulate(raw, args.config, args.seed, args.duration, parse_sweep(args.sweep), args.workers)
    if args.command == "psd":
        raw = _load_raw(args.config, args.set)
        window = tuple(args.fit) if args.fit else None
        return runner.psd(args.trajectory, raw, args.config, args.axis, args.segment, window, seed)
    if args.command == "fit-qm":
        if args.scan is None and not args.synthetic:
            raise ConfigParseError("fit-qm", "give a scan CSV or --synthetic")
        raw = _load_raw(args.config, args.set)
        return runner.fit_qm(
            args.scan, raw, args.config, args.model, args.synthetic, args.qm, snr_db=args.snr_db, seed=seed
        )
    if args.command == "fit-mass":
        if args.scan is None and not args.synthetic:
            raise ConfigParseError("fit-mass", "give a scan CSV or --synthetic")
        raw = _load_raw(args.config, args.set)
        return runner.fit_mass(
            args.scan, raw, args.config, args.density, args.free_intercept, args.synthetic,
            snr_db=args.snr_db, seed=seed,
        )
    if args.command == "cool":
        raw = _load_raw(args.config, args.set)
        kwargs = {"phases": args.phase_scan, "use_calibration": args.calibrate, "workers": args.workers, "seed": args.seed}
        if args.gain is not None:
            kwargs["gains"] = args.gain
        return runner.cool(raw, args.config, **kwargs)
    if args.command == "tickle":
        raw = _load_raw(args.config, args.set)
        return runner.tickle(raw, args.config, args.axis, args.factor, args.detuning, seed)
    if args.command == "decohere":
        if args.batch:
            path = Path(args.batch)
            if not path.is_file():
                raise ConfigParseError(args.batch, "file does not exist")
            return runner.decohere(batch_lines=path.read_text().splitlines(), batch_path=args.batch)
        if not (args.dp or args.gas):
            raise ConfigParseError("decohere", "choose --dp, --gas or --batch")
        dp = gas = None
        if args.dp:
            dp = DpQueryRecord(kind="dp", mass=args.mass, separation=args.sep, radius=args.radius, density=args.density)
        if args.gas:
            gas = GasQueryRecord(
                kind="gas", pressure=args.pressure, radius=args.radius,
                interferometer_time=args.time, budget=args.budget,
            )
        return runner.decohere(dp=dp, gas=gas)
    anchor = HeatAnchor(
        intensity=args.anchor_intensity * W_PER_MM2,
        absorption_coefficient=args.anchor_alpha * PER_CM,
        balance_temperature=args.anchor_temperature,
    )
    return runner.heat_balance(
        [i * W_PER_MM2 for i in args.intensity], [a * PER_CM for a in args.alpha], anchor
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    """CLI entry point."""
    load_dotenv()
    settings = LevitrapSettings()
    args = build_parser(settings).parse_args(argv)

    logging.basicConfig(
        level=args.log_level.upper(),
        format="%(asctime)s - %(levelname)s - %(name)s - %(message)s",
        handlers=[logging.StreamHandler(sys.stderr)],
        force=True,
    )

    try:
        runner = ExperimentRunner(output_dir=args.out, settings=settings, record=not args.no_ledger)
        result = run_command(args, runner)
    except LevitrapError as e:
        print(f"levitrap {args.command}: {e.detail}", file=sys.stderr)
        return e.exit_code
    except PydanticValidationError as e:
        print(f"levitrap {args.command}: {e}", file=sys.stderr)
        return EXIT_VALIDATION

    print(f"{args.command}: {result.status} (manifest {result.manifest.manifest_id})")
    if result.comparisons:
        print(format_comparisons(result.comparisons))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
