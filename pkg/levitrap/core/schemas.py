"""
Pydantic schemas for reports, the run manifest and decoherence batch records.
Reports are built from the analysis dataclasses with ``model_validate(obj)``.
"""

import json
import uuid
from datetime import datetime, timezone
from typing import Annotated, Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, TypeAdapter
from pydantic import ValidationError as PydanticValidationError

from .constants import BULK_DIAMOND_DENSITY, N2_MOLECULE_MASS, ROOM_TEMPERATURE
from .exceptions import ConfigParseError


class Record(BaseModel):
    model_config = ConfigDict(from_attributes=True)


# Run manifest

class RunManifest(Record):
    manifest_id: str = Field(default_factory=lambda: uuid.uuid4().hex)
    command: str
    config_path: Optional[str] = None
    master_seed: int = 0
    output_directory: str
    tool_version: str
    timestamp: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))
    flags: Dict[str, Any] = Field(default_factory=dict)
    status: str = "running"
    outputs: List[str] = Field(default_factory=list)


class ComparisonRow(Record):
    """A computed value shown next to its published reference."""
    quantity: str
    unit: str
    reference: Optional[float]
    computed: Optional[float]


# Characterization

class QmFitReport(Record):
    charge_to_mass: float
    standard_error: float
    scan_points: List[Tuple[float, float]]
    model: str
    q_max: float
    default_geometry: bool = False


class RadiusFitReport(Record):
    slope: float
    slope_error: float
    radius: float
    radius_error: float
    mass: float
    assumed_density: float
    scan_points: List[Tuple[float, float]]
    intercept: float = 0.0
    free_intercept: bool = False
    reliable: bool = True


class LorentzianFitReport(Record):
    center_frequency: float
    linewidth: float
    damping_rate: float
    area: float
    offset: float
    center_frequency_error: float
    linewidth_error: float
    area_error: float
    offset_error: float
    numeric_area: float
    model: str
    window: Tuple[float, float]


class ModeTemperatureReport(Record):
    temperature: float
    uncertainty: float
    mode: str
    method: str
    frequency: float = 0.0
    phonon_occupation: float
    heating: bool = False
    escaped: bool = False


class CoolingReport(Record):
    gain: float
    phase: float
    mode: str
    mode_frequency: float
    temperature: float
    temperature_error: float
    phonon_occupation: float
    heating: bool
    ledger_closure: Optional[float] = None
    predicted_temperature: Optional[float] = None


class SweepReport(Record):
    parameter: str
    points: List[ModeTemperatureReport]
    values: List[float]


class SimulationReport(Record):
    n_samples: int
    sample_rate: float
    integration_rate: float
    decimation: int
    duration: float
    rng_seed: int
    escaped: bool
    ledger_closure: Optional[float] = None
    default_geometry: bool = False


class TicklerReport(Record):
    axis: str
    drive_voltage: float
    drive_frequency: float
    peak_gain_db: float
    predicted_amplitude: float
    measured_amplitude: float
    off_resonance_frequency: float
    off_resonance_voltage_ratio: float


class HeatBalancePoint(Record):
    intensity: float  # W/m^2
    absorption_coefficient: float  # 1/m
    temperature: float  # K


class HeatBalanceReport(Record):
    radiative_constant: float
    anchor_intensity: float
    anchor_absorption_coefficient: float
    anchor_temperature: float
    environment_temperature: float
    provenance: str
    points: List[HeatBalancePoint]


# Decoherence batch records

class GasQueryRecord(Record):
    kind: Literal["gas"]
    pressure: float
    radius: float
    gas_molecule_mass: float = N2_MOLECULE_MASS
    environment_temperature: float = ROOM_TEMPERATURE
    interferometer_time: Optional[float] = None
    budget: float = 1.0


class DpQueryRecord(Record):
    kind: Literal["dp"]
    mass: float
    separation: float
    radius: Optional[float] = None
    density: float = BULK_DIAMOND_DENSITY


class HeatQueryRecord(Record):
    kind: Literal["heat"]
    intensity: float
    anchor_intensity: float
    anchor_absorption_coefficient: float
    anchor_temperature: float
    absorption_coefficient: Optional[float] = None
    environment_temperature: float = ROOM_TEMPERATURE


BatchQuery = Annotated[Union[GasQueryRecord, DpQueryRecord, HeatQueryRecord], Field(discriminator="kind")]
_batch_adapter = TypeAdapter(BatchQuery)


class BatchRecord(Record):
    input: Dict[str, Any]
    result: Dict[str, Optional[float]]
    provenance: str


def parse_batch_line(line: str, number: int, source: str = "<batch>"):
    """Parse one JSON-lines query; malformed lines are configuration errors."""
    try:
        return _batch_adapter.validate_python(json.loads(line))
    except (json.JSONDecodeError, PydanticValidationError) as exc:
        raise ConfigParseError(source, str(exc).splitlines()[0], number) from exc
