"""
Decoherence and thermal budgets.

- Gas-collision decoherence rate and the pressure needed for a given
  interferometer time
- Gravitational self-energy of a spatial superposition and its collapse
  lifetime
- Internal temperature of a particle heated by a laser and cooled by
  thermal emission (T^6 law)
"""

import json
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

from ..core.constants import BULK_DIAMOND_DENSITY, CONSTANTS, N2_MOLECULE_MASS, ROOM_TEMPERATURE
from ..core.exceptions import DomainError, ValidationError
from ..core.models import ParticleSpec
from ..core.schemas import BatchRecord, parse_batch_line

logger = logging.getLogger(__name__)

CLOSED_FORM = "closed-form"
CALIBRATED_MODEL = "calibrated-model"

_GAS_PREFACTOR = 16.0 * math.pi * math.sqrt(2.0 * math.pi) / math.sqrt(3.0)


@dataclass(frozen=True)
class GasDecoherenceQuery:
    pressure: float  # Pa
    radius: float  # m
    gas_molecule_mass: float = N2_MOLECULE_MASS  # kg
    environment_temperature: float = ROOM_TEMPERATURE  # K

    def __post_init__(self):
        if not self.pressure >= 0:
            raise ValidationError("pressure", self.pressure, "pressure >= 0")
        for name in ("radius", "gas_molecule_mass", "environment_temperature"):
            if not getattr(self, name) > 0:
                raise ValidationError(name, getattr(self, name), f"{name} > 0")


@dataclass(frozen=True)
class DpQuery:
    """Superposition of a homogeneous sphere over a separation."""
    mass: float  # kg
    radius: float  # m
    separation: float  # m

    def __post_init__(self):
        if not self.mass > 0:
            raise ValidationError("mass", self.mass, "mass > 0")
        if not self.radius > 0:
            raise ValidationError("radius", self.radius, "radius > 0")
        if not self.separation >= 0:
            raise ValidationError("separation", self.separation, "separation >= 0")

    @classmethod
    def from_density(cls, mass: float, separation: float, density: float = BULK_DIAMOND_DENSITY) -> "DpQuery":
        if not density > 0:
            raise ValidationError("density", density, "density > 0")
        radius = (3.0 * mass / (4.0 * math.pi * density)) ** (1.0 / 3.0)
        return cls(mass=mass, radius=radius, separation=separation)

    @property
    def overlap_parameter(self) -> float:
        return self.separation / (2.0 * self.radius)


@dataclass(frozen=True)
class HeatAnchor:
    """Operating point where laser heating and radiative cooling are known to balance."""
    intensity: float  # W/m^2
    absorption_coefficient: float  # 1/m
    balance_temperature: float  # K
    environment_temperature: float = ROOM_TEMPERATURE  # K


@dataclass(frozen=True)
class HeatBalanceModel:
    """Absorbed power alpha V I against emitted power kappa V (T^6 - T_env^6)."""
    absorption_coefficient: float  # 1/m
    radiative_constant: float  # W/(m^3 K^6)
    environment_temperature: float = ROOM_TEMPERATURE  # K
    provenance: str = CALIBRATED_MODEL

    def __post_init__(self):
        if not self.absorption_coefficient >= 0:
            raise ValidationError("absorption_coefficient", self.absorption_coefficient, "alpha >= 0")
        if not self.radiative_constant > 0:
            raise ValidationError("radiative_constant", self.radiative_constant, "kappa_rad > 0")
        if not self.environment_temperature > 0:
            raise ValidationError("environment_temperature", self.environment_temperature, "T_env > 0")

    @classmethod
    def from_anchor(cls, anchor: HeatAnchor, absorption_coefficient: Optional[float] = None) -> "HeatBalanceModel":
        """Calibrate kappa_rad at ``anchor``, optionally evaluating another absorption coefficient."""
        alpha = anchor.absorption_coefficient if absorption_coefficient is None else absorption_coefficient
        return cls(
            absorption_coefficient=alpha,
            radiative_constant=calibrate_radiative_constant(anchor),
            environment_temperature=anchor.environment_temperature,
        )


def gas_decoherence_rate(q: GasDecoherenceQuery) -> float:
    """Collisional decoherence rate (1/s), linear in P and R^2."""
    thermal = math.sqrt(3.0 * q.gas_molecule_mass * CONSTANTS.k_B * q.environment_temperature)
    return _GAS_PREFACTOR * q.pressure * q.radius**2 / thermal


def min_pressure(
    interferometer_time: float,
    radius: float,
    gas_molecule_mass: float = N2_MOLECULE_MASS,
    environment_temperature: float = ROOM_TEMPERATURE,
    budget: float = 1.0,
) -> float:
    """Pressure (Pa) at which rate * interferometer_time equals ``budget``."""
    if not interferometer_time > 0:
        raise ValidationError("interferometer_time", interferometer_time, "interferometer_time > 0")
    if not budget > 0:
        raise ValidationError("budget", budget, "budget > 0")
    per_pascal = gas_decoherence_rate(
        GasDecoherenceQuery(1.0, radius, gas_molecule_mass, environment_temperature)
    )
    return budget / (interferometer_time * per_pascal)


def dp_overlap_factor(lam: float) -> float:
    """
    Self-energy shape factor of two displaced homogeneous spheres.

    lam is the separation over the diameter; the two branches meet at
    f(1) = 0.7 and f tends to 1.2 for distant branches.
    """
    if lam < 0:
        raise DomainError("dp_overlap_factor", f"lambda={lam:g} must be >= 0")
    if lam <= 1.0:
        return (20.0 * lam**2 - 15.0 * lam**3 + 2.0 * lam**5) / 10.0
    return 1.2 - 0.5 / lam


def dp_self_energy(q: DpQuery) -> float:
    """E_G = (G M^2 / R) f(d / 2R) in J."""
    return CONSTANTS.G * q.mass**2 / q.radius * dp_overlap_factor(q.overlap_parameter)


def dp_lifetime(q: DpQuery) -> float:
    """Collapse lifetime hbar / E_G in s; ``math.inf`` when the branches coincide."""
    energy = dp_self_energy(q)
    if energy == 0:
        logger.info("Zero separation: superposition lifetime is unbounded")
        return math.inf
    return CONSTANTS.hbar / energy


def calibrate_radiative_constant(anchor: HeatAnchor) -> float:
    """kappa_rad = alpha I / (T_b^6 - T_env^6) at the anchor point."""
    if not anchor.balance_temperature > anchor.environment_temperature:
        raise ValidationError(
            "balance_temperature", anchor.balance_temperature,
            f"balance_temperature > environment_temperature ({anchor.environment_temperature:g} K)",
        )
    if not anchor.absorption_coefficient > 0 or not anchor.intensity > 0:
        raise ValidationError("anchor", anchor, "intensity > 0 and absorption_coefficient > 0")
    return anchor.absorption_coefficient * anchor.intensity / (
        anchor.balance_temperature**6 - anchor.environment_temperature**6
    )


def internal_temperature_balance(
    intensity: float, particle: Optional[ParticleSpec], model: HeatBalanceModel
) -> float:
    """
    Steady internal temperature T = (T_env^6 + alpha I / kappa_rad)^(1/6).

    The particle volume cancels from both sides of the balance, so
    ``particle`` only supplies the absorption coefficient when the model
    leaves it at zero.
    """
    if not intensity >= 0:
        raise ValidationError("intensity", intensity, "intensity >= 0")
    alpha = model.absorption_coefficient
    if alpha == 0 and particle is not None:
        alpha = particle.absorption_coefficient
    return (model.environment_temperature**6 + alpha * intensity / model.radiative_constant) ** (1.0 / 6.0)


def evaluate_query(record) -> dict:
    """Evaluate one parsed batch record (see ``levitrap.core.schemas``)."""
    if record.kind == "gas":
        query = GasDecoherenceQuery(
            record.pressure, record.radius, record.gas_molecule_mass, record.environment_temperature
        )
        result = {"rate_per_s": gas_decoherence_rate(query)}
        if record.interferometer_time is not None:
            result["min_pressure_pa"] = min_pressure(
                record.interferometer_time, record.radius, record.gas_molecule_mass,
                record.environment_temperature, record.budget,
            )
        return {"result": result, "provenance": CLOSED_FORM}
    if record.kind == "dp":
        if record.radius is not None:
            query = DpQuery(record.mass, record.radius, record.separation)
        else:
            query = DpQuery.from_density(record.mass, record.separation, record.density)
        lifetime = dp_lifetime(query)
        return {
            "result": {
                "radius_m": query.radius,
                "overlap_factor": dp_overlap_factor(query.overlap_parameter),
                "self_energy_j": dp_self_energy(query),
                "lifetime_s": None if math.isinf(lifetime) else lifetime,
            },
            "provenance": CLOSED_FORM,
        }
    anchor = HeatAnchor(
        record.anchor_intensity, record.anchor_absorption_coefficient,
        record.anchor_temperature, record.environment_temperature,
    )
    model = HeatBalanceModel.from_anchor(anchor, record.absorption_coefficient)
    return {
        "result": {
            "temperature_k": internal_temperature_balance(record.intensity, None, model),
            "radiative_constant": model.radiative_constant,
        },
        "provenance": model.provenance,
    }


def evaluate_batch(lines: Iterable[str]) -> Iterator[str]:
    """
    JSON-lines batch mode: one query per input line, one record per output line.

    Each output echoes the input next to its result and provenance tag.
    Blank lines are skipped.
    """
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        record = parse_batch_line(line, number)
        evaluated = evaluate_query(record)
        out = BatchRecord(input=record.model_dump(), **evaluated)
        yield json.dumps(out.model_dump(), allow_nan=False)
