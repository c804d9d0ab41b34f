# Core Module
# Constants, exceptions, domain models, configuration and report schemas

from .config import LevitrapSettings, SimulationConfig, load_config
from .exceptions import LevitrapError
from .models import DetectionConfig, Environment, IqFeedbackConfig, ParticleSpec, TrapConfig

__all__ = [
    "LevitrapSettings",
    "SimulationConfig",
    "load_config",
    "LevitrapError",
    "DetectionConfig",
    "Environment",
    "IqFeedbackConfig",
    "ParticleSpec",
    "TrapConfig",
]
