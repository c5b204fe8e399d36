"""Droplet soaking into a bacteria-covered agar plate: particle simulation,
continuum oracle and soaking-rate calibration."""

__version__ = "0.1.0"

from .config import (GrowthParams, DropletSpec, PlateGeometry, SimulationConfig,  # noqa: E402
                     SpeciesParams, concentration_to_si, table_config, validate_config)
from .droplet import SoakingModel  # noqa: E402
from .growth import ConsumptionSchedule, absorption_probability  # noqa: E402

__all__ = [
    "ConsumptionSchedule", "DropletSpec", "GrowthParams", "PlateGeometry",
    "SimulationConfig", "SoakingModel", "SpeciesParams", "absorption_probability",
    "concentration_to_si", "table_config", "validate_config",
]
