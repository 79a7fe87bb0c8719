"""Non-equilibrium steady states of two-ensemble quantum thermal machines."""

from .model import Config, Mode, Scenario, ScenarioError, Variant, parse_config, parse_scenario
from .thermo import Currents, CoherenceMetrics, Regime, RegimeReport

__all__ = [
    "Config", "Mode", "Scenario", "ScenarioError", "Variant", "parse_config", "parse_scenario",
    "Currents", "CoherenceMetrics", "Regime", "RegimeReport",
]
__version__ = "0.1.0"
