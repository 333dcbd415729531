"""Digital-twin-assisted multicast short-video resource demand prediction."""

from .abstraction import SwipeCdf, WatchRecord, expected_engagement, recommend
from .config import ScenarioConfig, load_config, parse_config
from .encoder import ConvAutoencoder
from .exceptions import DTMError
from .grouping import GroupCountAgent, KMeansPP, construct_groups
from .predictor import DemandPredictor
from .sim import World, run_scenario
from .udt_store import UDTStore, UserDigitalTwin

__version__ = "0.1.0"

__all__ = [
    "ConvAutoencoder", "DTMError", "DemandPredictor", "GroupCountAgent", "KMeansPP",
    "ScenarioConfig", "SwipeCdf", "UDTStore", "UserDigitalTwin", "WatchRecord", "World",
    "construct_groups", "expected_engagement", "load_config", "parse_config", "recommend",
    "run_scenario",
]
