"""Swarm controller simulation with place-cell style agents and Oja learning."""
from .analysis import ensemble_stats, phase_order, summarize
from .controller import ControllerParams
from .engine import Engine, SimConfig, SimulationRecord, initialize, run
from .geometry import EnvironmentMap, build_wall_field, line_of_sight, load_environment, parse_environment
from .recordio import read_record, write_record

__version__ = "0.1.0"

__all__ = [
    "ControllerParams",
    "Engine",
    "EnvironmentMap",
    "SimConfig",
    "SimulationRecord",
    "build_wall_field",
    "ensemble_stats",
    "initialize",
    "line_of_sight",
    "load_environment",
    "parse_environment",
    "phase_order",
    "read_record",
    "run",
    "summarize",
    "write_record",
]
