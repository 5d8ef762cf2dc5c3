"""Deterministic round-based simulator for the apportioning protocol."""

from .engines import ENGINES, EpochOutcome, RoundState, make_engine
from .plant import PlantState, irradiance_to_capacity, plant_track, track_all
from .scenario import (
    CapacityProfile,
    Irradiance,
    Scenario,
    ScenarioError,
    load_scenario,
    save_scenario,
    scenario_from_json,
)
from .trace import CSV_HEADER, CsvSink, SimTrace
from .world import (
    CommandFailed,
    SimulationError,
    World,
    run_command_instant,
    run_round,
    run_scenario,
)

__all__ = [
    "ENGINES", "EpochOutcome", "RoundState", "make_engine",
    "PlantState", "irradiance_to_capacity", "plant_track", "track_all",
    "CapacityProfile", "Irradiance", "Scenario", "ScenarioError", "load_scenario",
    "save_scenario", "scenario_from_json",
    "CSV_HEADER", "CsvSink", "SimTrace",
    "CommandFailed", "SimulationError", "World", "run_command_instant", "run_round",
    "run_scenario",
]
