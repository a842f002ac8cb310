"""Crossing-safety pipeline for pedestrians who look at their phones.

Map-matched positioning on a sidewalk graph, GPS duty cycling around alert
zones, phone-viewing detection, a simulated device-to-device link to nearby
vehicles and a collision-risk model, tied together by a deterministic
discrete-time simulator.
"""

from .engine import SimReport, Simulation, SimulationError, run
from .geo import AlertZone, GeoPoint, SidewalkGraph, SidewalkSegment, geodetic_distance, moving_distance
from .metrics import Metrics, compute_metrics
from .scenario import ParseError, Scenario, ValidationError, load_scenario, scenario_from_dict

__version__ = "0.1.0"

__all__ = [
    "AlertZone", "GeoPoint", "Metrics", "ParseError", "Scenario", "SidewalkGraph", "SidewalkSegment",
    "SimReport", "Simulation", "SimulationError", "ValidationError", "compute_metrics", "geodetic_distance",
    "load_scenario", "moving_distance", "run", "scenario_from_dict",
]
