"""Desk-scale traffic and driver-stream simulator."""
from .behavior import BEHAVIORS, PROFILES, DriverProfile, DriverScript, make_script
from .face import FaceStream, generate_driver_stream, scenario_streams
from .traffic import ScenarioConfig, SimResult, default_lanes, default_segments, generate_scenario

__all__ = ["BEHAVIORS", "DriverProfile", "DriverScript", "FaceStream", "PROFILES", "ScenarioConfig",
           "SimResult", "default_lanes", "default_segments", "generate_driver_stream", "generate_scenario",
           "make_script", "scenario_streams"]
