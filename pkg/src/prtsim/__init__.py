"""Dual-engine micro-simulator for personal rapid transit networks."""

from .scenario import Scenario, default_scenario, load_scenario, paper_defaults, save_scenario

__all__ = ["Scenario", "default_scenario", "load_scenario", "paper_defaults", "save_scenario"]
__version__ = "0.1.0"
