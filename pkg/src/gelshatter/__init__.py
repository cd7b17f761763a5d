"""Stochastic gel-shatter cycles in finite coalescence/fragmentation systems."""
from gelshatter.observables import SizeHistogram
from gelshatter.population import ClusterPopulation, SimulationConfig
from gelshatter.engine import Simulation, Trajectory, run, run_ensemble

__version__ = "0.1.0"

__all__ = [
    "ClusterPopulation",
    "Simulation",
    "SimulationConfig",
    "SizeHistogram",
    "Trajectory",
    "run",
    "run_ensemble",
]
