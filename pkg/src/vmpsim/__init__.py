"""Discrete-time VM placement simulation with online heuristics, memetic
reconfiguration and scenario-based comparison."""
from .model import (FEDERATED, REJECTED, DatacenterState, PhysicalMachine, PlacementError,
                    ProblemConfig, VirtualMachine, validate_placement)
from .objectives import evaluate, scalarize
from .memetic import MaParams, evolve
from .twophase import SimulationRun, run_simulation

__all__ = ["FEDERATED", "REJECTED", "DatacenterState", "PhysicalMachine", "PlacementError",
           "ProblemConfig", "VirtualMachine", "validate_placement", "evaluate", "scalarize",
           "MaParams", "evolve", "SimulationRun", "run_simulation"]
