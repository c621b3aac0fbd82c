from .engine import AllocationPolicy, Customer, Simulation, SimulationError
from .rng import RngStreams

__all__ = ["AllocationPolicy", "Customer", "RngStreams", "Simulation", "SimulationError"]
