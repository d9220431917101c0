"""Fast-slow urban driving stack.

A high-rate potential-field NMPC and trajectory forecaster (fast system)
whose optimal-control problem is reconfigured asynchronously by a low-rate
semantic attention pipeline with retrieval-augmented memory (slow system),
exercised in a self-contained 2D traffic simulator.
"""

from fsdrive.dynamics import ControlInput, DynamicsParams, EgoState, rollout, step

__all__ = ["EgoState", "ControlInput", "DynamicsParams", "step", "rollout"]

__version__ = "0.1.0"
