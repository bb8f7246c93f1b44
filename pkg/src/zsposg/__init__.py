"""Heuristic search for equilibria of finite-horizon zero-sum POSGs over
occupancy states, with exact oracles and exploitability evaluation."""

__version__ = "0.1.0"

from .model import (AOH, BehavioralStrategy, DecisionRule, ModelError, PosgModel,
                    build_random_model, filter_belief, load_model, matching_pennies)
from .occupancy import OccupancyState, initial_occupancy, transition
from .hsvi import SolverConfig, solve
from .eval import best_response, brute_force_nev, exploitability, sflp_oracle

__all__ = [
    "AOH", "BehavioralStrategy", "DecisionRule", "ModelError", "PosgModel",
    "build_random_model", "filter_belief", "load_model", "matching_pennies",
    "OccupancyState", "initial_occupancy", "transition", "SolverConfig", "solve",
    "best_response", "brute_force_nev", "exploitability", "sflp_oracle",
]
