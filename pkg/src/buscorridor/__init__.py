"""Looped signalized-corridor bus simulator with holding, signal-priority and
cruise-speed control, trained by distributed PPO."""
from .corridor import CorridorConfig, PositionKind, ScheduleTable, build_corridor, build_schedule
from .policy import ActorCritic, PolicyController
from .ppo import DPPOTrainer, TrainerConfig
from .scenario import Scenario, load_scenario
from .sim import ControllerKind, SimSettings, Trajectory, simulate

__version__ = "0.1.0"

__all__ = ["ActorCritic", "ControllerKind", "CorridorConfig", "DPPOTrainer", "PolicyController", "PositionKind",
           "Scenario", "ScheduleTable", "SimSettings", "TrainerConfig", "Trajectory", "build_corridor",
           "build_schedule", "load_scenario", "simulate"]
