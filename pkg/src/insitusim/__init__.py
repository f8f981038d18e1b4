"""Simulate in-situ analytics workflows and model their efficiency."""

from .dtl import DTL, POISON, Message, MessageQueue, QueueMode, create_queue
from .engine import Simulation
from .errors import InSituError
from .experiments import Scenario, build_scenario_grid, compare_data_scaling, export_report, run_scenario, run_sweep
from .model import StageCosts, StageModel, classify_scenario, efficiency, extract_stages, idle_time, makespan
from .platform import Platform, load_platform, make_cluster
from .workflow import InSituWorkflow, Mapping, WorkflowConfig, generate_ratio_allocations, load_mapping

__version__ = "0.1.0"

__all__ = [
    "DTL", "POISON", "Message", "MessageQueue", "QueueMode", "create_queue", "Simulation", "InSituError",
    "Scenario", "build_scenario_grid", "compare_data_scaling", "export_report", "run_scenario", "run_sweep",
    "StageCosts", "StageModel", "classify_scenario", "efficiency", "extract_stages", "idle_time", "makespan",
    "Platform", "load_platform", "make_cluster", "InSituWorkflow", "Mapping", "WorkflowConfig",
    "generate_ratio_allocations", "load_mapping",
]
