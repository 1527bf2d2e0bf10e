"""Experiment orchestration: workloads, end-to-end pipelines, persistence,
reporting and the command line."""
from .experiment import Experiment, run_experiment
from .experiments import multi_turn_drive
from .pipeline import Channel, capture, capture_many, generate, serve
from .report import report
from .workloads import Workload, World, build_world, gen_workload, workload_kinds

__all__ = [
    "Channel", "Experiment", "Workload", "World", "build_world", "capture", "capture_many",
    "gen_workload", "generate", "multi_turn_drive", "report", "run_experiment", "serve", "workload_kinds",
]
