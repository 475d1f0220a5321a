"""Graph-based runtime prediction and dynamic scaling for iterative dataflow jobs."""

from .bell import BellModel, ComponentBell, select_model
from .controller import EnelController, BellController, SafetyConfig, ScalingDecision, choose_scaleout
from .encoding import ContextEncoder, build_context_vector, encode_property, train_autoencoder
from .graph import ComponentGraph, JobExecution, SummaryNode, TaskNode, topological_order
from .harness import ExperimentConfig, ExperimentReport, emit_report, load_report, run_experiment
from .model import EnelModel, ModelConfig, fine_tune, forward, train
from .simulator import ClusterEnv, FailurePlan, get_profile, simulate_run

__version__ = "0.1.0"

__all__ = [
    "BellController", "BellModel", "ClusterEnv", "ComponentBell", "ComponentGraph", "ContextEncoder",
    "EnelController", "EnelModel", "ExperimentConfig", "ExperimentReport", "FailurePlan", "JobExecution",
    "ModelConfig", "SafetyConfig", "ScalingDecision", "SummaryNode", "TaskNode", "build_context_vector",
    "choose_scaleout", "emit_report", "encode_property", "fine_tune", "forward", "get_profile", "load_report",
    "run_experiment", "select_model", "simulate_run", "topological_order", "train", "train_autoencoder",
]
