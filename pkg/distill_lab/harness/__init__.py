"""
Experiment orchestration for the distillation lab.

This package trains teachers, distills students under each method, evaluates
them and assembles comparison reports.
"""

from distill_lab.harness.compare import (
    ComparisonReport,
    compare_methods,
    convergence_comparison,
    expand_methods,
    sweep_margins,
)
from distill_lab.harness.config import ExperimentConfig, load_config
from distill_lab.harness.experiment import distill_student, evaluate_network, train_teacher

__all__ = [
    "ComparisonReport",
    "ExperimentConfig",
    "compare_methods",
    "convergence_comparison",
    "distill_student",
    "evaluate_network",
    "expand_methods",
    "load_config",
    "sweep_margins",
    "train_teacher",
]
