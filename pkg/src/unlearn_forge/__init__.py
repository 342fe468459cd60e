"""Desk-scale lab for measuring what approximate unlearning leaves behind.

Small float64 MLPs, six unlearning methods (including an orthogonal-feature
method with retained-set replay), membership and class-inference attacks that
fine-tune the victim to expose residual knowledge, evaluation metrics, and
2-D loss-landscape probes, driven by a TOML-configured experiment runner.
"""

from .attacks import AttackReport, mia_lira_scores, mia_up, rea_classwise, rea_samplewise
from .config import ExperimentConfig, load_config
from .data import LabeledDataset, SplitSpec, UnlearnSplit, make_synthetic_benchmark, split_for_unlearning
from .errors import (
    ArtifactNotFoundError,
    ConfigError,
    DivergenceError,
    InvalidInputError,
    UnlearnForgeError,
)
from .landscape import loss_grid, make_plane, project_trajectory
from .metrics import EvalReport, roc_curve, tow, tpr_at_fpr
from .nn import MlpArchitecture, SgdConfig, fit, init_params
from .unlearn import METHODS, UnlearnConfig, UnlearnOutcome, run_unlearning

__version__ = "0.1.0"

__all__ = [
    "METHODS",
    "ArtifactNotFoundError",
    "AttackReport",
    "ConfigError",
    "DivergenceError",
    "EvalReport",
    "ExperimentConfig",
    "InvalidInputError",
    "LabeledDataset",
    "MlpArchitecture",
    "SgdConfig",
    "SplitSpec",
    "UnlearnConfig",
    "UnlearnForgeError",
    "UnlearnOutcome",
    "UnlearnSplit",
    "fit",
    "init_params",
    "load_config",
    "loss_grid",
    "make_plane",
    "make_synthetic_benchmark",
    "mia_lira_scores",
    "mia_up",
    "project_trajectory",
    "rea_classwise",
    "rea_samplewise",
    "roc_curve",
    "run_unlearning",
    "split_for_unlearning",
    "tow",
    "tpr_at_fpr",
]
