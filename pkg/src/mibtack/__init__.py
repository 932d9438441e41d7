"""Minimum-budget topology attacks on GNN node classifiers.

Modules:
  graph     -- graph container, SBM generator, file formats
  models    -- GCN/SGC/APPNP forward passes and training
  gradients -- analytic edge-perturbation gradients and the FD oracle
  attack    -- the dynamic-budget PGD attack and its building blocks
  baselines -- rand/DICE/FGA/fixed-budget-PGD comparison attacks
  harness   -- experiments, reports, poisoning, robustness analyses
  backend   -- numba/numpy kernel selection (MIBTACK_BACKEND)
"""

from .attack import AttackConfig, AttackOutcome, jaccard_mask, margin, mibtack
from .baselines import BaselineConfig, run_baseline
from .graph import Graph, SbmParams, generate_sbm, load_graph, save_graph
from .harness import (
    ExperimentConfig,
    Report,
    load_report,
    poison_eval,
    robustness_deciles,
    robustness_vs_degree,
    run_experiment,
    run_gamma_sweep,
    sample_targets,
    save_report,
)
from .models import (
    GnnModel,
    TrainConfig,
    default_train_config,
    forward,
    load_model,
    normalize_adjacency,
    predict_probs,
    save_model,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AttackConfig",
    "AttackOutcome",
    "BaselineConfig",
    "ExperimentConfig",
    "GnnModel",
    "Graph",
    "Report",
    "SbmParams",
    "TrainConfig",
    "default_train_config",
    "forward",
    "generate_sbm",
    "jaccard_mask",
    "load_graph",
    "load_model",
    "load_report",
    "margin",
    "mibtack",
    "normalize_adjacency",
    "poison_eval",
    "predict_probs",
    "robustness_deciles",
    "robustness_vs_degree",
    "run_baseline",
    "run_experiment",
    "run_gamma_sweep",
    "sample_targets",
    "save_graph",
    "save_model",
    "save_report",
    "train",
    "__version__",
]
