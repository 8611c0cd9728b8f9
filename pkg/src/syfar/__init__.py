"""Symmetry-regularized adversarial training and confusion-matrix fairness analysis."""
from .attacks import AttackSpec, RectSpec, run_attack
from .config import RunConfig, load_config
from .confusion import ConfusionMatrix, hard_confusion, merge, soft_confusion
from .data import Dataset, SyntheticSpec, generate_synthetic, load_csv, split
from .metrics import FairnessReport, evaluate
from .nn import Layer, Model
from .subgroup import Partition, subgroup_matrix, theorem_suite, verify_theorem
from .symmetry import SymmetryConfig, pair_penalty, symmetry_loss
from .trainer import SyFARClassifier, TrainConfig, train, train_step

__version__ = "0.1.0"

__all__ = [
    "AttackSpec", "RectSpec", "run_attack",
    "RunConfig", "load_config",
    "ConfusionMatrix", "hard_confusion", "merge", "soft_confusion",
    "Dataset", "SyntheticSpec", "generate_synthetic", "load_csv", "split",
    "FairnessReport", "evaluate",
    "Layer", "Model",
    "Partition", "subgroup_matrix", "theorem_suite", "verify_theorem",
    "SymmetryConfig", "pair_penalty", "symmetry_loss",
    "SyFARClassifier", "TrainConfig", "train", "train_step",
]
