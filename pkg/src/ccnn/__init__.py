"""Constrained latent-label training for per-pixel classifiers.

Weak image-level labels become linear constraints on the model's output
distribution; a dual solver projects onto them and the model is fit to
the projection.
"""

from .constraints import ConstraintConfig, ConstraintRow, ConstraintSet, assemble
from .distributions import InvalidInputError, softmax
from .dual_solver import DualState, SolverConfig, solve
from .trainer import Mode, TrainConfig, train

__all__ = [
    "ConstraintConfig",
    "ConstraintRow",
    "ConstraintSet",
    "DualState",
    "InvalidInputError",
    "Mode",
    "SolverConfig",
    "TrainConfig",
    "assemble",
    "softmax",
    "solve",
    "train",
]
