"""Second-order gradient boosting over distribution parameters."""

from .config import FitConfig
from .engine import BoostedModel, PredictedDistribution, fit, stabilize
from .offsets import dirichlet_mle, fit_offsets
from .tree import Tree, grow_tree, presort

__all__ = [
    "BoostedModel",
    "FitConfig",
    "PredictedDistribution",
    "Tree",
    "dirichlet_mle",
    "fit",
    "fit_offsets",
    "grow_tree",
    "presort",
    "stabilize",
]
