"""Multi-target distributional gradient boosting."""

from .distributions import DistributionSpec, Family, param_count

__version__ = "0.1.0"

__all__ = ["DistributionSpec", "Family", "param_count", "__version__"]
