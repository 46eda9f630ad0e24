"""Distribution heads: parameter layout, links, densities and sampling."""

from .heads import (
    DirichletParams,
    GaussianParams,
    LinkedBatch,
    StudentTParams,
    check_simplex,
    closure_adjust,
    covariance,
    covariance_batch,
    link_apply,
    link_batch,
    linked_values,
    mean,
    mean_batch,
    nll,
    nll_batch,
    sample,
    sample_batch,
)
from .spec import DistributionSpec, Family, param_count

__all__ = [
    "DirichletParams",
    "DistributionSpec",
    "Family",
    "GaussianParams",
    "LinkedBatch",
    "StudentTParams",
    "check_simplex",
    "closure_adjust",
    "covariance",
    "covariance_batch",
    "link_apply",
    "link_batch",
    "linked_values",
    "mean",
    "mean_batch",
    "nll",
    "nll_batch",
    "param_count",
    "sample",
    "sample_batch",
]
