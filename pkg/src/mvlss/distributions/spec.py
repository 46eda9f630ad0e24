"""Distribution families and the raw-parameter layout they share.

Layout of a raw predictor vector (length ``K``), identical for every consumer
(trees, offsets, model documents):

* ``gaussian-chol``: ``[mu (D) | log diag(L) (D) | strictly-lower L, row-major]``
* ``gaussian-lra``: ``[mu (D) | log diag(K) (D) | V (D x r), row-major]``
* ``student-t``: ``gaussian-chol`` layout followed by ``log(nu - 2)``
* ``dirichlet``: ``[log alpha (D)]``
"""

from __future__ import annotations

import enum
from dataclasses import dataclass


class Family(str, enum.Enum):
    GAUSSIAN_CHOLESKY = "gaussian-chol"
    GAUSSIAN_LOWRANK = "gaussian-lra"
    STUDENT_T = "student-t"
    DIRICHLET = "dirichlet"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class DistributionSpec:
    family: Family
    dim: int
    rank: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim!r}")
        object.__setattr__(self, "dim", int(self.dim))
        if self.family is Family.DIRICHLET and self.dim < 2:
            raise ValueError("the Dirichlet family needs at least two components")
        if self.family is Family.GAUSSIAN_LOWRANK:
            if self.rank is None or int(self.rank) != self.rank or self.rank < 1:
                raise ValueError("gaussian-lra needs a positive integer rank")
            object.__setattr__(self, "rank", int(self.rank))
        elif self.rank is not None:
            raise ValueError(f"rank is only meaningful for gaussian-lra, not {self.family}")

    @property
    def n_params(self) -> int:
        return param_count(self)

    @property
    def n_offdiag(self) -> int:
        return self.dim * (self.dim - 1) // 2

    def param_names(self) -> list[str]:
        d = self.dim
        if self.family is Family.DIRICHLET:
            return [f"alpha_{i + 1}" for i in range(d)]
        names = [f"mu_{i + 1}" for i in range(d)]
        if self.family is Family.GAUSSIAN_LOWRANK:
            names += [f"K_{i + 1}" for i in range(d)]
            names += [f"V_{i + 1}_{j + 1}" for i in range(d) for j in range(self.rank)]
            return names
        names += [f"L_{i + 1}{i + 1}" for i in range(d)]
        names += [f"L_{i + 1}{j + 1}" for i in range(d) for j in range(i)]
        if self.family is Family.STUDENT_T:
            names.append("nu")
        return names

    def to_dict(self) -> dict:
        out = {"family": self.family.value, "dim": self.dim}
        if self.rank is not None:
            out["rank"] = self.rank
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "DistributionSpec":
        return cls(Family(d["family"]), int(d["dim"]), d.get("rank"))


def param_count(spec: DistributionSpec) -> int:
    """Number of raw parameters ``K`` for a distribution spec."""
    d = spec.dim
    if spec.family is Family.GAUSSIAN_CHOLESKY:
        return d * (d + 3) // 2
    if spec.family is Family.GAUSSIAN_LOWRANK:
        return d * (2 + spec.rank)
    if spec.family is Family.STUDENT_T:
        return d * (d + 3) // 2 + 1
    return d
