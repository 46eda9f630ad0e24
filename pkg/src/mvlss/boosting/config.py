from __future__ import annotations

import dataclasses
from dataclasses import dataclass

STABILIZATION_MODES = ("none", "mad", "l2")


@dataclass(frozen=True)
class FitConfig:
    """Boosting hyper-parameters.

    ``min_child_weight`` is compared with sums of stabilized Hessians.
    ``early_stopping_rounds = 0`` disables early stopping.
    """

    learning_rate: float = 0.1
    max_depth: int = 6
    gamma: float = 0.0
    subsample: float = 1.0
    colsample: float = 1.0
    min_child_weight: float = 1.0
    n_rounds: int = 500
    early_stopping_rounds: int = 2
    lambda_l2: float = 1.0
    stabilization: str = "mad"
    seed: int = 0

    def __post_init__(self):
        def check(ok, msg):
            if not ok:
                raise ValueError(msg)

        check(0.001 <= self.learning_rate <= 1.0, "learning_rate must lie in [0.001, 1]")
        check(int(self.max_depth) == self.max_depth and 2 <= self.max_depth <= 10, "max_depth must be an integer in [2, 10]")
        check(self.gamma >= 0, "gamma must be non-negative")
        check(0 < self.subsample <= 1, "subsample must lie in (0, 1]")
        check(0 < self.colsample <= 1, "colsample must lie in (0, 1]")
        check(self.min_child_weight >= 0, "min_child_weight must be non-negative")
        check(int(self.n_rounds) == self.n_rounds and self.n_rounds >= 1, "n_rounds must be a positive integer")
        check(
            int(self.early_stopping_rounds) == self.early_stopping_rounds and self.early_stopping_rounds >= 0,
            "early_stopping_rounds must be a non-negative integer",
        )
        check(self.lambda_l2 >= 0, "lambda_l2 must be non-negative")
        check(self.stabilization in STABILIZATION_MODES, f"stabilization must be one of {STABILIZATION_MODES}")
        for name in ("max_depth", "n_rounds", "early_stopping_rounds", "seed"):
            object.__setattr__(self, name, int(getattr(self, name)))
        for name in ("learning_rate", "gamma", "subsample", "colsample", "min_child_weight", "lambda_l2"):
            object.__setattr__(self, name, float(getattr(self, name)))

    def replace(self, **changes) -> "FitConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown FitConfig keys: {sorted(unknown)}")
        return cls(**d)
