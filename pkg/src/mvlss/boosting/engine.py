"""Training loop, prediction and the model document."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..data import Dataset
from ..diff import grad_hess_batch
from ..distributions import (
    DistributionSpec,
    Family,
    LinkedBatch,
    covariance_batch,
    link_batch,
    mean_batch,
    nll_batch,
)
from ..errors import FeatureMismatch, MvlssError, NonFinite
from .config import FitConfig
from .offsets import fit_offsets
from .tree import Tree, grow_tree, presort

log = logging.getLogger(__name__)

SCHEMA = "mvlss.model/1"
STAB_FLOOR = 1e-4


def stabilize(g: np.ndarray, h: np.ndarray, mode: str):
    """Rescale one parameter column of gradients and Hessians.

    ``mad`` divides each vector by its median absolute deviation, ``l2`` by its
    root mean square; both divisors are clamped below at ``1e-4``.
    """
    if mode == "none":
        return g, h
    if mode == "mad":
        def scale(v):
            return max(float(np.median(np.abs(v - np.median(v)))), STAB_FLOOR)
    elif mode == "l2":
        def scale(v):
            return max(float(np.sqrt(np.mean(v * v))), STAB_FLOOR)
    else:
        raise ValueError(f"unknown stabilization mode {mode!r}")
    return g / scale(g), h / scale(h)


@dataclass
class PredictedDistribution:
    raw: np.ndarray
    params: LinkedBatch
    mean: np.ndarray
    covariance: np.ndarray | None


@dataclass
class BoostedModel:
    spec: DistributionSpec
    offsets: np.ndarray
    rounds: list[list[Tree]]
    config: FitConfig
    feature_names: list[str]
    best_round: int
    train_nll: list[float] = field(default_factory=list)
    valid_nll: list[float] = field(default_factory=list)
    response_names: list[str] = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def _check_features(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, self.n_features) if self.n_features else X.reshape(-1, 0)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise FeatureMismatch(
                f"model was trained on {self.n_features} features, got {X.shape[1] if X.ndim == 2 else X.shape}"
            )
        return X

    def predict_raw(self, X, n_rounds: int | None = None) -> np.ndarray:
        """Raw predictors ``offsets + sum(learning_rate * tree(x))`` over the first ``best_round`` rounds."""
        X = self._check_features(X)
        upto = self.best_round if n_rounds is None else min(int(n_rounds), len(self.rounds))
        eta = np.tile(self.offsets, (X.shape[0], 1))
        lr = self.config.learning_rate
        for trees in self.rounds[:upto]:
            for k, tree in enumerate(trees):
                eta[:, k] += lr * tree.predict(X)
        return eta

    def predict_dist(self, X) -> PredictedDistribution:
        raw = self.predict_raw(X)
        params = link_batch(self.spec, raw)
        cov = None if self.spec.family is Family.DIRICHLET else covariance_batch(self.spec, raw)
        return PredictedDistribution(raw, params, mean_batch(self.spec, raw), cov)

    def nll(self, ds: Dataset) -> np.ndarray:
        return nll_batch(self.spec, self.predict_raw(ds.features), ds.responses)

    # -- model document --------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "spec": self.spec.to_dict(),
            "config": self.config.to_dict(),
            "feature_names": list(self.feature_names),
            "response_names": list(self.response_names),
            "offsets": [float(v) for v in self.offsets],
            "best_round": int(self.best_round),
            "train_nll": [float(v) for v in self.train_nll],
            "valid_nll": [float(v) for v in self.valid_nll],
            "rounds": [[t.to_dict() for t in trees] for trees in self.rounds],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), allow_nan=False)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps() + "\n", encoding="utf-8")

    @classmethod
    def from_dict(cls, d: dict) -> "BoostedModel":
        if d.get("schema") != SCHEMA:
            raise MvlssError(f"unsupported model schema {d.get('schema')!r}")
        return cls(
            spec=DistributionSpec.from_dict(d["spec"]),
            offsets=np.asarray(d["offsets"], dtype=float),
            rounds=[[Tree.from_dict(t) for t in trees] for trees in d["rounds"]],
            config=FitConfig.from_dict(d["config"]),
            feature_names=list(d["feature_names"]),
            best_round=int(d["best_round"]),
            train_nll=list(d.get("train_nll", [])),
            valid_nll=list(d.get("valid_nll", [])),
            response_names=list(d.get("response_names", [])),
        )

    @classmethod
    def loads(cls, text: str) -> "BoostedModel":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "BoostedModel":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def _mean_nll(spec, eta, y, round_index):
    try:
        return float(nll_batch(spec, eta, y).mean())
    except NonFinite as exc:
        raise NonFinite(f"training diverged at round {round_index}: {exc}", round_index) from exc


def fit(
    train: Dataset,
    spec: DistributionSpec,
    config: FitConfig | None = None,
    valid: Dataset | None = None,
    offsets: np.ndarray | None = None,
) -> BoostedModel:
    """Grow ``K`` trees per round, one per raw parameter.

    Each round computes floored gradients/Hessians, stabilizes every parameter
    column, draws one shared row subsample and an independent column subsample
    per tree, and adds ``learning_rate * tree`` to the parameter's predictor.
    With a validation set and ``early_stopping_rounds > 0`` training stops once
    the mean validation NLL has not improved for that many rounds, and the
    model keeps the best round.
    """
    config = config or FitConfig()
    if train.dim != spec.dim:
        raise MvlssError(f"training responses have {train.dim} columns, spec expects {spec.dim}")
    X = np.ascontiguousarray(train.features, dtype=float)
    y = train.responses
    n, p = X.shape
    k = spec.n_params
    eta0 = fit_offsets(spec, y) if offsets is None else np.asarray(offsets, dtype=float)
    eta = np.tile(eta0, (n, 1))
    rng = np.random.default_rng(config.seed)
    sorted_cols = presort(X)

    use_valid = valid is not None
    if use_valid:
        if valid.n_features != p:
            raise FeatureMismatch("validation features do not match training features")
        Xv = np.ascontiguousarray(valid.features, dtype=float)
        eta_v = np.tile(eta0, (valid.n, 1))

    train_hist = [_mean_nll(spec, eta, y, 0)]
    valid_hist = [_mean_nll(spec, eta_v, valid.responses, 0)] if use_valid else []
    rounds: list[list[Tree]] = []
    best, best_idx = (valid_hist[0] if use_valid else None), 0
    n_rows = max(1, int(round(config.subsample * n)))
    n_cols = max(1, int(round(config.colsample * p))) if p else 0
    lr = config.learning_rate

    for t in range(1, config.n_rounds + 1):
        try:
            gh = grad_hess_batch(spec, eta, y)
        except NonFinite as exc:
            raise NonFinite(f"training diverged at round {t}: {exc}", t) from exc
        if config.subsample < 1.0:
            row_mask = np.zeros(n, dtype=bool)
            row_mask[rng.choice(n, size=n_rows, replace=False)] = True
        else:
            row_mask = np.ones(n, dtype=bool)
        trees = []
        for j in range(k):
            g, h = stabilize(gh.grad[:, j], gh.hess[:, j], config.stabilization)
            if p and config.colsample < 1.0:
                col_mask = np.zeros(p, dtype=bool)
                col_mask[rng.choice(p, size=n_cols, replace=False)] = True
            else:
                col_mask = np.ones(p, dtype=bool)
            tree = grow_tree(
                X, g, h,
                max_depth=config.max_depth,
                lambda_l2=config.lambda_l2,
                gamma=config.gamma,
                min_child_weight=config.min_child_weight,
                row_mask=row_mask,
                col_mask=col_mask,
                presorted=sorted_cols,
            )
            trees.append(tree)
        for j, tree in enumerate(trees):
            eta[:, j] += lr * tree.predict(X)
            if use_valid:
                eta_v[:, j] += lr * tree.predict(Xv)
        rounds.append(trees)
        train_hist.append(_mean_nll(spec, eta, y, t))
        if use_valid:
            v = _mean_nll(spec, eta_v, valid.responses, t)
            valid_hist.append(v)
            if v < best:
                best, best_idx = v, t
            elif config.early_stopping_rounds and t - best_idx >= config.early_stopping_rounds:
                log.debug("early stop at round %d, best round %d", t, best_idx)
                break
        log.debug("round %d train nll %.6f", t, train_hist[-1])

    best_round = best_idx if use_valid and config.early_stopping_rounds else len(rounds)
    return BoostedModel(
        spec=spec,
        offsets=eta0.copy(),
        rounds=rounds,
        config=config,
        feature_names=list(train.feature_names),
        best_round=best_round,
        train_nll=train_hist,
        valid_nll=valid_hist,
        response_names=list(train.response_names),
    )
