"""Scoring, multi-model fold studies, rank ablation, random search and timing."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .boosting import BoostedModel, FitConfig, fit
from .data import Dataset, Fold, make_folds
from .distributions import DistributionSpec, Family
from .errors import ConstantColumn, MvlssError, NumericError

log = logging.getLogger(__name__)

QUANTILES = (0.1, 0.5, 0.9)


def score_nll(model: BoostedModel, test: Dataset) -> float:
    """Mean per-observation test NLL."""
    return float(np.mean(model.nll(test)))


def summarize(values) -> tuple[float, float, float]:
    """``(q10, median, q90)`` with linear interpolation."""
    q = np.quantile(np.asarray(values, dtype=float), QUANTILES)
    return float(q[0]), float(q[1]), float(q[2])


@dataclass(frozen=True)
class DependencyStrength:
    median: float
    q10: float
    q90: float


def dependency_strength(y) -> DependencyStrength:
    """Pearson correlation quantiles over all unordered response pairs."""
    y = np.asarray(y, dtype=float)
    if y.ndim != 2 or y.shape[1] < 2:
        raise ValueError("need at least two response columns")
    sd = y.std(axis=0)
    if np.any(sd == 0):
        raise ConstantColumn(f"response column {int(np.flatnonzero(sd == 0)[0])} is constant")
    c = y - y.mean(axis=0)
    gram = c.T @ c
    norm = np.sqrt(np.diag(gram))
    r = gram / np.outer(norm, norm)
    iu = np.triu_indices(y.shape[1], 1)
    q10, med, q90 = summarize(np.clip(r[iu], -1.0, 1.0))
    return DependencyStrength(med, q10, q90)


@dataclass
class EvalReport:
    model_id: str
    dataset: str
    fold_nll: list[float]
    wall_seconds: float
    failed_folds: list[int] = field(default_factory=list)

    @property
    def summary(self) -> tuple[float, float, float]:
        return summarize(self.fold_nll)

    @property
    def variability(self) -> float:
        return float(np.max(self.fold_nll) - np.min(self.fold_nll))


# -- model definitions -------------------------------------------------------


@dataclass(frozen=True)
class ModelSpec:
    """A named model recipe applied to every dataset of a study.

    ``univariate=True`` fits an independent one-dimensional Gaussian per
    target and scores the sum of their NLLs.
    """

    name: str
    family: Family = Family.GAUSSIAN_CHOLESKY
    rank: int | None = None
    univariate: bool = False
    config: FitConfig = field(default_factory=FitConfig)
    valid_fraction: float = 0.2

    def distribution(self, dim: int) -> DistributionSpec:
        if self.univariate:
            return DistributionSpec(Family.GAUSSIAN_CHOLESKY, 1)
        return DistributionSpec(self.family, dim, self.rank)

    def fit_score(self, train: Dataset, test: Dataset, seed: int) -> float:
        config = self.config.replace(seed=int(seed))
        valid = None
        if config.early_stopping_rounds > 0 and self.valid_fraction > 0 and train.n >= 20:
            inner = make_folds(train.n, 1, 1.0 - self.valid_fraction, seed=seed)[0]
            train, valid = train.subset(inner.train), train.subset(inner.test)
        if not self.univariate:
            spec = self.distribution(train.dim)
            return score_nll(fit(train, spec, config, valid), test)
        total = np.zeros(test.n)
        spec = self.distribution(1)
        for d in range(train.dim):
            tr = train.select_responses([d])
            va = valid.select_responses([d]) if valid is not None else None
            model = fit(tr, spec, config, va)
            total += model.nll(test.select_responses([d]))
        return float(total.mean())


def cell_seed(seed: int, *cell) -> int:
    return int(np.random.SeedSequence([int(seed), *map(int, cell)]).generate_state(1)[0])


def run_study(models, datasets, folds_per_dataset, seed: int = 0, threads: int = 1) -> list[EvalReport]:
    """Fit and score every (model, dataset, fold) cell.

    ``folds_per_dataset`` maps dataset name to its list of :class:`Fold`.
    Diverged cells are recorded in ``failed_folds`` and skipped.
    """
    jobs = []
    for mi, model in enumerate(models):
        for di, ds in enumerate(datasets):
            for fold in folds_per_dataset[ds.name]:
                jobs.append((mi, di, fold))

    def run(job):
        mi, di, fold = job
        ds = datasets[di]
        t0 = time.perf_counter()
        try:
            score = models[mi].fit_score(ds.subset(fold.train), ds.subset(fold.test), cell_seed(seed, mi, di, fold.index))
        except NumericError as exc:
            log.warning("%s on %s fold %d failed: %s", models[mi].name, ds.name, fold.index, exc)
            score = math.nan
        return score, time.perf_counter() - t0

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]

    reports: dict[tuple[int, int], EvalReport] = {}
    for (mi, di, fold), (score, secs) in zip(jobs, results):
        rep = reports.setdefault((mi, di), EvalReport(models[mi].name, datasets[di].name, [], 0.0))
        rep.wall_seconds += secs
        if math.isnan(score):
            rep.failed_folds.append(fold.index)
        else:
            rep.fold_nll.append(score)
    return [reports[key] for key in sorted(reports)]


def evaluation_folds(ds: Dataset, n_folds: int = 11, seed: int = 0) -> list[Fold]:
    """Folds 1..n-1 of the standard protocol (fold 0 is for tuning only)."""
    return [f for f in make_folds(ds, n_folds, 0.8, seed) if not f.is_tuning]


# -- comparison tables -------------------------------------------------------


@dataclass
class Comparison:
    models: list[str]
    datasets: list[str]
    scores: dict  # (model, dataset) -> list of fold NLLs

    def cell(self, model: str, dataset: str) -> tuple[float, float, float]:
        return summarize(self.scores[model, dataset])

    def median(self, model: str, dataset: str) -> float:
        return self.cell(model, dataset)[1]

    def variability(self, model: str, dataset: str) -> float:
        v = np.asarray(self.scores[model, dataset], dtype=float)
        return float(v.max() - v.min())

    def ranks(self, dataset: str) -> dict[str, float]:
        """Rank of each model on one dataset by median NLL; ties share the mean rank."""
        meds = [self.median(m, dataset) for m in self.models]
        return dict(zip(self.models, (float(r) for r in rankdata(meds, method="average"))))

    def average_rank(self) -> dict[str, float]:
        per = [self.ranks(d) for d in self.datasets]
        return {m: float(np.mean([r[m] for r in per])) for m in self.models}

    def average_variability(self) -> dict[str, float]:
        return {m: float(np.mean([self.variability(m, d) for d in self.datasets])) for m in self.models}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dataset", "model", "median", "q10", "q90", "rank", "variability", "n_folds"])
        for d in self.datasets:
            ranks = self.ranks(d)
            for m in self.models:
                q10, med, q90 = self.cell(m, d)
                w.writerow([d, m, repr(med), repr(q10), repr(q90), repr(ranks[m]),
                            repr(self.variability(m, d)), len(self.scores[m, d])])
        avg = self.average_rank()
        avg_var = self.average_variability()
        for m in self.models:
            w.writerow(["__average__", m, "", "", "", repr(avg[m]), repr(avg_var[m]), ""])
        return buf.getvalue()

    def nll_table(self, digits: int = 4) -> str:
        rows = [[d] + [_cell_text(self.cell(m, d), digits) for m in self.models] for d in self.datasets]
        avg = self.average_rank()
        rows.append(["Average Rank"] + [f"{avg[m]:.2f}" for m in self.models])
        return _format_table([""] + self.models, rows)

    def variability_table(self, digits: int = 4) -> str:
        rows = [[d] + [f"{self.variability(m, d):.{digits}f}" for m in self.models] for d in self.datasets]
        avg = self.average_variability()
        rows.append(["Average"] + [f"{avg[m]:.{digits}f}" for m in self.models])
        return _format_table([""] + self.models, rows)


def compare(scores) -> Comparison:
    """Build a comparison from fold scores.

    ``scores`` is either a list of :class:`EvalReport` or a mapping
    ``{model: {dataset: [fold NLLs]}}``. Model and dataset order follow first
    appearance.
    """
    table: dict = {}
    models: list[str] = []
    datasets: list[str] = []
    if isinstance(scores, dict):
        items = [(m, d, v) for m, per in scores.items() for d, v in per.items()]
    else:
        items = [(r.model_id, r.dataset, r.fold_nll) for r in scores]
    for m, d, v in items:
        if m not in models:
            models.append(m)
        if d not in datasets:
            datasets.append(d)
        table[m, d] = [float(x) for x in v]
    if len(models) < 2:
        raise ValueError("a comparison needs at least two models")
    missing = [(m, d) for m in models for d in datasets if not table.get((m, d))]
    if missing:
        raise MvlssError(f"no scores for model {missing[0][0]!r} on dataset {missing[0][1]!r}")
    return Comparison(models, datasets, table)


def _cell_text(cell, digits):
    q10, med, q90 = cell
    return f"{med:.{digits}f} [{q10:.{digits}f}, {q90:.{digits}f}]"


def _format_table(header, rows, footer: bool = True) -> str:
    """Aligned text table; with ``footer`` the last row is set off by a rule."""
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    rule_after = {0, len(rows) - 1} if footer else {0}
    lines = []
    for j, r in enumerate([header] + rows):
        cells = [str(c).ljust(widths[0]) if i == 0 else str(c).rjust(widths[i]) for i, c in enumerate(r)]
        lines.append("  ".join(cells).rstrip())
        if j in rule_after:
            lines.append("-" * len(lines[-1]))
    return "\n".join(lines) + "\n"


# -- rank ablation -----------------------------------------------------------


@dataclass
class RankSummary:
    rank: int
    fold_nll: list[float]

    @property
    def summary(self):
        return summarize(self.fold_nll)


def ablate_rank(dataset: Dataset, ranks, config: FitConfig, folds=None, seed: int = 0, threads: int = 1) -> list[RankSummary]:
    """Refit the low-rank Gaussian with each ``r`` in ``ranks`` (everything else fixed)."""
    folds = folds if folds is not None else evaluation_folds(dataset, seed=seed)
    out = []
    for r in ranks:
        model = ModelSpec(f"lra-{r}", Family.GAUSSIAN_LOWRANK, int(r), config=config)
        # one model per study so every rank sees the same cell seeds
        rep = run_study([model], [dataset], {dataset.name: folds}, seed=seed, threads=threads)[0]
        out.append(RankSummary(int(r), rep.fold_nll))
    return out


def ablation_table(results: dict[str, list[RankSummary]], digits: int = 4) -> str:
    """Rows are ranks, columns datasets, cells ``median [q10, q90]``."""
    names = list(results)
    ranks = [s.rank for s in results[names[0]]]
    rows = []
    for i, r in enumerate(ranks):
        rows.append([str(r)] + [_cell_text(results[n][i].summary, digits) for n in names])
    return _format_table(["Rank (r)"] + names, rows, footer=False)


def ablation_csv(results: dict[str, list[RankSummary]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["dataset", "rank", "median", "q10", "q90", "n_folds"])
    for name, rows in results.items():
        for s in rows:
            q10, med, q90 = s.summary
            w.writerow([name, s.rank, repr(med), repr(q10), repr(q90), len(s.fold_nll)])
    return buf.getvalue()


# -- random search -----------------------------------------------------------

SEARCH_SPACE = {
    "learning_rate": (0.001, 1.0),
    "max_depth": (2, 10),
    "gamma": (0.0, 100.0),
    "subsample": (0.4, 1.0),
    "colsample": (0.4, 1.0),
    "min_child_weight": (0.0, 500.0),
    "n_rounds": 500,
    "early_stopping_rounds": 2,
}


def sample_config(rng: np.random.Generator, base: FitConfig, space=SEARCH_SPACE) -> FitConfig:
    lo, hi = space["learning_rate"]
    return base.replace(
        learning_rate=float(np.exp(rng.uniform(np.log(lo), np.log(hi)))),
        max_depth=int(rng.integers(space["max_depth"][0], space["max_depth"][1] + 1)),
        gamma=float(rng.uniform(*space["gamma"])),
        subsample=float(rng.uniform(*space["subsample"])),
        colsample=float(rng.uniform(*space["colsample"])),
        min_child_weight=float(rng.uniform(*space["min_child_weight"])),
        n_rounds=int(space["n_rounds"]),
        early_stopping_rounds=int(space["early_stopping_rounds"]),
    )


@dataclass
class SearchResult:
    best_config: FitConfig
    best_nll: float
    trials: list[dict]


def random_search(
    train: Dataset,
    test: Dataset,
    spec: DistributionSpec,
    n_trials: int,
    seed: int = 0,
    base: FitConfig | None = None,
    space=SEARCH_SPACE,
    include_base: bool = False,
) -> SearchResult:
    """Sample configurations, fit on ``train`` (early stopping on ``test``), keep the best.

    With ``include_base`` the unmodified ``base`` config is evaluated as trial 0.
    Trials that diverge are logged with ``status="failed"`` and skipped.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    base = base or FitConfig()
    rng = np.random.default_rng(seed)
    candidates = [base] if include_base else []
    candidates += [sample_config(rng, base, space) for _ in range(n_trials)]
    trials = []
    best = None
    for i, cfg in enumerate(candidates):
        entry = {"trial": i, **cfg.to_dict()}
        try:
            model = fit(train, spec, cfg, valid=test)
            score = score_nll(model, test)
            entry.update(status="ok", nll=score, best_round=model.best_round)
            if best is None or score < best[1]:
                best = (cfg, score)
        except NumericError as exc:
            entry.update(status="failed", nll=math.nan, error=str(exc))
        trials.append(entry)
    if best is None:
        raise NumericError("every trial diverged")
    return SearchResult(best[0], best[1], trials)


def trials_csv(result: SearchResult) -> str:
    keys = ["trial", "status", "nll", "best_round"] + list(FitConfig().to_dict())
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=keys, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for t in result.trials:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in t.items()})
    return buf.getvalue()


# -- timing ------------------------------------------------------------------


def scaling_data(n: int, dim: int, n_features: int = 3, seed: int = 0) -> Dataset:
    """Random correlated Gaussian responses with a few informative features."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, n_features))
    A = rng.normal(size=(dim, dim)) / np.sqrt(dim)
    cov = A @ A.T + 0.5 * np.eye(dim)
    y = rng.multivariate_normal(np.zeros(dim), cov, size=n)
    y += np.sin(2 * np.pi * X[:, :1]) * np.linspace(1.0, -1.0, dim)
    return Dataset(X, y, [f"x{i + 1}" for i in range(n_features)], [f"y{i + 1}" for i in range(dim)], f"scale-n{n}-d{dim}")


def time_fit(ds: Dataset, spec: DistributionSpec, config: FitConfig) -> float:
    t0 = time.perf_counter()
    fit(ds, spec, config)
    return time.perf_counter() - t0


def benchmark(ns=(500, 1000, 2000), dims=(2, 3, 5), ranks=(2, 5), n_rounds: int = 20, seed: int = 0) -> list[dict]:
    """Wall-clock fit time against N, D, K and r."""
    config = FitConfig(n_rounds=n_rounds, early_stopping_rounds=0, learning_rate=0.1, max_depth=4,
                       stabilization="none", min_child_weight=10.0, seed=seed)
    rows = []
    for d in dims:
        for n in ns:
            ds = scaling_data(n, d, seed=seed)
            specs = [DistributionSpec(Family.GAUSSIAN_CHOLESKY, d)]
            specs += [DistributionSpec(Family.GAUSSIAN_LOWRANK, d, r) for r in ranks]
            for spec in specs:
                secs = time_fit(ds, spec, config)
                rows.append({"family": spec.family.value, "n": n, "dim": d, "n_params": spec.n_params,
                             "rank": spec.rank or "", "rounds": n_rounds, "seconds": secs})
    return rows


def rows_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()
