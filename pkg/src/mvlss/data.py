"""Datasets, CSV ingestion, fold protocol and simulation generators."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .distributions import DistributionSpec, Family, sample_batch
from .errors import EmptyDataset, ParseError

MISSING_TOKENS = frozenset({"", "na", "nan", "n/a", "null", "none"})


@dataclass
class Dataset:
    features: np.ndarray
    responses: np.ndarray
    feature_names: list[str]
    response_names: list[str]
    name: str = "dataset"
    dropped_rows: int = 0

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.responses = np.asarray(self.responses, dtype=float)
        if self.features.ndim == 1:
            self.features = self.features.reshape(-1, 0 if self.features.size == 0 else 1)
        if self.responses.ndim == 1:
            self.responses = self.responses[:, None]
        if self.features.shape[0] != self.responses.shape[0]:
            raise ValueError("features and responses disagree on the number of rows")
        if len(self.feature_names) != self.features.shape[1]:
            raise ValueError("feature_names length does not match the feature matrix")
        if len(self.response_names) != self.responses.shape[1]:
            raise ValueError("response_names length does not match the response matrix")
        if not np.all(np.isfinite(self.responses)):
            raise ValueError("responses must be finite")

    @property
    def n(self) -> int:
        return self.responses.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def dim(self) -> int:
        return self.responses.shape[1]

    def subset(self, rows, name: str | None = None) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(
            self.features[rows],
            self.responses[rows],
            list(self.feature_names),
            list(self.response_names),
            name or self.name,
        )

    def select_responses(self, columns) -> "Dataset":
        idx = [self.response_names.index(c) if isinstance(c, str) else int(c) for c in columns]
        return Dataset(
            self.features,
            self.responses[:, idx],
            list(self.feature_names),
            [self.response_names[i] for i in idx],
            self.name,
        )


# -- CSV ---------------------------------------------------------------------


def _is_missing(cell: str) -> bool:
    return cell.strip().lower() in MISSING_TOKENS


def _to_float(cell: str) -> float:
    return float(cell.strip())


def load_csv(path, response_columns, name: str | None = None) -> Dataset:
    """Read a header-first CSV into a :class:`Dataset`.

    Columns listed in ``response_columns`` become responses; everything else is
    a feature. Non-numeric feature columns are one-hot encoded (levels in order
    of first appearance, new columns named ``col=level``). Rows with a missing
    response are dropped and counted in ``dropped_rows``; missing feature values
    are kept as NaN.
    """
    path = Path(path)
    response_columns = list(response_columns)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    except (UnicodeDecodeError, csv.Error) as exc:
        raise ParseError(f"cannot parse {path}: {exc}") from exc
    if not rows:
        raise EmptyDataset(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise ParseError(f"{path}: expected {len(header)} fields, found {len(row)}", row=i)
    missing = [c for c in response_columns if c not in header]
    if missing:
        raise ParseError(f"{path}: response column(s) not found: {', '.join(missing)}", column=missing[0])
    if len(set(header)) != len(header):
        raise ParseError(f"{path}: duplicate column names in header")

    resp_idx = [header.index(c) for c in response_columns]
    keep, responses = [], []
    dropped = 0
    for i, row in enumerate(body, start=2):
        vals = []
        for j in resp_idx:
            cell = row[j]
            if _is_missing(cell):
                vals = None
                break
            try:
                vals.append(_to_float(cell))
            except ValueError:
                raise ParseError(f"{path}: non-numeric response {cell!r}", row=i, column=header[j]) from None
        if vals is None:
            dropped += 1
            continue
        if not all(math.isfinite(v) for v in vals):
            raise ParseError(f"{path}: non-finite response", row=i, column=header[resp_idx[0]])
        keep.append(row)
        responses.append(vals)
    if not keep:
        raise EmptyDataset(f"{path}: no rows with complete responses")

    feat_cols, feat_names = [], []
    for j, col in enumerate(header):
        if j in resp_idx:
            continue
        cells = [row[j] for row in keep]
        numeric = []
        is_numeric = True
        for cell in cells:
            if _is_missing(cell):
                numeric.append(np.nan)
                continue
            try:
                numeric.append(_to_float(cell))
            except ValueError:
                is_numeric = False
                break
        if is_numeric:
            feat_cols.append(np.asarray(numeric, dtype=float))
            feat_names.append(col)
            continue
        levels: list[str] = []
        for cell in cells:
            c = cell.strip()
            if not _is_missing(cell) and c not in levels:
                levels.append(c)
        for level in levels:
            col_vals = np.array(
                [np.nan if _is_missing(cell) else float(cell.strip() == level) for cell in cells]
            )
            feat_cols.append(col_vals)
            feat_names.append(f"{col}={level}")

    n = len(keep)
    features = np.column_stack(feat_cols) if feat_cols else np.zeros((n, 0))
    return Dataset(
        features,
        np.asarray(responses, dtype=float),
        feat_names,
        response_columns,
        name or path.stem,
        dropped_rows=dropped,
    )


def _fmt(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def write_csv(ds: Dataset, path) -> None:
    """Write features then responses; floats use shortest round-trip decimals."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ds.feature_names + ds.response_names)
        for xr, yr in zip(ds.features, ds.responses):
            w.writerow([_fmt(v) for v in xr] + [_fmt(v) for v in yr])


def write_matrix_csv(path, names, matrix) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(names))
        for row in np.asarray(matrix, dtype=float):
            w.writerow([_fmt(v) for v in row])


# -- folds -------------------------------------------------------------------


@dataclass(frozen=True)
class Fold:
    index: int
    train: np.ndarray
    test: np.ndarray

    @property
    def is_tuning(self) -> bool:
        return self.index == 0


def fold_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(index)])


def make_folds(n_rows, n_folds: int = 11, train_fraction: float = 0.8, seed: int = 0) -> list[Fold]:
    """Independently shuffled train/test splits; fold 0 is reserved for tuning.

    ``n_rows`` may be a row count or a :class:`Dataset`.
    """
    n = n_rows.n if isinstance(n_rows, Dataset) else int(n_rows)
    if n < 10:
        raise ValueError("need at least 10 rows to build folds")
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    n_train = int(round(train_fraction * n))
    folds = []
    for k in range(n_folds):
        perm = np.random.default_rng(fold_seed(seed, k)).permutation(n)
        folds.append(Fold(k, np.sort(perm[:n_train]), np.sort(perm[n_train:])))
    return folds


def write_fold_manifest(folds, path) -> None:
    """Tab-separated manifest: fold index, split name, space-separated row indices."""
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("fold\tsplit\trows\n")
        for f in folds:
            fh.write(f"{f.index}\ttrain\t{' '.join(map(str, f.train))}\n")
            fh.write(f"{f.index}\ttest\t{' '.join(map(str, f.test))}\n")


def read_fold_manifest(path) -> list[Fold]:
    parts: dict[int, dict[str, np.ndarray]] = {}
    with Path(path).open(encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            idx, split, rows = line.rstrip("\n").split("\t")
            parts.setdefault(int(idx), {})[split] = np.array(rows.split(), dtype=np.int64)
    return [Fold(k, v["train"], v["test"]) for k, v in sorted(parts.items())]


# -- simulation --------------------------------------------------------------

# Trivariate data generating process. The informative covariate is x in [0, 1].
MU_LEVEL = np.array([0.0, 1.0, -1.0])
MU_AMPLITUDE = np.array([1.0, -0.75, 0.5])
LOGDIAG_INTERCEPT = np.array([-0.2, 0.2, -0.4])
LOGDIAG_SLOPE = np.array([0.8, -0.8, 0.6])
OFFDIAG_SLOPE = np.array([2.0, -1.8, 1.5])  # (l21, l31, l32) = slope * (x - 0.5)
NU_LOG_MIN = 0.0  # nu(0.5) = 2 + exp(0) = 3
NU_LOG_CURVATURE = 8.0
DIRICHLET_INTERCEPT = np.array([1.0, 0.5, 0.0])
DIRICHLET_SLOPE = np.array([-1.5, 0.5, 1.5])


@dataclass(frozen=True)
class SimulationSpec:
    family: Family
    n: int = 10_000
    seed: int = 0
    noise_features: int = 0

    def __post_init__(self):
        fam = Family(self.family)
        if fam is Family.GAUSSIAN_LOWRANK:
            raise ValueError("simulation supports gaussian-chol, student-t and dirichlet")
        object.__setattr__(self, "family", fam)
        if self.n < 100:
            raise ValueError("simulations need n >= 100")
        if self.noise_features < 0:
            raise ValueError("noise_features must be non-negative")

    @property
    def distribution(self) -> DistributionSpec:
        return DistributionSpec(self.family, 3)


def true_raw_params(family, x) -> np.ndarray:
    """True raw predictor matrix ``(len(x), K)`` of the simulation at covariate ``x``."""
    family = Family(family)
    x = np.asarray(x, dtype=float).reshape(-1)
    if family is Family.DIRICHLET:
        return DIRICHLET_INTERCEPT + np.outer(x, DIRICHLET_SLOPE)
    mu = MU_LEVEL + np.outer(np.sin(2 * np.pi * x), MU_AMPLITUDE)
    logdiag = LOGDIAG_INTERCEPT + np.outer(x, LOGDIAG_SLOPE)
    off = np.outer(x - 0.5, OFFDIAG_SLOPE)
    cols = [mu, logdiag, off]
    if family is Family.STUDENT_T:
        nu_minus_2 = np.exp(NU_LOG_MIN + NU_LOG_CURVATURE * (x - 0.5) ** 2)
        cols.append(np.log(nu_minus_2)[:, None])
    elif family is not Family.GAUSSIAN_CHOLESKY:
        raise ValueError(f"no simulation for {family}")
    return np.hstack(cols)


def simulate(spec: SimulationSpec) -> tuple[Dataset, np.ndarray]:
    """Draw a simulated dataset and return it with its true raw parameters.

    Features are ``x`` (informative) followed by ``noise_1..noise_m``, all
    Uniform(0, 1). Functional forms:

    * ``mu_d(x) = a_d + b_d sin(2 pi x)``
    * ``log L_dd(x)`` affine in ``x``; ``L_ij(x) = c_ij (x - 0.5)``
    * Student-T: ``nu(x) = 2 + exp(8 (x - 0.5)^2)``, smallest at ``x = 0.5``
    * Dirichlet: ``log alpha_d(x)`` affine with slopes of mixed sign
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(spec.seed), 7919]))
    x = rng.uniform(size=spec.n)
    noise = rng.uniform(size=(spec.n, spec.noise_features))
    raw = true_raw_params(spec.family, x)
    y = sample_batch(spec.distribution, raw, rng)
    features = np.column_stack([x, noise])
    names = ["x"] + [f"noise_{i + 1}" for i in range(spec.noise_features)]
    ds = Dataset(features, y, names, ["y1", "y2", "y3"], name=f"sim-{spec.family.value}")
    return ds, raw


# -- Arctic-Lake-schema fixture ----------------------------------------------

ARCTIC_RESPONSES = ["sand", "silt", "clay"]


def arctic_lake_fixture() -> Dataset:
    """The bundled 39-row synthetic sediment fixture (columns depth, sand, silt, clay).

    Generated once by :func:`make_arctic_lake_fixture` with seed 1982 and stored
    as a package resource.
    """
    res = resources.files("mvlss").joinpath("resources/arctic_lake_synthetic.csv")
    with resources.as_file(res) as p:
        return load_csv(p, ARCTIC_RESPONSES, name="arctic-lake-synthetic")


def make_arctic_lake_fixture(seed: int = 1982, n: int = 39) -> Dataset:
    """Build a sediment-composition dataset whose sand share falls with depth.

    Depths are evenly spread over 10.4-103.7 m with small jitter. Concentrations
    follow ``log alpha = a + b * depth`` with a negative sand slope and positive
    silt/clay slopes; shares are rounded to 6 decimals with clay closing the sum.
    """
    rng = np.random.default_rng(seed)
    depth = np.round(np.linspace(10.4, 103.7, n) + rng.uniform(-0.9, 0.9, size=n), 1)
    depth = np.clip(depth, 10.4, 103.7)
    z = (depth - 10.4) / (103.7 - 10.4)
    log_alpha = np.column_stack([3.4 - 2.6 * z, 2.6 + 0.4 * z, 1.7 + 1.3 * z])
    y = np.array([rng.dirichlet(a) for a in np.exp(log_alpha)])
    y = np.clip(np.round(y, 6), 1e-4, None)
    y[:, :2] = np.round(y[:, :2] / y.sum(axis=1, keepdims=True), 6)
    y[:, 2] = np.round(1.0 - y[:, 0] - y[:, 1], 6)
    order = np.argsort(depth, kind="stable")
    return Dataset(depth[order, None], y[order], ["depth"], list(ARCTIC_RESPONSES), "arctic-lake-synthetic")
