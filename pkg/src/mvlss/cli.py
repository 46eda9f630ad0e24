"""Command-line driver.

Settings are resolved in three layers: built-in defaults, then the JSON file
given by ``--config``, then explicit flags (flags win). Every run writes the
resolved settings to ``<out>/resolved_config.json``.

Exit codes: 0 ok, 1 validation or tolerance failure, 2 usage error,
3 data error, 4 numeric divergence.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import eval as ev
from .boosting import BoostedModel, FitConfig, fit
from .data import (
    Dataset,
    SimulationSpec,
    load_csv,
    make_folds,
    simulate,
    write_csv,
    write_fold_manifest,
    write_matrix_csv,
)
from .diff import fd_check, random_case
from .distributions import DistributionSpec, Family, closure_adjust, linked_values
from .errors import DataError, FeatureMismatch, MvlssError, NonFinite

log = logging.getLogger("mvlss")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4
GRAD_TOL, HESS_TOL = 1e-4, 1e-3

DEFAULTS = {
    "family": "gaussian-chol",
    "rank": None,
    "data": None,
    "valid": None,
    "responses": [],
    "out": "out",
    "seed": 0,
    "threads": 1,
    "model": None,
    "closure_eps": None,
    "fit": {k: v for k, v in FitConfig().to_dict().items() if k != "seed"},
    "simulation": {"n": 10000, "noise_features": 0},
    "evaluate": {"folds": 11, "models": None, "datasets": None},
    "ablate": {"ranks": [2, 4, 5, 6, 8, 10]},
    "gradcheck": {"trials": 100, "step": 1e-5, "families": "all", "dims": [2, 3, 5], "lra_rank": 2},
    "bench": {"ns": [500, 1000, 2000], "dims": [2, 3, 5], "ranks": [2, 5], "rounds": 20},
}

FIT_FLAGS = {
    "rounds": "n_rounds",
    "learning_rate": "learning_rate",
    "max_depth": "max_depth",
    "gamma": "gamma",
    "subsample": "subsample",
    "colsample": "colsample",
    "min_child_weight": "min_child_weight",
    "early_stopping": "early_stopping_rounds",
    "stabilization": "stabilization",
}


class UsageError(MvlssError):
    exit_code = EXIT_USAGE


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise UsageError(f"unknown config key {where + key!r}")
        if isinstance(base[key], dict) and key not in ("fit",) and isinstance(value, dict):
            out[key] = _merge(base[key], value, where + key + ".")
        elif key == "fit":
            if not isinstance(value, dict):
                raise UsageError("config key 'fit' must be an object")
            out[key] = _merge(base[key], value, "fit.")
        else:
            out[key] = value
    return out


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        try:
            file_cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise DataError(f"cannot read config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise UsageError("config file must contain a JSON object")
        cfg = _merge(cfg, file_cfg)
    for key in ("family", "rank", "data", "valid", "out", "seed", "threads", "model"):
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if args.responses is not None:
        cfg["responses"] = [c.strip() for c in args.responses.split(",") if c.strip()]
    for flag, name in FIT_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            cfg["fit"][name] = value
    if getattr(args, "n", None) is not None:
        cfg["simulation"]["n"] = args.n
    if getattr(args, "noise_features", None) is not None:
        cfg["simulation"]["noise_features"] = args.noise_features
    if getattr(args, "folds", None) is not None:
        cfg["evaluate"]["folds"] = args.folds
    if getattr(args, "ranks", None) is not None:
        cfg["ablate"]["ranks"] = [int(r) for r in args.ranks.split(",")]
    if getattr(args, "trials", None) is not None:
        cfg["gradcheck"]["trials"] = args.trials
    if getattr(args, "step", None) is not None:
        cfg["gradcheck"]["step"] = args.step
    if getattr(args, "check_family", None) is not None:
        cfg["gradcheck"]["families"] = args.check_family
    # validate early so usage problems surface before any work
    fit_config(cfg)
    Family(cfg["family"])
    return cfg


def fit_config(cfg: dict) -> FitConfig:
    try:
        return FitConfig.from_dict({**cfg["fit"], "seed": int(cfg["seed"])})
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid fit configuration: {exc}") from exc


def dist_spec(cfg: dict, dim: int) -> DistributionSpec:
    fam = Family(cfg["family"])
    rank = cfg["rank"] if fam is Family.GAUSSIAN_LOWRANK else None
    try:
        return DistributionSpec(fam, dim, rank)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def write_resolved(cfg: dict, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_training(cfg: dict, path_key: str = "data") -> Dataset:
    if not cfg[path_key]:
        raise UsageError(f"--{path_key} is required")
    if not cfg["responses"]:
        raise UsageError("--responses is required")
    ds = load_csv(cfg[path_key], cfg["responses"])
    if ds.dropped_rows:
        log.warning("%s: dropped %d row(s) with missing responses", cfg[path_key], ds.dropped_rows)
    if cfg["closure_eps"] is not None and Family(cfg["family"]) is Family.DIRICHLET:
        ds.responses = closure_adjust(ds.responses, float(cfg["closure_eps"]))
    return ds


# -- subcommands ---------------------------------------------------------------


def cmd_train(cfg: dict, out: Path) -> int:
    train = _load_training(cfg)
    valid = _load_training(cfg, "valid") if cfg["valid"] else None
    spec = dist_spec(cfg, train.dim)
    model = fit(train, spec, fit_config(cfg), valid)
    model.save(out / "model.json")
    with (out / "training_log.csv").open("w", encoding="utf-8") as fh:
        fh.write("round,train_nll,valid_nll\n")
        for i, tr in enumerate(model.train_nll):
            va = repr(model.valid_nll[i]) if i < len(model.valid_nll) else ""
            fh.write(f"{i},{tr!r},{va}\n")
    print(f"trained {len(model.rounds)} rounds (best {model.best_round}); final train NLL "
          f"{model.train_nll[model.best_round]:.6f}; model written to {out / 'model.json'}")
    return EXIT_OK


def _predict_features(model: BoostedModel, path) -> np.ndarray:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        header = [h.strip() for h in next(csv.reader(fh))]
    responses = [c for c in model.response_names if c in header]
    ds = load_csv(path, responses)
    cols = []
    for name in model.feature_names:
        if name in ds.feature_names:
            cols.append(ds.features[:, ds.feature_names.index(name)])
        elif "=" in name and name.split("=", 1)[0] in header:
            cols.append(np.zeros(ds.n))  # category level absent from this file
        else:
            raise FeatureMismatch(f"feature column {name!r} is missing from {path}")
    return np.column_stack(cols) if cols else np.zeros((ds.n, 0))


def cmd_predict(cfg: dict, out: Path) -> int:
    if not cfg["model"] or not cfg["data"]:
        raise UsageError("predict needs --model and --data")
    try:
        model = BoostedModel.load(cfg["model"])
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise DataError(f"cannot read model {cfg['model']}: {exc}") from exc
    X = _predict_features(model, cfg["data"])
    pred = model.predict_dist(X)
    spec = model.spec
    d = spec.dim
    names = list(spec.param_names()) + [f"mean_{i + 1}" for i in range(d)]
    blocks = [linked_values(spec, pred.raw), pred.mean]
    if pred.covariance is not None:
        iu = np.triu_indices(d)
        names += [f"cov_{i + 1}_{j + 1}" for i, j in zip(*iu)]
        blocks.append(pred.covariance[:, iu[0], iu[1]])
    write_matrix_csv(out / "predictions.csv", names, np.hstack(blocks))
    print(f"wrote {X.shape[0]} predictions to {out / 'predictions.csv'}")
    return EXIT_OK


def cmd_simulate(cfg: dict, out: Path) -> int:
    fam = Family(cfg["family"])
    sim = cfg["simulation"]
    try:
        spec = SimulationSpec(fam, int(sim["n"]), int(cfg["seed"]), int(sim["noise_features"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    ds, raw = simulate(spec)
    write_csv(ds, out / "data.csv")
    names = [f"eta_{n}" for n in spec.distribution.param_names()]
    write_matrix_csv(out / "true_params.csv", names, raw)
    print(f"simulated {ds.n} rows of {fam.value} data into {out}")
    return EXIT_OK


def _study_datasets(cfg: dict) -> list[Dataset]:
    entries = cfg["evaluate"]["datasets"]
    if not entries:
        return [_load_training(cfg)]
    out = []
    for e in entries:
        if "simulate" in e:
            spec = SimulationSpec(Family(e["simulate"]), int(e.get("n", 2000)), int(e.get("seed", cfg["seed"])),
                                  int(e.get("noise_features", 0)))
            ds = simulate(spec)[0]
            ds.name = e.get("name", ds.name)
        else:
            ds = load_csv(e["path"], e["responses"], name=e.get("name"))
        out.append(ds)
    return out


def _study_models(cfg: dict) -> list[ev.ModelSpec]:
    base = fit_config(cfg)
    entries = cfg["evaluate"]["models"]
    if not entries:
        return [
            ev.ModelSpec("mvlss-G-C", Family.GAUSSIAN_CHOLESKY, config=base),
            ev.ModelSpec("mvlss-G-LRA(5)", Family.GAUSSIAN_LOWRANK, 5, config=base),
            ev.ModelSpec("mvlss-T-C", Family.STUDENT_T, config=base),
            ev.ModelSpec("uvlss-G", univariate=True, config=base),
        ]
    models = []
    for e in entries:
        extra = set(e) - {"name", "family", "rank", "univariate", "fit"}
        if extra:
            raise UsageError(f"unknown model keys {sorted(extra)}")
        config = base.replace(**e.get("fit", {}))
        models.append(ev.ModelSpec(e["name"], Family(e.get("family", "gaussian-chol")), e.get("rank"),
                                   bool(e.get("univariate", False)), config))
    return models


def cmd_evaluate(cfg: dict, out: Path) -> int:
    datasets = _study_datasets(cfg)
    models = _study_models(cfg)
    seed = int(cfg["seed"])
    folds = {}
    for ds in datasets:
        all_folds = make_folds(ds, int(cfg["evaluate"]["folds"]), 0.8, seed)
        write_fold_manifest(all_folds, out / f"folds_{ds.name}.tsv")
        folds[ds.name] = [f for f in all_folds if not f.is_tuning]
    reports = ev.run_study(models, datasets, folds, seed=seed, threads=int(cfg["threads"]))
    with (out / "fold_scores.csv").open("w", encoding="utf-8") as fh:
        fh.write("dataset,model,fold_position,nll\n")
        for r in reports:
            for i, v in enumerate(r.fold_nll):
                fh.write(f"{r.dataset},{r.model_id},{i},{v!r}\n")
    with (out / "failed_folds.csv").open("w", encoding="utf-8") as fh:
        fh.write("dataset,model,fold\n")
        for r in reports:
            for f in r.failed_folds:
                fh.write(f"{r.dataset},{r.model_id},{f}\n")
    table = ev.compare(reports)
    (out / "nll_scores.csv").write_text(table.to_csv(), encoding="utf-8")
    (out / "nll_table.txt").write_text(table.nll_table(), encoding="utf-8")
    (out / "variability_table.txt").write_text(table.variability_table(), encoding="utf-8")
    print(table.nll_table())
    print(table.variability_table())
    return EXIT_OK


def cmd_ablate(cfg: dict, out: Path) -> int:
    datasets = _study_datasets(cfg)
    seed = int(cfg["seed"])
    results = {}
    for ds in datasets:
        folds = ev.evaluation_folds(ds, int(cfg["evaluate"]["folds"]), seed)
        results[ds.name] = ev.ablate_rank(ds, cfg["ablate"]["ranks"], fit_config(cfg), folds, seed,
                                          threads=int(cfg["threads"]))
    (out / "ablation.csv").write_text(ev.ablation_csv(results), encoding="utf-8")
    text = ev.ablation_table(results)
    (out / "ablation_table.txt").write_text(text, encoding="utf-8")
    print(text)
    return EXIT_OK


def gradcheck_specs(families, dims, lra_rank):
    fams = list(Family) if families == "all" else [Family(f) for f in str(families).split(",")]
    return [DistributionSpec(f, d, lra_rank if f is Family.GAUSSIAN_LOWRANK else None) for f in fams for d in dims]


def cmd_gradcheck(cfg: dict, out: Path) -> int:
    gc = cfg["gradcheck"]
    rng = np.random.default_rng(int(cfg["seed"]))
    rows = []
    ok = True
    for spec in gradcheck_specs(gc["families"], gc["dims"], int(gc["lra_rank"])):
        gerr = herr = 0.0
        for _ in range(int(gc["trials"])):
            raw, y = random_case(spec, rng)
            rep = fd_check(spec, raw, y, float(gc["step"]))
            gerr, herr = max(gerr, rep.grad_error), max(herr, rep.hess_error)
        passed = gerr < GRAD_TOL and herr < HESS_TOL
        ok &= passed
        rows.append((spec.family.value, spec.dim, gerr, herr, passed))
        print(f"{spec.family.value:14s} D={spec.dim}  max grad err {gerr:.3e}  max hess err {herr:.3e}  "
              f"{'ok' if passed else 'FAIL'}")
    with (out / "gradcheck.csv").open("w", encoding="utf-8") as fh:
        fh.write("family,dim,max_grad_error,max_hess_error,passed\n")
        for fam, d, g, h, p in rows:
            fh.write(f"{fam},{d},{g!r},{h!r},{int(p)}\n")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_bench(cfg: dict, out: Path) -> int:
    b = cfg["bench"]
    rows = ev.benchmark(b["ns"], b["dims"], b["ranks"], int(b["rounds"]), int(cfg["seed"]))
    (out / "bench.csv").write_text(ev.rows_csv(rows), encoding="utf-8")
    for r in rows:
        print(f"{r['family']:13s} n={r['n']:<6d} D={r['dim']:<3d} K={r['n_params']:<4d} {r['seconds']:.3f}s")
    return EXIT_OK


HANDLERS = {
    "train": cmd_train,
    "predict": cmd_predict,
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvlss", description="Multi-target distributional gradient boosting.")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH")
    common.add_argument("--data", metavar="PATH")
    common.add_argument("--responses", metavar="a,b,c")
    common.add_argument("--family", choices=[f.value for f in Family])
    common.add_argument("--rank", type=int, metavar="R")
    common.add_argument("--rounds", type=int, metavar="N")
    common.add_argument("--learning-rate", type=float, metavar="F")
    common.add_argument("--max-depth", type=int, metavar="N")
    common.add_argument("--gamma", type=float, metavar="F")
    common.add_argument("--subsample", type=float, metavar="F")
    common.add_argument("--colsample", type=float, metavar="F")
    common.add_argument("--min-child-weight", type=float, metavar="F")
    common.add_argument("--early-stopping", type=int, metavar="N")
    common.add_argument("--stabilization", choices=["none", "mad", "l2"])
    common.add_argument("--seed", type=int, metavar="N")
    common.add_argument("--threads", type=int, metavar="N")
    common.add_argument("--out", metavar="DIR")
    common.add_argument("-v", "--verbose", action="store_true")

    sub.add_parser("train", parents=[common], help="fit a model").add_argument("--valid", metavar="PATH")
    sub.add_parser("predict", parents=[common], help="predict distributions").add_argument("--model", metavar="PATH")
    p = sub.add_parser("simulate", parents=[common], help="write a simulated dataset")
    p.add_argument("--n", type=int)
    p.add_argument("--noise-features", type=int)
    sub.add_parser("evaluate", parents=[common], help="multi-model fold study").add_argument("--folds", type=int)
    p = sub.add_parser("ablate", parents=[common], help="low-rank r ablation")
    p.add_argument("--ranks", metavar="r1,r2,...")
    p.add_argument("--folds", type=int)
    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference derivative check")
    p.add_argument("--check-family", metavar="all|NAME[,NAME]", dest="check_family")
    p.add_argument("--trials", type=int)
    p.add_argument("--step", type=float)
    sub.add_parser("bench", parents=[common], help="fit-time scaling curves")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    # accept ``gradcheck --family all`` as an alias for --check-family
    if argv[:1] == ["gradcheck"] and "--family" in argv:
        i = argv.index("--family")
        argv[i] = "--check-family"
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        out = Path(cfg["out"])
        write_resolved(cfg, out)
        return HANDLERS[args.command](cfg, out)
    except NonFinite as exc:
        where = f" (round {exc.round_index})" if exc.round_index is not None else ""
        print(f"error: numeric divergence{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except MvlssError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
