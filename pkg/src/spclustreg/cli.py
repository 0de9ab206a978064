"""Command-line entry point: ``spclustreg {fit,predict,simulate,bootstrap}``.

Exit codes: 0 success, 1 data error, 2 usage error, 3 fit did not converge,
4 too many failed bootstrap replicates.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    DataError,
    SpatialDataset,
    blend_cross_weights,
    blend_weights,
    covariate_knn_weights,
    cross_covariate_knn_weights,
    cross_exp_weights,
    cross_knn_weights,
    exp_weights,
    knn_weights,
    load_dataset,
)
from .fit import FitConfig, FitResult, scr_fit, select_groups, sfcr_fit
from .predict import BootstrapError, bootstrap_se, predict_assignment, predict_fuzzy
from .simulate import (
    gen_covariates,
    gen_locations,
    gen_response,
    scenario1_truth,
    scenario2_truth,
    write_scenario,
)

log = logging.getLogger("spclustreg")

EXIT_OK, EXIT_DATA, EXIT_USAGE, EXIT_NOT_CONVERGED, EXIT_BOOTSTRAP = 0, 1, 2, 3, 4
JOBS_ENV = "SPCLUSTREG_JOBS"


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers

def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _prepare_out_dir(path, force: bool) -> Path:
    out = Path(path)
    if out.exists() and any(out.iterdir()) and not force:
        raise UsageError(f"output directory {out} is not empty (use --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, args, inputs, seed, started: float) -> None:
    config = {k: v for k, v in vars(args).items() if k != "func"}
    manifest = {
        "command": command,
        "config": config,
        "inputs": {str(p): _digest(p) for p in inputs},
        "seed": seed,
        "version": __version__,
        "duration_seconds": time.perf_counter() - started,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


def _parse_grid(text: str) -> list[int]:
    """``"5:30:5"`` -> [5, 10, ..., 30]; ``"1,2,4"`` -> [1, 2, 4]."""
    try:
        if ":" in text:
            parts = [int(v) for v in text.split(":")]
            start, stop = parts[0], parts[1]
            step = parts[2] if len(parts) > 2 else 1
            grid = list(range(start, stop + 1, step))
        else:
            grid = [int(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"cannot parse G grid {text!r}") from None
    if not grid or min(grid) < 1:
        raise UsageError(f"G grid {text!r} must contain positive integers")
    return grid


def _parse_weight_spec(spec: str):
    kind, _, rest = spec.partition(":")
    try:
        vals = [float(v) for v in rest.split(":")] if rest else []
    except ValueError:
        raise UsageError(f"cannot parse weights spec {spec!r}") from None
    if kind in ("knn", "blend"):
        if len(vals) != 1 or vals[0] != int(vals[0]) or vals[0] < 1:
            raise UsageError(f"{kind} weights need a positive integer k, e.g. {kind}:5")
        return kind, (int(vals[0]),)
    if kind == "exp":
        if len(vals) not in (1, 2) or vals[0] <= 0:
            raise UsageError("exp weights need a positive bandwidth, e.g. exp:0.1 or exp:0.1:1e-8")
        return kind, tuple(vals)
    raise UsageError(f"unknown weights kind {kind!r}; use knn:K, exp:BW[:CUTOFF] or blend:K")


def build_weights(spec: str, dataset: SpatialDataset):
    kind, vals = _parse_weight_spec(spec)
    if kind == "knn":
        return knn_weights(dataset, vals[0])
    if kind == "exp":
        return exp_weights(dataset, *vals)
    return blend_weights(knn_weights(dataset, vals[0]), covariate_knn_weights(dataset, vals[0]))


def build_cross_weights(spec: str, new_locations, fit: FitResult, new_covariates=None):
    kind, vals = _parse_weight_spec(spec)
    if kind == "knn":
        return cross_knn_weights(new_locations, fit.locations, vals[0])
    if kind == "exp":
        return cross_exp_weights(new_locations, fit.locations, *vals)
    if new_covariates is None or fit.covariates is None:
        raise UsageError("blend cross-weights need covariates for both fitted and new locations")
    spatial = cross_knn_weights(new_locations, fit.locations, vals[0])
    covar = cross_covariate_knn_weights(new_covariates[:, 1:], fit.covariates[:, 1:], vals[0])
    return blend_cross_weights(spatial, covar)


def _load(path, exposure_column="a") -> SpatialDataset:
    with open(path, newline="") as fh:
        header = fh.readline()
    has_a = exposure_column in [h.strip() for h in header.replace("\t", ",").split(",")]
    schema = {"a": exposure_column} if has_a else None
    return load_dataset(path, schema=schema, has_exposure=has_a)


def _default_jobs() -> int:
    try:
        return max(1, int(os.environ.get(JOBS_ENV, "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# commands

def cmd_fit(args) -> int:
    started = time.perf_counter()
    out = _prepare_out_dir(args.out_dir, args.force)
    if (args.G is None) == (args.G_grid is None):
        raise UsageError("give exactly one of --G or --G-grid")
    dataset = _load(args.data)
    weights = build_weights(args.weights, dataset)
    config = FitConfig(
        phi=args.phi, delta=args.delta, tol=args.tol, max_iterations=args.max_iterations,
        restarts=args.restarts, seed=args.seed, init_strategy=args.init,
        membership_update=args.update,
    )
    if args.G_grid is not None:
        grid = _parse_grid(args.G_grid)
        fit = select_groups(dataset, args.family, weights, grid, config, mode=args.mode, n_jobs=args.jobs)
        with open(out / "ic_table.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["G", "ic"])
            for G, ic in sorted(fit.ic_table.items()):
                w.writerow([G, repr(float(ic))])
    else:
        fitter = scr_fit if args.mode == "scr" else sfcr_fit
        fit = fitter(dataset, args.family, weights, args.G, config)
    fit.weights_spec = args.weights
    (out / "fit.json").write_text(fit.to_json(indent=1) + "\n")
    _write_location_tables(out, fit)
    _write_manifest(out, "fit", args, [args.data], args.seed, started)
    log.info("G=%d IC=%.4f iterations=%d converged=%s", fit.G, fit.ic, fit.iterations, fit.converged)
    return EXIT_OK if fit.converged else EXIT_NOT_CONVERGED


def _write_location_tables(out: Path, fit: FitResult) -> None:
    names = list(fit.covariate_names)
    header = ["id", "s1", "s2", "label"]
    if fit.fuzzy is not None:
        header += [f"pi_{g + 1}" for g in range(fit.G)]
    header += [f"beta_{nm}" for nm in names]
    with open(out / "locations.csv", "w", newline="") as fh, \
            open(out / "long.csv", "w", newline="") as fl:
        w, wl = csv.writer(fh), csv.writer(fl)
        w.writerow(header)
        wl.writerow(["location", "quantity", "value"])
        for i in range(fit.labels.shape[0]):
            vals = [fit.ids[i], *map(repr, map(float, fit.locations[i])), int(fit.labels[i]) + 1]
            long = [("label", int(fit.labels[i]) + 1)]
            if fit.fuzzy is not None:
                vals += [repr(float(v)) for v in fit.fuzzy[i]]
                long += [(f"pi_{g + 1}", repr(float(v))) for g, v in enumerate(fit.fuzzy[i])]
            coefs = [repr(float(v)) for v in fit.per_location_coefficients[i]]
            vals += coefs
            long += [(f"beta_{nm}", v) for nm, v in zip(names, coefs)]
            w.writerow(vals)
            for q, v in long:
                wl.writerow([fit.ids[i], q, v])


def _read_new_locations(path, p: int):
    """ids, coordinates and, when present, covariates (with intercept) and exposure."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DataError(f"{path} has no data rows")
    cols = rows[0].keys()
    for c in ("s1", "s2"):
        if c not in cols:
            raise DataError(f"missing column '{c}' in {path}")
    xcols = [c for c in cols if c.startswith("x")]

    def num(r, c, i):
        try:
            return float(r[c])
        except (TypeError, ValueError):
            raise DataError(f"non-numeric value {r[c]!r} in column '{c}' at row {i + 1}") from None

    ids = [r.get("id") or str(i + 1) for i, r in enumerate(rows)]
    locs = np.array([[num(r, "s1", i), num(r, "s2", i)] for i, r in enumerate(rows)])
    X = None
    if xcols:
        if len(xcols) + 1 != p:
            raise DataError(f"{path} has {len(xcols)} covariates but the fit expects {p - 1}")
        X = np.column_stack([np.ones(len(rows)),
                             np.array([[num(r, c, i) for c in xcols] for i, r in enumerate(rows)])])
    a = np.array([num(r, "a", i) for i, r in enumerate(rows)]) if "a" in cols else None
    return ids, locs, X, a


def cmd_predict(args) -> int:
    started = time.perf_counter()
    out = _prepare_out_dir(args.out_dir, args.force)
    try:
        fit = FitResult.from_json(Path(args.fit).read_text())
    except (OSError, KeyError, ValueError, TypeError) as exc:
        raise DataError(f"cannot read fit result {args.fit}: {exc}") from None
    if fit.locations is None:
        raise DataError("fit result carries no location coordinates")
    ids, locs, X, a = _read_new_locations(args.new_locations, fit.coefficients.shape[1])
    cross = build_cross_weights(args.weights or fit.weights_spec or "knn:5", locs, fit, X)
    names = list(fit.covariate_names)
    header = ["id", "s1", "s2", "label"]
    if args.mode == "fuzzy":
        probs, coefs = predict_fuzzy(fit, cross, args.phi, args.delta)
        labels = np.argmax(probs, axis=1)
        header += [f"pi_{g + 1}" for g in range(fit.G)]
    else:
        labels = predict_assignment(fit, cross)
        probs, coefs = None, fit.coefficients[labels]
    header += [f"beta_{nm}" for nm in names]
    yhat = None
    if X is not None and (fit.family != "negbin" or a is not None):
        eta = np.einsum("ij,ij->i", X, coefs)
        yhat = a * np.exp(eta) if fit.family == "negbin" else eta
        header.append("yhat")
    with open(out / "predictions.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in range(locs.shape[0]):
            row = [ids[r], *map(repr, map(float, locs[r])), int(labels[r]) + 1]
            if probs is not None:
                row += [repr(float(v)) for v in probs[r]]
            row += [repr(float(v)) for v in coefs[r]]
            if yhat is not None:
                row.append(repr(float(yhat[r])))
            w.writerow(row)
    _write_manifest(out, "predict", args, [args.fit, args.new_locations], fit.config.seed, started)
    return EXIT_OK


def cmd_simulate(args) -> int:
    started = time.perf_counter()
    out = _prepare_out_dir(args.out_dir, args.force)
    rng = np.random.default_rng(args.seed)
    locs = gen_locations(args.n, rng)
    X = gen_covariates(locs, args.eta, args.r, rng)
    truth = scenario1_truth(locs) if args.scenario == 1 else scenario2_truth(locs, args.tau2, rng)
    y = gen_response(truth, X, rng)
    write_scenario(out / "data.csv", out / "truth.csv", truth, X, y)
    _write_manifest(out, "simulate", args, [], args.seed, started)
    return EXIT_OK


def cmd_bootstrap(args) -> int:
    started = time.perf_counter()
    out = _prepare_out_dir(args.out_dir, args.force)
    try:
        fit = FitResult.from_json(Path(args.fit).read_text())
    except (OSError, KeyError, ValueError, TypeError) as exc:
        raise DataError(f"cannot read fit result {args.fit}: {exc}") from None
    dataset = _load(args.data)
    if dataset.n != fit.labels.shape[0]:
        raise DataError(f"data has {dataset.n} rows but the fit has {fit.labels.shape[0]} locations")
    weights = build_weights(args.weights or fit.weights_spec or "knn:5", dataset)
    try:
        se = bootstrap_se(fit, dataset, fit.family, weights, B=args.B, seed=args.seed, n_jobs=args.jobs)
    except BootstrapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        _write_manifest(out, "bootstrap", args, [args.fit, args.data], args.seed, started)
        return EXIT_BOOTSTRAP
    (out / "se.json").write_text(se.to_json(indent=1) + "\n")
    _write_manifest(out, "bootstrap", args, [args.fit, args.data], args.seed, started)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spclustreg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out-dir", required=True)
        p.add_argument("--force", action="store_true", help="allow a non-empty output directory")

    p = sub.add_parser("fit", help="fit SCR or SFCR")
    p.add_argument("--data", required=True)
    p.add_argument("--family", choices=["gaussian", "negbin"], default="gaussian")
    p.add_argument("--weights", default="knn:5", help="knn:K | exp:BW[:CUTOFF] | blend:K")
    p.add_argument("--G", type=int)
    p.add_argument("--G-grid", dest="G_grid", help="start:stop:step or comma list")
    p.add_argument("--phi", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--mode", choices=["scr", "sfcr"], default="scr")
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iterations", type=int, default=500)
    p.add_argument("--init", choices=["coordinate-kmeans", "random"], default="coordinate-kmeans")
    p.add_argument("--update", choices=["sequential", "synchronous"], default="sequential")
    p.add_argument("--jobs", type=int, default=_default_jobs())
    common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="interpolate a fit to new locations")
    p.add_argument("--fit", required=True)
    p.add_argument("--new-locations", required=True)
    p.add_argument("--mode", choices=["hard", "fuzzy"], default="hard")
    p.add_argument("--weights", help="cross-weight spec; defaults to the fit's weights")
    p.add_argument("--phi", type=float)
    p.add_argument("--delta", type=float)
    common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("simulate", help="generate a synthetic scenario")
    p.add_argument("--scenario", type=int, choices=[1, 2], required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--eta", type=float, default=0.2)
    p.add_argument("--r", type=float, default=0.75)
    p.add_argument("--tau2", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bootstrap", help="parametric bootstrap standard errors")
    p.add_argument("--fit", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--B", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=_default_jobs())
    p.add_argument("--weights", help="weights spec; defaults to the one stored in the fit")
    common(p)
    p.set_defaults(func=cmd_bootstrap)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
