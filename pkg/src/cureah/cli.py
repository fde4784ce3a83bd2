"""Command-line entry point: ``fit``, ``simulate``, ``replicate``, ``predict``.

Exit codes: 0 success, 2 input error, 3 non-convergence, 4 internal error.
Every flag can also come from a JSON ``--config`` file (keys are the flag
names with underscores); flags given on the command line win.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from dataclasses import asdict, replace
from importlib import metadata
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from .baseline import BinGrid
from .data import DataError
from .fitting import FitConfig, fit_model
from .inference import CovarianceResult, parameter_labels, predict_survival, summarize
from .io import dataset_csv, dumps, file_hash, loads, read_dataset, write_all
from .replicate import run_replications
from .simulate import Scenario, format_scenario, parse_scenario, simulate_dataset

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED, EXIT_INTERNAL = 0, 2, 3, 4

log = logging.getLogger("cureah")

DEFAULTS = {
    "n_obs": None,
    "m": None,
    "omega": None,
    "mu_tol": 1e-8,
    "epsilon": 0.6,
    "zeta": 0.1,
    "xi": 0.1,
    "seed": None,
    "jobs": 1,
    "reps": 100,
    "scenario": None,
    "out_dir": ".",
    "tv": None,
    "extrapolation_cap": 0.0,
}


class InputError(Exception):
    pass


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with flag values")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--verbose", "-v", action="store_true")


def _fit_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-obs", dest="n_obs", type=int, help="observations per bin")
    p.add_argument("--m", type=int, help="number of bins (ignored with --n-obs)")
    p.add_argument("--omega", type=float, help="fixed smoothing value; skips its selection")
    p.add_argument("--mu-tol", dest="mu_tol", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--zeta", type=float)
    p.add_argument("--xi", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cureah", description="Mixture-cure additive hazards models for partly interval-censored data")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a dataset")
    p.add_argument("data", help="subject CSV")
    p.add_argument("--tv", help="long-format time-varying covariate CSV")
    _common(p)
    _fit_flags(p)

    p = sub.add_parser("simulate", help="draw a synthetic dataset")
    p.add_argument("--scenario", help="key = value scenario file")
    p.add_argument("--n", type=int)
    p.add_argument("--latent", action="store_true", help="also write the latent sidecar")
    _common(p)

    p = sub.add_parser("replicate", help="Monte Carlo replications of a scenario")
    p.add_argument("--scenario", help="key = value scenario file")
    p.add_argument("--n", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--jobs", type=int)
    _common(p)
    _fit_flags(p)

    p = sub.add_parser("predict", help="predicted survival curve from a saved fit")
    p.add_argument("fit", help="fit.json written by the fit command")
    p.add_argument("--z", required=True, help="comma-separated incidence covariates")
    p.add_argument("--w", default="", help="comma-separated latency covariates")
    p.add_argument("--x-schedule", dest="x_schedule", help="time:value[;value...] pairs joined by commas, e.g. 1.5:0,10:1")
    p.add_argument("--t-grid", dest="t_grid", help="comma-separated times (default: 101 points on the fitted range)")
    p.add_argument("--extrapolation-cap", dest="extrapolation_cap", type=float)
    _common(p)
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    opts = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(cfg, dict):
            raise InputError("config file must hold a JSON object")
        for k, v in cfg.items():
            key = k.replace("-", "_")
            if key not in DEFAULTS and not hasattr(args, key):
                raise InputError(f"unknown config key {k!r}")
            opts[key] = v
    for k, v in vars(args).items():
        if v is not None and k != "config":
            opts[k] = v
    return opts


def _fit_config(opts: dict) -> FitConfig:
    cfg = FitConfig(n_obs=opts.get("n_obs"), m=opts.get("m"), omega=opts.get("omega"))
    try:
        return cfg.with_solver(mu_tol=float(opts["mu_tol"]), epsilon=float(opts["epsilon"]), zeta=float(opts["zeta"]), xi=float(opts["xi"]))
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _manifest(command: str, opts: dict, inputs: dict, seed, timings: dict) -> dict:
    return {
        "command": command,
        "config": {k: v for k, v in sorted(opts.items()) if k not in ("verbose",)},
        "inputs": {name: {"path": str(p), "sha256": file_hash(p)} for name, p in inputs.items()},
        "seed": seed,
        "version": _version(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "timings": timings,
    }


def _fit_document(out, dataset, opts) -> dict:
    fit, cov = out.fit, out.covariance
    labels = parameter_labels(fit.sizes, dataset.names)
    m, p, r, q = fit.sizes
    return {
        "manifest": "manifest.json",
        "converged": fit.converged,
        "status": fit.status,
        "sizes": {"m": m, "p": p, "r": r, "q": q},
        "names": {k: list(v) for k, v in dataset.names.items()},
        "labels": labels,
        "bin_edges": fit.grid.edges,
        "eta": fit.eta,
        "lambda": fit.lam,
        "omega": fit.omega,
        "penalized_loglik": fit.penalized_loglik,
        "loglik": fit.loglik,
        "covariance": None if cov is None else cov.V,
        "active_rows": [] if cov is None else cov.active_rows,
        "covariance_error": out.covariance_error,
        "diagnostics": {
            "mu": fit.mu,
            "iterations": fit.iterations,
            "stationarity": fit.stationarity,
            "primal_residual": fit.primal_residual,
            "min_slack": float(fit.s.min()) if fit.s.size else None,
            "smoothing": [asdict(rec) for rec in out.trace.records],
            "smoothing_stop": out.trace.stop_reason,
        },
    }


def _baseline_csv(summary) -> str:
    b = summary.baseline
    lines = ["t,hazard,se,ci_lo,ci_hi"]
    for row in zip(b["t"], b["hazard"], b["se"], b["lower"], b["upper"]):
        lines.append(",".join("%.17g" % x for x in row))
    return "\n".join(lines) + "\n"


def cmd_fit(opts: dict) -> int:
    t0 = time.perf_counter()
    try:
        dataset = read_dataset(opts["data"], opts.get("tv"))
    except (OSError, DataError) as exc:
        row = getattr(exc, "row", None)
        raise InputError(f"{exc}" + (f" (line {row})" if row is not None and "line" not in str(exc) else "")) from None
    config = _fit_config(opts)
    t1 = time.perf_counter()
    out = fit_model(dataset, config)
    t2 = time.perf_counter()
    out_dir = Path(opts["out_dir"])
    inputs = {"data": opts["data"]} | ({"tv": opts["tv"]} if opts.get("tv") else {})
    doc = _fit_document(out, dataset, opts)
    files = {out_dir / "fit.json": dumps(doc)}
    code = EXIT_OK
    if out.fit.converged and out.covariance is not None:
        summary = summarize(out.fit, out.covariance, dataset.names)
        files[out_dir / "baseline.csv"] = _baseline_csv(summary)
        files[out_dir / "summary.txt"] = summary.table()
        files[out_dir / "summary.json"] = dumps(summary.to_dict())
        print(summary.table(), end="")
    else:
        code = EXIT_NONCONVERGED
        files = {out_dir / "diagnostics.json": dumps(doc)}
        print(f"fit did not produce usable estimates: {out.fit.status}; {out.covariance_error}", file=sys.stderr)
    timings = {"read": t1 - t0, "fit": t2 - t1}
    files[out_dir / "manifest.json"] = dumps(_manifest("fit", opts, inputs, opts.get("seed"), timings))
    write_all(files)
    return code


def _scenario(opts: dict) -> Scenario:
    text = ""
    if opts.get("scenario"):
        try:
            text = Path(opts["scenario"]).read_text()
        except OSError as exc:
            raise InputError(f"cannot read scenario: {exc}") from None
    try:
        return parse_scenario(text, seed=opts.get("seed"), n=opts.get("n"))
    except (ValueError, TypeError) as exc:
        raise InputError(f"bad scenario: {exc}") from None


def cmd_simulate(opts: dict) -> int:
    t0 = time.perf_counter()
    sc = _scenario(opts)
    dataset, latent = simulate_dataset(sc, return_latent=True)
    subj, tv = dataset_csv(dataset)
    out_dir = Path(opts["out_dir"])
    files = {out_dir / "data.csv": subj, out_dir / "scenario.txt": format_scenario(sc)}
    if tv is not None:
        files[out_dir / "tv.csv"] = tv
    if opts.get("latent"):
        files[out_dir / "latent.json"] = dumps(latent.to_dict())
    inputs = {"scenario": opts["scenario"]} if opts.get("scenario") else {}
    files[out_dir / "manifest.json"] = dumps(_manifest("simulate", opts, inputs, sc.seed, {"simulate": time.perf_counter() - t0}))
    write_all(files)
    print(f"wrote {len(dataset)} subjects to {out_dir / 'data.csv'}")
    return EXIT_OK


def cmd_replicate(opts: dict) -> int:
    t0 = time.perf_counter()
    sc = _scenario(opts)
    config = _fit_config(opts)
    reps, jobs = int(opts["reps"]), int(opts["jobs"])
    if reps < 2 or jobs < 1:
        raise InputError("need --reps >= 2 and --jobs >= 1")
    try:
        report, results = run_replications(sc, reps, config, jobs)
    except RuntimeError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_NONCONVERGED
    out_dir = Path(opts["out_dir"])
    files = {
        out_dir / "report.json": dumps(report.to_dict()),
        out_dir / "report.csv": report.to_csv(),
        out_dir / "replicates.json": dumps([asdict(r) for r in results]),
    }
    inputs = {"scenario": opts["scenario"]} if opts.get("scenario") else {}
    files[out_dir / "manifest.json"] = dumps(_manifest("replicate", opts, inputs, sc.seed, {"replicate": time.perf_counter() - t0}))
    write_all(files)
    print(report.to_csv(), end="")
    print(f"used {report.used} of {report.reps} replicates; excluded {report.excluded}")
    return EXIT_OK


def _floats(text: str, what: str) -> np.ndarray:
    if not text:
        return np.zeros(0)
    try:
        return np.array([float(x) for x in text.split(",")])
    except ValueError:
        raise InputError(f"{what}: expected comma-separated numbers") from None


def load_fit(path) -> SimpleNamespace:
    """Just enough of a saved fit for prediction."""
    try:
        doc = loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read fit: {exc}") from None
    if doc.get("covariance") is None:
        raise InputError("the saved fit has no covariance")
    s = doc["sizes"]
    V = np.asarray(doc["covariance"], dtype=float)
    return SimpleNamespace(
        eta=np.asarray(doc["eta"], dtype=float),
        grid=BinGrid(np.asarray(doc["bin_edges"], dtype=float)),
        sizes=(s["m"], s["p"], s["r"], s["q"]),
        covariance=CovarianceResult(V, np.asarray(doc.get("active_rows", []), dtype=int), 0),
    )


def cmd_predict(opts: dict) -> int:
    fit = load_fit(opts["fit"])
    z = _floats(opts["z"], "--z")
    w = _floats(opts.get("w", ""), "--w")
    schedule = None
    if opts.get("x_schedule"):
        try:
            pairs = [item.split(":") for item in opts["x_schedule"].split(",")]
            times = [float(t) for t, _ in pairs]
            values = [[float(v) for v in vals.split(";")] for _, vals in pairs]
        except ValueError:
            raise InputError("--x-schedule: expected time:value pairs") from None
        schedule = (times, values)
    t_grid = _floats(opts["t_grid"], "--t-grid") if opts.get("t_grid") else None
    try:
        curve = predict_survival(fit, fit.covariance, z, w, schedule, t_grid, float(opts["extrapolation_cap"]))
    except ValueError as exc:
        raise InputError(str(exc)) from None
    out_dir = Path(opts["out_dir"])
    lines = ["t,survival,se,ci_lo,ci_hi"]
    for row in zip(curve.t, curve.survival, curve.se, curve.lower, curve.upper):
        lines.append(",".join("%.17g" % x for x in row))
    write_all({
        out_dir / "predict.csv": "\n".join(lines) + "\n",
        out_dir / "manifest.json": dumps(_manifest("predict", opts, {"fit": opts["fit"]}, None, {})),
    })
    print(f"wrote {curve.t.size} points to {out_dir / 'predict.csv'}")
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "replicate": cmd_replicate, "predict": cmd_predict}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        opts = resolve(args)
        return COMMANDS[args.command](opts)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # anything else is a bug
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
