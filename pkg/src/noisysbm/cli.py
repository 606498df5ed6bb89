"""Command-line interface: simulate, fit, infer, benchmark and report."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .evaluation import (
    BenchmarkError,
    ScenarioConfig,
    long_format,
    read_records,
    run_benchmark,
    scenario_presets,
)
from .model import (
    ModelParams,
    edge_pairs,
    pi0_pi1,
    p_value,
    read_observations,
    write_adjacency,
    write_labels,
    write_observations,
)
from .mtp import (
    DecisionMatrix,
    SubcriticalAlphaError,
    abh,
    bh,
    l_values,
    procedure_qvalue,
    storey_pi0,
)
from .sampler import sample_scenario
from .vem import FitConfig, FitError, FitResult, select_q

INFER_PROCEDURES = ("vem", "oracle", "bh", "abh-storey", "abh-vem")


class CliError(Exception):
    pass


def load_json(path) -> object:
    """Parse a JSON file, reporting syntax errors with their line and column."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None


def _alpha(text: str) -> float:
    try:
        a = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0 < a < 1:
        raise argparse.ArgumentTypeError(f"alpha must lie in (0, 1), got {text}")
    return a


def _scenario_from(obj, where) -> ScenarioConfig:
    try:
        return ScenarioConfig.from_dict(obj)
    except (TypeError, ValueError, KeyError) as exc:
        raise CliError(f"{where}: invalid scenario: {exc}") from None


def _scenarios(obj, path) -> list[ScenarioConfig]:
    if isinstance(obj, dict) and "scenarios" in obj:
        obj = obj["scenarios"]
    if isinstance(obj, dict):
        obj = [obj]
    if not isinstance(obj, list):
        raise CliError(f"{path}: expected a scenario object or a list of scenarios")
    return [_scenario_from(o, f"{path}[{k}]") for k, o in enumerate(obj)]


def _fit_config(args) -> FitConfig:
    overrides = {"seed": args.seed}
    if args.restarts is not None:
        overrides["restarts"] = args.restarts
    return FitConfig(**overrides)


# ---------------------------------------------------------------------------
# subcommands

def cmd_simulate(args) -> int:
    obj = load_json(args.config)
    if isinstance(obj, dict):
        obj.setdefault("name", Path(args.config).stem)
    cfg = _scenario_from(obj, args.config)
    latent, X = sample_scenario(cfg.graph, cfg.noise, np.random.default_rng(args.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_observations(out / "X.csv", X)
    write_adjacency(out / "A.csv", latent.A, X.n)
    if latent.Z is not None:
        write_labels(out / "Z.csv", latent.Z)
        theta = ModelParams.from_dict(cfg.graph.theta)
        truth = {"Q": theta.Q, "theta": theta.to_dict(), "Z_hat": (latent.Z + 1).tolist()}
        (out / "truth.json").write_text(json.dumps(truth, indent=2) + "\n")
    print(f"wrote n={X.n} m={X.m} edges={int(latent.A.sum())} to {out}")
    return 0


def cmd_fit(args) -> int:
    X = read_observations(args.x)
    q_hat, fits = select_q(X, args.qmax, _fit_config(args))
    result = fits[q_hat].to_dict()
    result["Q_hat"] = q_hat
    result["icl_table"] = {str(q): fits[q].icl for q in sorted(fits)}
    result["n"] = X.n
    result["fit_config"] = vars(_fit_config(args))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(result, indent=2) + "\n")
    icl = ", ".join(f"Q={q}: {fits[q].icl:.2f}" for q in sorted(fits))
    print(f"Q_hat={q_hat} (ICL {icl}) -> {out}")
    return 0


def _load_fit(path, n) -> FitResult:
    obj = load_json(path)
    try:
        fit = FitResult.from_dict(obj)
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"{path}: not a fit file: {exc}") from None
    if fit.Z_hat.shape != (n,):
        raise CliError(f"{path}: fit has {fit.Z_hat.shape[0]} labels but the data has n={n}")
    if fit.Z_hat.min() < 0 or fit.Z_hat.max() >= fit.Q:
        raise CliError(f"{path}: labels outside 1..{fit.Q}")
    return fit


def _decisions(X, proc, alpha, fit, sigma0) -> DecisionMatrix:
    if proc in ("vem", "oracle"):
        return procedure_qvalue(X, alpha, fit.Z_hat, fit.theta)
    p = p_value(X.values, sigma0)
    if proc == "bh":
        dec = bh(p, alpha)
    elif proc == "abh-storey":
        dec = abh(p, alpha, storey_pi0(p))
    else:
        dec = abh(p, alpha, pi0_pi1(fit.theta)[0])
    if fit is not None:
        dec.l_values = l_values(X, fit.Z_hat, fit.theta)
    return dec


def write_decisions(path, X, dec: DecisionMatrix) -> None:
    rows, cols = edge_pairs(X.n)
    lv = dec.l_values
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "x", "l_value", "q_value", "rejected"])
        for e in range(X.m):
            w.writerow([rows[e] + 1, cols[e] + 1, repr(float(X.values[e])),
                        "" if lv is None else repr(float(lv[e])), repr(float(dec.q_values[e])),
                        int(dec.rejected[e])])


def cmd_infer(args) -> int:
    X = read_observations(args.x)
    proc = args.procedure
    needs_fit = proc in ("vem", "oracle", "abh-vem")
    if needs_fit and args.fit is None:
        raise CliError(f"procedure {proc} needs --fit")
    fit = _load_fit(args.fit, X.n) if args.fit is not None else None
    if args.sigma0 is not None:
        sigma0 = args.sigma0
    elif fit is not None:
        sigma0 = fit.theta.sigma0
    else:
        sigma0 = 1.0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for alpha in args.alpha:
        dec = _decisions(X, proc, alpha, fit, sigma0)
        path = out / f"decisions_{proc}_alpha{alpha:g}.csv"
        write_decisions(path, X, dec)
        print(f"{proc} alpha={alpha:g}: {dec.n_rejected} of {X.m} edges rejected -> {path}")
    return 0


def cmd_benchmark(args) -> int:
    configs = _scenarios(load_json(args.config), args.config)
    if args.seed is not None:
        for cfg in configs:
            cfg.seed = args.seed
    out = run_benchmark(configs, args.out, workers=args.workers)
    print(f"wrote {out} and {out.with_suffix('.provenance.json')}")
    return 0


def cmd_report(args) -> int:
    try:
        records = read_records(args.results)
    except FileNotFoundError:
        raise CliError(f"cannot read {args.results}") from None
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "procedure", "alpha", "metric", "estimate", "se"])
        for scen, proc, alpha, metric, est, se in long_format(records):
            w.writerow([scen, proc, repr(alpha), metric, repr(est), "" if math.isnan(se) else repr(se)])
    print(f"wrote {len(records) * 3} rows to {out}")
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="noisysbm", description=__doc__)
    parser.add_argument("--print-config", choices=sorted(scenario_presets()), metavar="NAME",
                        help="print a preset scenario config (%(choices)s) and exit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("simulate", help="draw one data set from a scenario config")
    p.add_argument("config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="VEM fit with ICL choice of the number of groups")
    p.add_argument("x", help="edge-list CSV with header i,j,x")
    p.add_argument("--qmax", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int)
    p.add_argument("--out", required=True, help="output JSON")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("infer", help="edge decisions at one or more levels")
    p.add_argument("x", help="edge-list CSV with header i,j,x")
    p.add_argument("--fit", help="fit JSON (or truth.json for the oracle)")
    p.add_argument("--procedure", choices=INFER_PROCEDURES, default="vem")
    p.add_argument("--alpha", type=_alpha, action="append", required=True)
    p.add_argument("--sigma0", type=float, help="null sd for p-values (default: from the fit, else 1)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("benchmark", help="Monte Carlo FDR/TDR estimates")
    p.add_argument("config", help="scenario JSON (object, list, or {\"scenarios\": [...]})")
    p.add_argument("--seed", type=int, help="override every scenario's master seed")
    p.add_argument("--workers", type=int, help="worker processes (default: $NOISYSBM_WORKERS or 1)")
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("report", help="long-format table from benchmark results")
    p.add_argument("results")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.print_config:
        print(json.dumps(scenario_presets()[args.print_config].to_dict(), indent=2))
        return 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("noisysbm: error: a subcommand is required", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except SubcriticalAlphaError as exc:
        print(f"noisysbm: error: sub-critical level: {exc}", file=sys.stderr)
    except (CliError, FitError, BenchmarkError, ValueError, OSError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"noisysbm: error: {msg}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
