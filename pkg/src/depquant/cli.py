"""Command-line front door.

Subcommands dispatch the experiment runners from a flat INI config (with
--set overrides), write CSV/JSON artifacts plus a run manifest, and expose
one-shot evaluators for the deterministic rate functions and constants.

Exit codes: 0 success, 2 configuration/validation error, 3 runtime failure
(partial outputs are flagged in the manifest).
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import json
import os
import sys

from . import __version__
from .bahadur import kiefer_limit
from .errors import ConfigError, DepquantError, DomainError, ParameterError
from .linear_process import RATE_KINDS, rate_function
from .experiments import load_config, run_experiment
from .experiments.runners import _prepare_common, _simulate_values

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

EXPERIMENT_COMMANDS = {
    "rate": "rate",
    "uniform-rate": "uniform_rate",
    "oscillation": "oscillation",
    "dichotomy": "dichotomy",
    "trimmed-clt": "trimmed_clt",
    "gmc": "gmc",
}


def _utcnow() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def _config_hash(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _write_manifest(out_dir, experiment_id, config_hash, started, outputs,
                    warnings, status="ok"):
    manifest = {
        "artifact_version": __version__,
        "config_hash": config_hash,
        "started_at": started,
        "finished_at": _utcnow(),
        "status": status,
        "outputs": sorted(outputs),
        "warnings": list(warnings),
    }
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{experiment_id}_manifest.json")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="depquant",
        description=(
            "Simulate dependent sequences and verify quantile/empirical-process "
            "convergence rates by Monte Carlo."
        ),
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_experiment(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to the INI config file")
        p.add_argument("--set", action="append", default=[], metavar="SEC.KEY=VAL",
                       help="override a config value (repeatable)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the base seed")
        p.add_argument("--jobs", type=int, default=None,
                       help="replicate parallelism (default from config)")
        p.add_argument("--out-dir", default=None,
                       help="output directory (overrides [output] dir)")
        p.add_argument("--quiet", action="store_true",
                       help="suppress the summary printout")
        return p

    add_experiment("rate", "pointwise quantile-remainder rate experiment")
    add_experiment("uniform-rate", "uniform remainder over a quantile range")
    add_experiment("oscillation", "local fluctuation modulus experiment")
    add_experiment("dichotomy", "normalized increment distribution experiment")
    add_experiment("trimmed-clt", "trimmed/Winsorized mean CLT experiment")
    add_experiment("gmc", "geometric-moment-contraction decay estimation")
    add_experiment("simulate", "simulate one path and dump it as CSV")

    ev = sub.add_parser("eval-rate-fn",
                        help="print one rate function / constant value")
    ev.add_argument("--kind", required=True,
                    help=f"one of: {', '.join(RATE_KINDS + ('kiefer',))}")
    ev.add_argument("--n", type=float, default=None, help="sample size")
    ev.add_argument("--q", type=float, default=None, help="moment order q")
    ev.add_argument("--beta", type=float, default=None, help="memory exponent")
    ev.add_argument("--p", type=float, default=None, help="quantile level")
    ev.add_argument("--f", type=float, default=None,
                    help="density at the quantile (kiefer)")
    ev.add_argument("--sigma-eps2", type=float, default=None,
                    help="innovation variance")
    ev.add_argument("--c", type=float, default=1.0,
                    help="constant slowly varying factor")
    ev.add_argument("--m", type=int, default=None,
                    help="truncation lag for finite-sum variance kinds")
    ev.add_argument("--quiet", action="store_true", help=argparse.SUPPRESS)
    return parser


def _cmd_eval_rate_fn(args) -> int:
    if args.kind == "kiefer":
        if args.p is None or args.f is None:
            print("eval-rate-fn --kind kiefer needs --p and --f", file=sys.stderr)
            return EXIT_CONFIG
        value = kiefer_limit(args.p, args.f)
    else:
        params = {}
        if args.q is not None:
            params["q"] = args.q
        if args.beta is not None:
            params["beta"] = args.beta
        if args.sigma_eps2 is not None:
            params["sigma_eps2"] = args.sigma_eps2
        if args.m is not None:
            params["M"] = args.m
        params["c"] = args.c
        n = int(args.n) if args.n is not None else None
        value = rate_function(args.kind, n, **params)
    print(f"{value:.6g}")
    return EXIT_OK


def _cmd_simulate(cfg, quiet) -> tuple[list, list]:
    ctx = _prepare_common(cfg, need_oracle=False)
    seed, path = _simulate_values(ctx, 0)
    out_dir = cfg.out_dir or "."
    os.makedirs(out_dir, exist_ok=True)
    out = os.path.join(out_dir, f"{cfg.experiment_id}_path.csv")
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        if hasattr(path, "values"):
            fh.write("k,value,lagged_location,innovation\n")
            m = path.truncation_lag
            for k in range(path.n):
                fh.write(f"{k + 1},{path.values[k]!r},"
                         f"{path.lagged_locations[k]!r},{path.innovations[m + k]!r}\n")
        else:
            fh.write("k,value\n")
            for k, v in enumerate(path):
                fh.write(f"{k + 1},{float(v)!r}\n")
    if not quiet:
        n = path.n if hasattr(path, "n") else len(path)
        print(f"wrote {n} values to {out} (seed {seed})")
    warnings = list(ctx.setup_warnings)
    return [out], warnings


def _print_report(report, quiet):
    if quiet:
        return
    d = report.to_json_dict()
    if "per_n" in d:
        for s in d["per_n"]:
            print(f"  n={s['n']:>8d}  median={s['median']:.6g}  "
                  f"mean={s['mean']:.6g}  count={s['count']}")
        if d.get("slope") is not None:
            print(f"  slope = {d['slope']:.4f} +- {d.get('slope_stderr') or 0:.4f}"
                  f"  (theory {d.get('theoretical_exponent')})")
    elif "distribution" in d:
        t = d["distribution"]
        print(f"  count={t['count']}  mean={t['mean']:.6g}  var={t['variance']:.6g}"
              f"  skew={t['skewness']:.4g}  exkurt={t['excess_kurtosis']:.4g}")
    elif "gmc" in d:
        t = d["gmc"]
        print(f"  r_hat={t['r_hat']:.4f}  slope={t['slope']:.4f}"
              f"  R2={t['r_squared']:.5f}")
    for w in d.get("warnings", []):
        print(f"  warning: {w}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command == "eval-rate-fn":
        try:
            return _cmd_eval_rate_fn(args)
        except (DomainError, ParameterError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG

    mode = EXPERIMENT_COMMANDS.get(args.command, "simulate")
    try:
        cfg = load_config(args.config, mode, overrides=args.set,
                          out_dir=args.out_dir, base_seed=args.seed,
                          jobs=args.jobs)
        config_hash = _config_hash(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    started = _utcnow()
    out_dir = cfg.out_dir or "."
    try:
        if args.command == "simulate":
            outputs, warnings = _cmd_simulate(cfg, args.quiet)
        else:
            result = run_experiment(cfg)
            outputs = list(result.files)
            warnings = list(result.report.warnings)
            if not args.quiet:
                print(f"{cfg.experiment_id} [{mode}]")
                _print_report(result.report, args.quiet)
    except DepquantError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        _write_manifest(out_dir, cfg.experiment_id, config_hash, started,
                        [], [f"runtime failure: {exc}"], status="failed")
        return EXIT_RUNTIME
    manifest_path = _write_manifest(out_dir, cfg.experiment_id, config_hash,
                                    started, outputs, warnings)
    if not args.quiet:
        print(f"manifest: {manifest_path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
