"""Command-line entry point ``eivsub``.

Exit codes: 0 success, 2 bad configuration or input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench
from .core import ErrorCovariance, estimate_sigma_uu, full_asymptotic_covariance, full_corrected_estimate
from .errors import ConfigError, EIVError, NumericalError
from .ingest import ColumnSpec, load_csv
from .perturbation import cleps_estimate
from .sampling import (
    iboss_select,
    leverage_probs,
    optimal_probs_mv,
    optimal_probs_mvc,
    uniform_probs,
)
from .simgen import SimScenario, generate
from .subsample import draw_with_replacement, plugin_covariance, two_step_estimate, weighted_corrected_estimate

log = logging.getLogger("eivsub")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _add_data_args(sp):
    sp.add_argument("--input", required=True, help="CSV file with a header row")
    sp.add_argument("--response", required=True)
    sp.add_argument("--covariates", required=True, help="comma-separated covariate names")
    sp.add_argument(
        "--replicate",
        action="append",
        default=[],
        metavar="NAME=COL1,COL2",
        help="replicate columns for one covariate; repeatable",
    )
    sp.add_argument("--sigma-u2", type=float, help="known isotropic error variance")
    sp.add_argument("--standardize", action="store_true")


def _load_problem(args):
    """Dataset and error covariance from the data flags.

    Replicated covariates enter as record means with ``Sigma_hat / J``.
    """
    groups = {}
    for item in args.replicate:
        name, sep, cols = item.partition("=")
        if not sep or not cols:
            raise ConfigError(f"--replicate expects NAME=COL1,COL2, got {item!r}")
        groups[name.strip()] = [c.strip() for c in cols.split(",")]
    spec = ColumnSpec(args.response, [c.strip() for c in args.covariates.split(",")], groups, args.standardize)
    rep = load_csv(args.input, spec)
    if rep.dropped_rows:
        print(f"dropped {rep.dropped_rows} rows with missing or non-numeric fields", file=sys.stderr)
    if groups:
        if args.sigma_u2 is not None:
            raise ConfigError("--sigma-u2 and --replicate are mutually exclusive")
        j = int(rep.counts[0])
        if not np.all(rep.counts == j):
            raise ConfigError("all records need the same number of replicates")
        return rep.averaged(), estimate_sigma_uu(rep).scaled(1.0 / j), spec.covariates
    data = rep.first()
    if args.sigma_u2 is None:
        sigma = ErrorCovariance.zero(data.p)
    else:
        sigma = ErrorCovariance.isotropic(data.p, args.sigma_u2)
    return data, sigma, spec.covariates


def _write_or_print(header, rows, output):
    fh = open(output, "w", newline="", encoding="utf-8") if output else sys.stdout
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    finally:
        if output:
            fh.close()


def cmd_estimate(args) -> int:
    data, sigma, names = _load_problem(args)
    method = args.method
    if method == "FULL":
        est = full_corrected_estimate(data, sigma, ridge=args.ridge)
        beta, cov = est.beta, full_asymptotic_covariance(data, est.beta, sigma)
    elif method == "UNIF":
        sub = draw_with_replacement(uniform_probs(data.n), args.r0 + args.r, args.seed)
        beta = weighted_corrected_estimate(sub, data, sigma, ridge=args.ridge).beta
        cov = plugin_covariance(sub, beta, data, sigma)
    elif method in ("A-Opt", "L-Opt"):
        res = two_step_estimate(data, sigma, args.r0, args.r, "mV" if method == "A-Opt" else "mVc", args.seed)
        beta, cov = res.beta, res.cov
        if res.cov_clipped:
            print("note: plug-in covariance was projected onto the PSD cone", file=sys.stderr)
    else:
        res = cleps_estimate(data, sigma, min(args.r0 + args.r, data.n), args.m, args.seed)
        beta = res.beta_mean
        cov = res.cov if res.cov is not None else np.full((data.p, data.p), np.nan)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    rows = [(name, repr(float(b)), repr(float(s))) for name, b, s in zip(names, beta, se)]
    _write_or_print(("covariate", "coef", "std_err"), rows, args.output)
    return EXIT_OK


def cmd_probs(args) -> int:
    data, sigma, _ = _load_problem(args)
    design = args.design
    if design == "IBOSS":
        plan = iboss_select(data, args.k)
        _write_or_print(("index",), [(int(i),) for i in plan.indices], args.output)
        return EXIT_OK
    if design == "UNIF":
        plan = uniform_probs(data.n)
    elif design == "BLEV":
        plan = leverage_probs(data)
    else:
        naive = design.startswith("U")
        s = ErrorCovariance.zero(data.p) if naive else sigma
        pilot_sub = draw_with_replacement(uniform_probs(data.n), args.r0, (args.seed, "pilot"))
        pilot = weighted_corrected_estimate(pilot_sub, data, s).beta
        if design.endswith("mVc"):
            plan = optimal_probs_mvc(data, pilot, design=design)
        else:
            plan = optimal_probs_mv(data, pilot, s, design=design)
    _write_or_print(("index", "prob"), [(i, repr(float(p))) for i, p in enumerate(plan.probs)], args.output)
    return EXIT_OK


def _scenario_from_args(args) -> SimScenario:
    fields = {}
    if args.config:
        try:
            fields = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(fields, dict):
            raise ConfigError("scenario config must be a JSON object")
        fields = dict(fields.get("scenario", fields))
    for key in ("case", "n", "p", "sigma_u2", "noise_var"):
        val = getattr(args, key)
        if val is not None:
            fields[key] = val
    if args.seed is not None:
        fields["seed"] = args.seed
    if "beta_true" in fields and fields["beta_true"] is not None:
        fields["beta_true"] = tuple(fields["beta_true"])
    try:
        return SimScenario(**fields)
    except TypeError as exc:
        raise ConfigError(f"bad scenario: {exc}") from exc


def cmd_simulate(args) -> int:
    sc = _scenario_from_args(args)
    gen = generate(sc)
    p = sc.p
    header = ["y"] + [f"w{j + 1}" for j in range(p)] + [f"x{j + 1}" for j in range(p)] + [f"u{j + 1}" for j in range(p)]
    block = np.column_stack([gen.dataset.y, gen.dataset.w, gen.x_true, gen.u])
    _write_or_print(header, ([repr(float(v)) for v in row] for row in block), args.output)
    return EXIT_OK


def cmd_bench(args) -> int:
    if not args.config:
        raise ConfigError("bench requires --config")
    cfg = bench.load_config(args.config, master_seed=args.seed, threads=args.threads, output_path=args.output)
    records = bench.run(cfg)
    if cfg.output_path:
        bench.write_results(records, cfg.output_path)
    else:
        _write_or_print(bench.RECORD_COLUMNS, ([bench._fmt(v) for v in bench.astuple(r)] for r in records), None)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=_u64, help="unsigned 64-bit seed")
    common.add_argument("--threads", type=_positive, help="worker threads")
    common.add_argument("--output", help="output path (default: stdout)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="eivsub", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", parents=[common], help="fit one dataset and print coefficients with standard errors")
    _add_data_args(est)
    est.add_argument("--method", choices=["FULL", "UNIF", "A-Opt", "L-Opt", "CLEPS"], default="A-Opt")
    est.add_argument("--r0", type=_positive, default=500)
    est.add_argument("--r", type=int, default=1000)
    est.add_argument("--m", type=_positive, default=10)
    est.add_argument("--ridge", action="store_true", help="ridge fallback when the full or uniform Gram is singular")
    est.set_defaults(func=cmd_estimate)

    pr = sub.add_parser("probs", parents=[common], help="write a sampling plan as CSV")
    _add_data_args(pr)
    pr.add_argument("--design", choices=["UNIF", "BLEV", "mV", "mVc", "UmV", "UmVc", "IBOSS"], default="mV")
    pr.add_argument("--r0", type=_positive, default=500, help="uniform pilot size for mV/mVc designs")
    pr.add_argument("--k", type=_positive, default=1000, help="subdata size for IBOSS")
    pr.set_defaults(func=cmd_probs)

    sim = sub.add_parser("simulate", parents=[common], help="write a synthetic dataset as CSV")
    sim.add_argument("--case", choices=["Normal", "StudentT3"])
    sim.add_argument("--n", type=_positive)
    sim.add_argument("--p", type=_positive)
    sim.add_argument("--sigma-u2", dest="sigma_u2", type=float)
    sim.add_argument("--noise-var", dest="noise_var", type=float)
    sim.set_defaults(func=cmd_simulate)

    be = sub.add_parser("bench", parents=[common], help="run a benchmark config")
    be.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command in ("estimate", "probs") and args.seed is None:
        args.seed = 0
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (EIVError, FileNotFoundError, IsADirectoryError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
