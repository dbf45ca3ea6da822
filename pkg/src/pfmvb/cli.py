"""Command line interface: ``pfmvb fit|predict|sample|simulate|compare``.

Exit codes: 0 success, 1 unexpected failure, 2 usage, 3 data, 4 numerical
failure or non-convergence, 5 scale policy, 6 model schema.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
import warnings

import numpy as np
from scipy import special

from . import __version__
from .artifact import ModelArtifact, artifact_from_posterior
from .dataio import binary_response, ingest_table, read_table, write_matrix
from .diagnostics import DESIGNS, SCENARIOS, compare_methods, simulate_split, test_deviance
from .errors import DataError, MaxIterExceeded, NumericalError, PfmvbError, ScalePolicyExceeded, SchemaError
from .linalg import Dataset, PriorSpec, Scaling, sample_v_gaussian
from .mf import fit_mf, mf_predict
from .oracle import check_gibbs_scale, gibbs_sample
from .pfm import DEFAULT_MC_SAMPLES, fit_pfm, pfm_predict, pfm_sample

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4
EXIT_SCALE = 5
EXIT_SCHEMA = 6


class UsageError(Exception):
    pass


class NotConverged(Exception):
    """Raised after outputs are written when a fitter hit ``max_iter``."""


def exit_code_for(exc) -> int:
    if isinstance(exc, UsageError):
        return EXIT_USAGE
    if isinstance(exc, SchemaError):
        return EXIT_SCHEMA
    if isinstance(exc, ScalePolicyExceeded):
        return EXIT_SCALE
    if isinstance(exc, (NumericalError, NotConverged)):
        return EXIT_NUMERICAL
    if isinstance(exc, (DataError, ValueError, OSError)):
        return EXIT_DATA
    return EXIT_UNEXPECTED


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def _seed(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("seed must be non-negative")
    return v


def _add_data_flags(p):
    p.add_argument("--input", required=True, help="CSV file with a header row")
    p.add_argument("--response", default="y", help="name of the 0/1 response column (default: y)")
    p.add_argument("--pairwise-interactions", action="store_true",
                   help="append all pairwise products of predictors before standardizing")
    p.add_argument("--no-standardize", action="store_true", help="use predictors as given")
    p.add_argument("--no-intercept", action="store_true", help="do not prepend a column of ones")


def _add_prior_flags(p):
    p.add_argument("--prior-sd", type=_positive_float, default=5.0, help="prior sd nu (default: 5)")
    p.add_argument("--prior-scaling", choices=[s.value for s in Scaling], default=Scaling.CONSTANT.value,
                   help="const: nu^2; inv-p: nu^2 / p (default: const)")


def build_parser():
    parser = argparse.ArgumentParser(prog="pfmvb", description="Variational Bayes for probit regression.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a model and write it as JSON")
    _add_data_flags(p)
    _add_prior_flags(p)
    p.add_argument("--method", choices=["mf", "pfm", "gibbs"], default="pfm")
    p.add_argument("--tol", type=_positive_float, default=None, help="convergence tolerance (default: 1e-6)")
    p.add_argument("--max-iter", type=_positive_int, default=None)
    p.add_argument("--seed", type=_seed, default=None, help="required for --method gibbs")
    p.add_argument("--n-draws", type=_positive_int, default=20_000, help="gibbs draws kept (default: 20000)")
    p.add_argument("--force", action="store_true", help="run gibbs beyond the desk-scale policy")
    p.add_argument("--out", required=True, help="model JSON path")

    p = sub.add_parser("predict", help="predictive probabilities for the rows of a CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--mc-samples", type=_positive_int, default=DEFAULT_MC_SAMPLES)
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--out", required=True, help="CSV with columns prob, se")

    p = sub.add_parser("sample", help="i.i.d. draws of beta from a fitted variational posterior")
    p.add_argument("--model", required=True)
    p.add_argument("--n-draws", type=_positive_int, default=20_000)
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--marginals-only", action="store_true",
                   help="draw each coordinate from its marginal (cheaper, drops cross-coordinate dependence)")
    p.add_argument("--out", required=True, help="CSV, one column per coefficient")

    p = sub.add_parser("simulate", help="simulate a dataset with uniform true coefficients")
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--p", type=_positive_int, required=True, help="number of columns including the intercept")
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--scenario", choices=SCENARIOS, default="independent")
    p.add_argument("--design", choices=DESIGNS, default="standardized")
    p.add_argument("--n-test", type=int, default=0, help="extra held-out rows written to --test-out")
    p.add_argument("--out", required=True, help="training CSV")
    p.add_argument("--test-out", default=None)
    p.add_argument("--beta-out", default=None, help="CSV with the true coefficients")

    p = sub.add_parser("compare", help="compare methods against a reference on one dataset")
    _add_data_flags(p)
    _add_prior_flags(p)
    p.add_argument("--methods", default="mf,pfm,gibbs", help="comma-separated subset of mf,pfm,gibbs")
    p.add_argument("--holdout", type=float, default=0.2,
                   help="fraction (<1) or count of held-out rows (default: 0.2); ignored with --test-input")
    p.add_argument("--test-input", default=None, help="separate CSV of held-out rows")
    p.add_argument("--tol", type=_positive_float, default=None)
    p.add_argument("--max-iter", type=_positive_int, default=None)
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--mc-samples", type=_positive_int, default=DEFAULT_MC_SAMPLES)
    p.add_argument("--n-draws", type=_positive_int, default=20_000)
    p.add_argument("--noise-floor-replicates", type=int, default=50)
    p.add_argument("--out", required=True, help="report JSON")
    p.add_argument("--csv-out", default=None, help="tidy CSV (metric, method, quantile, value)")
    return parser


def _load_training(args):
    table = read_table(args.input)
    return ingest_table(table, args.response, standardize=not args.no_standardize,
                        add_intercept=not args.no_intercept, pairwise_interactions=args.pairwise_interactions)


def _prior(args):
    return PriorSpec.from_sd(args.prior_sd, Scaling(args.prior_scaling))


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, allow_nan=False)
        fh.write("\n")


def cmd_fit(args):
    data, fmap = _load_training(args)
    prior = _prior(args)
    opts = {}
    if args.tol is not None:
        opts["tol"] = args.tol
    if args.max_iter is not None:
        opts["max_iter"] = args.max_iter
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", MaxIterExceeded)
        if args.method == "mf":
            post = fit_mf(data, prior, **opts)
        elif args.method == "pfm":
            post = fit_pfm(data, prior, **opts)
        else:
            return _fit_gibbs(args, data, fmap, prior)
    art = artifact_from_posterior(post, fmap, seed=args.seed, response=args.response)
    art.save(args.out)
    print(json.dumps({"method": art.method, "n": data.n, "p": data.p, "iterations": art.iterations,
                      "converged": art.converged, "seconds": round(post.elapsed, 6), "out": args.out}))
    if any(issubclass(w.category, MaxIterExceeded) for w in caught):
        raise NotConverged(f"{args.method} did not converge within max_iter; state written to {args.out}")
    return EXIT_OK


def _fit_gibbs(args, data, fmap, prior):
    if args.seed is None:
        raise UsageError("--seed is required for --method gibbs")
    if not args.force:
        check_gibbs_scale(data.n, data.p)
    t0 = time.perf_counter()
    chain = gibbs_sample(data, prior, n_draws=args.n_draws, seed=args.seed, n_chains=20,
                         enforce_scale_policy=False)
    elapsed = time.perf_counter() - t0
    art = ModelArtifact("gibbs", prior, fmap, {"draws_beta": chain.draws_beta}, np.empty(0), None, True,
                        {"fit_seconds": elapsed}, args.seed, data.y, data.X, args.response,
                        extra={"burn_in": chain.burn_in, "thin": chain.thin, "n_chains": chain.n_chains})
    art.save(args.out)
    print(json.dumps({"method": "gibbs", "n": data.n, "p": data.p, "draws": chain.n_draws,
                      "seconds": round(elapsed, 6), "out": args.out}))
    return EXIT_OK


def predict_rows(art: ModelArtifact, X, mc_samples, seed):
    """Predictive probabilities and Monte Carlo SEs for design rows ``X``."""
    if art.method == "gibbs":
        draws = art.parameters["draws_beta"]
        probs = special.ndtr(X @ draws.T)
        return probs.mean(axis=1), probs.std(axis=1, ddof=1) / np.sqrt(draws.shape[0])
    post = art.posterior()
    if art.method == "mf":
        prob = np.atleast_1d(mf_predict(post, X))
        return prob, np.zeros_like(prob)
    pred = pfm_predict(post, X, R=mc_samples, seed=seed)
    return np.atleast_1d(pred.prob), np.atleast_1d(pred.se)


def cmd_predict(args):
    art = ModelArtifact.load(args.model)
    table = read_table(args.input)
    X = art.features.design_from_table(table)
    prob, se = predict_rows(art, X, args.mc_samples, args.seed)
    with open(args.out, "w", newline="") as fh:
        write_matrix(fh, ["prob", "se"], np.column_stack([prob, se]))
    summary = {"method": art.method, "rows": int(X.shape[0]), "out": args.out}
    if art.response in table.header:
        y = binary_response(table.column(art.response), art.response, table.lines)
        summary["test_deviance"] = test_deviance(y, prob)
    print(json.dumps(summary))
    return EXIT_OK


def cmd_sample(args):
    art = ModelArtifact.load(args.model)
    if art.method == "gibbs":
        raise UsageError("gibbs models already hold their draws; sample needs an mf or pfm model")
    post = art.posterior()
    if art.method == "pfm":
        draws = pfm_sample(post, args.n_draws, args.seed, marginals_only=args.marginals_only)
    else:
        rng = np.random.default_rng(args.seed)
        if args.marginals_only:
            draws = post.beta_bar + post.marginal_sd * rng.standard_normal((args.n_draws, post.data.p))
        else:
            draws = post.beta_bar + sample_v_gaussian(post.precomp, post.data, rng, args.n_draws)
    with open(args.out, "w", newline="") as fh:
        write_matrix(fh, list(art.features.columns), draws)
    print(json.dumps({"method": art.method, "draws": args.n_draws, "p": post.data.p, "out": args.out}))
    return EXIT_OK


def cmd_simulate(args):
    if args.n_test < 0:
        raise UsageError("--n-test must be non-negative")
    if args.n_test and not args.test_out:
        raise UsageError("--n-test needs --test-out")
    train, test, beta = simulate_split(args.n, args.p, args.seed, args.scenario, args.n_test, args.design)
    # the intercept column is left out; fit adds it back by default
    start = 1 if train.intercept else 0
    names = ["y"] + list(train.columns[start:])
    with open(args.out, "w", newline="") as fh:
        write_matrix(fh, names, np.column_stack([train.y, train.X[:, start:]]))
    if test is not None:
        with open(args.test_out, "w", newline="") as fh:
            write_matrix(fh, names, np.column_stack([test.y, test.X[:, start:]]))
    if args.beta_out:
        with open(args.beta_out, "w", newline="") as fh:
            write_matrix(fh, list(train.columns), beta[None, :])
    print(json.dumps({"n": train.n, "p": train.p, "n_test": args.n_test, "out": args.out}))
    return EXIT_OK


def cmd_compare(args):
    data, fmap = _load_training(args)
    prior = _prior(args)
    methods = [m for m in args.methods.split(",") if m.strip()]
    if len(methods) < 2:
        raise UsageError("--methods needs at least two entries")
    test = None
    if args.test_input:
        tt = read_table(args.test_input)
        test = Dataset(binary_response(tt.column(args.response), args.response, tt.lines),
                       fmap.design_from_table(tt), columns=fmap.columns, intercept=fmap.intercept)
    holdout = args.holdout if args.holdout < 1 else int(args.holdout)
    try:
        report = compare_methods(data, prior, methods, holdout=None if test is not None else holdout,
                                 seed=args.seed, test=test, mc_samples=args.mc_samples, n_draws=args.n_draws,
                                 tol=args.tol, max_iter=args.max_iter,
                                 noise_floor_replicates=args.noise_floor_replicates)
    except ValueError as exc:
        if "method" in str(exc):
            raise UsageError(str(exc)) from exc
        raise
    _write_json(args.out, report.to_dict())
    if args.csv_out:
        with open(args.csv_out, "w", newline="") as fh:
            fh.write(report.to_csv())
    print(json.dumps({"reference": report.reference, "methods": report.methods, "iterations": report.iterations,
                      "test_deviance": report.deviance, "out": args.out}))
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "predict": cmd_predict, "sample": cmd_sample, "simulate": cmd_simulate,
            "compare": cmd_compare}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except (PfmvbError, UsageError, NotConverged, ValueError, OSError) as exc:
        code = exit_code_for(exc)
        print(f"pfmvb {args.command}: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
