"""Evaluation metrics, simulated designs and method comparisons."""
from __future__ import annotations

import csv
import io
import json
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import DimensionMismatch, PfmvbError, ScalePolicyExceeded
from .linalg import Dataset, PriorSpec, Standardization, build_precomp
from .mf import fit_mf, mf_predict
from .oracle import check_gibbs_scale, gibbs_sample
from .pfm import fit_pfm, pfm_moments, pfm_predict, pfm_sample

PROB_CLAMP = 1e-12
SCENARIOS = ("independent", "column_corr_0.5", "row_corr_decay")
METHODS = ("mf", "pfm", "gibbs")
DESIGNS = ("standardized", "isotropic")


def wasserstein_1d(sample_a, sample_b) -> float:
    """1-Wasserstein distance between two empirical distributions on the line.

    Equal sizes use the sorted-difference formula; otherwise both quantile
    functions are linearly interpolated on the midpoint grid of the larger
    sample.
    """
    a = np.sort(np.asarray(sample_a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(sample_b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("wasserstein_1d needs non-empty samples")
    if a.size == b.size:
        return float(np.mean(np.abs(a - b)))
    m = max(a.size, b.size)
    probs = (np.arange(m) + 0.5) / m
    return float(np.mean(np.abs(np.quantile(a, probs) - np.quantile(b, probs))))


def wasserstein_columns(draws_a, draws_b) -> np.ndarray:
    """Per-column :func:`wasserstein_1d` for two draw matrices."""
    draws_a = np.asarray(draws_a)
    draws_b = np.asarray(draws_b)
    if draws_a.shape[0] == draws_b.shape[0]:
        return np.mean(np.abs(np.sort(draws_a, axis=0) - np.sort(draws_b, axis=0)), axis=0)
    return np.array([wasserstein_1d(draws_a[:, j], draws_b[:, j]) for j in range(draws_a.shape[1])])


def test_deviance(y_new, probs) -> float:
    """``-sum(y log p + (1 - y) log(1 - p))`` with p clamped to [1e-12, 1 - 1e-12]."""
    y = np.asarray(y_new, dtype=np.float64)
    pr = np.asarray(probs, dtype=np.float64)
    if y.shape != pr.shape:
        raise DimensionMismatch(f"y has shape {y.shape} but probabilities have shape {pr.shape}")
    pr = np.clip(pr, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(-np.sum(y * np.log(pr) + (1.0 - y) * np.log1p(-pr)))


test_deviance.__test__ = False


def batch_means_se(draws, n_batches: int = 20):
    """Monte Carlo standard errors of the column means and column sds.

    Draws are cut into ``n_batches`` contiguous batches (whole chains when the
    draws are chain-major); the spread of the batch estimates gives the SE.
    """
    draws = np.asarray(draws)
    m = draws.shape[0] // n_batches
    if m < 2:
        raise ValueError("not enough draws for the requested number of batches")
    batches = draws[: m * n_batches].reshape(n_batches, m, -1)
    se_mean = batches.mean(axis=1).std(axis=0, ddof=1) / np.sqrt(n_batches)
    se_sd = batches.std(axis=1, ddof=1).std(axis=0, ddof=1) / np.sqrt(n_batches)
    return se_mean, se_sd


def _raw_design(rng, n_total, k, scenario):
    # generated column by column so designs with more columns extend smaller ones
    if scenario == "independent":
        return rng.standard_normal((k, n_total)).T
    if scenario == "column_corr_0.5":
        shared = rng.standard_normal(n_total)
        own = rng.standard_normal((k, n_total)).T
        return np.sqrt(0.5) * shared[:, None] + np.sqrt(0.5) * own
    if scenario == "row_corr_decay":
        e = rng.standard_normal((k, n_total)).T
        out = np.empty_like(e)
        out[0] = e[0]
        rho = 0.5
        for i in range(1, n_total):
            out[i] = rho * out[i - 1] + np.sqrt(1 - rho * rho) * e[i]
        return out
    raise ValueError(f"unknown scenario {scenario!r}; choose from {SCENARIOS}")


def simulate_split(n: int, p: int, seed, scenario: str = "independent", n_test: int = 0,
                   design: str = "standardized"):
    """Simulate a training set, an optional test set, and the true coefficients.

    With ``design="standardized"`` the first column is an intercept and the
    other columns follow ``scenario`` and are standardized to mean 0 and sd 0.5
    on the training rows (the same map is applied to the test rows).  With
    ``design="isotropic"`` all p columns are the raw scenario draws scaled to
    population sd 0.5, with no intercept and no empirical centering, so units
    stay exchangeable and uncorrelated.  In both cases ``beta ~ U[-5, 5]^p``
    and ``y_i ~ Bern(Phi(x_i'beta))``.  Returns ``(train, test, beta)`` with
    ``test`` None when ``n_test == 0``.
    """
    if n < 2 or p < 1 or n_test < 0:
        raise ValueError("need n >= 2, p >= 1 and n_test >= 0")
    if design not in DESIGNS:
        raise ValueError(f"unknown design {design!r}; choose from {DESIGNS}")
    rng = np.random.default_rng(seed)
    total = n + n_test
    if design == "isotropic":
        X = 0.5 * _raw_design(rng, total, p, scenario)
        names = [f"x{j}" for j in range(1, p + 1)]
        std = None
        intercept = False
    else:
        raw = _raw_design(rng, total, p - 1, scenario)
        names = ["(Intercept)"] + [f"x{j}" for j in range(2, p + 1)]
        std = Standardization.fit(raw[:n], names[1:]) if p > 1 else None
        Z = std.transform(raw) if p > 1 else np.empty((total, 0))
        X = np.column_stack([np.ones(total), Z])
        intercept = True
    beta = rng.uniform(-5.0, 5.0, size=p)
    y = (rng.random(total) < special.ndtr(X @ beta)).astype(np.float64)
    train = Dataset(y[:n], X[:n], columns=names, standardization=std, intercept=intercept)
    test = Dataset(y[n:], X[n:], columns=names, intercept=intercept) if n_test else None
    return train, test, beta


def simulate_dataset(n: int, p: int, seed, correlation_scenario: str = "independent"):
    """``(Dataset, true_beta)`` for the simulation design; see :func:`simulate_split`."""
    train, _, beta = simulate_split(n, p, seed, correlation_scenario)
    return train, beta


def quartiles(values):
    q = np.quantile(np.asarray(values, dtype=np.float64), [0.25, 0.5, 0.75])
    return {"q25": float(q[0]), "q50": float(q[1]), "q75": float(q[2])}


@dataclass
class MethodResult:
    name: str
    mean: np.ndarray
    sd: np.ndarray
    pred: np.ndarray
    draws: np.ndarray
    iterations: int | None
    seconds: float
    converged: bool = True


@dataclass
class ComparisonReport:
    reference: str
    methods: list
    mean_diff: dict = field(default_factory=dict)
    sd_diff: dict = field(default_factory=dict)
    pred_diff: dict = field(default_factory=dict)
    wasserstein: dict = field(default_factory=dict)
    deviance: dict = field(default_factory=dict)
    iterations: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    noise_floor: dict | None = None
    n_train: int = 0
    n_test: int = 0
    p: int = 0
    schema_version: int = 1

    def _blocks(self):
        return {"mean_abs_diff": self.mean_diff, "sd_abs_diff": self.sd_diff,
                "pred_abs_diff": self.pred_diff, "wasserstein": self.wasserstein}

    def to_dict(self, include_values: bool = True):
        out = {"schema_version": self.schema_version, "reference": self.reference, "methods": self.methods,
               "n_train": self.n_train, "n_test": self.n_test, "p": self.p}
        for key, block in self._blocks().items():
            out[key] = {m: {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                            for k, v in stats.items() if include_values or k != "values"}
                        for m, stats in block.items()}
        out["test_deviance"] = self.deviance
        out["iterations"] = self.iterations
        out["timings_seconds"] = self.timings
        out["noise_floor_log_wasserstein"] = self.noise_floor
        return out

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), indent=2, **kwargs)

    def rows(self):
        """Tidy rows ``(metric, method, quantile, value)``."""
        for metric, block in self._blocks().items():
            for method, stats in block.items():
                for q in ("q25", "q50", "q75"):
                    yield metric, method, q, stats[q]
        for method, value in self.deviance.items():
            yield "test_deviance", method, "", value
        for method, value in self.iterations.items():
            if value is not None:
                yield "iterations", method, "", value
        for method, value in self.timings.items():
            yield "seconds", method, "", value
        if self.noise_floor:
            for q, value in self.noise_floor.items():
                yield "noise_floor_log_wasserstein", self.reference, q, value

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["metric", "method", "quantile", "value"])
        for row in self.rows():
            writer.writerow([row[0], row[1], row[2], repr(float(row[3]))])
        return buf.getvalue()


def _fit_method(method, train, test, prior, precomp, seed, mc_samples, n_draws, gibbs_opts, tol, max_iter):
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    if method == "mf":
        kw = {"tol": tol} if tol is not None else {}
        if max_iter is not None:
            kw["max_iter"] = max_iter
        post = fit_mf(train, prior, precomp, **kw)
        sd = post.marginal_sd
        draws = post.beta_bar + sd * rng.standard_normal((n_draws, train.p))
        pred = mf_predict(post, test.X) if test is not None else np.empty(0)
        return MethodResult(method, post.beta_bar, sd, np.atleast_1d(pred), draws, post.iterations,
                            time.perf_counter() - t0, post.converged)
    if method == "pfm":
        kw = {"tol": tol} if tol is not None else {}
        if max_iter is not None:
            kw["max_iter"] = max_iter
        post = fit_pfm(train, prior, precomp, **kw)
        mom = pfm_moments(post)
        draws = pfm_sample(post, n_draws, rng, marginals_only=True)
        pred = pfm_predict(post, test.X, R=mc_samples, seed=rng).prob if test is not None else np.empty(0)
        return MethodResult(method, mom.mean, np.sqrt(mom.var), np.atleast_1d(pred), draws, post.iterations,
                            time.perf_counter() - t0, post.converged)
    if method == "gibbs":
        try:
            check_gibbs_scale(train.n, train.p)
        except ScalePolicyExceeded as exc:
            warnings.warn(f"{exc}; running anyway", stacklevel=3)
        opts = {"burn_in": 5000, "thin": 5, "n_chains": 20}
        opts.update(gibbs_opts or {})
        chain = gibbs_sample(train, prior, precomp, n_draws=n_draws, seed=rng.integers(2**63),
                             enforce_scale_policy=False, **opts)
        draws = chain.draws_beta
        pred = (special.ndtr(test.X @ draws.T).mean(axis=1) if test is not None else np.empty(0))
        return MethodResult(method, draws.mean(axis=0), draws.std(axis=0, ddof=1), np.atleast_1d(pred), draws,
                            None, time.perf_counter() - t0)
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


def _split(data, holdout, seed):
    if holdout is None or holdout == 0:
        return data, None
    n_out = int(round(holdout * data.n)) if isinstance(holdout, float) and holdout < 1 else int(holdout)
    if not 0 < n_out < data.n:
        raise ValueError(f"holdout of {n_out} units leaves no training data")
    perm = np.random.default_rng(seed).permutation(data.n)
    test_rows = np.sort(perm[:n_out])
    train_rows = np.sort(perm[n_out:])
    return data.subset(train_rows), data.subset(test_rows)


def compare_methods(data: Dataset, prior: PriorSpec, methods, holdout=None, seed=0, *, test: Dataset | None = None,
                    mc_samples: int = 10_000, n_draws: int = 20_000, gibbs_opts=None, tol=None, max_iter=None,
                    noise_floor_replicates: int = 50) -> ComparisonReport:
    """Fit each method on the training rows and score it against a reference.

    The reference is ``gibbs`` when requested, else the first method.  Either
    ``test`` is given or ``holdout`` (a fraction below 1 or a unit count) is
    split off ``data``.  All randomness derives from ``seed``; each method
    gets the same seed so repeated methods give identical output.
    """
    methods = [m.strip().lower() for m in methods]
    if len(methods) < 2:
        raise ValueError("compare_methods needs at least two methods")
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; choose from {METHODS}")
    if test is None:
        train, test = _split(data, holdout, seed)
    else:
        train = data
    precomp = build_precomp(train, prior)

    labels = []
    for m in methods:
        label = m
        k = 2
        while label in labels:
            label = f"{m}#{k}"
            k += 1
        labels.append(label)

    results = {}
    for label, method in zip(labels, methods):
        try:
            results[label] = _fit_method(method, train, test, prior, precomp, seed, mc_samples, n_draws,
                                         gibbs_opts, tol, max_iter)
        except PfmvbError as exc:
            raise type(exc)(f"method {label}: {exc}") from exc

    reference = "gibbs" if "gibbs" in labels else labels[0]
    ref = results[reference]
    report = ComparisonReport(reference, labels, n_train=train.n, n_test=0 if test is None else test.n, p=train.p)
    for label in labels:
        r = results[label]
        report.iterations[label] = r.iterations
        report.timings[label] = r.seconds
        if test is not None:
            report.deviance[label] = test_deviance(test.y, r.pred)
        if label == reference:
            continue
        for block, values in ((report.mean_diff, np.abs(r.mean - ref.mean)),
                              (report.sd_diff, np.abs(r.sd - ref.sd)),
                              (report.wasserstein, wasserstein_columns(r.draws, ref.draws))):
            block[label] = {**quartiles(values), "values": values}
        if test is not None:
            values = np.abs(r.pred - ref.pred)
            report.pred_diff[label] = {**quartiles(values), "values": values}

    if noise_floor_replicates:
        report.noise_floor = noise_floor(ref.draws, noise_floor_replicates, seed)
    return report


def noise_floor(draws, replicates: int = 50, seed=0):
    """2.5% and 97.5% quantiles of per-coordinate log-W1 between random half splits."""
    draws = np.asarray(draws)
    rng = np.random.default_rng(seed)
    half = draws.shape[0] // 2
    logs = []
    for _ in range(replicates):
        perm = rng.permutation(draws.shape[0])
        w = wasserstein_columns(draws[perm[:half]], draws[perm[half:2 * half]])
        logs.append(np.log(np.maximum(w, np.finfo(float).tiny)))
    logs = np.concatenate(logs)
    q = np.quantile(logs, [0.025, 0.975])
    return {"q025": float(q[0]), "q975": float(q[1])}
