"""JSON persistence of fitted models.

Floats are written with Python's shortest round-trip repr, so every array
survives a save/load cycle bit for bit.  The training design is stored with
the model because the partially-factorized predictive needs ``V X'``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dataio import FeatureMap
from .errors import SchemaError
from .linalg import Dataset, PriorSpec, Scaling, build_precomp
from .mf import MfPosterior
from .pfm import PfmPosterior

SCHEMA_VERSION = 1
METHODS = ("mf", "pfm", "gibbs")


def _encode(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def _check_finite(obj, where="model"):
    if isinstance(obj, float) and not math.isfinite(obj):
        raise SchemaError(f"non-finite value in {where}")
    if isinstance(obj, dict):
        for k, v in obj.items():
            _check_finite(v, f"{where}.{k}")
    elif isinstance(obj, list):
        for v in obj:
            _check_finite(v, where)


@dataclass
class ModelArtifact:
    method: str
    prior: PriorSpec
    features: FeatureMap
    parameters: dict
    trace: np.ndarray
    iterations: int | None
    converged: bool
    timings: dict
    seed: int | None
    train_y: np.ndarray
    train_X: np.ndarray
    response: str = "y"
    schema_version: int = SCHEMA_VERSION
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "schema_version": self.schema_version,
            "method": self.method,
            "prior": {"base_variance": self.prior.base_variance, "scaling": self.prior.scaling.value},
            "features": self.features.to_dict(),
            "response": self.response,
            "parameters": {k: _encode(v) for k, v in self.parameters.items()},
            "trace": _encode(np.asarray(self.trace, dtype=np.float64)),
            "iterations": self.iterations,
            "converged": self.converged,
            "timings": {k: float(v) for k, v in self.timings.items()},
            "seed": self.seed,
            "training": {"y": _encode(self.train_y), "X": _encode(self.train_X)},
            "extra": {k: _encode(v) for k, v in self.extra.items()},
        }

    def to_json(self):
        return json.dumps(self.to_dict(), allow_nan=False)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict) or "schema_version" not in d:
            raise SchemaError("not a model file: missing schema_version")
        if d["schema_version"] != SCHEMA_VERSION:
            raise SchemaError(f"unsupported schema_version {d['schema_version']!r}; expected {SCHEMA_VERSION}")
        try:
            if d["method"] not in METHODS:
                raise SchemaError(f"unknown method {d['method']!r}")
            prior = PriorSpec(float(d["prior"]["base_variance"]), Scaling(d["prior"]["scaling"]))
            params = {k: np.asarray(v, dtype=np.float64) for k, v in d["parameters"].items()}
            return cls(
                method=d["method"], prior=prior, features=FeatureMap.from_dict(d["features"]),
                parameters=params, trace=np.asarray(d["trace"], dtype=np.float64),
                iterations=d["iterations"], converged=bool(d["converged"]), timings=dict(d["timings"]),
                seed=d["seed"], train_y=np.asarray(d["training"]["y"], dtype=np.float64),
                train_X=np.asarray(d["training"]["X"], dtype=np.float64), response=d.get("response", "y"),
                extra=dict(d.get("extra", {})))
        except SchemaError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"malformed model file: {exc!r}") from exc

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"model file is not valid JSON: {exc}") from exc
        return cls.from_dict(d)

    def training_data(self) -> Dataset:
        return Dataset(self.train_y, self.train_X, columns=self.features.columns, intercept=self.features.intercept)

    def posterior(self):
        """Rebuild the fitted posterior object (MF or PFM) from stored parameters."""
        data = self.training_data()
        precomp = build_precomp(data, self.prior)
        elapsed = float(self.timings.get("fit_seconds", 0.0))
        if self.method == "mf":
            return MfPosterior(self.parameters["beta_bar"], self.parameters["z_bar"], self.trace,
                               self.iterations, self.converged, data, self.prior, precomp, elapsed)
        if self.method == "pfm":
            return PfmPosterior(self.parameters["mu_star"], self.parameters["sigma_star"],
                                self.parameters["z_bar_star"], self.trace, self.iterations, self.converged,
                                data, self.prior, precomp, str(self.extra.get("update", "gram")), elapsed)
        raise SchemaError("gibbs models store draws, not a variational posterior")


def artifact_from_posterior(post, features: FeatureMap, seed=None, response="y", timings=None) -> ModelArtifact:
    if isinstance(post, MfPosterior):
        method, params, trace = "mf", {"beta_bar": post.beta_bar, "z_bar": post.z_bar}, post.trace
        extra = {}
    elif isinstance(post, PfmPosterior):
        method = "pfm"
        params = {"mu_star": post.mu_star, "sigma_star": post.sigma_star, "z_bar_star": post.z_bar_star}
        trace = post.elbo_trace
        extra = {"update": post.update}
    else:
        raise TypeError(f"cannot persist {type(post).__name__}")
    timings = {"fit_seconds": post.elapsed, **(timings or {})}
    return ModelArtifact(method, post.prior, features, params, trace, post.iterations, post.converged, timings,
                         seed, post.data.y, post.data.X, response, extra=extra)
