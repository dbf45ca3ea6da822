"""Design-matrix products for the probit model with an isotropic Gaussian prior.

Every product is built either from the p x p system ``nu^-2 I + X'X`` (when
p <= n) or, through the Woodbury identity, from the n x n system
``I + nu^2 X X'`` (when p > n).  Downstream code only touches the results
stored on :class:`KernelPrecomp`, so each path keeps the total cost at
O(pn min(p, n)).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .errors import DataError, DimensionMismatch, SingularSystem

TARGET_SD = 0.5
STANDARDIZATION_TOL = 1e-10


def _freeze(*arrays):
    for a in arrays:
        a.flags.writeable = False


@dataclass(frozen=True)
class Standardization:
    """Per-column affine map ``x -> (x - mean) / scale`` fitted on training data.

    ``scale`` is chosen so the transformed training column has sample standard
    deviation 0.5.  ``columns`` names the (already interaction-expanded)
    predictors the map applies to; the intercept is never standardized.
    """

    columns: tuple
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, raw, columns):
        raw = np.asarray(raw, dtype=np.float64)
        mean = raw.mean(axis=0)
        sd = raw.std(axis=0, ddof=1) if raw.shape[0] > 1 else np.zeros(raw.shape[1])
        scale = sd / TARGET_SD
        return cls(tuple(columns), mean, scale)

    def transform(self, raw):
        raw = np.asarray(raw, dtype=np.float64)
        return (raw - self.mean) / self.scale

    def to_dict(self):
        return {"columns": list(self.columns), "mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["columns"]), np.asarray(d["mean"], dtype=np.float64),
                   np.asarray(d["scale"], dtype=np.float64))


@dataclass(frozen=True)
class Dataset:
    """Binary responses ``y`` with an n x p design ``X``.

    ``columns`` are the predictor names (``"(Intercept)"`` for a leading column
    of ones).  When ``standardization`` is set the non-intercept columns must
    have mean 0 and sample sd 0.5, which is checked on construction.
    """

    y: np.ndarray
    X: np.ndarray
    columns: tuple = None
    standardization: Standardization | None = None
    intercept: bool = False

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2:
            raise DimensionMismatch("X must be a 2-d array")
        if X.shape[0] != y.shape[0]:
            raise DimensionMismatch(f"X has {X.shape[0]} rows but y has {y.shape[0]} entries")
        if X.shape[0] < 1 or X.shape[1] < 1:
            raise DimensionMismatch("need n >= 1 and p >= 1")
        if not np.all((y == 0) | (y == 1)):
            raise DataError("responses must be 0 or 1")
        if not np.all(np.isfinite(X)):
            raise DataError("design matrix contains non-finite entries")
        X = np.array(X, dtype=np.float64, order="C")
        y = np.array(y)
        _freeze(X, y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if self.columns is None:
            cols = [f"x{j + 1}" for j in range(X.shape[1])]
            if self.intercept:
                cols[0] = "(Intercept)"
            object.__setattr__(self, "columns", tuple(cols))
        elif len(self.columns) != X.shape[1]:
            raise DimensionMismatch("column names do not match the number of columns of X")
        else:
            object.__setattr__(self, "columns", tuple(self.columns))
        if self.standardization is not None:
            self._check_standardized()

    def _check_standardized(self):
        start = 1 if self.intercept else 0
        Z = self.X[:, start:]
        if Z.shape[1] == 0 or self.n < 2:
            return
        mean_err = np.max(np.abs(Z.mean(axis=0)))
        sd_err = np.max(np.abs(Z.std(axis=0, ddof=1) - TARGET_SD))
        if mean_err > STANDARDIZATION_TOL or sd_err > STANDARDIZATION_TOL:
            raise DataError(f"standardized columns off target (mean err {mean_err:.2e}, sd err {sd_err:.2e})")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def y_sign(self):
        """The vector ``2y - 1``."""
        return 2.0 * self.y - 1.0

    def subset(self, rows):
        """Rows of the dataset as a new, unstandardized-record Dataset."""
        rows = np.asarray(rows)
        return Dataset(self.y[rows], self.X[rows], columns=self.columns, intercept=self.intercept)


class Scaling(str, enum.Enum):
    CONSTANT = "const"
    INVERSE_P = "inv-p"


@dataclass(frozen=True)
class PriorSpec:
    """Prior ``beta ~ N(0, nu_p^2 I)`` with ``nu_p^2 = nu^2`` or ``nu^2 / p``."""

    base_variance: float = 25.0
    scaling: Scaling = Scaling.CONSTANT

    def __post_init__(self):
        if not (np.isfinite(self.base_variance) and self.base_variance > 0):
            raise ValueError("prior variance must be positive and finite")
        object.__setattr__(self, "scaling", Scaling(self.scaling))

    @classmethod
    def from_sd(cls, sd, scaling=Scaling.CONSTANT):
        return cls(float(sd) ** 2, scaling)

    def variance(self, p):
        if self.scaling is Scaling.INVERSE_P:
            return self.base_variance / p
        return self.base_variance


class Path(str, enum.Enum):
    DIRECT_P = "direct_p"
    WOODBURY_N = "woodbury_n"


@dataclass(frozen=True)
class KernelPrecomp:
    """Shared products of the design with ``V = (nu_p^-2 I + X'X)^-1``.

    Attributes
    ----------
    vxt : (p, n) array, ``V X'``
    h : (n, n) array, ``X V X'``
    lam : (n, n) array, ``I - H`` (equal to ``(I + nu_p^2 X X')^-1``)
    sigma_star2 : (n,) array, ``1 / (1 - H_ii)``
    v_diag : (p,) array, diagonal of ``V``
    path : which linear system the products came from
    nu2 : resolved prior variance ``nu_p^2``
    logdet : ``log det(I + nu_p^2 X X')``
    """

    vxt: np.ndarray
    h: np.ndarray
    lam: np.ndarray
    sigma_star2: np.ndarray
    v_diag: np.ndarray
    path: Path
    nu2: float
    logdet: float
    chol: np.ndarray = field(repr=False)

    @property
    def n(self):
        return self.h.shape[0]

    @property
    def p(self):
        return self.vxt.shape[0]

    @property
    def sigma_star(self):
        return np.sqrt(self.sigma_star2)

    def dense_v(self, data):
        """Materialize the p x p matrix V.  Only sensible for moderate p."""
        if self.path is Path.DIRECT_P:
            return sla.cho_solve((self.chol, True), np.eye(self.p))
        V = -self.nu2 * (self.vxt @ data.X)
        V[np.diag_indices_from(V)] += self.nu2
        return 0.5 * (V + V.T)


def build_precomp(data: Dataset, prior: PriorSpec, path: Path | str | None = None) -> KernelPrecomp:
    """Compute ``V X'``, ``H``, ``Lambda``, ``sigma*^2`` and ``diag V``.

    The Woodbury path is taken when ``p > n`` unless ``path`` forces a branch.
    Raises :class:`SingularSystem` if the Cholesky factorization fails.
    """
    X = data.X
    n, p = X.shape
    nu2 = float(prior.variance(p))
    if path is None:
        path = Path.WOODBURY_N if p > n else Path.DIRECT_P
    path = Path(path)

    if path is Path.DIRECT_P:
        A = X.T @ X
        A[np.diag_indices_from(A)] += 1.0 / nu2
        L = _cholesky(A)
        vxt = sla.cho_solve((L, True), X.T)
        Linv = sla.solve_triangular(L, np.eye(p), lower=True)
        v_diag = np.einsum("ij,ij->j", Linv, Linv)
        h = X @ vxt
        h = 0.5 * (h + h.T)
        lam = -h
        lam[np.diag_indices_from(lam)] += 1.0
        sigma_star2 = 1.0 / (1.0 - np.diag(h))
        logdet = p * np.log(nu2) + 2.0 * np.sum(np.log(np.diag(L)))
    else:
        M = nu2 * (X @ X.T)
        M[np.diag_indices_from(M)] += 1.0
        L = _cholesky(M)
        lam = sla.cho_solve((L, True), np.eye(n))
        lam = 0.5 * (lam + lam.T)
        vxt = nu2 * (X.T @ lam)
        h = -lam
        h[np.diag_indices_from(h)] += 1.0
        # 1 / Lambda_ii avoids the cancellation in 1 - H_ii when H_ii -> 1
        sigma_star2 = 1.0 / np.diag(lam).copy()
        v_diag = nu2 * (1.0 - np.einsum("ji,ij->j", vxt, X))
        logdet = 2.0 * np.sum(np.log(np.diag(L)))

    sigma_star2 = np.maximum(sigma_star2, 1.0)
    v_diag = np.clip(v_diag, np.finfo(float).tiny, nu2)
    _freeze(vxt, h, lam, sigma_star2, v_diag, L)
    return KernelPrecomp(vxt, h, lam, sigma_star2, v_diag, path, nu2, float(logdet), L)


def _cholesky(A):
    try:
        return sla.cholesky(A, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SingularSystem(f"Cholesky factorization failed: {exc}") from exc


def quad_form_new(precomp: KernelPrecomp, data: Dataset, prior: PriorSpec, x_new) -> float | np.ndarray:
    """``x' V x`` for one covariate vector or for each row of a matrix."""
    x = np.asarray(x_new, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != precomp.p:
        raise DimensionMismatch(f"x_new has length {x.shape[1]}, expected {precomp.p}")
    if not np.all(np.isfinite(x)):
        raise DataError("x_new contains non-finite entries")
    nu2 = precomp.nu2
    sq = np.einsum("ij,ij->i", x, x)
    if precomp.path is Path.DIRECT_P:
        w = sla.solve_triangular(precomp.chol, x.T, lower=True)
        q = np.einsum("ij,ij->j", w, w)
    else:
        w = sla.solve_triangular(precomp.chol, data.X @ x.T, lower=True)
        q = nu2 * (sq - nu2 * np.einsum("ij,ij->j", w, w))
    q = np.clip(q, 0.0, nu2 * sq)
    return float(q[0]) if single else q


def sample_v_gaussian(precomp: KernelPrecomp, data: Dataset, rng: np.random.Generator, size: int) -> np.ndarray:
    """Draw ``size`` rows from ``N_p(0, V)`` without forming V.

    On the Woodbury path a draw is ``u - V X'(X u + d)`` with
    ``u ~ N(0, nu^2 I_p)`` and ``d ~ N(0, I_n)``, which costs O(pn).
    """
    p = precomp.p
    if precomp.path is Path.DIRECT_P:
        E = rng.standard_normal((size, p))
        return sla.solve_triangular(precomp.chol, E.T, lower=True, trans="T").T
    U = np.sqrt(precomp.nu2) * rng.standard_normal((size, p))
    D = rng.standard_normal((size, precomp.n))
    return U - (U @ data.X.T + D) @ precomp.vxt.T
