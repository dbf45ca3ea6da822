"""Partially-factorized variational Bayes for probit regression.

The approximating family is ``q(beta | z) prod_i q(z_i)``.  At the optimum
``q(beta | z)`` is the exact conditional ``N(V X' z, V)`` and each ``q(z_i)`` is
a truncated normal with scale ``sigma_i*^2 = (1 - x_i'V x_i)^-1`` and a location
``mu_i*`` found by coordinate ascent.  The implied marginal for beta is a
unified skew-normal (SUN) with identity latent correlation, so moments are
closed form and draws only need univariate truncated normals.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import special

from .errors import DimensionMismatch, MaxIterExceeded
from .linalg import Dataset, KernelPrecomp, PriorSpec, build_precomp, quad_form_new, sample_v_gaussian
from .truncnorm import log_ndtr, sample_std_above, tn_mean, tn_sample, tn_second_moment, tn_var

LOG_2PI = np.log(2.0 * np.pi)
MATERIALIZE_CAP = 2000
DEFAULT_MC_SAMPLES = 10_000
_CHUNK_ELEMENTS = 2_000_000


@dataclass(frozen=True)
class PfmPosterior:
    mu_star: np.ndarray
    sigma_star: np.ndarray
    z_bar_star: np.ndarray
    elbo_trace: np.ndarray
    iterations: int
    converged: bool
    data: Dataset
    prior: PriorSpec
    precomp: KernelPrecomp
    update: str = "gram"
    elapsed: float = 0.0

    @property
    def y_sign(self):
        return self.data.y_sign


def _resolve_update(update, data):
    if update in (None, "auto"):
        return "gram" if data.p > data.n else "alpha"
    if update not in ("gram", "alpha"):
        raise ValueError(f"unknown update rule {update!r}; use 'gram', 'alpha' or 'auto'")
    return update


def _off_diagonal(h):
    # zeroing the diagonal beats subtracting H_ii z_i, which cancels when H_ii ~ 1
    out = np.array(h)
    np.fill_diagonal(out, 0.0)
    return out


def _sweep_gram(h_off, sigma2, sigma, s, mu, z_bar):
    # mu_i = sigma_i^2 * sum_{k != i} H_ik z_bar_k, with z_bar updated in place
    for i in range(len(z_bar)):
        mu[i] = sigma2[i] * (h_off[i] @ z_bar)
        z_bar[i] = tn_mean(mu[i], sigma[i], s[i])


def _sweep_alpha(X, xv, sigma2, sigma, s, mu, z_bar):
    # alpha = sum_{k != i} x_k z_bar_k, carried from unit i-1 to unit i in O(p)
    alpha = X.T @ z_bar - X[0] * z_bar[0]
    for i in range(len(z_bar)):
        if i:
            alpha += X[i - 1] * z_bar[i - 1] - X[i] * z_bar[i]
        mu[i] = sigma2[i] * (xv[i] @ alpha)
        z_bar[i] = tn_mean(mu[i], sigma[i], s[i])


def fit_pfm(data: Dataset, prior: PriorSpec, precomp: KernelPrecomp | None = None, *,
            max_iter: int = 1000, tol: float = 1e-6, z_init=None, update: str | None = "auto",
            mu_tol: float | None = None) -> PfmPosterior:
    """Coordinate ascent over the truncated-normal factors ``q(z_i)``.

    Units are swept in ascending order.  ``update="gram"`` reads the
    off-diagonal of H (O(n^2) per sweep); ``update="alpha"`` carries the running
    sum ``X_{-i}' z_bar_{-i}`` and costs O(np) per sweep.  ``"auto"`` picks the
    cheaper one.  Stops once a sweep raises the ELBO by less than ``tol``
    and, if ``mu_tol`` is given, also moves no ``mu_i`` by ``mu_tol`` or more.
    The ELBO is flat in ``mu_i`` when ``sigma_i*`` is large, so the extra
    check is how to pin ``mu*`` down to a tight fixed-point residual.
    ``iterations`` is the number of sweeps that produced the returned state.
    """
    t0 = time.perf_counter()
    if precomp is None:
        precomp = build_precomp(data, prior)
    update = _resolve_update(update, data)
    n = data.n
    s = data.y_sign
    sigma2 = precomp.sigma_star2
    sigma = np.sqrt(sigma2)
    z_bar = np.zeros(n) if z_init is None else np.array(z_init, dtype=np.float64)
    if z_bar.shape != (n,):
        raise DimensionMismatch("z_init must have length n")
    mu = np.zeros(n)
    xv = precomp.vxt.T if update == "alpha" else None
    h_off = _off_diagonal(precomp.h) if update == "gram" else None

    trace = []
    converged = False
    for t in range(1, max_iter + 1):
        mu_prev = mu.copy()
        if update == "gram":
            _sweep_gram(h_off, sigma2, sigma, s, mu, z_bar)
        else:
            _sweep_alpha(data.X, xv, sigma2, sigma, s, mu, z_bar)
        trace.append(pfm_elbo(data, precomp, mu, z_bar))
        if t > 1 and trace[-1] - trace[-2] < tol and (mu_tol is None or np.max(np.abs(mu - mu_prev)) < mu_tol):
            converged = True
            break
    iterations = len(trace) - 1 if converged else len(trace)
    if not converged:
        warnings.warn(f"partially-factorized CAVI did not converge in {max_iter} sweeps",
                      MaxIterExceeded, stacklevel=2)
    return PfmPosterior(mu, sigma, z_bar, np.asarray(trace), iterations, converged, data, prior,
                        precomp, update, time.perf_counter() - t0)


def _lower_pairs(lam, z_bar):
    # sum_{i > j} Lambda_ij z_i z_j
    return 0.5 * (z_bar @ lam @ z_bar - np.sum(np.diag(lam) * z_bar * z_bar))


def pfm_elbo(data: Dataset, precomp: KernelPrecomp, mu, z_bar) -> float:
    """ELBO of the partially-factorized family, omitting terms constant in ``mu``."""
    mu = np.asarray(mu, dtype=np.float64)
    z_bar = np.asarray(z_bar, dtype=np.float64)
    s = data.y_sign
    sigma2 = precomp.sigma_star2
    sigma = np.sqrt(sigma2)
    ez2 = tn_second_moment(mu, sigma, s)
    lam_diag = np.diag(precomp.lam)
    terms = (lam_diag * ez2 - 2.0 * log_ndtr(s * mu / sigma) - ez2 / sigma2
             + 2.0 * z_bar * mu / sigma2 - (mu / sigma) ** 2)
    return float(-0.5 * np.sum(terms) - _lower_pairs(precomp.lam, z_bar))


def pfm_elbo_constant(precomp: KernelPrecomp) -> float:
    """Difference between :func:`joint_elbo` at ``scale = sigma*`` and :func:`pfm_elbo`."""
    return float(-0.5 * precomp.logdet + 0.5 * np.sum(np.log(precomp.sigma_star2)))


def joint_elbo(data: Dataset, precomp: KernelPrecomp, loc, scale, beta_mean=None) -> float:
    """Full ELBO ``E_q log p(beta, z, y) - E_q log q(beta, z)`` with all constants.

    ``q(z_i)`` is ``N(loc_i, scale_i^2)`` truncated to the side of ``y_i``.  With
    ``beta_mean=None``, ``q(beta | z)`` is the exact conditional ``N(V X'z, V)``;
    otherwise it is ``N(beta_mean, V)`` independent of z, which is how the
    mean-field optimum sits inside the partially-factorized family.  The value
    is bounded above by ``log p(y)``.
    """
    s = data.y_sign
    loc = np.asarray(loc, dtype=np.float64)
    scale = np.broadcast_to(np.asarray(scale, dtype=np.float64), loc.shape)
    n = data.n
    z_bar = tn_mean(loc, scale, s)
    ez2 = tn_second_moment(loc, scale, s)
    lam = precomp.lam
    quad = np.sum(np.diag(lam) * ez2) + 2.0 * _lower_pairs(lam, z_bar)
    log_joint = -0.5 * n * LOG_2PI - 0.5 * precomp.logdet - 0.5 * quad
    entropy = np.sum(log_ndtr(s * loc / scale) + 0.5 * LOG_2PI + np.log(scale)
                     + (ez2 - 2.0 * z_bar * loc + loc * loc) / (2.0 * scale * scale))
    elbo = log_joint + entropy
    if beta_mean is not None:
        beta_mean = np.asarray(beta_mean, dtype=np.float64)
        d = beta_mean - precomp.vxt @ z_bar
        Xd = data.X @ d
        var_z = np.maximum(ez2 - z_bar * z_bar, 0.0)
        kl = 0.5 * (d @ d / precomp.nu2 + Xd @ Xd + np.sum(np.diag(precomp.h) * var_z))
        elbo -= kl
    return float(elbo)


def fixed_point_residual(data: Dataset, precomp: KernelPrecomp, mu) -> np.ndarray:
    """``mu_i - sigma_i^2 x_i'V X_{-i}' z_bar_{-i}(mu)`` for every unit."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma2 = precomp.sigma_star2
    z = tn_mean(mu, np.sqrt(sigma2), data.y_sign)
    return mu - sigma2 * (_off_diagonal(precomp.h) @ z)


@dataclass(frozen=True)
class SunParams:
    """Parameters of ``SUN_{p,n}(xi, Omega, Delta, gamma, Gamma)`` with ``Gamma = I_n``.

    ``omega_mat`` is None when p exceeds the materialization cap; ``omega_diag``
    (square roots of diag Omega) is always present.
    """

    xi: np.ndarray
    omega_mat: np.ndarray | None
    delta: np.ndarray
    gamma: np.ndarray
    y_sign: np.ndarray
    omega_diag: np.ndarray

    @property
    def Gamma(self):
        return np.eye(self.gamma.shape[0])

    @property
    def gamma_is_identity(self):
        return True


def sun_params(post: PfmPosterior, materialize_cap: int = MATERIALIZE_CAP) -> SunParams:
    pc = post.precomp
    s = post.y_sign
    sigma = post.sigma_star
    xi = pc.vxt @ post.mu_star
    skew = pc.vxt * (s * sigma)
    omega2 = pc.v_diag + np.einsum("ji,ji->j", skew, skew)
    omega = np.sqrt(omega2)
    omega_mat = None
    if pc.p <= materialize_cap:
        omega_mat = pc.dense_v(post.data) + skew @ skew.T
    return SunParams(xi, omega_mat, skew / omega[:, None], s * post.mu_star / sigma, s, omega)


class Moments(NamedTuple):
    mean: np.ndarray
    var: np.ndarray
    cov: np.ndarray | None


def pfm_moments(post: PfmPosterior, materialize_cap: int = MATERIALIZE_CAP) -> Moments:
    """Mean ``V X' z_bar*`` and covariance ``V + V X' diag(var z) X V``."""
    pc = post.precomp
    var_z = tn_var(post.mu_star, post.sigma_star, post.y_sign)
    mean = pc.vxt @ post.z_bar_star
    var = pc.v_diag + (pc.vxt * pc.vxt) @ var_z
    cov = None
    if pc.p <= materialize_cap:
        cov = pc.dense_v(post.data) + (pc.vxt * var_z) @ pc.vxt.T
    return Moments(mean, var, cov)


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _chunks(total, width):
    step = max(1, _CHUNK_ELEMENTS // max(width, 1))
    for start in range(0, total, step):
        yield min(step, total - start)


def pfm_sample(post: PfmPosterior, n_draws: int, seed, marginals_only: bool = False) -> np.ndarray:
    """I.i.d. draws from the approximate posterior of beta, shape ``(n_draws, p)``.

    Each draw is ``u0 + V X' diag(s sigma*) u1`` with ``u0 ~ N(V X' mu*, V)`` and
    ``u1_i`` standard normal truncated below at ``-s_i mu_i / sigma_i``.  With
    ``marginals_only`` the coordinates of ``u0`` are drawn independently from
    their univariate marginals: each column then has the right marginal law,
    but the joint dependence across coordinates is dropped.
    """
    rng = _rng(seed)
    pc = post.precomp
    s = post.y_sign
    xi = pc.vxt @ post.mu_star
    skew_t = (pc.vxt * (s * post.sigma_star)).T
    lower = -s * post.mu_star / post.sigma_star
    sd = np.sqrt(pc.v_diag)
    out = np.empty((n_draws, pc.p))
    row = 0
    for k in _chunks(n_draws, pc.p + pc.n):
        if marginals_only:
            u0 = xi + sd * rng.standard_normal((k, pc.p))
        else:
            u0 = xi + sample_v_gaussian(pc, post.data, rng, k)
        u1 = sample_std_above(np.broadcast_to(lower, (k, pc.n)), rng)
        out[row:row + k] = u0 + u1 @ skew_t
        row += k
    return out


class Prediction(NamedTuple):
    prob: float | np.ndarray
    se: float | np.ndarray


def pfm_predict(post: PfmPosterior, x_new, R: int = DEFAULT_MC_SAMPLES, seed=0) -> Prediction:
    """Monte Carlo predictive ``E_q(z) Phi(x'V X'z / sqrt(1 + x'V x))``.

    ``x_new`` may be one covariate vector or a matrix of rows; all rows share
    the same ``R`` draws of z.  ``se`` is the sample sd over ``sqrt(R)``.
    """
    if R < 1:
        raise ValueError("R must be at least 1")
    x = np.asarray(x_new, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != post.data.p:
        raise DimensionMismatch(f"x_new has length {x.shape[1]}, expected {post.data.p}")
    rng = _rng(seed)
    pc = post.precomp
    q = np.atleast_1d(quad_form_new(pc, post.data, post.prior, x))
    w = (pc.vxt.T @ x.T) / np.sqrt(1.0 + q)
    total = np.zeros(x.shape[0])
    total_sq = np.zeros(x.shape[0])
    for k in _chunks(R, pc.n + x.shape[0]):
        z = tn_sample(post.mu_star, post.sigma_star, post.y_sign, rng, size=k)
        d = special.ndtr(z @ w) - 0.5
        total += d.sum(axis=0)
        total_sq += (d * d).sum(axis=0)
    shift = total / R
    mean = 0.5 + shift
    if R > 1:
        var = np.maximum(total_sq - R * shift * shift, 0.0) / (R - 1)
        se = np.sqrt(var / R)
    else:
        se = np.zeros_like(mean)
    if single:
        return Prediction(float(mean[0]), float(se[0]))
    return Prediction(mean, se)
