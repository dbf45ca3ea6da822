"""Reference computations used to check the variational approximations.

These are exact or asymptotically exact and only practical at desk scale:
a data-augmentation Gibbs sampler, grid quadrature of the p = 1 posterior,
and a Newton solve of the partially-factorized fixed-point system.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NonConvergence, ScalePolicyExceeded
from .linalg import Dataset, KernelPrecomp, PriorSpec, build_precomp, sample_v_gaussian
from .pfm import fixed_point_residual
from .truncnorm import log_ndtr, tn_sample, tn_var

MAX_GIBBS_N = 200
MAX_GIBBS_P = 1000
MAX_DIRECT_N = 50


@dataclass(frozen=True)
class GibbsChain:
    """Stored draws, chain-major: all kept draws of chain 0 come first."""

    draws_beta: np.ndarray
    draws_z: np.ndarray | None
    burn_in: int
    thin: int
    seed: int
    n_chains: int = 1

    @property
    def n_draws(self):
        return self.draws_beta.shape[0]

    def halves(self):
        """Split into two halves that share no chain when ``n_chains`` is even."""
        k = self.n_draws // 2
        return self.draws_beta[:k], self.draws_beta[k:2 * k]


def check_gibbs_scale(n, p):
    if n > MAX_GIBBS_N or p > MAX_GIBBS_P:
        raise ScalePolicyExceeded(
            f"Gibbs reference limited to n <= {MAX_GIBBS_N}, p <= {MAX_GIBBS_P} (got n={n}, p={p})")


def gibbs_sample(data: Dataset, prior: PriorSpec, precomp: KernelPrecomp | None = None, n_draws: int = 20_000,
                 burn_in: int = 5000, thin: int = 5, seed: int = 0, n_chains: int = 1,
                 keep_z: bool = False, enforce_scale_policy: bool = True) -> GibbsChain:
    """Albert-Chib sampler alternating ``beta | z`` and ``z | beta``.

    ``n_chains`` independent chains advance together as one vectorized update;
    each runs ``burn_in`` iterations and then keeps every ``thin``-th state
    until ``n_draws`` draws exist in total.
    """
    if enforce_scale_policy:
        check_gibbs_scale(data.n, data.p)
    if n_chains < 1 or n_draws < 1 or thin < 1 or burn_in < 0:
        raise ValueError("n_chains, n_draws and thin must be positive and burn_in non-negative")
    if precomp is None:
        precomp = build_precomp(data, prior)
    rng = np.random.default_rng(seed)
    s = data.y_sign
    X = data.X
    vxt_t = precomp.vxt.T
    per_chain = math.ceil(n_draws / n_chains)
    kept_beta = np.empty((per_chain, n_chains, data.p))
    kept_z = np.empty((per_chain, n_chains, data.n)) if keep_z else None

    z = tn_sample(np.zeros(data.n), 1.0, s, rng, size=n_chains)
    k = 0
    for it in range(burn_in + per_chain * thin):
        beta = z @ vxt_t + sample_v_gaussian(precomp, data, rng, n_chains)
        z = tn_sample(beta @ X.T, 1.0, s, rng)
        if it >= burn_in and (it - burn_in) % thin == thin - 1:
            kept_beta[k] = beta
            if keep_z:
                kept_z[k] = z
            k += 1

    draws_beta = kept_beta.transpose(1, 0, 2).reshape(-1, data.p)[:n_draws]
    draws_z = kept_z.transpose(1, 0, 2).reshape(-1, data.n)[:n_draws] if keep_z else None
    return GibbsChain(draws_beta, draws_z, burn_in, thin, seed, n_chains)


@dataclass(frozen=True)
class DensityTable:
    grid: np.ndarray
    density: np.ndarray
    mean: float
    var: float


def exact_posterior_quadrature_1d(data: Dataset, prior: PriorSpec, grid=None, n_grid: int = 40_001) -> DensityTable:
    """Normalized posterior density of a scalar coefficient on a grid.

    The default grid spans +-10 prior standard deviations; the kernel is
    normalized with the trapezoid rule, which is spectrally accurate for this
    smooth, rapidly decaying integrand.
    """
    if data.p != 1:
        raise DimensionMismatch(f"quadrature oracle needs p = 1, got p = {data.p}")
    nu2 = prior.variance(1)
    if grid is None:
        half = 10.0 * math.sqrt(nu2)
        grid = np.linspace(-half, half, n_grid)
    grid = np.asarray(grid, dtype=np.float64)
    x = data.X[:, 0]
    s = data.y_sign
    log_kernel = -0.5 * grid ** 2 / nu2 + log_ndtr(np.outer(grid, s * x)).sum(axis=1)
    w = np.exp(log_kernel - log_kernel.max())
    w /= np.trapezoid(w, grid)
    mean = np.trapezoid(grid * w, grid)
    var = np.trapezoid((grid - mean) ** 2 * w, grid)
    return DensityTable(grid, w, float(mean), float(var))


def solve_fixed_point_direct(data: Dataset, precomp: KernelPrecomp, tol: float = 1e-10,
                             max_iter: int = 200) -> np.ndarray:
    """Solve ``mu_i = sigma_i^2 sum_{k != i} H_ik z_bar_k(mu_k)`` by damped Newton.

    Uses a dense Jacobian and the identity ``d z_bar / d mu = var / sigma^2``
    for truncated normals.  Independent of the coordinate ascent path.
    """
    n = data.n
    if n > MAX_DIRECT_N:
        raise ScalePolicyExceeded(f"direct fixed-point solve limited to n <= {MAX_DIRECT_N}")
    s = data.y_sign
    sigma2 = precomp.sigma_star2
    sigma = np.sqrt(sigma2)
    h_off = precomp.h - np.diag(np.diag(precomp.h))

    mu = np.zeros(n)
    F = fixed_point_residual(data, precomp, mu)
    norm = np.max(np.abs(F))
    for _ in range(max_iter):
        if norm < tol:
            return mu
        dz = tn_var(mu, sigma, s) / sigma2
        J = np.eye(n) - (sigma2[:, None] * h_off) * dz[None, :]
        step = np.linalg.solve(J, -F)
        alpha = 1.0
        while True:
            trial = mu + alpha * step
            F_trial = fixed_point_residual(data, precomp, trial)
            norm_trial = np.max(np.abs(F_trial))
            if norm_trial < (1 - 1e-4 * alpha) * norm or alpha < 1e-8:
                break
            alpha *= 0.5
        if norm_trial >= norm and alpha < 1e-8:
            break
        mu, F, norm = trial, F_trial, norm_trial
    if norm < tol:
        return mu
    raise NonConvergence(f"fixed-point residual {norm:.3e} after Newton iterations")
