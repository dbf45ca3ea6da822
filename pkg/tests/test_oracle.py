import numpy as np
import pytest
from scipy import integrate, special

from pfmvb import (Dataset, PriorSpec, ScalePolicyExceeded, build_precomp, exact_posterior_quadrature_1d,
                   fit_pfm, gibbs_sample, solve_fixed_point_direct)
from pfmvb.diagnostics import batch_means_se, simulate_split, wasserstein_1d
from conftest import random_instance


def test_gibbs_zero_design_recovers_prior():
    data = Dataset(np.array([1.0, 0.0, 1.0]), np.zeros((3, 2)))
    chain = gibbs_sample(data, PriorSpec(4.0), n_draws=40_000, burn_in=100, thin=1, seed=0, n_chains=20)
    draws = chain.draws_beta
    se, _ = batch_means_se(draws)
    assert np.all(np.abs(draws.mean(axis=0)) < 4 * se)
    np.testing.assert_allclose(draws.var(axis=0), 4.0, rtol=0.05)


def test_gibbs_scalar_mean(tiny):
    data, prior = tiny
    chain = gibbs_sample(data, prior, n_draws=200_000, burn_in=500, thin=1, seed=1, n_chains=40)
    se, _ = batch_means_se(chain.draws_beta)
    assert abs(chain.draws_beta[:, 0].mean() - 0.713650) < 4 * se[0]


def test_gibbs_latent_truncation_and_replay():
    data = random_instance(12, 4, 0)
    a = gibbs_sample(data, PriorSpec(), n_draws=300, burn_in=20, seed=5, keep_z=True, n_chains=3)
    b = gibbs_sample(data, PriorSpec(), n_draws=300, burn_in=20, seed=5, keep_z=True, n_chains=3)
    assert a.draws_beta.shape == (300, 4) and a.draws_z.shape == (300, 12)
    assert np.all(np.sign(a.draws_z) == data.y_sign)
    np.testing.assert_array_equal(a.draws_beta, b.draws_beta)
    h1, h2 = a.halves()
    assert h1.shape == h2.shape == (150, 4)


def test_gibbs_scale_policy():
    data = random_instance(201, 2, 0)
    with pytest.raises(ScalePolicyExceeded):
        gibbs_sample(data, PriorSpec(), n_draws=10)
    with pytest.raises(ScalePolicyExceeded):
        gibbs_sample(random_instance(5, 1001, 0), PriorSpec(), n_draws=10)
    chain = gibbs_sample(data, PriorSpec(), n_draws=10, burn_in=0, enforce_scale_policy=False)
    assert chain.n_draws == 10


def test_quadrature_scalar_example(tiny):
    data, prior = tiny
    table = exact_posterior_quadrature_1d(data, prior)
    assert np.trapezoid(table.density, table.grid) == pytest.approx(1.0, abs=1e-12)
    # posterior is skew-normal with shape 2: mean = sqrt(2/pi) * 2 / sqrt(5)
    assert table.mean == pytest.approx(np.sqrt(2 / np.pi) * 2 / np.sqrt(5), abs=1e-10)
    assert table.mean == pytest.approx(0.713650, abs=1e-6)
    peak = np.argmax(table.density)
    assert np.all(np.diff(table.density[:peak + 1]) >= 0) and np.all(np.diff(table.density[peak:]) <= 0)


def test_quadrature_matches_adaptive_integration():
    data = random_instance(6, 1, 2, scale=1.0)
    prior = PriorSpec(3.0)
    table = exact_posterior_quadrature_1d(data, prior)
    x, s = data.X[:, 0], data.y_sign
    kern = lambda b: np.exp(-b * b / 6.0) * np.prod(special.ndtr(s * x * b))
    z = integrate.quad(kern, -np.inf, np.inf, epsabs=0, epsrel=1e-13)[0]
    m = integrate.quad(lambda b: b * kern(b), -np.inf, np.inf, epsabs=1e-14, epsrel=1e-13)[0] / z
    assert table.mean == pytest.approx(m, abs=1e-9)


def test_quadrature_zero_design_is_prior():
    data = Dataset(np.array([1.0, 0.0]), np.zeros((2, 1)))
    table = exact_posterior_quadrature_1d(data, PriorSpec(2.0))
    assert abs(table.mean) < 1e-12
    assert table.var == pytest.approx(2.0, rel=1e-9)


def test_gibbs_agrees_with_quadrature():
    data = random_instance(8, 1, 4, scale=1.0)
    prior = PriorSpec(4.0)
    table = exact_posterior_quadrature_1d(data, prior)
    chain = gibbs_sample(data, prior, n_draws=100_000, burn_in=500, thin=2, seed=3, n_chains=20)
    draws = chain.draws_beta[:, 0]
    # inverse-cdf draws from the quadrature density
    cdf = integrate.cumulative_trapezoid(table.density, table.grid, initial=0.0)
    exact = np.interp((np.arange(draws.size) + 0.5) / draws.size, cdf / cdf[-1], table.grid)
    h1, h2 = chain.halves()
    floor = wasserstein_1d(h1[:, 0], h2[:, 0])
    assert wasserstein_1d(draws, exact) < 3 * floor


@pytest.mark.parametrize("n,p,seed", [(10, 20, 0), (10, 20, 1), (25, 8, 2)])
def test_newton_matches_coordinate_ascent(n, p, seed):
    train, _, _ = simulate_split(n, p, seed)
    prior = PriorSpec(25.0)
    post = fit_pfm(train, prior, mu_tol=1e-11)
    mu = solve_fixed_point_direct(train, build_precomp(train, prior))
    assert np.max(np.abs(mu - post.mu_star)) < 1e-7


def test_newton_scale_policy():
    data = random_instance(60, 3, 0)
    with pytest.raises(ScalePolicyExceeded):
        solve_fixed_point_direct(data, build_precomp(data, PriorSpec()))
