import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import optimize, special

from pfmvb import (Dataset, DimensionMismatch, MaxIterExceeded, PriorSpec, build_precomp, fit_mf,
                   mf_log_posterior, mf_log_posterior_grad, mf_predict)
from pfmvb.diagnostics import simulate_split
from pfmvb.truncnorm import _zeta
from conftest import random_instance

TIGHT = {"beta_tol": 1e-9, "max_iter": 200_000}


def scalar_mode_oracle():
    # stationarity of -b^2/2 + log Phi(2b): -b + 2 phi(2b)/Phi(2b) = 0, bracketed on [0, 2]
    with mp.workdps(30):
        f = lambda b: -b + 2 * mp.npdf(2 * b) / mp.ncdf(2 * b)
        return float(mp.findroot(f, (mp.mpf(0), mp.mpf(2)), solver="bisect", tol=1e-25, maxsteps=200))


def test_scalar_case_matches_bisection(tiny):
    data, prior = tiny
    post = fit_mf(data, prior, **TIGHT)
    assert post.converged
    assert post.beta_bar[0] == pytest.approx(scalar_mode_oracle(), abs=1e-8)
    # the default stopping rule halts once the log posterior gain drops below 1e-6
    loose = fit_mf(data, prior)
    assert loose.beta_bar[0] == pytest.approx(scalar_mode_oracle(), abs=1e-3)


def test_scalar_predictive_direct_formula(tiny):
    data, prior = tiny
    post = fit_mf(data, prior)
    b = post.beta_bar[0]
    assert mf_predict(post, np.array([1.0])) == pytest.approx(special.ndtr(b / np.sqrt(1.2)), abs=1e-14)
    assert mf_predict(post, np.zeros(1)) == 0.5


def test_zero_design_gives_zero_location():
    data = Dataset(np.ones(6), np.zeros((6, 3)))
    post = fit_mf(data, PriorSpec(1.0))
    np.testing.assert_array_equal(post.beta_bar, 0.0)


def test_predictive_half_when_orthogonal():
    data = random_instance(15, 4, 2)
    post = fit_mf(data, PriorSpec())
    b = post.beta_bar
    x = np.array([b[1], -b[0], 0.0, 0.0])
    assert mf_predict(post, x) == pytest.approx(0.5, abs=1e-15)
    assert 0 < mf_predict(post, np.ones(4)) < 1
    with pytest.raises(DimensionMismatch):
        mf_predict(post, np.ones(5))


def test_log_posterior_at_zero():
    data = random_instance(9, 3, 0)
    assert mf_log_posterior(data, PriorSpec(), np.zeros(3)) == pytest.approx(9 * np.log(0.5), rel=1e-15)


def test_gradient_matches_finite_differences():
    data = random_instance(10, 5, 11, scale=1.0)
    prior = PriorSpec(4.0)
    rng = np.random.default_rng(0)
    for _ in range(5):
        b = rng.normal(size=5)
        h = 1e-5
        fd = np.array([(mf_log_posterior(data, prior, b + h * e) - mf_log_posterior(data, prior, b - h * e)) / (2 * h)
                       for e in np.eye(5)])
        assert np.max(np.abs(fd - mf_log_posterior_grad(data, prior, b))) < 1e-6


def test_location_is_a_local_maximum():
    data = random_instance(20, 6, 3)
    prior = PriorSpec()
    post = fit_mf(data, prior, **TIGHT)
    top = mf_log_posterior(data, prior, post.beta_bar)
    rng = np.random.default_rng(1)
    for _ in range(50):
        assert top >= mf_log_posterior(data, prior, post.beta_bar + 1e-3 * rng.normal(size=6))


@pytest.mark.parametrize("seed", range(4))
def test_mode_agrees_with_gradient_optimizer(seed):
    data = random_instance(20, 10, seed, scale=1.0)
    prior = PriorSpec(25.0)
    post = fit_mf(data, prior, **TIGHT)
    res = optimize.minimize(lambda b: -mf_log_posterior(data, prior, b), np.zeros(10),
                            jac=lambda b: -mf_log_posterior_grad(data, prior, b), method="BFGS",
                            options={"gtol": 1e-12, "maxiter": 10_000})
    assert np.max(np.abs(post.beta_bar - res.x)) < 1e-5


@pytest.mark.parametrize("n,p", [(20, 10), (30, 60), (40, 40)])
def test_posterior_invariants(n, p):
    data = random_instance(n, p, n + p, scale=1.0)
    prior = PriorSpec(25.0)
    post = fit_mf(data, prior, **TIGHT)
    s = data.y_sign
    eta = data.X @ post.beta_bar
    z = eta + s * _zeta(s * eta)
    assert np.max(np.abs(post.beta_bar - post.precomp.vxt @ z)) < 1e-6
    assert np.max(np.abs(mf_log_posterior_grad(data, prior, post.beta_bar))) < 1e-5
    assert np.all(np.diff(post.trace) >= -1e-10)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 30), p=st.integers(1, 50), seed=st.integers(0, 2**32 - 1), nu2=st.floats(0.1, 100.0))
def test_em_monotone(n, p, seed, nu2):
    data = random_instance(n, p, seed, scale=1.0)
    post = fit_mf(data, PriorSpec(nu2), max_iter=3000)
    assert np.all(np.diff(post.trace) >= -1e-10)


def test_trace_matches_log_posterior():
    data = random_instance(12, 4, 5)
    prior = PriorSpec(2.0)
    post = fit_mf(data, prior)
    assert post.trace[-1] == pytest.approx(mf_log_posterior(data, prior, post.beta_bar), abs=1e-12)


def test_max_iter_warns_and_flags():
    data = random_instance(20, 5, 1, scale=2.0)
    with pytest.warns(MaxIterExceeded):
        post = fit_mf(data, PriorSpec(), max_iter=3)
    assert not post.converged and post.iterations == 3


def test_simulated_iteration_count_is_order_hundreds():
    train, _, _ = simulate_split(50, 200, 1)
    post = fit_mf(train, PriorSpec(25.0))
    print(f"mean-field iterations at n=50, p=200: {post.iterations}")
    assert post.converged
    assert 30 <= post.iterations <= 3000


def test_shrinkage_and_predictive_concentration_in_p():
    norms, spreads = [], []
    for p in (100, 400, 1600):
        train, test, _ = simulate_split(50, p, 0, n_test=100, design="isotropic")
        post = fit_mf(train, PriorSpec(25.0))
        norms.append(np.linalg.norm(post.beta_bar) / 5.0)
        spreads.append(np.median(np.abs(mf_predict(post, test.X) - 0.5)))
    assert norms[0] > norms[1] > norms[2]
    assert spreads[0] > spreads[1] > spreads[2]


def test_precomp_reuse_gives_identical_fit():
    data = random_instance(10, 30, 0)
    prior = PriorSpec()
    a = fit_mf(data, prior)
    b = fit_mf(data, prior, build_precomp(data, prior))
    np.testing.assert_array_equal(a.beta_bar, b.beta_bar)
