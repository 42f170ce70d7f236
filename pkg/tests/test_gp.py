import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import multivariate_normal

from pfbo import gp
from pfbo.gp import GPHyperparams, ParameterError
from pfbo.tensor import finite_difference_grad, relative_error


def matern_scalar(x, z, ls, c):
    r = math.sqrt(sum((a - b) ** 2 for a, b in zip(x, z)))
    s = math.sqrt(5) * r / ls
    return c * (1 + s + s * s / 3) * math.exp(-s)


def explicit_posterior(X, y, theta, Xq):
    K = np.array([[matern_scalar(a, b, theta.lengthscale, theta.outputscale) for b in X] for a in X])
    K += theta.noise * np.eye(len(X))
    Kinv = np.linalg.inv(K)
    ks = np.array([[matern_scalar(a, b, theta.lengthscale, theta.outputscale) for b in Xq] for a in X])
    mean = ks.T @ Kinv @ y
    var = theta.outputscale - np.einsum("ij,ik,kj->j", ks, Kinv, ks)
    return mean, var, K


def test_hyperparams_validation():
    for bad in [(0.0, 1.0, 0.1), (1.0, -1.0, 0.1), (1.0, 1.0, -1e-3), (float("nan"), 1, 0)]:
        with pytest.raises(ParameterError):
            GPHyperparams(*bad)
    th = GPHyperparams(0.3, 2.0, 1e-3)
    back = GPHyperparams.from_log(th.as_log())
    assert (back.lengthscale, back.outputscale, back.noise) == pytest.approx((0.3, 2.0, 1e-3), rel=1e-14)


def test_kernel_values():
    th = GPHyperparams(0.5, 2.0)
    assert gp.matern52([0.1, 0.2], [0.1, 0.2], th) == 2.0
    r = 0.3
    s = math.sqrt(5) * r / 0.5
    assert gp.matern52([0.0], [r], th) == pytest.approx(2.0 * (1 + s + s * s / 3) * math.exp(-s), rel=1e-14)
    with pytest.raises(ValueError):
        gp.matern52([0.0], [0.0, 1.0], th)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(1, 4), st.floats(0.05, 2.0), st.integers(0, 2**31 - 1))
def test_gram_symmetric_positive_semidefinite(n, d, ls, seed):
    X = np.random.default_rng(seed).uniform(size=(n, d))
    K = gp.gram(X, X, GPHyperparams(ls, 1.5))
    np.testing.assert_allclose(K, K.T, atol=0)
    np.testing.assert_allclose(np.diag(K), 1.5)
    assert np.linalg.eigvalsh(K).min() > -1e-9


def test_posterior_and_lml_match_explicit_inverse():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n, d = int(rng.integers(1, 65)), int(rng.integers(1, 11))
        th = GPHyperparams(float(rng.uniform(0.2, 2.0)) * math.sqrt(d), float(rng.uniform(0.5, 2.0)),
                           float(rng.uniform(0.05, 0.5)))
        X, Xq = rng.uniform(size=(n, d)), rng.uniform(size=(5, d))
        y = rng.normal(size=n)
        m, v, K = explicit_posterior(X, y, th, Xq)
        post = gp.posterior(X, y, th, Xq)
        np.testing.assert_allclose(post.mean, m, atol=1e-8, rtol=1e-8)
        np.testing.assert_allclose(post.var, v, atol=1e-8, rtol=1e-8)
        lml = multivariate_normal(np.zeros(n), K).logpdf(y)
        assert gp.log_marginal_likelihood(X, y, th) == pytest.approx(lml, abs=1e-8, rel=1e-8)


def test_posterior_without_data_is_prior():
    th = GPHyperparams(0.3, 2.0, 0.1)
    p = gp.posterior(np.zeros((0, 1)), [], th, [[0.2], [0.7]], include_noise=True)
    np.testing.assert_array_equal(p.mean, 0.0)
    np.testing.assert_array_equal(p.var, 2.1)


def test_posterior_interpolates_noiseless_data():
    th = GPHyperparams(0.3, 1.0, 1e-10)
    X = np.array([[0.1], [0.5], [0.9]])
    y = np.array([1.0, -1.0, 0.5])
    p = gp.posterior(X, y, th, X)
    np.testing.assert_allclose(p.mean, y, atol=1e-6)
    assert np.all(p.var < 1e-6)


def test_lml_gradient_against_finite_differences():
    rng = np.random.default_rng(3)
    for _ in range(10):
        n, d = int(rng.integers(2, 20)), int(rng.integers(1, 4))
        X, y = rng.uniform(size=(n, d)), rng.normal(size=n)
        v0 = np.log([rng.uniform(0.1, 1.0), rng.uniform(0.5, 2), rng.uniform(0.01, 0.3)])
        _, g = gp.log_marginal_likelihood(X, y, GPHyperparams.from_log(v0), return_grad=True)
        num = finite_difference_grad(lambda v: gp.log_marginal_likelihood(X, y, GPHyperparams.from_log(v)), v0, 1e-6)
        assert relative_error(g, num) < 1e-6


def test_prior_samples_have_kernel_covariance():
    th = GPHyperparams(0.4, 1.5, 0.01)
    X = np.array([[0.0], [0.2], [0.9]])
    draws = np.stack([gp.sample_prior(X, th, s) for s in range(8000)])
    target = gp.gram(X, X, th) + 0.01 * np.eye(3)
    np.testing.assert_allclose(np.cov(draws.T), target, atol=0.08)
    np.testing.assert_array_equal(gp.sample_prior(X, th, 5), gp.sample_prior(X, th, 5))


def test_kernel_constants():
    th = GPHyperparams(0.3, 2.0)
    k = gp.kernel_constants(th, 2)
    assert k["c"] == 2.0 and k["R"] == pytest.approx(math.sqrt(2))
    assert k["b"] == pytest.approx(gp.matern52([0, 0], [1, 1], th))
    # |dk/dr| peaks where s = (1 + sqrt 5) / 2 for Matern-5/2
    s = (1 + math.sqrt(5)) / 2
    peak = 2.0 * math.sqrt(5) / 0.3 * s * (1 + s) / 3 * math.exp(-s)
    assert k["B"] == pytest.approx(peak, rel=1e-4)
