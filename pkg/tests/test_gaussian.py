import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import multivariate_normal

from owl.gaussian import ClassModel, GaussianComponent, default_epsilon, fit_class_model, fit_gaussian, gmm_log_prob


def test_single_point_gets_epsilon_covariance():
    g = fit_gaussian([[1.0, 2.0, 3.0]], reg_epsilon=1e-3)
    assert g.mean.tolist() == [1.0, 2.0, 3.0]
    assert np.array_equal(g.covariance, 1e-3 * np.eye(3))


def test_symmetric_points():
    g = fit_gaussian([[-1.0, 0.0], [1.0, 0.0]], reg_epsilon=0.0 + 1e-9)
    assert np.allclose(g.mean, 0.0)
    assert g.covariance[0, 0] == pytest.approx(2.0)
    assert abs(g.covariance[0, 1]) < 1e-12


def test_recovers_known_gaussian():
    rng = np.random.default_rng(5)
    mu = np.array([1.0, -2.0, 0.5])
    a = rng.normal(size=(3, 3))
    cov = a @ a.T + np.eye(3)
    n = 500
    x = rng.multivariate_normal(mu, cov, size=n)
    g = fit_gaussian(x)
    se_mean = np.sqrt(np.diag(cov) / n)
    assert (np.abs(g.mean - mu) < 3 * se_mean).all()
    # var(s_ij) = (cov_ij^2 + cov_ii cov_jj) / (n - 1) for Gaussian data
    se_cov = np.sqrt((cov ** 2 + np.outer(np.diag(cov), np.diag(cov))) / (n - 1))
    assert (np.abs(g.covariance - cov) < 3 * se_cov).all()


def test_rejects_non_finite():
    with pytest.raises(ValueError):
        fit_gaussian([[0.0, np.inf]])


def test_epsilon_rule():
    assert default_epsilon(np.eye(4) * 0.5) == 1e-6
    assert default_epsilon(np.eye(4) * 8.0) == pytest.approx(8e-6)


def test_duplicate_points_still_factorize():
    g = fit_gaussian(np.ones((5, 6)))
    assert np.isfinite(g.log_norm_const)


def test_log_prob_at_mean():
    d = 4
    model = ClassModel("A", [GaussianComponent(np.zeros(d), np.eye(d))])
    assert gmm_log_prob(model, np.zeros(d)) == pytest.approx(-(d / 2) * math.log(2 * math.pi), abs=1e-14)
    with pytest.raises(ValueError):
        gmm_log_prob(model, np.zeros(d + 1))


def test_identical_components_collapse():
    c = GaussianComponent(np.ones(2), np.diag([2.0, 0.5]))
    one = ClassModel("A", [c])
    two = ClassModel("A", [GaussianComponent(c.mean, c.covariance, 0.5), GaussianComponent(c.mean, c.covariance, 0.5)])
    x = np.random.default_rng(0).normal(size=(10, 2))
    assert np.allclose(one.log_prob(x), two.log_prob(x), atol=1e-12)


def _random_model(rng, k=3, d=3):
    comps = []
    w = rng.dirichlet(np.ones(k))
    for i in range(k):
        a = rng.normal(size=(d, d))
        comps.append(GaussianComponent(rng.normal(scale=3, size=d), a @ a.T + 0.5 * np.eye(d), float(w[i])))
    return ClassModel("m", comps)


@given(st.integers(0, 2**32 - 1))
def test_mixture_matches_naive_sum(seed):
    rng = np.random.default_rng(seed)
    model = _random_model(rng)
    x = rng.normal(scale=3, size=(5, 3))
    naive = np.log(sum(c.weight * multivariate_normal(c.mean, c.covariance).pdf(x) for c in model.components))
    got = model.log_prob(x)
    assert np.allclose(got, naive, rtol=1e-10, atol=0)
    rev = ClassModel("m", model.components[::-1])
    assert np.allclose(rev.log_prob(x), got, rtol=1e-13, atol=0)


def test_far_points_stay_finite():
    model = ClassModel("A", [GaussianComponent(np.zeros(2), np.eye(2) * 1e-4)])
    assert np.isfinite(model.log_prob(np.array([[1e3, 1e3]]))).all()


def test_class_model_weights_follow_cluster_sizes():
    x = np.vstack([np.zeros((3, 2)), np.ones((1, 2)) * 5])
    model = fit_class_model("A", x, np.array([0, 0, 0, 1]))
    assert [c.weight for c in model.components] == [0.75, 0.25]
    diag = fit_class_model("A", np.random.default_rng(1).normal(size=(20, 3)), np.zeros(20, dtype=int), diagonal=True)
    cov = diag.components[0].covariance
    assert np.count_nonzero(cov - np.diag(np.diag(cov))) == 0
