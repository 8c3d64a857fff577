import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wassprop.distributions import (
    AmbiguityBall,
    DiscreteDistribution,
    GaussianMixture,
    convolve,
    mixture_moments,
    sample,
)


def random_mixture(rng, n_comp, dim):
    w = rng.dirichlet(np.ones(n_comp))
    means = rng.normal(size=(n_comp, dim))
    L = rng.normal(size=(dim, dim))
    return GaussianMixture(w / w.sum(), means, L @ L.T + 0.1 * np.eye(dim))


class TestGaussianMixture:
    def test_rejects_bad_weights(self):
        with pytest.raises(ValueError):
            GaussianMixture([0.5, 0.6], [[0.0], [1.0]], [[1.0]])
        with pytest.raises(ValueError):
            GaussianMixture([1.5, -0.5], [[0.0], [1.0]], [[1.0]])

    def test_rejects_asymmetric_or_indefinite_covariance(self):
        with pytest.raises(ValueError, match="symmetric"):
            GaussianMixture([1.0], [[0.0, 0.0]], [[1.0, 0.5], [0.4, 1.0]])
        with pytest.raises(ValueError, match="semidefinite"):
            GaussianMixture([1.0], [[0.0, 0.0]], [[1.0, 0.0], [0.0, -1.0]])

    def test_singular_covariance_is_allowed(self):
        g = GaussianMixture.gaussian([1.0, 2.0], np.zeros((2, 2)))
        assert np.all(g.eigvals == 0)

    def test_dict_round_trip(self):
        g = random_mixture(np.random.default_rng(0), 3, 2)
        h = GaussianMixture.from_dict(g.to_dict())
        np.testing.assert_array_equal(g.means, h.means)
        np.testing.assert_array_equal(g.covariance, h.covariance)


class TestMoments:
    def test_single_component(self):
        cov = np.array([[2.0, 0.3], [0.3, 1.0]])
        mu, sigma = mixture_moments(GaussianMixture.gaussian([1.0, -1.0], cov))
        np.testing.assert_allclose(mu, [1.0, -1.0])
        np.testing.assert_allclose(sigma, cov)

    def test_symmetric_pair(self):
        g = GaussianMixture([0.5, 0.5], [[-1.0, 0.0], [1.0, 0.0]], np.eye(2))
        mu, sigma = mixture_moments(g)
        np.testing.assert_allclose(mu, [0.0, 0.0], atol=1e-15)
        np.testing.assert_allclose(sigma, np.diag([2.0, 1.0]))

    def test_monte_carlo(self):
        g = random_mixture(np.random.default_rng(1), 3, 2)
        x = sample(g, 1_000_000, seed=2)
        mu, sigma = mixture_moments(g)
        se = np.sqrt(np.diag(sigma) / len(x))
        assert np.all(np.abs(x.mean(axis=0) - mu) <= 3 * se)
        np.testing.assert_allclose(np.cov(x.T), sigma, rtol=0.01, atol=0.01)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 3))
    def test_covariance_is_psd(self, seed, n_comp, dim):
        _, sigma = mixture_moments(random_mixture(np.random.default_rng(seed), n_comp, dim))
        assert np.linalg.eigvalsh(sigma).min() >= -1e-9


class TestConvolve:
    def test_dirac_mixture_with_gaussian(self):
        d = DiscreteDistribution([[0.0, 0.0], [1.0, 0.0]], [0.3, 0.7])
        g = convolve(d, GaussianMixture.gaussian([0.0, 0.0], np.eye(2)))
        np.testing.assert_allclose(g.weights, [0.3, 0.7])
        np.testing.assert_allclose(g.means, [[0.0, 0.0], [1.0, 0.0]])
        np.testing.assert_allclose(g.covariance, np.eye(2))

    def test_dirac_at_zero_is_identity(self):
        g = random_mixture(np.random.default_rng(3), 3, 2)
        h = convolve(DiscreteDistribution.dirac([0.0, 0.0]), g)
        np.testing.assert_allclose(h.means, g.means)
        np.testing.assert_allclose(h.weights, g.weights)

    def test_two_point_with_symmetric_noise_pair(self):
        mu = 0.01 * np.ones(4)
        noise = GaussianMixture([0.5, 0.5], [mu, -mu], np.diag([0.01, 0.01, 0.0002, 0.001]))
        d = DiscreteDistribution.uniform(np.eye(4)[:2])
        g = convolve(d, noise)
        assert g.n_components == 4
        np.testing.assert_allclose(g.weights, 0.25)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension"):
            convolve(DiscreteDistribution.dirac([0.0]), GaussianMixture.gaussian([0.0, 0.0], np.eye(2)))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 3))
    def test_mean_additivity_and_weights(self, seed, n_atoms, n_comp):
        rng = np.random.default_rng(seed)
        d = DiscreteDistribution(rng.normal(size=(n_atoms, 2)), rng.dirichlet(np.ones(n_atoms)))
        g = random_mixture(rng, n_comp, 2)
        h = convolve(d, g)
        np.testing.assert_allclose(mixture_moments(h)[0], d.mean() + g.mean(), atol=1e-9)
        assert abs(h.weights.sum() - 1) <= 1e-12


class TestSample:
    def test_dirac(self):
        np.testing.assert_array_equal(sample(DiscreteDistribution.dirac([1.0, 2.0]), 5, 0),
                                      np.tile([1.0, 2.0], (5, 1)))

    def test_zero_covariance(self):
        x = sample(GaussianMixture.gaussian([0.0, 0.0], np.zeros((2, 2))), 3, 0)
        np.testing.assert_array_equal(x, np.zeros((3, 2)))

    def test_standard_normal_mean(self):
        x = sample(GaussianMixture.gaussian([0.0], [[1.0]]), 1_000_000, 5)
        assert abs(x.mean()) < 0.004

    def test_determinism(self):
        g = random_mixture(np.random.default_rng(4), 3, 2)
        np.testing.assert_array_equal(sample(g, 100, 9), sample(g, 100, 9))


def test_ball_validation():
    g = GaussianMixture.gaussian([0.0], [[1.0]])
    with pytest.raises(ValueError):
        AmbiguityBall(g, -0.1)
    ball = AmbiguityBall(g, 0.5)
    assert AmbiguityBall.from_dict(ball.to_dict()).radius == 0.5
