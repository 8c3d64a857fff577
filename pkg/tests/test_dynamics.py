import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wassprop.cli import ExperimentConfig
from wassprop.distributions import DiscreteDistribution
from wassprop.dynamics import (
    LinearModel,
    Mode,
    NeuralNetModel,
    PiecewiseLinearModel,
    QuadrupleTankModel,
    double_spiral,
    evaluate,
    lipschitz_bound,
    model_from_dict,
    norm_linearization,
    pushforward,
    rotation,
    spectral_norm,
)


def violation(model, lin, centers, x, rho):
    lhs = np.sum((model(x) - model(centers)) ** 2, axis=1) ** (rho / 2)
    rhs = lin.alpha * np.sum((x - centers) ** 2, axis=1) ** (rho / 2) + lin.beta
    return float(np.max(lhs - rhs))


class TestDoubleSpiral:
    def test_origin_is_fixed(self):
        np.testing.assert_allclose(double_spiral()([0.0, 0.0]), [0.0, 0.0])

    def test_right_half_plane_uses_second_mode(self):
        expected = 0.8 * rotation(-np.pi / 8) @ np.array([1.0, 0.0])
        np.testing.assert_allclose(evaluate(double_spiral(), [1.0, 0.0]), expected)
        np.testing.assert_allclose(expected, [0.73910, -0.30615], atol=1e-5)

    def test_boundary_goes_to_first_mode(self):
        m = double_spiral()
        assert m.mode_of([[0.0, 1.0]])[0] == 0

    def test_pushforward_straddling_points_rotate_oppositely(self):
        d = DiscreteDistribution.uniform([[-1.0, 0.0], [1.0, 0.0]])
        out = pushforward(double_spiral(), d)
        np.testing.assert_array_equal(out.weights, d.weights)
        # both images get the same negative second coordinate: rotations of opposite sense
        assert out.locations[0, 1] == pytest.approx(out.locations[1, 1])
        assert out.locations[0, 0] < 0 < out.locations[1, 0]

    def test_lipschitz_bound(self):
        assert lipschitz_bound(double_spiral()) == pytest.approx(0.8)

    def test_unguarded_linearization_example(self):
        lin = norm_linearization(double_spiral(), [[1.0, 0.0]], 2, split=1.0, use_guards=False)
        assert lin.alpha[0] == pytest.approx(1.28)
        expected = 2 * (0.8 * 2 * np.sin(np.pi / 8)) ** 2
        assert lin.beta[0] == pytest.approx(expected, rel=1e-12)
        assert expected == pytest.approx(0.74983, abs=5e-5)

    def test_guarded_never_looser(self):
        rng = np.random.default_rng(0)
        c = rng.normal(size=(200, 2))
        for t in (0.05, 1.0, 20.0):
            tight = norm_linearization(double_spiral(), c, 2, split=t)
            loose = norm_linearization(double_spiral(), c, 2, split=t, use_guards=False)
            assert np.all(tight.beta <= loose.beta + 1e-12)

    @pytest.mark.parametrize("rho", [1, 2])
    @pytest.mark.parametrize("use_guards", [True, False])
    def test_sampled_validity(self, rho, use_guards):
        m = double_spiral()
        rng = np.random.default_rng(rho)
        centers = rng.normal(size=(1000, 2))
        lin = norm_linearization(m, centers, rho, split=0.7, use_guards=use_guards)
        idx = rng.integers(0, 1000, 100_000)
        x = centers[idx] + rng.normal(size=(100_000, 2)) * rng.uniform(0.01, 3, (100_000, 1))
        sub = type(lin)(lin.alpha[idx], lin.beta[idx], lin.lipschitz)
        assert violation(m, sub, centers[idx], x, rho) <= 1e-9

    def test_tuned_split_minimises_objective(self):
        m = double_spiral()
        rng = np.random.default_rng(3)
        c = rng.normal(size=(40, 2))
        w = np.full(40, 1 / 40)
        best = norm_linearization(m, c, 2, scale=0.02, masses=w)
        obj = lambda lin: lin.alpha_hat * 0.02 + lin.beta_term(w)
        for t in (1e-3, 0.1, 1.0, 10.0):
            assert obj(best) <= obj(norm_linearization(m, c, 2, split=t)) + 1e-12


class TestPiecewiseLinear:
    def test_uncovered_point_raises(self):
        m = PiecewiseLinearModel([Mode(np.eye(2), [[1.0, 0.0]], [0.0])])
        with pytest.raises(ValueError, match="covered"):
            m([1.0, 0.0])
        assert not m.check_cover([-1, -1], [1, 1])
        assert double_spiral().check_cover([-1, -1], [1, 1])

    def test_non_finite_input(self):
        with pytest.raises(ValueError, match="finite"):
            double_spiral()([np.nan, 0.0])

    def test_affine_offsets_in_linearization(self):
        m = ExperimentConfig.load("piecewise_linear").model()
        rng = np.random.default_rng(4)
        centers = rng.uniform(-2.5, 2.5, (500, 2))
        lin = norm_linearization(m, centers, 2, split=0.5)
        idx = rng.integers(0, 500, 100_000)
        x = centers[idx] + rng.normal(size=(100_000, 2)) * rng.uniform(0.01, 2, (100_000, 1))
        sub = type(lin)(lin.alpha[idx], lin.beta[idx], lin.lipschitz)
        assert violation(m, sub, centers[idx], x, 2) <= 1e-9

    def test_within_mode_quotients_below_bound(self):
        m = double_spiral()
        rng = np.random.default_rng(5)
        x = rng.uniform(0.0, 2, (10_000, 2)) + [1e-9, 0]
        y = rng.uniform(0.0, 2, (10_000, 2)) + [1e-9, 0]
        q = np.linalg.norm(m(x) - m(y), axis=1) / np.linalg.norm(x - y, axis=1)
        assert q.max() <= lipschitz_bound(m) + 1e-9


class TestLinear:
    def test_operator_norm_case(self):
        A = 0.8 * rotation(0.3)
        lin = norm_linearization(LinearModel(A), np.zeros((3, 2)), 2)
        np.testing.assert_allclose(lin.alpha, 0.64)
        np.testing.assert_allclose(lin.beta, 0.0)

    def test_identity(self):
        m = LinearModel(np.eye(3))
        assert lipschitz_bound(m) == pytest.approx(1.0)
        d = DiscreteDistribution.uniform(np.arange(6.0).reshape(2, 3))
        np.testing.assert_array_equal(pushforward(m, d).locations, d.locations)

    def test_rho_must_be_supported(self):
        with pytest.raises(ValueError):
            norm_linearization(LinearModel(np.eye(2)), [[0.0, 0.0]], 3)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.sampled_from([2, 4]))
    def test_spectral_norm_matches_eigen_solve(self, seed, n):
        A = np.random.default_rng(seed).normal(size=(n, n))
        assert spectral_norm(A) == pytest.approx(np.sqrt(np.linalg.eigvalsh(A.T @ A).max()), abs=1e-9)


class TestNeuralNet:
    def test_zero_network_by_hand(self):
        W_out = np.array([[1.0, 2.0], [3.0, 4.0]])
        m = NeuralNetModel([np.zeros((2, 2)), W_out], [np.zeros(2), [0.5, -0.5]])
        np.testing.assert_allclose(m([3.0, -7.0]), W_out @ [0.5, 0.5] + [0.5, -0.5])

    def test_product_rule(self):
        W = 2.0 * np.eye(2)
        m = NeuralNetModel([W, W], [np.zeros(2), np.zeros(2)])
        assert lipschitz_bound(m) == pytest.approx(1.0)

    def test_shapes_must_chain(self):
        with pytest.raises(ValueError):
            NeuralNetModel([np.ones((3, 2)), np.ones((2, 4))], [np.zeros(3), np.zeros(2)])

    def test_benchmark_net_is_sound(self):
        m = ExperimentConfig.load("nn_pendulum").model()
        assert [W.shape for W in m.weights] == [(64, 2), (64, 64), (2, 64)]
        rng = np.random.default_rng(6)
        x = rng.uniform(-4, 4, (100_000, 2))
        y = x + rng.normal(scale=0.3, size=x.shape)
        quotient = np.linalg.norm(m(x) - m(y), axis=1) / np.linalg.norm(x - y, axis=1)
        lin = norm_linearization(m, x[:5], 2)
        assert lin.alpha_hat >= quotient.max() ** 2
        assert np.all(lin.beta == 0)

    def test_box_refinement_is_sound_and_tighter(self):
        m = ExperimentConfig.load("nn_pendulum").model()
        boxed = NeuralNetModel(m.weights, m.biases, domain=([-0.5, -0.5], [0.5, 0.5]))
        assert boxed.lipschitz() <= m.lipschitz()
        rng = np.random.default_rng(7)
        x = rng.uniform(-0.5, 0.5, (50_000, 2))
        y = rng.uniform(-0.5, 0.5, (50_000, 2))
        q = np.linalg.norm(boxed(x) - boxed(y), axis=1) / np.linalg.norm(x - y, axis=1)
        assert q.max() <= boxed.lipschitz()


class TestQuadrupleTank:
    def test_clamps_into_box(self):
        m = QuadrupleTankModel(h_min=0.5, h_max=2.0)
        out = m(np.array([[-10.0, 100.0, 1.0, 1.0]]))
        assert np.all(out >= 0.5) and np.all(out <= 2.0)

    def test_zero_level_is_rejected(self):
        with pytest.raises(ValueError, match="unbounded"):
            QuadrupleTankModel(h_min=0.0)

    def test_bad_parameters(self):
        with pytest.raises(ValueError):
            QuadrupleTankModel(valve_split=[1.2, 0.5])
        with pytest.raises(ValueError):
            QuadrupleTankModel(tank_area=[1.0, -1.0, 1.0, 1.0])
        with pytest.raises(ValueError, match="unknown"):
            QuadrupleTankModel(pump=3)

    def test_jacobian_matches_finite_differences(self):
        m = QuadrupleTankModel(h_min=0.2, h_max=50.0)
        x = np.array([3.0, 4.0, 2.0, 1.5])
        J = m.jacobian(x)[0]
        eps = 1e-6
        fd = np.stack([(m(x + eps * e) - m(x - eps * e)) / (2 * eps) for e in np.eye(4)], axis=1)
        np.testing.assert_allclose(J, fd, atol=1e-7)

    def test_benchmark_lipschitz_is_sound(self):
        m = ExperimentConfig.load("quadruple_tank").model()
        L = lipschitz_bound(m)
        rng = np.random.default_rng(8)
        x = rng.uniform(0.0, 4.5, (100_000, 4))
        y = x + rng.normal(scale=0.2, size=x.shape)
        q = np.linalg.norm(m(x) - m(y), axis=1) / np.linalg.norm(x - y, axis=1)
        assert q.max() <= L
        assert L < 1
        lin = norm_linearization(m, x[:3], 2)
        np.testing.assert_allclose(lin.alpha, L**2)


def test_model_from_dict_round_trip():
    for m in (double_spiral(), LinearModel(np.eye(2), [1.0, 0.0]), QuadrupleTankModel()):
        again = model_from_dict(m.to_dict())
        x = np.random.default_rng(0).uniform(0.3, 2, (20, m.dim))
        np.testing.assert_array_equal(again(x), m(x))
    with pytest.raises(ValueError, match="unknown"):
        model_from_dict({"family": "spline"})
