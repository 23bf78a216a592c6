"""
Unit tests for GP regression: kernel, predictions against dense solves,
evidence and its gradient, and hyperparameter fitting.
Run with: python -m pytest tests/test_gp_regression.py -v
"""
import numpy as np
import pytest

from config import GpConfig
from core_types import LOG_2PI, InputError
from gp_regression import (
    GpModel,
    KernelParams,
    fit,
    gram,
    kernel,
    log_marginal_likelihood,
    log_marginal_likelihood_grad,
    predict,
    predict_many,
)


def _dense_oracle(params, X, Y, x):
    """Posterior mean and variance from explicit solves."""
    K = np.array([[kernel(a, b, params, same_index=(i == j)) for j, b in enumerate(X)]
                  for i, a in enumerate(X)])
    k_star = np.array([kernel(x, b, params) for b in X])
    mean_y = Y.mean(axis=0)
    mean = mean_y + k_star @ np.linalg.solve(K, Y - mean_y)
    var = 1.0 + params.beta1 - k_star @ np.linalg.solve(K, k_star)
    return mean, max(var, 0.0)


class TestKernel:
    """Kernel and Gram matrix."""

    def test_same_index_adds_delta(self):
        assert kernel([0.3], [0.3], KernelParams(2.0, 0.1), same_index=True) == pytest.approx(1.1)

    def test_unit_distance(self):
        assert kernel([0.0], [1.0], KernelParams(1.0, 0.0)) == pytest.approx(np.exp(-1.0))

    def test_dimension_mismatch(self):
        with pytest.raises(InputError):
            kernel([0.0], [1.0, 2.0], KernelParams(1.0, 0.0))

    def test_invalid_params(self):
        with pytest.raises(InputError):
            KernelParams(0.0, 0.1)
        with pytest.raises(InputError):
            KernelParams(1.0, -0.1)

    def test_gram_matches_double_loop(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(5, 3))
        p = KernelParams(0.7, 0.05)
        K = gram(X, p)
        for i in range(5):
            for j in range(5):
                expected = kernel(X[i], X[j], p, same_index=(i == j))
                assert K[i, j] == pytest.approx(expected, abs=1e-14)

    def test_gram_single_row(self):
        assert gram([[1.0, 2.0]], KernelParams(1.0, 0.25)).tolist() == [[1.25]]

    def test_gram_follows_row_permutation(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(7, 2))
        p = KernelParams(0.4, 0.1)
        order = rng.permutation(7)
        assert np.allclose(gram(X[order], p), gram(X, p)[np.ix_(order, order)], atol=1e-14)


class TestPredict:
    """Posterior prediction."""

    def test_exact_interpolation_without_noise(self):
        X = np.arange(5.0).reshape(-1, 1)
        Y = np.column_stack([np.sin(X[:, 0]), np.cos(X[:, 0])])
        model = GpModel(KernelParams(1.0, 0.0), X, Y)
        means, variances = predict_many(model, X)
        assert np.allclose(means, Y, atol=1e-6), f"max error {np.abs(means - Y).max()}"
        assert np.all(variances <= 1e-6)

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(1)
        for trial in range(10):
            X = rng.normal(size=(5, 2))
            Y = rng.normal(size=(5, 2))
            p = KernelParams(0.5, 0.1)
            model = GpModel(p, X, Y)
            x = rng.normal(size=2)
            g = predict(model, x)
            mean, var = _dense_oracle(p, X, Y, x)
            assert np.allclose(g.mean, mean, atol=1e-8), f"trial {trial}: mean mismatch"
            assert np.allclose(g.cov, var * np.eye(2), atol=1e-8), f"trial {trial}: variance mismatch"

    def test_far_query_reverts_to_prior(self):
        X = np.array([[0.0], [1.0]])
        Y = np.array([[10.0], [12.0]])
        model = GpModel(KernelParams(1.0, 0.2), X, Y)
        g = predict(model, [100.0])
        assert g.mean[0] == pytest.approx(11.0)
        assert g.cov[0, 0] == pytest.approx(1.2)

    def test_variance_bounds(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(20, 2))
        model = GpModel(KernelParams(1.5, 0.01), X, rng.normal(size=(20, 2)))
        _, variances = predict_many(model, rng.normal(size=(50, 2)) * 3)
        assert np.all(variances >= 0.0)
        assert np.all(variances <= 1.01 + 1e-8)

    def test_wrong_query_dimension(self):
        model = GpModel(KernelParams(1.0, 0.1), [[0.0, 0.0], [1.0, 1.0]], np.zeros((2, 2)))
        with pytest.raises(InputError):
            predict(model, [0.0, 0.0, 0.0])

    def test_serialized_model_predicts_the_same(self):
        rng = np.random.default_rng(4)
        model = GpModel(KernelParams(0.8, 0.02), rng.normal(size=(6, 2)), rng.normal(size=(6, 2)))
        back = GpModel.from_dict(model.to_dict())
        query = rng.normal(size=(3, 2))
        assert np.allclose(predict_many(back, query)[0], predict_many(model, query)[0])


class TestEvidence:
    """Log marginal likelihood and gradient."""

    def test_single_centered_point(self):
        model = GpModel(KernelParams(1.0, 0.0), [[0.0, 0.0]], [[3.0, 4.0]])
        assert log_marginal_likelihood(model) == pytest.approx(-0.5 * 2 * LOG_2PI)

    def test_matches_explicit_inverse(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(4, 2))
        Y = rng.normal(size=(4, 2))
        p = KernelParams(0.9, 0.1)
        K = gram(X, p)
        centered = Y - Y.mean(axis=0)
        K_inv = np.linalg.inv(K)
        _, log_det = np.linalg.slogdet(K)
        expected = sum(-0.5 * c @ K_inv @ c - 0.5 * log_det - 0.5 * 4 * LOG_2PI for c in centered.T)
        assert log_marginal_likelihood(GpModel(p, X, Y)) == pytest.approx(expected, abs=1e-10)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        h = 1e-5
        for trial in range(5):
            X = rng.normal(size=(8, 2))
            Y = np.sin(X) + 0.1 * rng.normal(size=(8, 2))
            p = KernelParams(float(rng.uniform(0.3, 2.0)), float(rng.uniform(0.01, 0.5)))
            grad = log_marginal_likelihood_grad(p, X, Y)
            theta = p.to_log()
            for i in range(2):
                up, down = theta.copy(), theta.copy()
                up[i] += h
                down[i] -= h
                numeric = (log_marginal_likelihood(GpModel(KernelParams.from_log(up), X, Y))
                           - log_marginal_likelihood(GpModel(KernelParams.from_log(down), X, Y))) / (2 * h)
                assert grad[i] == pytest.approx(numeric, rel=1e-4, abs=1e-7), \
                    f"trial {trial}, param {i}: analytic {grad[i]} vs numeric {numeric}"


class TestFit:
    """Hyperparameter optimization."""

    def setup_method(self):
        rng = np.random.default_rng(7)
        self.X = rng.uniform(-2, 2, size=(40, 1))
        self.Y = np.sin(self.X) + 0.05 * rng.normal(size=(40, 1))

    def test_never_worse_than_init(self):
        init = KernelParams(50.0, 5.0)
        model = fit(self.X, self.Y, init, GpConfig(n_restarts=3, seed=1))
        baseline = log_marginal_likelihood(GpModel(init, self.X, self.Y))
        assert log_marginal_likelihood(model) >= baseline - 1e-9

    def test_beats_coarse_grid(self):
        model = fit(self.X, self.Y, KernelParams(1.0, 0.01), GpConfig(seed=0))
        best_grid = -np.inf
        for b0 in np.logspace(-2, 2, 20):
            for b1 in np.logspace(-6, 0, 20):
                best_grid = max(best_grid, log_marginal_likelihood(GpModel(KernelParams(b0, b1), self.X, self.Y)))
        assert log_marginal_likelihood(model) >= best_grid - 0.5

    def test_respects_bounds(self):
        cfg = GpConfig(beta0_bounds=(0.5, 2.0), beta1_bounds=(1e-3, 1e-1), seed=2)
        model = fit(self.X, self.Y, KernelParams(1.0, 0.01), cfg)
        assert 0.5 - 1e-9 <= model.params.beta0 <= 2.0 + 1e-9
        assert 1e-3 - 1e-12 <= model.params.beta1 <= 1e-1 + 1e-12

    def test_single_point(self):
        model = fit([[0.0]], [[1.0]], KernelParams(1.0, 0.01), GpConfig(n_restarts=2))
        assert np.isfinite(log_marginal_likelihood(model))

    def test_deterministic_per_seed(self):
        a = fit(self.X, self.Y, KernelParams(1.0, 0.01), GpConfig(seed=3))
        b = fit(self.X, self.Y, KernelParams(1.0, 0.01), GpConfig(seed=3))
        assert a.params == b.params


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
