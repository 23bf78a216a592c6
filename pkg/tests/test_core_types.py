"""
Unit tests for the shared domain types and densities.
Run with: python -m pytest tests/test_core_types.py -v
"""
import numpy as np
import pytest

from core_types import (
    LOG_2PI,
    ConfigError,
    Gaussian,
    GaussianMixture,
    InputError,
    LabeledDataset,
    NumericalError,
    Trajectory,
    as_state_vec,
    derive_seed,
    gaussian_logpdf,
    isotropic_logpdf,
    mixture_logpdf,
    read_trajectory_csv,
    robust_cholesky,
    transition_indices,
    write_trajectory_csv,
)


class TestStateVectors:
    """as_state_vec and Trajectory validation."""

    def test_rejects_nan(self):
        with pytest.raises(InputError):
            as_state_vec([1.0, np.nan])

    def test_result_is_read_only(self):
        vec = as_state_vec([1.0, 2.0])
        with pytest.raises(ValueError):
            vec[0] = 3.0

    def test_trajectory_needs_two_states(self):
        with pytest.raises(InputError):
            Trajectory(np.zeros((1, 2)), 0.1)

    def test_trajectory_rejects_non_positive_dt(self):
        with pytest.raises(InputError):
            Trajectory(np.zeros((3, 2)), 0.0)

    def test_trajectory_modes_must_align(self):
        with pytest.raises(InputError):
            Trajectory(np.zeros((3, 2)), 0.1, modes=[0, 1])


class TestGaussians:
    """Gaussian, mixture and isotropic log-densities."""

    def test_rejects_asymmetric_covariance(self):
        with pytest.raises(InputError):
            Gaussian([0.0, 0.0], [[1.0, 0.5], [0.0, 1.0]])

    def test_rejects_negative_definite_covariance(self):
        with pytest.raises(InputError):
            Gaussian([0.0], [[-1.0]])

    def test_standard_normal_at_mean(self):
        g = Gaussian([0.0], [[1.0]])
        assert gaussian_logpdf(g, [0.0]) == pytest.approx(-0.5 * LOG_2PI)

    def test_zero_covariance_is_finite(self):
        g = Gaussian([1.0, 2.0], np.zeros((2, 2)))
        assert np.isfinite(gaussian_logpdf(g, [1.0, 2.0]))

    def test_marginal_picks_block(self):
        cov = np.array([[2.0, 0.3, 0.1], [0.3, 1.0, 0.2], [0.1, 0.2, 3.0]])
        g = Gaussian([1.0, 2.0, 3.0], cov).marginal([2, 0])
        assert np.allclose(g.mean, [3.0, 1.0])
        assert np.allclose(g.cov, [[3.0, 0.1], [0.1, 2.0]])

    def test_single_component_mixture_matches_gaussian(self):
        g = Gaussian([0.5, -0.5], [[1.0, 0.2], [0.2, 0.5]])
        x = [0.1, 0.3]
        assert mixture_logpdf(GaussianMixture.single(g), x) == pytest.approx(gaussian_logpdf(g, x))

    def test_mixture_of_identical_components(self):
        g = Gaussian([0.0], [[2.0]])
        gmm = GaussianMixture([0.3, 0.7], (g, g))
        assert mixture_logpdf(gmm, [1.0]) == pytest.approx(gaussian_logpdf(g, [1.0]))

    def test_mixture_weights_must_sum_to_one(self):
        g = Gaussian([0.0], [[1.0]])
        with pytest.raises(InputError):
            GaussianMixture([0.5, 0.6], (g, g))

    def test_zero_weight_component_is_ignored(self):
        near = Gaussian([0.0], [[1.0]])
        far = Gaussian([100.0], [[1.0]])
        gmm = GaussianMixture([1.0, 0.0], (near, far))
        assert mixture_logpdf(gmm, [0.0]) == pytest.approx(gaussian_logpdf(near, [0.0]))

    def test_isotropic_matches_full_gaussian(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(4, 3))
        means = rng.normal(size=(4, 3))
        variances = rng.uniform(0.1, 2.0, size=4)
        got = isotropic_logpdf(x, means, variances)
        for i in range(4):
            expected = gaussian_logpdf(Gaussian(means[i], variances[i] * np.eye(3)), x[i])
            assert got[i] == pytest.approx(expected), f"row {i}: {got[i]} vs {expected}"

    def test_added_noise_widens_every_component(self):
        gmm = GaussianMixture.single(Gaussian([0.0, 0.0], np.eye(2)))
        wider = gmm.with_added_noise(0.5)
        assert np.allclose(wider.components[0].cov, 1.5 * np.eye(2))


class TestCholesky:
    """Jitter ladder."""

    def test_plain_matrix_needs_no_jitter(self):
        _, jitter = robust_cholesky(np.eye(3))
        assert jitter == 0.0

    def test_singular_psd_gets_jitter(self):
        L, jitter = robust_cholesky(np.ones((2, 2)))
        assert 0.0 < jitter <= 1e-4
        assert np.allclose(L @ L.T, np.ones((2, 2)) + jitter * np.eye(2))

    def test_indefinite_matrix_fails(self):
        with pytest.raises(NumericalError) as exc:
            robust_cholesky(np.diag([1.0, -1.0]), module="unit")
        assert exc.value.module == "unit"


class TestDatasets:
    """LabeledDataset helpers and the trajectory CSV format."""

    def setup_method(self):
        self.a = Trajectory(np.arange(6.0).reshape(3, 2), 0.1, modes=[0, 0, 1])
        self.b = Trajectory(np.arange(8.0).reshape(4, 2), 0.1, modes=[1, 1, 0, 0])

    def test_label_length_must_match(self):
        with pytest.raises(InputError):
            LabeledDataset((self.a,), (np.zeros(2, dtype=int),))

    def test_counts(self):
        ds = LabeledDataset.from_ground_truth([self.a, self.b])
        assert ds.n_points == 7
        assert ds.n_pairs == 5
        assert ds.pooled_states().shape == (7, 2)

    def test_split_pooled_restores_pieces(self):
        ds = LabeledDataset.from_ground_truth([self.a, self.b])
        pieces = ds.split_pooled(ds.pooled_labels())
        assert [p.tolist() for p in pieces] == [[0, 0, 1], [1, 1, 0, 0]]

    def test_csv_round_trip(self, tmp_path):
        path = tmp_path / "traj.csv"
        write_trajectory_csv(path, self.b)
        back = read_trajectory_csv(path)
        assert np.allclose(back.states, self.b.states)
        assert back.dt == pytest.approx(0.1)
        assert back.modes.tolist() == [1, 1, 0, 0]

    def test_csv_rejects_uneven_time(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("t,x0\n0.0,1.0\n0.1,2.0\n0.5,3.0\n")
        with pytest.raises(InputError):
            read_trajectory_csv(path)

    def test_transition_indices(self):
        assert transition_indices([0, 0, 1, 1, 0]).tolist() == [2, 4]
        assert transition_indices([1, 1, 1]).tolist() == []


class TestMisc:
    """Seeds and error formatting."""

    def test_derive_seed_is_deterministic(self):
        assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
        assert derive_seed(1, 2, 3) != derive_seed(1, 2, 4)

    def test_config_error_carries_line(self):
        err = ConfigError("bad value", "cfg.yaml", 7)
        assert str(err) == "cfg.yaml:7: bad value"
        assert err.line == 7


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
