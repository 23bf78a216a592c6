"""
Unit tests for the evaluation metrics.
Run with: python -m pytest tests/test_metrics.py -v
"""
import numpy as np
import pandas as pd
import pytest

from core_types import Gaussian, GaussianMixture, InputError, LabeledDataset, Trajectory
from metrics import (
    FAR,
    NEAR,
    PREDICTION,
    RAW_COLUMNS,
    SUMMARY_COLUMNS,
    TRACKING,
    bounce_bimodality_rate,
    bounce_indices,
    multimodality_report,
    near_transition,
    nstep_eval,
    summarize,
    velocity_bimodal,
)


class StandardNormalMethod:
    """Predicts N(0, I) for every horizon, whatever it is given."""

    name = "standard"
    n_modes = 1

    def __init__(self, dim=2):
        self.dim = dim
        self.mixture = GaussianMixture.single(Gaussian(np.zeros(dim), np.eye(dim)))

    def prior_mixtures(self, start_state, n, seed, start_step=0):
        return [self.mixture] * n

    def posterior_mixtures(self, observations, seed, start_step=0):
        return [self.mixture] * (len(observations) - 1)


class SplitMethod(StandardNormalMethod):
    """Two heavy components with opposite velocity means."""

    name = "split"

    def __init__(self):
        super().__init__()
        up = Gaussian([0.0, 1.0], np.eye(2))
        down = Gaussian([0.0, -1.0], np.eye(2))
        self.mixture = GaussianMixture([0.5, 0.5], (up, down))


def _dataset(labels):
    labels = np.asarray(labels)
    states = np.column_stack([np.arange(len(labels), dtype=float), np.linspace(-1, 1, len(labels))])
    return LabeledDataset((Trajectory(states, 0.1, modes=labels),), (labels,))


class TestTransitions:
    """Transition tagging."""

    def test_bounce_indices(self):
        assert bounce_indices([0, 0, 1, 1, 0, 1]).tolist() == [2, 5]
        assert bounce_indices([1, 1, 0, 0]).tolist() == []

    def test_near_window(self):
        transitions = np.array([5])
        assert near_transition(transitions, start=3, n=2, window=0)
        assert not near_transition(transitions, start=2, n=2, window=0)
        assert near_transition(transitions, start=2, n=2, window=1)
        assert not near_transition(transitions, start=5, n=1, window=0)
        assert near_transition(transitions, start=5, n=1, window=1)

    def test_no_transitions(self):
        assert not near_transition(np.array([], dtype=int), start=0, n=3, window=2)


class TestNstepEval:
    """Per-point evaluation rows."""

    def setup_method(self):
        self.test = _dataset([0, 0, 1, 1, 1])

    def test_row_count_and_columns(self):
        raw = nstep_eval(StandardNormalMethod(), self.test, n_max=2, seed=0, window=0)
        assert list(raw.columns) == RAW_COLUMNS
        # starts 0..3; start 3 only has a one-step horizon
        assert len(raw) == 2 * 7
        assert set(raw["kind"]) == {PREDICTION, TRACKING}

    def test_scores_observation_on_metric_dims(self):
        raw = nstep_eval(StandardNormalMethod(), self.test, n_max=1, seed=0, sigma_eps=0.5)
        states = self.test.trajectories[0].states
        row = raw[(raw["kind"] == PREDICTION) & (raw["start"] == 0)].iloc[0]
        expected = -0.5 * np.log(2 * np.pi * 1.25) - 0.5 * states[1, 1] ** 2 / 1.25
        assert row["ll"] == pytest.approx(expected)

    def test_regime_tags(self):
        raw = nstep_eval(StandardNormalMethod(), self.test, n_max=2, seed=0, window=0)
        rows = raw[raw["kind"] == PREDICTION].set_index(["start", "n"])["regime"]
        assert rows[(0, 1)] == FAR
        assert rows[(0, 2)] == NEAR
        assert rows[(2, 1)] == FAR

    def test_max_starts(self):
        raw = nstep_eval(StandardNormalMethod(), self.test, n_max=1, seed=0, max_starts=2)
        assert sorted(raw["start"].unique().tolist()) == [0, 3]

    def test_rejects_bad_horizon(self):
        with pytest.raises(InputError):
            nstep_eval(StandardNormalMethod(), self.test, n_max=0, seed=0)


class TestSummaries:
    """Aggregation and multimodality."""

    def test_summarize(self):
        raw = pd.DataFrame({
            "method": ["a"] * 4, "kind": [PREDICTION] * 4, "trajectory": [0] * 4,
            "start": [0, 1, 2, 3], "n": [1] * 4, "regime": [NEAR, NEAR, FAR, FAR],
            "ll": [-1.0, -3.0, 0.0, 2.0],
        })
        table = summarize(raw)
        assert list(table.columns) == SUMMARY_COLUMNS
        near = table[table["regime"] == NEAR].iloc[0]
        assert near["mean_ll"] == pytest.approx(-2.0)
        assert near["count"] == 2

    def test_summarize_empty(self):
        assert list(summarize(pd.DataFrame(columns=RAW_COLUMNS)).columns) == SUMMARY_COLUMNS

    def test_multimodality_counts_heavy_components(self):
        g = Gaussian([0.0], [[1.0]])
        mixtures = [GaussianMixture.single(g), GaussianMixture([0.95, 0.05], (g, g)),
                    GaussianMixture([0.5, 0.5], (g, g))]
        assert multimodality_report(mixtures, threshold=0.1).tolist() == [1, 1, 2]

    def test_velocity_bimodal(self):
        assert velocity_bimodal(SplitMethod().mixture, dim=1)
        same_side = GaussianMixture([0.5, 0.5], (Gaussian([0.0, 1.0], np.eye(2)),
                                                 Gaussian([0.0, 2.0], np.eye(2))))
        assert not velocity_bimodal(same_side, dim=1)

    def test_bounce_bimodality_rate(self):
        test = _dataset([0, 0, 1, 1, 0, 1])
        assert bounce_bimodality_rate(SplitMethod(), test, dim=1) == 1.0
        assert bounce_bimodality_rate(StandardNormalMethod(), test, dim=1) == 0.0
        assert bounce_bimodality_rate(SplitMethod(), _dataset([1, 1, 1]), dim=1) is None


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
