"""
Unit tests for the hybrid learner: pair partitioning, MAP reassignment,
the learned model's mode transitions, and an end-to-end run on the ball.
Run with: python -m pytest tests/test_hybrid_learner.py -v
"""
import logging

import numpy as np
import pytest

from classifiers import Classifier
from config import GpConfig, LearnerConfig
from core_types import ConfigError, InputError, LabeledDataset, Trajectory
from gp_regression import GpModel, KernelParams, predict_many
from hybrid_learner import (
    HybridLearner,
    HybridModel,
    build_pairs,
    detect_smooth_switches,
    mapcl_reassign,
    subsample_pairs,
)
from particle_filter import track
from sims import BallConfig, gen_ball


def _shift_gp(offset):
    """1-D GP trained on x -> x + offset."""
    X = np.linspace(-2.0, 2.0, 15).reshape(-1, 1)
    return GpModel(KernelParams(1.0, 1e-4), X, X + offset)


def _dataset(states, labels):
    traj = Trajectory(np.asarray(states, dtype=float).reshape(-1, 1), 0.1)
    return LabeledDataset((traj,), (np.asarray(labels),))


class TestBuildPairs:
    """Partition of consecutive pairs."""

    def test_every_pair_lands_in_one_bucket(self):
        ds = _dataset(np.arange(6.0), [0, 0, 1, 1, 0, 0])
        pairs = build_pairs(ds)
        assert pairs.total == ds.n_pairs == 5
        assert len(pairs.dyn_pairs[0][0]) == 2
        assert len(pairs.dyn_pairs[1][0]) == 1
        assert pairs.guard_counts() == {(0, 1): 1, (1, 0): 1}

    def test_guard_tuple_contents(self):
        pairs = build_pairs(_dataset([1.0, 2.0, 3.0], [0, 1, 1]))
        pre, post = pairs.guard_pairs[(0, 1)]
        assert pre.tolist() == [[1.0]] and post.tolist() == [[2.0]]

    def test_outgoing(self):
        pairs = build_pairs(_dataset(np.arange(5.0), [0, 1, 2, 0, 2]))
        assert sorted(pairs.outgoing(0)) == [1, 2]
        assert pairs.outgoing(1).keys() == {2}

    def test_subsample_cap(self):
        pre = np.arange(10.0).reshape(-1, 1)
        kept_pre, kept_post = subsample_pairs(pre, pre + 1, limit=4, seed=0)
        assert len(kept_pre) == 4
        assert np.allclose(kept_post, kept_pre + 1)
        assert subsample_pairs(pre, pre, limit=0, seed=0)[0] is pre


class TestReassignment:
    """MAP reassignment of labels."""

    def test_moves_points_to_better_dynamics(self):
        ds = _dataset([0.5] * 4, [1, 1, 1, 1])
        new, changes = mapcl_reassign(ds, {0: _shift_gp(0.0), 1: _shift_gp(5.0)}, {})
        assert new.labels[0].tolist() == [0, 0, 0, 0]
        assert changes == 4

    def test_ties_keep_incumbent(self):
        ds = _dataset([0.5] * 4, [1, 0, 1, 1])
        new, changes = mapcl_reassign(ds, {0: _shift_gp(0.0), 1: _shift_gp(0.0)}, {})
        assert changes == 0
        assert new.labels[0].tolist() == [1, 0, 1, 1]

    def test_reset_sets_successor_of_final_point(self):
        ds = _dataset([0.0, 5.0], [1, 1])
        dynamics = {0: _shift_gp(0.0), 1: _shift_gp(10.0)}
        resets = {(0, 1): _shift_gp(5.0)}
        new, changes = mapcl_reassign(ds, dynamics, resets)
        assert new.labels[0].tolist() == [0, 1]
        assert changes == 1

    def test_needs_some_gp(self):
        with pytest.raises(ConfigError):
            mapcl_reassign(_dataset([0.0, 1.0], [0, 0]), {}, {})

    def test_margin_keeps_incumbent_on_near_ties(self):
        ds = _dataset([0.0] * 4, [1, 1, 1, 1])
        dynamics = {0: _shift_gp(0.0), 1: _shift_gp(0.005)}
        kept, kept_changes = mapcl_reassign(ds, dynamics, {}, margin=4.0)
        moved, moved_changes = mapcl_reassign(ds, dynamics, {}, margin=0.0)
        assert kept_changes == 0 and kept.labels[0].tolist() == [1, 1, 1, 1]
        assert moved_changes == 4 and moved.labels[0].tolist() == [0, 0, 0, 0]

    def test_margin_still_moves_clear_wins(self):
        ds = _dataset([0.0] * 4, [1, 1, 1, 1])
        new, changes = mapcl_reassign(ds, {0: _shift_gp(0.0), 1: _shift_gp(0.2)}, {}, margin=4.0)
        assert new.labels[0].tolist() == [0, 0, 0, 0]
        assert changes == 4

    def test_final_label_kept_within_margin(self):
        ds = _dataset([0.0, 0.0, 0.0], [0, 0, 1])
        dynamics = {0: _shift_gp(0.0), 1: _shift_gp(0.0)}
        resets = {(0, 1): _shift_gp(0.005)}
        kept, _ = mapcl_reassign(ds, dynamics, resets, margin=4.0)
        moved, changes = mapcl_reassign(ds, dynamics, resets, margin=0.0)
        assert kept.labels[0].tolist() == [0, 0, 1]
        assert moved.labels[0].tolist() == [0, 0, 0] and changes == 1

    def test_rejects_negative_margin(self):
        with pytest.raises(InputError):
            mapcl_reassign(_dataset([0.0, 1.0], [0, 0]), {0: _shift_gp(0.0)}, {}, margin=-1.0)


class TestSmoothSwitches:
    """Guard buckets that the source dynamics already explain."""

    def setup_method(self):
        self.dynamics = {0: _shift_gp(0.0), 1: _shift_gp(0.0)}
        self.resets = {(0, 1): _shift_gp(1.5)}

    def test_bucket_explained_by_dynamics_is_smooth(self):
        pairs = build_pairs(_dataset([0.0, 0.0, 0.0], [0, 1, 1]))
        assert detect_smooth_switches(pairs, self.dynamics, self.resets, 4.0, 0.5) == ((0, 1),)

    def test_jump_needs_a_reset(self):
        pairs = build_pairs(_dataset([0.0, 1.5, 1.5], [0, 1, 1]))
        assert detect_smooth_switches(pairs, self.dynamics, self.resets, 4.0, 0.5) == ()

    def test_fraction_counts_pairs(self):
        # two pairs stay put, one jumps
        ds = LabeledDataset(
            tuple(Trajectory(np.array(s, dtype=float).reshape(-1, 1), 0.1)
                  for s in ([0.0, 0.0], [0.3, 0.3], [0.0, 1.5])),
            (np.array([0, 1]),) * 3)
        pairs = build_pairs(ds)
        assert detect_smooth_switches(pairs, self.dynamics, self.resets, 4.0, 0.5) == ((0, 1),)
        assert detect_smooth_switches(pairs, self.dynamics, self.resets, 4.0, 0.9) == ()

    def test_bucket_without_reset_is_skipped(self):
        pairs = build_pairs(_dataset([0.0, 0.0], [1, 0]))
        assert detect_smooth_switches(pairs, self.dynamics, self.resets, 4.0, 0.5) == ()


class TestHybridModel:
    """Mode transition sampling on a hand-built model."""

    def setup_method(self):
        self.even = Classifier(np.zeros((2, 2)), (0, 1), (1.0, 1.0))
        self.dynamics = {0: _shift_gp(0.0), 1: _shift_gp(1.0)}

    def _model(self, resets):
        return HybridModel(2, self.dynamics, resets, Classifier.constant(0, 1), {0: self.even})

    def test_missing_reset_renormalizes_to_stay(self):
        proba = self._model({}).next_mode_proba(0, [[0.3]])
        assert proba.tolist() == [[1.0, 0.0]]

    def test_available_reset_keeps_split(self):
        proba = self._model({(0, 1): _shift_gp(3.0)}).next_mode_proba(0, [[0.3]])
        assert np.allclose(proba, [[0.5, 0.5]])

    def test_mode_without_guard_classifier_stays(self):
        proba = self._model({}).next_mode_proba(1, [[0.3], [1.0]])
        assert proba.tolist() == [[0.0, 1.0], [0.0, 1.0]]

    def test_transition_uses_the_chosen_gp(self):
        model = self._model({})
        states = np.array([[0.2], [0.4]])
        modes, means, variances = model.transition(np.array([1, 1]), states, np.random.default_rng(0))
        expected, expected_var = predict_many(self.dynamics[1], states)
        assert modes.tolist() == [1, 1]
        assert np.allclose(means, expected) and np.allclose(variances, expected_var)

    def test_initial_mode_proba_spans_all_modes(self):
        proba = self._model({}).initial_mode_proba([0.0])
        assert proba.tolist() == [1.0, 0.0]

    def test_smooth_switch_allows_target(self):
        model = HybridModel(2, self.dynamics, {}, Classifier.constant(0, 1), {0: self.even},
                            smooth_switches=[(0, 1)])
        assert np.allclose(model.next_mode_proba(0, [[0.3]]), [[0.5, 0.5]])

    def test_smooth_switch_moves_with_source_dynamics(self):
        model = HybridModel(2, self.dynamics, {}, Classifier.constant(0, 1), {0: self.even},
                            smooth_switches=[(0, 1)])
        states = np.full((40, 1), 0.2)
        modes, means, _ = model.transition(np.zeros(40, dtype=int), states, np.random.default_rng(1))
        assert set(modes.tolist()) == {0, 1}
        expected, _ = predict_many(self.dynamics[0], states[:1])
        assert np.allclose(means, expected[0])

    def test_reset_overrides_smooth_switch(self):
        model = HybridModel(2, self.dynamics, {(0, 1): _shift_gp(3.0)}, Classifier.constant(0, 1),
                            {0: self.even}, smooth_switches=[(0, 1), (1, 0)])
        assert model.smooth_switches == ((1, 0),)

    def test_unbacked_transition_warned_once(self, caplog):
        with caplog.at_level(logging.WARNING, logger="hybrid_learner"):
            model = self._model({})
            warned = [r for r in caplog.records if "0->1" in r.getMessage()]
            caplog.clear()
            for _ in range(3):
                model.next_mode_proba(0, [[0.3]])
                model.transition(np.zeros(4, dtype=int), np.zeros((4, 1)), np.random.default_rng(0))
        assert len(warned) == 1, f"expected one warning at construction, got {len(warned)}"
        assert not caplog.records, "propagation should not log"


@pytest.mark.slow
class TestLearnBall:
    """End-to-end identification on a small bouncing-ball dataset."""

    def test_learns_and_tracks(self):
        sim = BallConfig(steps=60, n_train=6)
        train = gen_ball(sim, seed=1)
        test = gen_ball(sim, seed=2, n_trajectories=1)
        learner = HybridLearner(LearnerConfig(n_modes=2, max_iters=5),
                                GpConfig(n_restarts=2, max_points=150), seed=0)
        model = learner.learn(train.trajectories)

        assert 1 <= len(model.history) <= 6
        assert model.dynamics, "no dynamics GP survived"
        labels = model.labels.pooled_labels()
        assert labels.min() >= 0 and labels.max() < 2

        reports = track(model, test.trajectories[0], P=100, sigma_eps=0.1, seed=0)
        assert len(reports) == 59
        assert all(np.isfinite(r.prior_ll) for r in reports)

    def test_learning_is_deterministic(self):
        sim = BallConfig(steps=30, n_train=3)
        train = gen_ball(sim, seed=5)
        cfg = LearnerConfig(n_modes=2, max_iters=3)
        gp_cfg = GpConfig(n_restarts=1, max_points=60)
        a = HybridLearner(cfg, gp_cfg, seed=7).learn(train.trajectories)
        b = HybridLearner(cfg, gp_cfg, seed=7).learn(train.trajectories)
        assert a.history == b.history
        assert np.array_equal(a.labels.pooled_labels(), b.labels.pooled_labels())


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
