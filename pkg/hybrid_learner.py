"""
Unsupervised learning of a piecewise-smooth hybrid system.

Pipeline: spectral clustering for initial modes, then repeat
{pair partitioning -> guard oversampling -> GP fits -> MAP reassignment}
until no label changes, then train the two classifier levels.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from classifiers import (
    Classifier,
    fit_logistic,
    proba_over_modes,
    train_guard_classifier,
    train_mode_classifier,
)
from clustering import initial_modes
from config import (
    DEV_MODE,
    ClassifierConfig,
    ClusterConfig,
    GpConfig,
    LearnerConfig,
    OversampleConfig,
)
from core_types import (
    ConfigError,
    InputError,
    LabeledDataset,
    Trajectory,
    derive_seed,
    isotropic_logpdf,
)
from gp_regression import GpModel, KernelParams, fit, predict_many
from oversample import oversample_target, smote_arrays

logger = logging.getLogger(__name__)

PairBucket = Tuple[np.ndarray, np.ndarray]

_DYN_STREAM = 1
_RESET_STREAM = 2
_SMOTE_STREAM = 3
_SUBSAMPLE_STREAM = 4
_CLASSIFIER_STREAM = 5


def _log(level, message):
    if DEV_MODE:
        logger.log(level, message)


@dataclass(frozen=True)
class TransitionPairSet:
    """
    Consecutive pairs split by their labels: same-mode pairs per mode,
    mode-changing pairs per ordered (m, m') with m != m'.
    """
    dyn_pairs: Dict[int, PairBucket]
    guard_pairs: Dict[Tuple[int, int], PairBucket]

    @property
    def total(self) -> int:
        return (sum(len(pre) for pre, _ in self.dyn_pairs.values())
                + sum(len(pre) for pre, _ in self.guard_pairs.values()))

    def guard_counts(self) -> Dict[Tuple[int, int], int]:
        return {key: len(pre) for key, (pre, _) in self.guard_pairs.items()}

    def outgoing(self, mode: int) -> Dict[int, PairBucket]:
        return {dst: bucket for (src, dst), bucket in self.guard_pairs.items() if src == mode}


def build_pairs(ds: LabeledDataset) -> TransitionPairSet:
    """Partition every (x_t, x_{t+1}) pair, trajectory-major then time-major."""
    dyn: Dict[int, Tuple[list, list]] = {}
    guard: Dict[Tuple[int, int], Tuple[list, list]] = {}
    for traj, labels in zip(ds.trajectories, ds.labels):
        for t in range(traj.length - 1):
            m, m_next = int(labels[t]), int(labels[t + 1])
            bucket = dyn.setdefault(m, ([], [])) if m == m_next else guard.setdefault((m, m_next), ([], []))
            bucket[0].append(traj.states[t])
            bucket[1].append(traj.states[t + 1])

    def _stack(buckets):
        return {key: (np.array(pre), np.array(post)) for key, (pre, post) in sorted(buckets.items())}

    return TransitionPairSet(_stack(dyn), _stack(guard))


class HybridModel:
    """
    Learned hybrid system: per-mode dynamics GPs, reset GPs per observed
    transition, a level-1 mode classifier and per-mode guard classifiers.

    A smooth switch (m, m') changes the mode without a reset: the state
    moves with f_m. Also implements the particle filter's propagation
    interface; nothing is mutated after construction.
    """

    def __init__(self, n_modes: int, dynamics: Dict[int, GpModel],
                 resets: Dict[Tuple[int, int], GpModel], mode_clf: Classifier,
                 guard_clfs: Dict[int, Classifier], labels: Optional[LabeledDataset] = None,
                 history: Optional[List[int]] = None,
                 guard_counts: Optional[Dict[Tuple[int, int], int]] = None,
                 dropped_modes: Sequence[int] = (),
                 smooth_switches: Sequence[Tuple[int, int]] = ()):
        if n_modes < 1:
            raise InputError("a hybrid model needs at least one mode")
        self.n_modes = n_modes
        self.dynamics = dict(sorted(dynamics.items()))
        self.resets = {key: gp for key, gp in sorted(resets.items())
                       if key[0] in self.dynamics and key[1] in self.dynamics}
        self.smooth_switches = tuple(sorted(
            (int(a), int(b)) for a, b in smooth_switches
            if a != b and a in self.dynamics and b in self.dynamics and (a, b) not in self.resets))
        self.mode_clf = mode_clf
        self.guard_clfs = dict(sorted(guard_clfs.items()))
        self.labels = labels
        self.history = list(history or [])
        self.guard_counts = dict(guard_counts or {})
        self.dropped_modes = tuple(dropped_modes)
        self._allowed = {mode: self._allowed_targets(mode) for mode in range(n_modes)}
        self._warn_unbacked_transitions()

    def _allowed_targets(self, mode: int) -> np.ndarray:
        allowed = np.zeros(self.n_modes, dtype=bool)
        allowed[mode] = mode in self.dynamics
        for src, dst in list(self.resets) + list(self.smooth_switches):
            if src == mode and dst < self.n_modes:
                allowed[dst] = True
        allowed.flags.writeable = False
        return allowed

    def _warn_unbacked_transitions(self):
        for mode, clf in self.guard_clfs.items():
            if mode not in self._allowed:
                continue
            for dst in clf.classes:
                if dst != mode and dst < self.n_modes and not self._allowed[mode][dst]:
                    logger.warning(f"transition {mode}->{dst} has no GP; renormalizing guard classifier")

    @property
    def active_modes(self) -> List[int]:
        return list(self.dynamics)

    @property
    def converged(self) -> bool:
        return bool(self.history) and self.history[-1] == 0

    def initial_mode_proba(self, x) -> np.ndarray:
        return proba_over_modes(self.mode_clf, np.atleast_2d(x), self.n_modes)[0]

    def next_mode_proba(self, mode: int, states: np.ndarray) -> np.ndarray:
        """
        P(m' | m, x) from the level-2 classifier, restricted to transitions
        that have a GP (a reset or a smooth switch) and renormalized.
        """
        states = np.atleast_2d(states)
        if not 0 <= mode < self.n_modes:
            raise InputError(f"mode {mode} outside 0..{self.n_modes - 1}")
        clf = self.guard_clfs.get(mode)
        if clf is None:
            proba = np.zeros((len(states), self.n_modes))
            proba[:, mode] = 1.0
        else:
            proba = proba_over_modes(clf, states, self.n_modes)

        allowed = self._allowed[mode]
        if not allowed.any():
            raise InputError(f"mode {mode} has neither dynamics nor resets")
        proba = proba * allowed
        sums = proba.sum(axis=1, keepdims=True)
        empty = sums[:, 0] <= 0
        if np.any(empty):
            proba[empty] = allowed / allowed.sum()
            sums = proba.sum(axis=1, keepdims=True)
        return proba / sums

    def transition(self, modes: np.ndarray, states: np.ndarray, rng: np.random.Generator):
        """
        Sample next modes and return the predictive Gaussian of the next state.

        Returns:
            (next_modes, means (P, d), variances (P,))
        """
        modes = np.asarray(modes, dtype=int)
        states = np.atleast_2d(states)
        next_modes = modes.copy()
        means = np.empty_like(states)
        variances = np.empty(len(states))

        for mode in np.unique(modes):
            idx = np.flatnonzero(modes == mode)
            proba = self.next_mode_proba(int(mode), states[idx])
            cumulative = np.cumsum(proba, axis=1)
            cumulative[:, -1] = 1.0
            draws = rng.random(len(idx))
            chosen = np.minimum((cumulative < draws[:, None]).sum(axis=1), self.n_modes - 1)
            next_modes[idx] = chosen
            for dst in np.unique(chosen):
                sel = idx[chosen == dst]
                key = (int(mode), int(dst))
                gp = self.resets[key] if key in self.resets else self.dynamics[int(mode)]
                means[sel], variances[sel] = predict_many(gp, states[sel])
        return next_modes, means, variances


def subsample_pairs(pre: np.ndarray, post: np.ndarray, limit: int, seed: int) -> PairBucket:
    if limit <= 0 or len(pre) <= limit:
        return pre, post
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(len(pre), size=limit, replace=False))
    return pre[keep], post[keep]


def _fit_one(inputs, targets, init: KernelParams, gp_cfg: GpConfig) -> GpModel:
    return fit(inputs, targets, init, gp_cfg)


def _drop_keys(resets: Dict[Tuple[int, int], GpModel], keys) -> Dict[Tuple[int, int], GpModel]:
    return {key: gp for key, gp in resets.items() if key not in keys}


def _pair_logpdf(gp: GpModel, pre: np.ndarray, post: np.ndarray) -> np.ndarray:
    means, variances = predict_many(gp, pre)
    return isotropic_logpdf(post, means, variances)


def mapcl_reassign(ds: LabeledDataset, dynamics: Dict[int, GpModel],
                   resets: Dict[Tuple[int, int], GpModel],
                   margin: float = 0.0) -> Tuple[LabeledDataset, int]:
    """
    Relabel each non-final point with the mode whose best GP (its dynamics
    or any reset out of it) gives the observed successor the highest
    density. The incumbent label stays unless another mode beats it by more
    than `margin` nats, so margin=0 only breaks exact ties. A trajectory's
    final point takes the successor mode of the GP chosen for its
    predecessor, keeping its old label when that hypothesis is within
    `margin` of the best.

    Returns:
        (relabeled dataset, number of labels that changed)
    """
    if margin < 0:
        raise InputError(f"margin must be non-negative, got {margin}")
    modes = sorted(set(dynamics) | {src for src, _ in resets})
    if not modes:
        raise ConfigError("no trained GP available for mode reassignment")

    pre = np.vstack([t.states[:-1] for t in ds.trajectories])
    post = np.vstack([t.states[1:] for t in ds.trajectories])
    incumbent = np.concatenate([lab[:-1] for lab in ds.labels])
    n_labels = 1 + max(max(modes), max((dst for _, dst in resets), default=0),
                       int(ds.pooled_labels().max()))

    # best log-density per (point, source mode, successor mode)
    by_successor = np.full((len(pre), len(modes), n_labels), -np.inf)
    for j, mode in enumerate(modes):
        if mode in dynamics:
            by_successor[:, j, mode] = _pair_logpdf(dynamics[mode], pre, post)
        for (src, dst), gp in sorted(resets.items()):
            if src == mode:
                by_successor[:, j, dst] = np.maximum(by_successor[:, j, dst],
                                                     _pair_logpdf(gp, pre, post))
    scores = by_successor.max(axis=2)

    rows = np.arange(len(pre))
    chosen = np.argmax(scores, axis=1)
    column_of = {mode: j for j, mode in enumerate(modes)}
    inc_cols = np.array([column_of.get(int(m), -1) for m in incumbent])
    has_inc = inc_cols >= 0
    inc_scores = np.where(has_inc, scores[rows, np.maximum(inc_cols, 0)], -np.inf)
    keep = has_inc & (inc_scores >= scores[rows, chosen] - margin)
    chosen = np.where(keep, inc_cols, chosen)

    mode_arr = np.array(modes)
    new_pre_labels = mode_arr[chosen]
    chosen_scores = by_successor[rows, chosen]
    best = chosen_scores.max(axis=1)
    successor = np.argmax(chosen_scores, axis=1)
    stays = chosen_scores[rows, new_pre_labels] >= best
    successor = np.where(stays, new_pre_labels, successor)

    new_labels = []
    changes = 0
    offset = 0
    for traj, old in zip(ds.trajectories, ds.labels):
        n = traj.length - 1
        last = offset + n - 1
        labels = np.empty(traj.length, dtype=int)
        labels[:-1] = new_pre_labels[offset:offset + n]
        labels[-1] = successor[last]
        previous_final = int(old[-1])
        if 0 <= previous_final < n_labels and chosen_scores[last, previous_final] >= best[last] - margin:
            labels[-1] = previous_final
        changes += int(np.sum(labels != old))
        new_labels.append(labels)
        offset += n
    return ds.with_labels(new_labels), changes


def detect_smooth_switches(pairs: TransitionPairSet, dynamics: Dict[int, GpModel],
                           resets: Dict[Tuple[int, int], GpModel], margin: float,
                           fraction: float) -> Tuple[Tuple[int, int], ...]:
    """
    Guard buckets that need no reset: at least `fraction` of their real
    pairs get a density from the source mode's dynamics GP within `margin`
    nats of the reset GP's.
    """
    smooth = []
    for key, (pre, post) in sorted(pairs.guard_pairs.items()):
        src = key[0]
        if key not in resets or src not in dynamics or len(pre) == 0:
            continue
        explained = _pair_logpdf(dynamics[src], pre, post) >= _pair_logpdf(resets[key], pre, post) - margin
        share = float(np.mean(explained))
        if share >= fraction:
            smooth.append(key)
        _log(logging.INFO, f"guard {key}: dynamics explain {share:.2f} of {len(pre)} real pairs")
    return tuple(smooth)


class HybridLearner:
    """Runs the full identification loop for a fixed mode count."""

    def __init__(self, learner_cfg: Optional[LearnerConfig] = None,
                 gp_cfg: Optional[GpConfig] = None,
                 cluster_cfg: Optional[ClusterConfig] = None,
                 oversample_cfg: Optional[OversampleConfig] = None,
                 classifier_cfg: Optional[ClassifierConfig] = None,
                 seed: int = 0):
        self.learner_cfg = learner_cfg or LearnerConfig()
        self.gp_cfg = gp_cfg or GpConfig()
        self.cluster_cfg = cluster_cfg or ClusterConfig()
        self.oversample_cfg = oversample_cfg or OversampleConfig()
        self.classifier_cfg = classifier_cfg or ClassifierConfig()
        self.seed = seed

    @classmethod
    def from_experiment(cls, cfg, n_modes: Optional[int] = None) -> "HybridLearner":
        learner_cfg = cfg.learner if n_modes is None else replace(cfg.learner, n_modes=n_modes)
        return cls(learner_cfg, cfg.gp, cfg.clustering, cfg.oversample, cfg.classifier, cfg.seed)

    def initial_dataset(self, trajectories: Sequence[Trajectory]) -> LabeledDataset:
        labels = initial_modes(trajectories, self.learner_cfg.n_modes, self.seed, self.cluster_cfg)
        return LabeledDataset(tuple(trajectories), tuple(labels))

    def oversample_guards(self, pairs: TransitionPairSet, iteration: int):
        """
        Real plus synthetic tuples for every guard bucket.

        Returns:
            (augmented buckets, synthetic-only buckets), keyed by (m, m').
        """
        sizes = [len(pre) for pre, _ in pairs.dyn_pairs.values()]
        median_dyn = float(np.median(sizes)) if sizes else 0.0
        augmented, synthetic = {}, {}
        for key, (pre, post) in pairs.guard_pairs.items():
            seed = derive_seed(self.seed, _SMOTE_STREAM, iteration, *key)
            if len(pre) == 1:
                rng = np.random.default_rng(seed)
                jitter = self.oversample_cfg.single_jitter
                pre = np.vstack([pre, pre + rng.normal(0.0, jitter, size=pre.shape)])
                post = np.vstack([post, post + rng.normal(0.0, jitter, size=post.shape)])
            n_synth = oversample_target(len(pre), median_dyn, self.oversample_cfg)
            if n_synth > 0:
                syn_pre, syn_post = smote_arrays(pre, post, n_synth, seed)
            else:
                syn_pre = np.empty((0, pre.shape[1]))
                syn_post = np.empty((0, post.shape[1]))
            synthetic[key] = (syn_pre, syn_post)
            augmented[key] = (np.vstack([pre, syn_pre]), np.vstack([post, syn_post]))
        return augmented, synthetic

    def fit_gps(self, pairs: TransitionPairSet, iteration: int,
                previous: Optional[Dict[tuple, KernelParams]] = None):
        """
        Fit every dynamics GP on its same-mode pairs and every reset GP on
        its real + synthetic guard tuples.

        Returns:
            (dynamics, resets, synthetic)
        """
        previous = previous or {}
        augmented, synthetic = self.oversample_guards(pairs, iteration)
        default_init = KernelParams(self.gp_cfg.beta0_init, self.gp_cfg.beta1_init)

        jobs = []
        for mode, (pre, post) in pairs.dyn_pairs.items():
            jobs.append((("dyn", mode), _DYN_STREAM, (mode,), pre, post))
        for key, (pre, post) in augmented.items():
            jobs.append((("reset",) + key, _RESET_STREAM, key, pre, post))

        tasks = []
        for job_key, stream, ids, pre, post in jobs:
            inputs, targets = subsample_pairs(pre, post, self.gp_cfg.max_points,
                                         derive_seed(self.seed, _SUBSAMPLE_STREAM, stream, *ids))
            warm = job_key in previous
            gp_cfg = replace(
                self.gp_cfg,
                seed=derive_seed(self.seed, stream, iteration, *ids),
                n_restarts=self.gp_cfg.warm_restarts if warm else self.gp_cfg.n_restarts,
            )
            tasks.append(delayed(_fit_one)(inputs, targets, previous.get(job_key, default_init), gp_cfg))

        models = Parallel(n_jobs=self.learner_cfg.n_jobs)(tasks)

        dynamics, resets = {}, {}
        for (job_key, _, ids, _, _), model in zip(jobs, models):
            if job_key[0] == "dyn":
                dynamics[ids[0]] = model
            else:
                resets[ids] = model
        return dynamics, resets, synthetic

    def find_smooth_switches(self, pairs: TransitionPairSet, dynamics, resets):
        return detect_smooth_switches(pairs, dynamics, resets, self.learner_cfg.reassign_margin,
                                      self.learner_cfg.smooth_fraction)

    def train_classifiers(self, ds: LabeledDataset, pairs: TransitionPairSet,
                          synthetic: Dict[Tuple[int, int], PairBucket],
                          active: Sequence[int]):
        active = set(active)
        states = ds.pooled_states()
        labels = ds.pooled_labels()
        keep = np.isin(labels, list(active))
        clf_seed = derive_seed(self.seed, _CLASSIFIER_STREAM)
        if keep.all():
            mode_clf = train_mode_classifier(ds, self.classifier_cfg, clf_seed)
        else:
            mode_clf = fit_logistic(states[keep], labels[keep], self.classifier_cfg.balanced,
                                    self.classifier_cfg.reg, clf_seed, self.classifier_cfg)

        guard_clfs = {}
        for mode in sorted(active):
            outgoing = {dst: bucket for dst, bucket in pairs.outgoing(mode).items() if dst in active}
            dyn_pre = pairs.dyn_pairs[mode][0] if mode in pairs.dyn_pairs else None
            guard_clfs[mode] = train_guard_classifier(
                mode,
                dyn_pre,
                {dst: pre for dst, (pre, _) in outgoing.items()},
                {dst: synthetic[(mode, dst)][0] for dst in outgoing if (mode, dst) in synthetic},
                self.classifier_cfg,
                derive_seed(self.seed, _CLASSIFIER_STREAM, mode),
                dim=ds.dim,
            )
        return mode_clf, guard_clfs

    def learn(self, trajectories: Sequence[Trajectory]) -> HybridModel:
        """
        Learn a hybrid model from unlabeled trajectories.

        Ground-truth modes attached to the trajectories are ignored.
        """
        if len(trajectories) == 0:
            raise InputError("learning needs at least one trajectory")
        cfg = self.learner_cfg
        ds = self.initial_dataset(trajectories)
        previous: Dict[tuple, KernelParams] = {}
        history: List[int] = []
        dropped: List[int] = []
        present = set(np.unique(ds.pooled_labels()).tolist())

        pairs = dynamics = resets = synthetic = None
        smooth: Tuple[Tuple[int, int], ...] = ()
        for iteration in range(cfg.max_iters):
            pairs = build_pairs(ds)
            if pairs.total != ds.n_pairs:
                raise InputError("pair partition lost pairs")
            dynamics, resets, synthetic = self.fit_gps(pairs, iteration, previous)
            previous = {("dyn", m): gp.params for m, gp in dynamics.items()}
            previous.update({("reset",) + key: gp.params for key, gp in resets.items()})

            smooth = self.find_smooth_switches(pairs, dynamics, resets)
            ds, changes = mapcl_reassign(ds, dynamics, _drop_keys(resets, smooth), cfg.reassign_margin)
            history.append(changes)
            _log(logging.INFO, f"iteration {iteration + 1}: {changes} labels changed")

            now_present = set(np.unique(ds.pooled_labels()).tolist())
            for mode in sorted(present - now_present):
                logger.warning(f"mode {mode} lost all its points at iteration {iteration + 1}; dropping it")
                dropped.append(mode)
            present = now_present
            if changes == 0:
                break
        else:
            logger.warning(f"mode assignment did not converge in {cfg.max_iters} iterations "
                           f"(last change count {history[-1]})")

        if history[-1] != 0:
            pairs = build_pairs(ds)
            dynamics, resets, synthetic = self.fit_gps(pairs, cfg.max_iters, previous)
            smooth = self.find_smooth_switches(pairs, dynamics, resets)

        active = sorted(set(dynamics) & present)
        dynamics = {m: gp for m, gp in dynamics.items() if m in active}
        resets = {key: gp for key, gp in _drop_keys(resets, smooth).items()
                  if key[0] in active and key[1] in active}
        smooth = tuple(key for key in smooth if key[0] in active and key[1] in active)
        mode_clf, guard_clfs = self.train_classifiers(ds, pairs, synthetic, active)

        return HybridModel(
            n_modes=cfg.n_modes,
            dynamics=dynamics,
            resets=resets,
            mode_clf=mode_clf,
            guard_clfs=guard_clfs,
            labels=ds,
            history=history,
            guard_counts={k: v for k, v in pairs.guard_counts().items() if k in resets or k in smooth},
            dropped_modes=dropped,
            smooth_switches=smooth,
        )


def learn(trajectories: Sequence[Trajectory], cfg) -> HybridModel:
    """Convenience wrapper: learn with the sections of an ExperimentConfig."""
    return HybridLearner.from_experiment(cfg).learn(trajectories)
