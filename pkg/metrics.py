"""
Evaluation: n-step prediction and tracking log-likelihoods split by
proximity to ground-truth mode transitions, plus multimodality checks.
"""

import logging
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from config import DEV_MODE
from core_types import GaussianMixture, InputError, LabeledDataset, derive_seed, transition_indices
from particle_filter import observation_loglik
from sims.ball import FALLING, RISING

logger = logging.getLogger(__name__)

NEAR = "near"
FAR = "far"
PREDICTION = "prediction"
TRACKING = "tracking"

RAW_COLUMNS = ["method", "kind", "trajectory", "start", "n", "regime", "ll"]
SUMMARY_COLUMNS = ["method", "kind", "n", "regime", "mean_ll", "median_ll", "count"]


def _log(level, message):
    if DEV_MODE:
        logger.log(level, message)


def bounce_indices(labels) -> np.ndarray:
    """Indices s where a falling label is followed by a rising one."""
    labels = np.asarray(labels)
    return np.flatnonzero((labels[:-1] == FALLING) & (labels[1:] == RISING)) + 1


def near_transition(transitions: np.ndarray, start: int, n: int, window: int) -> bool:
    """True if some transition index s satisfies start - window < s <= start + n + window."""
    transitions = np.asarray(transitions)
    return bool(np.any((transitions > start - window) & (transitions <= start + n + window)))


def _start_indices(length: int, max_starts: int) -> np.ndarray:
    starts = np.arange(length - 1)
    if max_starts > 0 and len(starts) > max_starts:
        starts = np.unique(np.linspace(0, length - 2, max_starts).round().astype(int))
    return starts


def _eval_trajectory(method, index: int, states: np.ndarray, labels: np.ndarray, n_max: int,
                     seed: int, window: int, metric_dims: Sequence[int], sigma_eps: float,
                     max_starts: int) -> List[dict]:
    transitions = transition_indices(labels)
    rows = []
    for t in _start_indices(len(states), max_starts):
        t = int(t)
        horizon = min(n_max, len(states) - 1 - t)
        step_seed = derive_seed(seed, index, t)
        prior = method.prior_mixtures(states[t], horizon, step_seed, start_step=t)
        posterior = method.posterior_mixtures(states[t:t + horizon + 1], step_seed, start_step=t)
        for n in range(1, horizon + 1):
            target = states[t + n]
            regime = NEAR if near_transition(transitions, t, n, window) else FAR
            for kind, mixture in ((PREDICTION, prior[n - 1]), (TRACKING, posterior[n - 1])):
                rows.append({
                    "method": method.name,
                    "kind": kind,
                    "trajectory": index,
                    "start": t,
                    "n": n,
                    "regime": regime,
                    "ll": observation_loglik(mixture, target, metric_dims, sigma_eps),
                })
    return rows


def nstep_eval(method, test: LabeledDataset, n_max: int, seed: int, window: int = 2,
               metric_dims: Sequence[int] = (1,), sigma_eps: float = 0.1,
               max_starts: int = 0, n_jobs: int = 1) -> pd.DataFrame:
    """
    Per-point prediction and tracking log-likelihoods.

    For every start t and horizon n, "prediction" conditions only on the
    observation at t; "tracking" also conditions on t+1..t+n. Both score
    the observation at t+n on `metric_dims`. Horizons that run past the
    end of a trajectory are skipped.

    Args:
        method: Object with `name`, `prior_mixtures` and `posterior_mixtures`.
        test: Test trajectories with ground-truth labels.
        n_max: Largest horizon.
        seed: Root seed shared by every method in a comparison.
        window: Steps added on both sides when tagging near-transition rows.
        metric_dims: Coordinates the log-likelihood is computed on.
        sigma_eps: Observation noise standard deviation.
        max_starts: Evenly spaced starts per trajectory; 0 uses every start.
        n_jobs: joblib workers over trajectories.

    Returns:
        DataFrame with RAW_COLUMNS, sorted deterministically.
    """
    if n_max < 1:
        raise InputError(f"n_max must be at least 1, got {n_max}")
    chunks = Parallel(n_jobs=n_jobs)(
        delayed(_eval_trajectory)(method, i, traj.states, labels, n_max, seed, window,
                                  tuple(metric_dims), sigma_eps, max_starts)
        for i, (traj, labels) in enumerate(zip(test.trajectories, test.labels))
    )
    rows = [row for chunk in chunks for row in chunk]
    frame = pd.DataFrame(rows, columns=RAW_COLUMNS)
    _log(logging.INFO, f"{method.name}: {len(frame)} evaluation rows")
    return frame.sort_values(["method", "kind", "trajectory", "start", "n"], kind="mergesort") \
        .reset_index(drop=True)


def summarize(raw: pd.DataFrame) -> pd.DataFrame:
    """Mean, median and count per (method, kind, n, regime) cell."""
    if raw.empty:
        return pd.DataFrame(columns=SUMMARY_COLUMNS)
    grouped = raw.groupby(["method", "kind", "n", "regime"], sort=True)["ll"]
    table = grouped.agg(mean_ll="mean", median_ll="median", count="count").reset_index()
    return table[SUMMARY_COLUMNS]


def multimodality_report(mixtures: Sequence[GaussianMixture], threshold: float = 0.1) -> np.ndarray:
    """Number of components with weight >= threshold, per mixture."""
    return np.array([int(np.sum(m.weights >= threshold)) for m in mixtures], dtype=int)


def velocity_bimodal(mixture: GaussianMixture, dim: int, threshold: float = 0.1) -> bool:
    """At least two heavy components whose means on `dim` have opposite signs."""
    heavy = [c.mean[dim] for w, c in zip(mixture.weights, mixture.components) if w >= threshold]
    return len(heavy) >= 2 and min(heavy) < 0 < max(heavy)


def bounce_bimodality_rate(method, test: LabeledDataset, dim: int, threshold: float = 0.1,
                           seed: int = 0) -> Optional[float]:
    """
    Fraction of ground-truth bounces whose one-step prediction, made from
    the observation just before the bounce, is bimodal in `dim`.
    None when the data has no bounce.
    """
    hits, total = 0, 0
    for i, (traj, labels) in enumerate(zip(test.trajectories, test.labels)):
        for s in bounce_indices(labels):
            start = int(s) - 1
            mixture = method.prior_mixtures(traj.states[start], 1, derive_seed(seed, i, start),
                                            start_step=start)[0]
            hits += velocity_bimodal(mixture, dim, threshold)
            total += 1
    return hits / total if total else None
