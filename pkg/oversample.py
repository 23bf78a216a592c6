"""
Synthetic minority oversampling of guard tuples.

A synthetic tuple is the convex combination of two distinct real tuples,
with the same ratio applied to the pre- and post-transition states.
"""

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from config import OversampleConfig
from core_types import InputError, as_state_vec


@dataclass(frozen=True)
class TuplePair:
    pre: np.ndarray
    post: np.ndarray

    def __post_init__(self):
        pre = as_state_vec(self.pre)
        post = as_state_vec(self.post)
        if pre.shape != post.shape:
            raise InputError(f"tuple halves have dimensions {pre.shape[0]} and {post.shape[0]}")
        object.__setattr__(self, "pre", pre)
        object.__setattr__(self, "post", post)


def interpolate_stacked(first, second, ratio):
    """r * first + (1 - r) * second on stacked [pre, post] rows."""
    first = np.asarray(first, dtype=float)
    second = np.asarray(second, dtype=float)
    return second + ratio * (first - second)


def smote_arrays(pre, post, n_synth: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Array form of `smote_tuples`.

    Args:
        pre: (N, d) pre-transition states, N >= 2.
        post: (N, d) post-transition states.
        n_synth: Number of synthetic tuples to draw.
        seed: RNG seed.

    Returns:
        (synthetic_pre, synthetic_post), each (n_synth, d).
    """
    pre = np.atleast_2d(np.asarray(pre, dtype=float))
    post = np.atleast_2d(np.asarray(post, dtype=float))
    if pre.shape != post.shape:
        raise InputError(f"pre/post shapes differ: {pre.shape} vs {post.shape}")
    n, d = pre.shape
    if n < 2:
        raise InputError(f"oversampling needs at least 2 real tuples, got {n}")
    if n_synth < 0:
        raise InputError(f"n_synth must be non-negative, got {n_synth}")

    rng = np.random.default_rng(seed)
    first = rng.integers(0, n, size=n_synth)
    second = rng.integers(0, n - 1, size=n_synth)
    second = second + (second >= first)
    ratio = rng.random(n_synth)[:, None]

    stacked = np.hstack([pre, post])
    synthetic = interpolate_stacked(stacked[first], stacked[second], ratio)
    return synthetic[:, :d], synthetic[:, d:]


def smote_tuples(real: Sequence[TuplePair], n_synth: int, seed: int) -> List[TuplePair]:
    if len(real) < 2:
        raise InputError(f"oversampling needs at least 2 real tuples, got {len(real)}")
    pre = np.vstack([t.pre for t in real])
    post = np.vstack([t.post for t in real])
    syn_pre, syn_post = smote_arrays(pre, post, n_synth, seed)
    return [TuplePair(a, b) for a, b in zip(syn_pre, syn_post)]


def oversample_target(n_real: int, median_dynamics_size: float, cfg: OversampleConfig) -> int:
    """Number of synthetic tuples needed to grow a guard bucket to its target size."""
    if cfg.target is not None:
        target = cfg.target
    else:
        target = max(cfg.min_target, int(np.ceil(cfg.median_fraction * median_dynamics_size)))
    return max(0, target - n_real)
