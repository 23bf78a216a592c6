"""
Initial unsupervised mode assignment: RBF affinities, normalized spectral
embedding and k-means on the embedded rows.
"""

import logging
import warnings
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from scipy.linalg import LinAlgError, eigh
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist, pdist
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning

from config import DEV_MODE, ClusterConfig
from core_types import InputError, NumericalError, Trajectory

logger = logging.getLogger(__name__)

_MODULE = "clustering"


def _log(level, message):
    if DEV_MODE:
        logger.log(level, message)


@dataclass(frozen=True)
class AffinityMatrix:
    values: np.ndarray
    bandwidth: float

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise InputError(f"affinity must be square, got shape {values.shape}")
        if not np.allclose(values, values.T, rtol=0.0, atol=1e-12):
            raise InputError("affinity must be symmetric")
        if np.any(values < 0) or np.any(values > 1.0 + 1e-12):
            raise InputError("affinity entries must lie in [0, 1]")
        if not np.allclose(np.diag(values), 1.0):
            raise InputError("affinity must have a unit diagonal")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)


def median_bandwidth(X) -> float:
    """beta0 = 1 / (2 * median^2) over pairwise distances; 1.0 if degenerate."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] < 2:
        return 1.0
    med = float(np.median(pdist(X)))
    if med <= 0:
        return 1.0
    return 1.0 / (2.0 * med * med)


def build_affinity(X, beta0: float) -> AffinityMatrix:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if beta0 <= 0:
        raise InputError(f"bandwidth must be positive, got {beta0}")
    sq = cdist(X, X, "sqeuclidean")
    np.fill_diagonal(sq, 0.0)
    return AffinityMatrix(np.exp(-beta0 * sq), float(beta0))


def spectral_embed(A, k: int) -> np.ndarray:
    """
    Row-normalized top-k eigenvectors of D^(-1/2) A D^(-1/2).

    Eigenvector signs are fixed so that each column's largest-magnitude
    entry is positive; rows of zero norm become the first unit vector.
    """
    values = A.values if isinstance(A, AffinityMatrix) else np.asarray(A, dtype=float)
    n = values.shape[0]
    if not 1 <= k <= n:
        raise InputError(f"embedding size k={k} must lie in [1, {n}]")

    degree = values.sum(axis=1)
    inv_sqrt = np.where(degree > 0, 1.0 / np.sqrt(np.maximum(degree, 1e-300)), 0.0)
    normalized = inv_sqrt[:, None] * values * inv_sqrt[None, :]
    normalized = 0.5 * (normalized + normalized.T)
    try:
        _, vectors = eigh(normalized, subset_by_index=[n - k, n - 1])
    except (LinAlgError, ValueError) as exc:
        raise NumericalError(f"eigensolver failed: {exc}", module=_MODULE) from exc
    vectors = vectors[:, ::-1]

    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivots, np.arange(k)])
    signs[signs == 0] = 1.0
    vectors = vectors * signs

    norms = np.linalg.norm(vectors, axis=1)
    embedded = np.zeros_like(vectors)
    ok = norms > 1e-12
    embedded[ok] = vectors[ok] / norms[ok, None]
    embedded[~ok, 0] = 1.0
    return embedded


def _relabel_by_first_appearance(labels: np.ndarray) -> np.ndarray:
    mapping = {}
    out = np.empty_like(labels)
    for i, lab in enumerate(labels):
        if lab not in mapping:
            mapping[lab] = len(mapping)
        out[i] = mapping[lab]
    return out


def kmeans(E, k: int, seed: int, n_init: int = 10) -> np.ndarray:
    """
    k-means++ seeded k-means (sklearn), at most 300 Lloyd iterations.
    Labels are renumbered in order of first appearance.
    """
    E = np.atleast_2d(np.asarray(E, dtype=float))
    if E.shape[0] < k:
        raise InputError(f"k-means needs at least k={k} rows, got {E.shape[0]}")
    if k == 1:
        return np.zeros(E.shape[0], dtype=int)
    with warnings.catch_warnings():
        # duplicate rows produce fewer distinct clusters than k
        warnings.simplefilter("ignore", ConvergenceWarning)
        model = KMeans(n_clusters=k, init="k-means++", n_init=n_init, max_iter=300,
                       random_state=seed)
        labels = model.fit_predict(E)
    return _relabel_by_first_appearance(labels.astype(int))


def cluster_points(X, k: int, seed: int, cfg: Optional[ClusterConfig] = None) -> np.ndarray:
    """Affinity, embedding and k-means on pooled points, subsampling large pools."""
    cfg = cfg or ClusterConfig()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    if k == 1:
        return np.zeros(n, dtype=int)
    if n < k:
        raise InputError(f"need at least {k} points to form {k} clusters, got {n}")

    rng = np.random.default_rng(seed)
    if n > cfg.max_points:
        subset = np.sort(rng.choice(n, size=cfg.max_points, replace=False))
    else:
        subset = np.arange(n)

    beta0 = cfg.beta0 if cfg.beta0 is not None else median_bandwidth(X[subset])
    _log(logging.INFO, f"spectral clustering on {len(subset)} of {n} points, beta0={beta0:.4g}")
    embedded = spectral_embed(build_affinity(X[subset], beta0), k)
    sub_labels = kmeans(embedded, k, seed, n_init=cfg.n_init)

    if len(subset) == n:
        return sub_labels
    _, nearest = cKDTree(X[subset]).query(X, k=1)
    return sub_labels[nearest]


def initial_modes(trajectories: Sequence[Trajectory], k: int, seed: int,
                  cfg: Optional[ClusterConfig] = None) -> List[np.ndarray]:
    """Cluster all pooled states, then split labels back per trajectory."""
    if len(trajectories) == 0:
        raise InputError("initial_modes needs at least one trajectory")
    pooled = np.vstack([t.states for t in trajectories])
    labels = cluster_points(pooled, k, seed, cfg)
    bounds = np.cumsum([t.length for t in trajectories])[:-1]
    return list(np.split(labels, bounds))
