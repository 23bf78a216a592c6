"""
Shared domain vocabulary: states, trajectories, Gaussians, mixtures and
labeled datasets, plus the exceptions every other module raises.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.linalg import LinAlgError, cholesky, solve_triangular
from scipy.special import logsumexp

LOG_2PI = float(np.log(2.0 * np.pi))

# Jitter ladder for covariances that fail Cholesky: 1e-10 ... 1e-4.
JITTER_START = 1e-10
JITTER_MAX = 1e-4


class InputError(ValueError):
    """Raised when an input has the wrong shape, dimension or domain."""
    pass


class NumericalError(ArithmeticError):
    """Raised when a factorization or eigensolve fails for good."""

    def __init__(self, message, module=None):
        super().__init__(message)
        self.module = module


class ConfigError(ValueError):
    """Raised for malformed or inconsistent configuration."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        if path is not None and line is not None:
            message = f"{path}:{line}: {message}"
        elif path is not None:
            message = f"{path}: {message}"
        super().__init__(message)


def as_state_vec(values) -> np.ndarray:
    """Return a read-only 1-D float array, rejecting NaN and Inf."""
    arr = np.array(values, dtype=float).reshape(-1)
    if arr.size == 0:
        raise InputError("state vector must have at least one entry")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"state vector has non-finite entries: {arr}")
    arr.flags.writeable = False
    return arr


def derive_seed(*keys) -> int:
    """Deterministic 32-bit seed from a tuple of non-negative integers."""
    seq = np.random.SeedSequence([int(k) for k in keys])
    return int(seq.generate_state(1)[0])


def robust_cholesky(matrix: np.ndarray, module: str = "core_types") -> Tuple[np.ndarray, float]:
    """
    Lower Cholesky factor of a symmetric matrix, adding escalating jitter
    on failure.

    Returns:
        (L, jitter) where jitter is the diagonal term that was added (0.0 if none).

    Raises:
        NumericalError: if the matrix still fails at the largest jitter.
    """
    matrix = np.asarray(matrix, dtype=float)
    try:
        return cholesky(matrix, lower=True, check_finite=True), 0.0
    except (LinAlgError, ValueError):
        pass

    eye = np.eye(matrix.shape[0])
    jitter = JITTER_START
    while jitter <= JITTER_MAX * (1.0 + 1e-9):
        try:
            return cholesky(matrix + jitter * eye, lower=True, check_finite=True), jitter
        except (LinAlgError, ValueError):
            jitter *= 10.0
    raise NumericalError(
        f"matrix of size {matrix.shape[0]} not factorizable even with jitter {JITTER_MAX:g}",
        module=module,
    )


@dataclass(frozen=True)
class Trajectory:
    """
    Ordered states sampled every `dt` seconds. `modes` holds ground-truth
    labels when the trajectory comes from a simulator and is never used
    for training.
    """
    states: np.ndarray
    dt: float
    modes: Optional[np.ndarray] = None

    def __post_init__(self):
        states = np.array(self.states, dtype=float)
        if states.ndim == 1:
            states = states.reshape(-1, 1)
        if states.ndim != 2 or states.shape[0] < 2:
            raise InputError(f"trajectory needs at least 2 states, got shape {states.shape}")
        if not np.all(np.isfinite(states)):
            raise InputError("trajectory has non-finite states")
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise InputError(f"dt must be positive, got {self.dt}")
        states.flags.writeable = False
        object.__setattr__(self, "states", states)

        if self.modes is not None:
            modes = np.array(self.modes, dtype=int).reshape(-1)
            if modes.shape[0] != states.shape[0]:
                raise InputError("ground-truth modes must align with states")
            modes.flags.writeable = False
            object.__setattr__(self, "modes", modes)

    @property
    def length(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]


@dataclass(frozen=True)
class Gaussian:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = as_state_vec(self.mean)
        cov = np.array(self.cov, dtype=float)
        d = mean.shape[0]
        if cov.shape != (d, d):
            raise InputError(f"covariance shape {cov.shape} does not match mean dimension {d}")
        if not np.all(np.isfinite(cov)):
            raise InputError("covariance has non-finite entries")
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-9):
            raise InputError("covariance is not symmetric")
        if np.linalg.eigvalsh(cov).min() < -1e-9:
            raise InputError("covariance is not positive semi-definite")
        cov.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def marginal(self, dims: Sequence[int]) -> "Gaussian":
        idx = list(dims)
        return Gaussian(self.mean[idx], self.cov[np.ix_(idx, idx)])

    def with_added_noise(self, variance: float) -> "Gaussian":
        return Gaussian(self.mean, self.cov + variance * np.eye(self.dim))


@dataclass(frozen=True)
class GaussianMixture:
    weights: np.ndarray
    components: Tuple[Gaussian, ...]

    def __post_init__(self):
        weights = np.array(self.weights, dtype=float).reshape(-1)
        components = tuple(self.components)
        if len(components) == 0:
            raise InputError("a mixture needs at least one component")
        if weights.shape[0] != len(components):
            raise InputError("one weight per component is required")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise InputError("mixture weights must be finite and non-negative")
        if abs(weights.sum() - 1.0) > 1e-9:
            raise InputError(f"mixture weights sum to {weights.sum()}, not 1")
        dims = {c.dim for c in components}
        if len(dims) != 1:
            raise InputError("mixture components have different dimensions")
        weights.flags.writeable = False
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "components", components)

    @classmethod
    def single(cls, gaussian: Gaussian) -> "GaussianMixture":
        return cls(np.ones(1), (gaussian,))

    @property
    def dim(self) -> int:
        return self.components[0].dim

    def marginal(self, dims: Sequence[int]) -> "GaussianMixture":
        """Exact component-wise marginal over `dims`."""
        return GaussianMixture(self.weights, tuple(c.marginal(dims) for c in self.components))

    def with_added_noise(self, variance: float) -> "GaussianMixture":
        return GaussianMixture(self.weights, tuple(c.with_added_noise(variance) for c in self.components))

    def mean(self) -> np.ndarray:
        return np.sum([w * c.mean for w, c in zip(self.weights, self.components)], axis=0)


@dataclass(frozen=True)
class LabeledDataset:
    """Trajectories with one mode label per state."""
    trajectories: Tuple[Trajectory, ...]
    labels: Tuple[np.ndarray, ...]

    def __post_init__(self):
        trajectories = tuple(self.trajectories)
        labels = tuple(np.array(lab, dtype=int).reshape(-1) for lab in self.labels)
        if len(trajectories) != len(labels):
            raise InputError("one label array per trajectory is required")
        dims = {traj.dim for traj in trajectories}
        if len(dims) > 1:
            raise InputError("all trajectories must share a state dimension")
        for traj, lab in zip(trajectories, labels):
            if lab.shape[0] != traj.length:
                raise InputError(f"labels of length {lab.shape[0]} for trajectory of length {traj.length}")
            if np.any(lab < 0):
                raise InputError("mode labels must be non-negative")
            lab.flags.writeable = False
        object.__setattr__(self, "trajectories", trajectories)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_ground_truth(cls, trajectories: Sequence[Trajectory]) -> "LabeledDataset":
        labels = []
        for traj in trajectories:
            if traj.modes is None:
                raise InputError("trajectory has no ground-truth modes")
            labels.append(traj.modes)
        return cls(tuple(trajectories), tuple(labels))

    @classmethod
    def unlabeled(cls, trajectories: Sequence[Trajectory]) -> "LabeledDataset":
        return cls(tuple(trajectories), tuple(np.zeros(t.length, dtype=int) for t in trajectories))

    def with_labels(self, labels: Sequence[np.ndarray]) -> "LabeledDataset":
        return LabeledDataset(self.trajectories, tuple(labels))

    @property
    def dim(self) -> int:
        return self.trajectories[0].dim

    @property
    def n_points(self) -> int:
        return sum(t.length for t in self.trajectories)

    @property
    def n_pairs(self) -> int:
        return sum(t.length - 1 for t in self.trajectories)

    def pooled_states(self) -> np.ndarray:
        return np.vstack([t.states for t in self.trajectories])

    def pooled_labels(self) -> np.ndarray:
        return np.concatenate(self.labels)

    def split_pooled(self, pooled: np.ndarray) -> List[np.ndarray]:
        """Cut a pooled per-point array back into per-trajectory pieces."""
        bounds = np.cumsum([t.length for t in self.trajectories])[:-1]
        return list(np.split(np.asarray(pooled), bounds))


def gaussian_logpdf(g: Gaussian, x) -> float:
    """log N(x; mean, cov), factorizing cov with the jitter ladder."""
    x = as_state_vec(x)
    if x.shape[0] != g.dim:
        raise InputError(f"point of dimension {x.shape[0]} for Gaussian of dimension {g.dim}")
    chol, _ = robust_cholesky(g.cov)
    z = solve_triangular(chol, x - g.mean, lower=True)
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))
    return float(-0.5 * (g.dim * LOG_2PI + log_det + z @ z))


def mixture_logpdf(gmm: GaussianMixture, x) -> float:
    """log sum_i w_i N(x; mu_i, Sigma_i), stabilized with log-sum-exp."""
    with np.errstate(divide="ignore"):
        log_w = np.log(gmm.weights)
    terms = np.array([gaussian_logpdf(c, x) for c in gmm.components])
    return float(logsumexp(log_w + terms))


def isotropic_logpdf(x: np.ndarray, means: np.ndarray, variances: np.ndarray) -> np.ndarray:
    """
    Row-wise log N(x_i; mu_i, v_i * I). Variances are floored at the first
    jitter step, which is what gaussian_logpdf does for a zero covariance.
    """
    x = np.atleast_2d(x)
    means = np.atleast_2d(means)
    d = means.shape[1]
    var = np.maximum(np.asarray(variances, dtype=float), JITTER_START)
    sq = np.sum((x - means) ** 2, axis=1)
    return -0.5 * (d * (LOG_2PI + np.log(var)) + sq / var)


# --- Trajectory CSV: columns t, x0..x{d-1}[, mode] ---

def trajectory_to_frame(traj: Trajectory) -> pd.DataFrame:
    frame = pd.DataFrame({"t": np.arange(traj.length) * traj.dt})
    for i in range(traj.dim):
        frame[f"x{i}"] = traj.states[:, i]
    if traj.modes is not None:
        frame["mode"] = traj.modes
    return frame


def write_trajectory_csv(path, traj: Trajectory):
    trajectory_to_frame(traj).to_csv(path, index=False, float_format="%.12g")


def read_trajectory_csv(path) -> Trajectory:
    frame = pd.read_csv(path)
    if "t" not in frame.columns:
        raise InputError(f"{path}: missing 't' column")
    state_cols = [c for c in frame.columns if c.startswith("x") and c[1:].isdigit()]
    state_cols.sort(key=lambda c: int(c[1:]))
    if not state_cols or state_cols != [f"x{i}" for i in range(len(state_cols))]:
        raise InputError(f"{path}: state columns must be x0..x{{d-1}}")
    t = frame["t"].to_numpy(dtype=float)
    if len(t) < 2:
        raise InputError(f"{path}: trajectory needs at least 2 rows")
    steps = np.diff(t)
    dt = float(np.mean(steps))
    if not np.allclose(steps, dt, rtol=1e-6, atol=1e-9):
        raise InputError(f"{path}: timestamps are not evenly spaced")
    modes = frame["mode"].to_numpy(dtype=int) if "mode" in frame.columns else None
    return Trajectory(frame[state_cols].to_numpy(dtype=float), dt, modes)


def transition_indices(labels) -> np.ndarray:
    """Indices s where labels[s - 1] != labels[s]."""
    labels = np.asarray(labels)
    return np.flatnonzero(labels[1:] != labels[:-1]) + 1
