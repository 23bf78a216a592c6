"""
Gaussian-process regression with an RBF + Kronecker-delta kernel

    k(x_i, x_j) = exp(-beta0 * ||x_i - x_j||^2) + beta1 * delta_ij

One Gram matrix is shared by all output columns, targets are centered per
column, and hyperparameters maximize the summed log evidence in
log-parameter space.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

from config import DEV_MODE, GpConfig
from core_types import (
    LOG_2PI,
    Gaussian,
    InputError,
    NumericalError,
    as_state_vec,
    robust_cholesky,
)

logger = logging.getLogger(__name__)

_MODULE = "gp_regression"


def _log(level, message):
    if DEV_MODE:
        logger.log(level, message)


@dataclass(frozen=True)
class KernelParams:
    beta0: float
    beta1: float

    def __post_init__(self):
        if not (np.isfinite(self.beta0) and np.isfinite(self.beta1)):
            raise InputError(f"kernel parameters must be finite: {self}")
        if self.beta0 <= 0:
            raise InputError(f"beta0 must be positive, got {self.beta0}")
        if self.beta1 < 0:
            raise InputError(f"beta1 must be non-negative, got {self.beta1}")

    def to_log(self, beta1_floor: float = 1e-12) -> np.ndarray:
        return np.log([self.beta0, max(self.beta1, beta1_floor)])

    @classmethod
    def from_log(cls, theta) -> "KernelParams":
        return cls(float(np.exp(theta[0])), float(np.exp(theta[1])))


def kernel(xi, xj, p: KernelParams, same_index: bool = False) -> float:
    xi = as_state_vec(xi)
    xj = as_state_vec(xj)
    if xi.shape != xj.shape:
        raise InputError(f"kernel inputs have dimensions {xi.shape[0]} and {xj.shape[0]}")
    value = np.exp(-p.beta0 * np.sum((xi - xj) ** 2))
    if same_index:
        value += p.beta1
    return float(value)


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return cdist(a, b, "sqeuclidean")


def gram(X, p: KernelParams) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] < 1:
        raise InputError("gram needs at least one row")
    sq = _sq_dists(X, X)
    np.fill_diagonal(sq, 0.0)
    K = np.exp(-p.beta0 * sq)
    K[np.diag_indices_from(K)] += p.beta1
    return K


class GpModel:
    """
    Trained GP: hyperparameters, training rows and the cached Cholesky
    factor of K_FF. Treat as immutable; `with_params` builds a new model.
    """

    def __init__(self, params: KernelParams, inputs, targets, target_mean=None):
        inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
        targets = np.asarray(targets, dtype=float)
        if targets.ndim == 1:
            targets = targets.reshape(-1, 1)
        if inputs.shape[0] < 1:
            raise InputError("a GP needs at least one training row")
        if inputs.shape[0] != targets.shape[0]:
            raise InputError(f"{inputs.shape[0]} inputs but {targets.shape[0]} targets")
        if not (np.all(np.isfinite(inputs)) and np.all(np.isfinite(targets))):
            raise InputError("training data has non-finite entries")

        self.params = params
        self.inputs = inputs
        self.targets = targets
        if target_mean is None:
            target_mean = targets.mean(axis=0)
        self.target_mean = np.asarray(target_mean, dtype=float).reshape(-1)

        self.chol, self.jitter = robust_cholesky(gram(inputs, params), module=_MODULE)
        self.alpha = cho_solve((self.chol, True), targets - self.target_mean)
        for arr in (self.inputs, self.targets, self.target_mean, self.chol, self.alpha):
            arr.flags.writeable = False

    @property
    def n_train(self) -> int:
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def output_dim(self) -> int:
        return self.targets.shape[1]

    def with_params(self, params: KernelParams) -> "GpModel":
        return GpModel(params, self.inputs, self.targets, self.target_mean)

    def to_dict(self) -> dict:
        return {
            "beta0": self.params.beta0,
            "beta1": self.params.beta1,
            "inputs": self.inputs.tolist(),
            "targets": self.targets.tolist(),
            "target_mean": self.target_mean.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GpModel":
        return cls(
            KernelParams(float(data["beta0"]), float(data["beta1"])),
            np.array(data["inputs"], dtype=float),
            np.array(data["targets"], dtype=float),
            np.array(data["target_mean"], dtype=float),
        )


def predict_many(model: GpModel, X) -> Tuple[np.ndarray, np.ndarray]:
    """
    Vectorized posterior for query rows X.

    Returns:
        (means of shape (M, d), variances of shape (M,)), the variance being
        the scalar shared by every output column, clamped at 0.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.input_dim:
        raise InputError(f"query dimension {X.shape[1]} but model expects {model.input_dim}")
    k_star = np.exp(-model.params.beta0 * _sq_dists(X, model.inputs))
    means = model.target_mean + k_star @ model.alpha
    v = solve_triangular(model.chol, k_star.T, lower=True)
    variances = 1.0 + model.params.beta1 - np.sum(v * v, axis=0)
    return means, np.maximum(variances, 0.0)


def predict(model: GpModel, x) -> Gaussian:
    x = as_state_vec(x)
    means, variances = predict_many(model, x.reshape(1, -1))
    return Gaussian(means[0], variances[0] * np.eye(model.output_dim))


def _evidence(params: KernelParams, inputs: np.ndarray, centered: np.ndarray,
              with_grad: bool = False):
    """Summed log evidence over output columns and, optionally, its log-param gradient."""
    n, d = centered.shape
    K = gram(inputs, params)
    chol, _ = robust_cholesky(K, module=_MODULE)
    alpha = cho_solve((chol, True), centered)
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))
    value = -0.5 * np.sum(centered * alpha) - 0.5 * d * log_det - 0.5 * n * d * LOG_2PI
    if not with_grad:
        return float(value)

    k_inv = cho_solve((chol, True), np.eye(n))
    inner = alpha @ alpha.T - d * k_inv
    sq = _sq_dists(inputs, inputs)
    np.fill_diagonal(sq, 0.0)
    rbf = np.exp(-params.beta0 * sq)
    dK_dlog_b0 = -params.beta0 * sq * rbf
    grad = np.array([
        0.5 * np.sum(inner * dK_dlog_b0),
        0.5 * params.beta1 * np.trace(inner),
    ])
    return float(value), grad


def log_marginal_likelihood(model: GpModel) -> float:
    n, d = model.targets.shape
    centered = model.targets - model.target_mean
    log_det = 2.0 * np.sum(np.log(np.diag(model.chol)))
    return float(-0.5 * np.sum(centered * model.alpha) - 0.5 * d * log_det - 0.5 * n * d * LOG_2PI)


def log_marginal_likelihood_grad(params: KernelParams, inputs, targets) -> np.ndarray:
    """Gradient of the evidence w.r.t. (log beta0, log beta1)."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    targets = np.asarray(targets, dtype=float).reshape(inputs.shape[0], -1)
    _, grad = _evidence(params, inputs, targets - targets.mean(axis=0), with_grad=True)
    return grad


def fit(inputs, targets, init: KernelParams, opt_cfg: Optional[GpConfig] = None) -> GpModel:
    """
    Maximize the log evidence over (beta0, beta1) with bounded multi-start
    L-BFGS-B in log space. The returned model is never worse than `init`.

    Raises:
        NumericalError: when neither the init nor any restart can be factorized.
    """
    opt_cfg = opt_cfg or GpConfig()
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    targets = np.asarray(targets, dtype=float)
    if targets.ndim == 1:
        targets = targets.reshape(-1, 1)
    if inputs.shape[0] < 1 or inputs.shape[0] != targets.shape[0]:
        raise InputError(f"fit needs matching non-empty inputs/targets, got {inputs.shape[0]} and {targets.shape[0]}")
    centered = targets - targets.mean(axis=0)

    bounds = opt_cfg.log_bounds()
    lower = np.array([b[0] for b in bounds])
    upper = np.array([b[1] for b in bounds])

    def objective(theta):
        try:
            value, grad = _evidence(KernelParams.from_log(theta), inputs, centered, with_grad=True)
        except NumericalError:
            return 1e25, np.zeros(2)
        return -value, -grad

    best_params, best_value = None, -np.inf
    try:
        best_value = _evidence(init, inputs, centered)
        best_params = init
    except NumericalError:
        _log(logging.INFO, f"initial params {init} not factorizable; relying on restarts")

    rng = np.random.default_rng(opt_cfg.seed)
    starts = [np.clip(init.to_log(), lower, upper)]
    for _ in range(max(opt_cfg.n_restarts, 1) - 1):
        starts.append(rng.uniform(lower, upper))

    for theta0 in starts:
        result = minimize(objective, theta0, jac=True, method="L-BFGS-B",
                          bounds=bounds, options={"maxiter": opt_cfg.max_iter})
        if result.fun >= 1e25:
            continue
        candidate = KernelParams.from_log(result.x)
        try:
            value = _evidence(candidate, inputs, centered)
        except NumericalError:
            continue
        if value > best_value:
            best_params, best_value = candidate, value

    if best_params is None:
        raise NumericalError("every GP restart failed to factorize the Gram matrix", module=_MODULE)
    _log(logging.INFO, f"GP fit N={inputs.shape[0]} -> beta0={best_params.beta0:.4g} "
                       f"beta1={best_params.beta1:.4g} evidence={best_value:.3f}")
    return GpModel(best_params, inputs, targets)
