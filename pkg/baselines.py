"""
Comparison methods: a single GP over all pairs, a switching GP whose modes
follow a state-independent Markov chain, and an EKF given the true
piecewise equations of motion.
"""

import logging
from dataclasses import dataclass, replace
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy.linalg import cho_solve

from clustering import initial_modes
from config import DEV_MODE, ClusterConfig, GpConfig, LearnerConfig, TrackingConfig
from core_types import (
    Gaussian,
    GaussianMixture,
    InputError,
    LabeledDataset,
    Trajectory,
    as_state_vec,
    derive_seed,
    robust_cholesky,
)
from gp_regression import GpModel, KernelParams, fit, predict_many
from hybrid_learner import HybridLearner, HybridModel, build_pairs, subsample_pairs
from particle_filter import StepReport, observation_loglik, track
from sims.ball import BallConfig, ball_mode, ball_step, ball_step_jacobian
from sims.box import BoxConfig, box_mode, box_step

logger = logging.getLogger(__name__)

_MODULE = "baselines"

_SWITCHING_STREAM = 11


def _log(level, message):
    if DEV_MODE:
        logger.log(level, message)


# --- Single GP ---

def single_gp_learn(trajectories: Sequence[Trajectory], gp_cfg: Optional[GpConfig] = None,
                    seed: int = 0, n_jobs: int = 1) -> HybridModel:
    """
    One GP on every consecutive pair, wrapped as a one-mode hybrid model
    with constant classifiers so the same particle filter can track it.
    The GP itself is `model.dynamics[0]`.
    """
    learner = HybridLearner(LearnerConfig(n_modes=1, max_iters=1, n_jobs=n_jobs), gp_cfg, seed=seed)
    return learner.learn(trajectories)


def single_gp_track(model: HybridModel, observations: Trajectory, P: int, sigma_eps: float,
                    seed: int, metric_dims: Sequence[int] = (1,),
                    cfg: Optional[TrackingConfig] = None) -> List[StepReport]:
    if model.n_modes != 1:
        raise InputError(f"single-GP tracking expects a one-mode model, got {model.n_modes}")
    return track(model, observations, P, sigma_eps, seed, metric_dims, cfg)


# --- Switching GP ---

def bigram_transition_matrix(labels: Sequence[np.ndarray], n_modes: int) -> np.ndarray:
    """Row-normalized label bigram counts with add-one smoothing."""
    counts = np.ones((n_modes, n_modes))
    for lab in labels:
        lab = np.asarray(lab, dtype=int)
        np.add.at(counts, (lab[:-1], lab[1:]), 1.0)
    return counts / counts.sum(axis=1, keepdims=True)


class SwitchingGpModel:
    """
    Per-mode dynamics GPs and a K x K Markov matrix. Modes evolve
    independently of the state and there are no reset maps.
    """

    def __init__(self, n_modes: int, dynamics: Dict[int, GpModel], transition_matrix,
                 initial_proba, labels: Optional[LabeledDataset] = None):
        matrix = np.array(transition_matrix, dtype=float)
        if matrix.shape != (n_modes, n_modes):
            raise InputError(f"transition matrix of shape {matrix.shape} for {n_modes} modes")
        if not dynamics:
            raise InputError("a switching model needs at least one dynamics GP")
        self.n_modes = n_modes
        self.dynamics = dict(sorted(dynamics.items()))
        self.labels = labels

        # modes without a GP can never be entered
        allowed = np.zeros(n_modes, dtype=bool)
        allowed[list(self.dynamics)] = True
        matrix = matrix * allowed
        sums = matrix.sum(axis=1, keepdims=True)
        empty = sums[:, 0] <= 0
        matrix[empty] = allowed / allowed.sum()
        self.transition_matrix = matrix / matrix.sum(axis=1, keepdims=True)

        initial = np.array(initial_proba, dtype=float).reshape(-1) * allowed
        if initial.sum() <= 0:
            initial = allowed.astype(float)
        self.initial_proba = initial / initial.sum()

    def initial_mode_proba(self, x) -> np.ndarray:
        return self.initial_proba.copy()

    def transition(self, modes: np.ndarray, states: np.ndarray, rng: np.random.Generator):
        modes = np.asarray(modes, dtype=int)
        states = np.atleast_2d(states)
        cumulative = np.cumsum(self.transition_matrix[modes], axis=1)
        cumulative[:, -1] = 1.0
        draws = rng.random(len(modes))
        next_modes = np.minimum((cumulative < draws[:, None]).sum(axis=1), self.n_modes - 1)

        means = np.empty_like(states)
        variances = np.empty(len(states))
        for mode in np.unique(next_modes):
            sel = next_modes == mode
            means[sel], variances[sel] = predict_many(self.dynamics[int(mode)], states[sel])
        return next_modes, means, variances


def switching_gp_learn(trajectories: Sequence[Trajectory], n_modes: int,
                       gp_cfg: Optional[GpConfig] = None,
                       cluster_cfg: Optional[ClusterConfig] = None,
                       seed: int = 0, n_jobs: int = 1) -> SwitchingGpModel:
    """
    Switching-GP baseline on the same initial clustering as the hybrid
    learner: one dynamics GP per mode on its same-mode pairs, and a Markov
    matrix from label bigrams.
    """
    if n_modes < 1:
        raise InputError(f"mode count must be at least 1, got {n_modes}")
    gp_cfg = gp_cfg or GpConfig()
    labels = initial_modes(trajectories, n_modes, seed, cluster_cfg)
    ds = LabeledDataset(tuple(trajectories), tuple(labels))
    pairs = build_pairs(ds)

    init = KernelParams(gp_cfg.beta0_init, gp_cfg.beta1_init)
    tasks = []
    modes = list(pairs.dyn_pairs)
    for mode in modes:
        pre, post = pairs.dyn_pairs[mode]
        pre, post = subsample_pairs(pre, post, gp_cfg.max_points,
                                    derive_seed(seed, _SWITCHING_STREAM, 100, mode))
        mode_cfg = replace(gp_cfg, seed=derive_seed(seed, _SWITCHING_STREAM, mode))
        tasks.append(delayed(fit)(pre, post, init, mode_cfg))
    models = Parallel(n_jobs=n_jobs)(tasks)
    dynamics = dict(zip(modes, models))

    pooled = ds.pooled_labels()
    initial = np.bincount(pooled, minlength=n_modes)[:n_modes].astype(float)
    matrix = bigram_transition_matrix(ds.labels, n_modes)
    _log(logging.INFO, f"switching GP: {len(dynamics)} mode GPs, transition matrix\n{matrix}")
    return SwitchingGpModel(n_modes, dynamics, matrix, initial, labels=ds)


def switching_gp_track(model: SwitchingGpModel, observations: Trajectory, P: int,
                       sigma_eps: float, seed: int, metric_dims: Sequence[int] = (1,),
                       cfg: Optional[TrackingConfig] = None) -> List[StepReport]:
    return track(model, observations, P, sigma_eps, seed, metric_dims, cfg)


# --- Extended Kalman filter ---

MotionFn = Callable[[np.ndarray, int], np.ndarray]


@dataclass(frozen=True)
class EkfModel:
    """
    Known piecewise motion model. `motion(x, k)` maps the state at index k
    to index k + 1, `jacobian(x, k)` is its derivative, and `mode_of(x)`
    names the deterministic mode the model applies at x.
    """
    motion: MotionFn
    jacobian: MotionFn
    process_cov: np.ndarray
    obs_cov: np.ndarray
    mode_of: Callable[[np.ndarray], int] = lambda x: 0
    n_modes: int = 1

    def __post_init__(self):
        for name in ("process_cov", "obs_cov"):
            cov = np.atleast_2d(np.array(getattr(self, name), dtype=float))
            if cov.shape[0] != cov.shape[1] or not np.allclose(cov, cov.T):
                raise InputError(f"{name} must be a symmetric square matrix")
            if np.linalg.eigvalsh(cov).min() < -1e-12:
                raise InputError(f"{name} must be positive semi-definite")
            cov.flags.writeable = False
            object.__setattr__(self, name, cov)

    @property
    def dim(self) -> int:
        return self.process_cov.shape[0]


def _symmetrize(cov: np.ndarray) -> np.ndarray:
    return 0.5 * (cov + cov.T)


def ekf_predict(model: EkfModel, mean, cov, step: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    mean = as_state_vec(mean)
    F = model.jacobian(mean, step)
    mean = np.asarray(model.motion(mean, step), dtype=float)
    cov = F @ np.asarray(cov, dtype=float) @ F.T + model.process_cov
    return mean, _symmetrize(cov)


def ekf_update(model: EkfModel, mean, cov, obs) -> Tuple[np.ndarray, np.ndarray]:
    """Kalman update with an identity observation model, Joseph-form covariance."""
    mean = as_state_vec(mean)
    obs = as_state_vec(obs)
    if obs.shape != mean.shape:
        raise InputError(f"observation of dimension {obs.shape[0]} for a {mean.shape[0]}-D state")
    cov = np.asarray(cov, dtype=float)
    S = _symmetrize(cov + model.obs_cov)
    chol, _ = robust_cholesky(S, module=_MODULE)
    gain = cho_solve((chol, True), cov).T
    mean = mean + gain @ (obs - mean)
    I_minus_K = np.eye(len(mean)) - gain
    cov = I_minus_K @ cov @ I_minus_K.T + gain @ model.obs_cov @ gain.T
    return mean, _symmetrize(cov)


def ekf_step(model: EkfModel, mean, cov, obs=None, step: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """EKF predict from index `step` and, if an observation is given, update."""
    mean, cov = ekf_predict(model, mean, cov, step)
    if obs is not None:
        mean, cov = ekf_update(model, mean, cov, obs)
    return mean, cov


def ball_ekf_model(cfg: BallConfig) -> EkfModel:
    """Free fall with the elastic ground contact resolved inside the step."""

    def motion(x, k):
        return ball_step(x, cfg)[0]

    def jacobian(x, k):
        return ball_step_jacobian(x, cfg)

    return EkfModel(motion, jacobian, np.diag(cfg.process_noise), np.diag(cfg.obs_noise),
                    mode_of=ball_mode, n_modes=2)


def box_ekf_model(cfg: BoxConfig) -> EkfModel:
    """Box pushing equations; velocities are set by the schedule and contact rule."""
    dt = cfg.t_step

    def motion(x, k):
        return box_step(x, k, cfg)

    def jacobian(x, k):
        J = np.zeros((5, 5))
        J[0, 0] = J[2, 2] = J[3, 3] = 1.0
        J[0, 1] = J[2, 4] = dt
        return J

    process = np.diag([cfg.process_noise, 0.0, cfg.process_noise, 0.0, 0.0])
    return EkfModel(motion, jacobian, process, cfg.obs_noise * np.eye(5),
                    mode_of=lambda x: box_mode(x, cfg), n_modes=2)


def ekf_model_for(sim_cfg) -> EkfModel:
    if isinstance(sim_cfg, BallConfig):
        return ball_ekf_model(sim_cfg)
    if isinstance(sim_cfg, BoxConfig):
        return box_ekf_model(sim_cfg)
    raise InputError(f"no EKF model for {type(sim_cfg).__name__}")


def _one_hot(mode: int, n_modes: int) -> np.ndarray:
    out = np.zeros(n_modes)
    out[min(int(mode), n_modes - 1)] = 1.0
    return out


def _observed_states(observations) -> np.ndarray:
    return observations.states if isinstance(observations, Trajectory) else np.atleast_2d(observations)


def ekf_filter(model: EkfModel, states,
               start_step: int = 0) -> Iterator[Tuple[int, Gaussian, Gaussian]]:
    """
    Run the EKF over observations, started at the first one with the
    observation covariance. Yields (step, prior, posterior) for every later
    observation.
    """
    states = np.atleast_2d(states)
    mean, cov = as_state_vec(states[0]), model.obs_cov.copy()
    for t in range(1, len(states)):
        prior_mean, prior_cov = ekf_predict(model, mean, cov, start_step + t - 1)
        mean, cov = ekf_update(model, prior_mean, prior_cov, states[t])
        yield t, Gaussian(prior_mean, prior_cov), Gaussian(mean, cov)


def ekf_track(model: EkfModel, observations, sigma_eps: float,
              metric_dims: Sequence[int] = (1,), start_step: int = 0) -> List[StepReport]:
    """Filter observations with the EKF. Reports mirror the particle filter's."""
    states = _observed_states(observations)
    dims = list(metric_dims)
    reports = []
    for t, prior_gauss, post_gauss in ekf_filter(model, states, start_step):
        prior = GaussianMixture.single(prior_gauss)
        posterior = GaussianMixture.single(post_gauss)
        reports.append(StepReport(
            step=t,
            prior=prior,
            posterior=posterior,
            prior_ll=observation_loglik(prior, states[t], dims, sigma_eps),
            posterior_ll=observation_loglik(posterior, states[t], dims, sigma_eps),
            prior_ll_full=observation_loglik(prior, states[t], None, sigma_eps),
            posterior_ll_full=observation_loglik(posterior, states[t], None, sigma_eps),
            mode_weights=_one_hot(model.mode_of(post_gauss.mean), model.n_modes),
            ess=1.0,
            diverged=False,
        ))
    return reports


class EkfMethod:
    """Evaluation adapter with the same surface as ParticleFilterMethod."""

    def __init__(self, model: EkfModel, name: str = "ekf"):
        self.name = name
        self.model = model

    @property
    def n_modes(self) -> int:
        return self.model.n_modes

    def prior_mixtures(self, start_state, n: int, seed: int, start_step: int = 0) -> List[GaussianMixture]:
        mean, cov = as_state_vec(start_state), self.model.obs_cov.copy()
        mixtures = []
        for i in range(n):
            mean, cov = ekf_predict(self.model, mean, cov, start_step + i)
            mixtures.append(GaussianMixture.single(Gaussian(mean, cov)))
        return mixtures

    def posterior_mixtures(self, observations, seed: int, start_step: int = 0) -> List[GaussianMixture]:
        return [GaussianMixture.single(posterior)
                for _, _, posterior in ekf_filter(self.model, _observed_states(observations), start_step)]
