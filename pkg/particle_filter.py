"""
Sequential importance sampling particle filter over (mode, state).

Each step samples a next mode per particle, draws the next state from the
chosen GP's predictive Gaussian, and (when an observation arrives)
reweights and possibly resamples. The belief is summarized as one Gaussian
per occupied mode, weighted by that mode's particle mass.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Protocol, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from config import DEV_MODE, RESAMPLE_POLICIES, TrackingConfig
from core_types import (
    Gaussian,
    GaussianMixture,
    InputError,
    Trajectory,
    as_state_vec,
    derive_seed,
    isotropic_logpdf,
    mixture_logpdf,
)

logger = logging.getLogger(__name__)

_INIT_STREAM = 0
_STEP_STREAM = 1
_RESAMPLE_STREAM = 2


def _log(level, message):
    if DEV_MODE:
        logger.log(level, message)


class PropagationModel(Protocol):
    """Anything the filter can push particles through."""

    n_modes: int

    def initial_mode_proba(self, x) -> np.ndarray:
        ...

    def transition(self, modes: np.ndarray, states: np.ndarray,
                   rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        ...


@dataclass(frozen=True)
class Particle:
    mode: int
    state: np.ndarray
    log_weight: float


def _summarize(modes: np.ndarray, states: np.ndarray,
               weights: np.ndarray) -> Tuple[GaussianMixture, Tuple[int, ...]]:
    """Per-mode weighted moment matching."""
    occupied = np.unique(modes)
    masses, components = [], []
    for mode in occupied:
        sel = modes == mode
        w = weights[sel]
        x = states[sel]
        mass = float(w.sum())
        local = w / mass if mass > 0 else np.full(len(w), 1.0 / len(w))
        mean = local @ x
        diff = x - mean
        cov = (diff * local[:, None]).T @ diff
        masses.append(mass)
        components.append(Gaussian(mean, 0.5 * (cov + cov.T)))
    masses = np.array(masses)
    masses = masses / masses.sum()
    return GaussianMixture(masses, tuple(components)), tuple(int(m) for m in occupied)


@dataclass(frozen=True)
class BeliefState:
    """
    Particle cloud with normalized log-weights and its mixture summary.

    `diverged` is set when an update found every weight at zero.
    """
    modes: np.ndarray
    states: np.ndarray
    log_weights: np.ndarray
    diverged: bool = False
    resampled: bool = False
    summary: GaussianMixture = field(init=False)
    component_modes: Tuple[int, ...] = field(init=False)

    def __post_init__(self):
        modes = np.array(self.modes, dtype=int).reshape(-1)
        states = np.atleast_2d(np.array(self.states, dtype=float))
        log_weights = np.array(self.log_weights, dtype=float).reshape(-1)
        if not (len(modes) == states.shape[0] == len(log_weights)) or len(modes) == 0:
            raise InputError("modes, states and log-weights must describe the same particles")
        if np.any(np.isnan(log_weights)) or np.any(log_weights == np.inf):
            raise InputError("log-weights must not be NaN or +inf")
        for arr in (modes, states, log_weights):
            arr.flags.writeable = False
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "log_weights", log_weights)
        summary, component_modes = _summarize(modes, states, self.weights)
        object.__setattr__(self, "summary", summary)
        object.__setattr__(self, "component_modes", component_modes)

    @property
    def n_particles(self) -> int:
        return len(self.modes)

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def particles(self) -> List[Particle]:
        return [Particle(int(m), s, float(lw))
                for m, s, lw in zip(self.modes, self.states, self.log_weights)]

    def effective_sample_size(self) -> float:
        w = self.weights
        return float(1.0 / np.sum(w * w))

    def mode_weights(self, n_modes: int) -> np.ndarray:
        """Total particle weight per mode, zero for empty modes."""
        return np.bincount(self.modes, weights=self.weights, minlength=n_modes)[:n_modes]


def _uniform_log_weights(n: int) -> np.ndarray:
    return np.full(n, -np.log(n))


def systematic_resample(weights: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Indices drawn with one uniform offset and n evenly spaced pointers."""
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    pointers = (rng.random() + np.arange(n)) / n
    return np.searchsorted(cumulative, pointers, side="right")


def _allocate(masses: np.ndarray, n: int) -> np.ndarray:
    """Largest-remainder split of n draws over masses that sum to 1."""
    raw = masses * n
    counts = np.floor(raw).astype(int)
    remainder = n - counts.sum()
    if remainder > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:remainder]] += 1
    return counts


def stratified_resample(modes: np.ndarray, weights: np.ndarray,
                        rng: np.random.Generator) -> np.ndarray:
    """
    Resample per mode: first split the particle count over modes by their
    mass, then resample systematically inside each mode.
    """
    n = len(weights)
    occupied = np.unique(modes)
    masses = np.array([weights[modes == m].sum() for m in occupied])
    counts = _allocate(masses / masses.sum(), n)
    chosen = []
    for mode, count in zip(occupied, counts):
        if count == 0:
            continue
        members = np.flatnonzero(modes == mode)
        local = weights[members]
        local = local / local.sum() if local.sum() > 0 else np.full(len(members), 1.0 / len(members))
        chosen.append(members[systematic_resample(local, count, rng)])
    return np.concatenate(chosen)


def _reweight(belief: BeliefState, obs: np.ndarray, sigma_eps: float) -> np.ndarray:
    """Unnormalized log-weights after one observation."""
    n = belief.n_particles
    loglik = isotropic_logpdf(np.broadcast_to(obs, belief.states.shape), belief.states,
                              np.full(n, sigma_eps ** 2))
    return belief.log_weights + loglik


def init_belief(model: PropagationModel, x0, P: int, seed: int,
                sigma_eps: float = 0.0) -> BeliefState:
    """
    Particles at x0 jittered by sigma_eps, modes drawn from the level-1
    mode distribution at x0, uniform weights.
    """
    if P < 1:
        raise InputError(f"particle count must be at least 1, got {P}")
    x0 = as_state_vec(x0)
    rng = np.random.default_rng(seed)
    proba = np.asarray(model.initial_mode_proba(x0), dtype=float)
    proba = proba / proba.sum()
    states = x0 + sigma_eps * rng.standard_normal((P, x0.shape[0]))
    modes = rng.choice(len(proba), size=P, p=proba)
    return BeliefState(modes, states, _uniform_log_weights(P))


def propagate(belief: BeliefState, model: PropagationModel, seed: int) -> BeliefState:
    """One-step prediction; weights are carried over unchanged."""
    rng = np.random.default_rng(seed)
    next_modes, means, variances = model.transition(belief.modes, belief.states, rng)
    noise = rng.standard_normal(means.shape) * np.sqrt(np.maximum(variances, 0.0))[:, None]
    return BeliefState(next_modes, means + noise, belief.log_weights)


def update(belief: BeliefState, obs, sigma_eps: float, policy: str = "ess",
           ess_threshold: float = 0.5, stratified: bool = False,
           seed: int = 0) -> BeliefState:
    """
    Reweight by log N(obs; state, sigma_eps^2 I), normalize, then resample
    according to `policy` ("ess": below ess_threshold * P, "always", "never").

    A total underflow resets the weights to uniform and marks the belief
    as diverged.
    """
    obs = as_state_vec(obs)
    if obs.shape[0] != belief.dim:
        raise InputError(f"observation of dimension {obs.shape[0]} for a {belief.dim}-D belief")
    if policy not in RESAMPLE_POLICIES:
        raise InputError(f"unknown resample policy {policy!r}")
    if sigma_eps <= 0:
        raise InputError(f"sigma_eps must be positive, got {sigma_eps}")

    n = belief.n_particles
    log_weights = _reweight(belief, obs, sigma_eps)
    total = logsumexp(log_weights)
    diverged = not np.isfinite(total)
    if diverged:
        logger.warning("all particle weights underflowed; resetting to uniform")
        log_weights = _uniform_log_weights(n)
    else:
        log_weights = log_weights - total

    weights = np.exp(log_weights)
    if policy == "always":
        do_resample = True
    elif policy == "never":
        do_resample = False
    else:
        do_resample = 1.0 / np.sum(weights * weights) < ess_threshold * n

    if not do_resample:
        return BeliefState(belief.modes, belief.states, log_weights, diverged=diverged)

    rng = np.random.default_rng(seed)
    if stratified:
        idx = stratified_resample(belief.modes, weights, rng)
    else:
        idx = systematic_resample(weights, n, rng)
    return BeliefState(belief.modes[idx], belief.states[idx], _uniform_log_weights(n),
                       diverged=diverged, resampled=True)


def rollout(belief: BeliefState, model: PropagationModel, n: int, seed: int) -> List[BeliefState]:
    if n < 1:
        raise InputError(f"prediction horizon must be at least 1, got {n}")
    beliefs = []
    for i in range(n):
        belief = propagate(belief, model, derive_seed(seed, _STEP_STREAM, i))
        beliefs.append(belief)
    return beliefs


def predict_n(belief: BeliefState, model: PropagationModel, n: int, seed: int) -> List[GaussianMixture]:
    """Summaries after each of n propagations without observations."""
    return [b.summary for b in rollout(belief, model, n, seed)]


def observation_loglik(mixture: GaussianMixture, obs, dims: Optional[Sequence[int]],
                       sigma_eps: float) -> float:
    """Log density of a noisy observation under a predictive mixture, optionally on `dims` only."""
    obs = as_state_vec(obs)
    if dims is not None:
        mixture = mixture.marginal(dims)
        obs = obs[list(dims)]
    return mixture_logpdf(mixture.with_added_noise(sigma_eps ** 2), obs)


@dataclass(frozen=True)
class StepReport:
    step: int
    prior: GaussianMixture
    posterior: GaussianMixture
    prior_ll: float
    posterior_ll: float
    prior_ll_full: float
    posterior_ll_full: float
    mode_weights: np.ndarray
    ess: float
    diverged: bool


def track(model: PropagationModel, observations: Trajectory, P: int, sigma_eps: float,
          seed: int, metric_dims: Sequence[int] = (1,),
          cfg: Optional[TrackingConfig] = None) -> List[StepReport]:
    """
    Filter a trajectory of observations.

    The belief starts at the first observation; every later step
    propagates (prior) and then conditions on the observation (posterior).

    Args:
        model: Propagation model (learned hybrid system or a baseline).
        observations: Observed states.
        P: Particle count.
        sigma_eps: Observation noise standard deviation.
        seed: Root seed; every step derives its own.
        metric_dims: Coordinates the headline log-likelihoods are computed on.
        cfg: Resampling settings; P, sigma_eps and metric_dims above win.

    Returns:
        One StepReport per observation after the first.
    """
    cfg = cfg or TrackingConfig()
    states = observations.states if isinstance(observations, Trajectory) else np.atleast_2d(observations)
    if len(states) < 1:
        raise InputError("tracking needs at least one observation")
    dims = list(metric_dims)

    belief = init_belief(model, states[0], P, derive_seed(seed, _INIT_STREAM), sigma_eps)
    reports = []
    for t in range(1, len(states)):
        prior = propagate(belief, model, derive_seed(seed, _STEP_STREAM, t))
        belief = update(prior, states[t], sigma_eps, cfg.resample, cfg.ess_threshold,
                        cfg.stratified, derive_seed(seed, _RESAMPLE_STREAM, t))
        reports.append(StepReport(
            step=t,
            prior=prior.summary,
            posterior=belief.summary,
            prior_ll=observation_loglik(prior.summary, states[t], dims, sigma_eps),
            posterior_ll=observation_loglik(belief.summary, states[t], dims, sigma_eps),
            prior_ll_full=observation_loglik(prior.summary, states[t], None, sigma_eps),
            posterior_ll_full=observation_loglik(belief.summary, states[t], None, sigma_eps),
            mode_weights=belief.mode_weights(model.n_modes),
            ess=_reweighted_ess(prior, states[t], sigma_eps),
            diverged=belief.diverged,
        ))
        if belief.diverged:
            logger.warning(f"filter diverged at step {t}")
    _log(logging.INFO, f"tracked {len(reports)} steps with {P} particles")
    return reports


def _reweighted_ess(prior: BeliefState, obs, sigma_eps: float) -> float:
    """ESS after reweighting and before any resampling."""
    log_weights = _reweight(prior, obs, sigma_eps)
    total = logsumexp(log_weights)
    if not np.isfinite(total):
        return float(prior.n_particles)
    w = np.exp(log_weights - total)
    return float(1.0 / np.sum(w * w))


def reports_to_frame(reports: Sequence[StepReport], n_modes: int,
                     method: Optional[str] = None) -> pd.DataFrame:
    """Tracking CSV rows: step, n_ahead, prior_ll, posterior_ll, n_components, mode_weights..."""
    rows = []
    for r in reports:
        row = {}
        if method is not None:
            row["method"] = method
        row.update({
            "step": r.step,
            "n_ahead": 1,
            "prior_ll": r.prior_ll,
            "posterior_ll": r.posterior_ll,
            "prior_ll_full": r.prior_ll_full,
            "posterior_ll_full": r.posterior_ll_full,
            "n_components": len(r.posterior.components),
            "diverged": r.diverged,
        })
        for m in range(n_modes):
            row[f"mode_weight_{m}"] = float(r.mode_weights[m]) if m < len(r.mode_weights) else 0.0
        rows.append(row)
    return pd.DataFrame(rows)


def write_tracking_csv(path, reports: Sequence[StepReport], n_modes: int,
                       method: Optional[str] = None):
    reports_to_frame(reports, n_modes, method).to_csv(path, index=False, float_format="%.12g")


class ParticleFilterMethod:
    """
    Evaluation adapter: prior (pure prediction) and posterior (tracking)
    mixtures for any propagation model.
    """

    def __init__(self, name: str, model: PropagationModel, cfg: Optional[TrackingConfig] = None):
        self.name = name
        self.model = model
        self.cfg = cfg or TrackingConfig()

    @property
    def n_modes(self) -> int:
        return self.model.n_modes

    def prior_mixtures(self, start_state, n: int, seed: int, start_step: int = 0) -> List[GaussianMixture]:
        belief = init_belief(self.model, start_state, self.cfg.n_particles,
                             derive_seed(seed, _INIT_STREAM), self.cfg.sigma_eps)
        return predict_n(belief, self.model, n, seed)

    def posterior_mixtures(self, observations, seed: int, start_step: int = 0) -> List[GaussianMixture]:
        """Posterior after each observation but the first, which seeds the belief."""
        reports = track(self.model, np.atleast_2d(observations), self.cfg.n_particles,
                        self.cfg.sigma_eps, seed, self.cfg.metric_dims, self.cfg)
        return [r.posterior for r in reports]
