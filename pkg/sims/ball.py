"""
One-dimensional bouncing ball with perfectly elastic ground contact.

State is (y, y_dot) in meters and m/s, positive direction up. Ground-truth
mode 0 is "falling" (y_dot <= 0), mode 1 is "rising".
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from core_types import ConfigError, LabeledDataset, Trajectory, as_state_vec

FALLING = 0
RISING = 1


@dataclass(frozen=True)
class BallConfig:
    g: float = -9.8
    dt: float = 0.05
    y0_low: float = 0.8
    y0_high: float = 1.2
    process_noise: Tuple[float, float] = (0.01, 0.01)
    obs_noise: Tuple[float, float] = (0.01, 0.01)
    steps: int = 100
    n_train: int = 20
    n_test: int = 5

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError(f"simulation.dt must be positive, got {self.dt}")
        if self.y0_low > self.y0_high or self.y0_low < 0:
            raise ConfigError("simulation.y0_low/y0_high must satisfy 0 <= low <= high")
        for name in ("process_noise", "obs_noise"):
            values = getattr(self, name)
            if len(values) != 2 or any(v < 0 for v in values):
                raise ConfigError(f"simulation.{name} must be two non-negative variances")
            object.__setattr__(self, name, tuple(float(v) for v in values))
        if self.steps < 2:
            raise ConfigError("simulation.steps must be at least 2")
        if self.n_train < 0 or self.n_test < 0:
            raise ConfigError("simulation.n_train/n_test must be non-negative")


def ball_step(state, cfg: BallConfig) -> Tuple[np.ndarray, bool]:
    """
    Noiseless free-fall update with an elastic ground contact resolved
    inside the step, so mechanical energy is unchanged by a bounce.

    Returns:
        (next_state, bounced)
    """
    y, v = as_state_vec(state)
    dt, g = cfg.dt, cfg.g
    nxt = np.array([y + v * dt + g * dt * dt / 2.0, v + g * dt])
    if nxt[0] >= 0.0:
        return nxt, False
    impact_speed, remaining = _impact(y, v, cfg)
    bounced = np.array([impact_speed * remaining + g * remaining * remaining / 2.0,
                        impact_speed + g * remaining])
    # a second contact within the same step is folded back by the mirror rule
    return reflect_at_ground(bounced)[0], True


def _impact(y: float, v: float, cfg: BallConfig) -> Tuple[float, float]:
    """Speed at ground contact and the time left in the step after it."""
    speed = float(np.sqrt(max(v * v - 2.0 * cfg.g * max(y, 0.0), 0.0)))
    hit_time = (speed + v) / -cfg.g
    return speed, cfg.dt - hit_time


def ball_step_jacobian(state, cfg: BallConfig) -> np.ndarray:
    """Derivative of `ball_step` with respect to (y, y_dot)."""
    y, v = as_state_vec(state)
    dt, g = cfg.dt, cfg.g
    free = np.array([[1.0, dt], [0.0, 1.0]])
    if y + v * dt + g * dt * dt / 2.0 >= 0.0:
        return free
    speed, remaining = _impact(y, v, cfg)
    if speed < 1e-12:
        return np.diag([-1.0, -1.0]) @ free
    v_next = speed + g * remaining
    return np.array([
        [-(g * remaining + v_next) / speed, remaining * v / speed + v_next * (v / speed + 1.0) / g],
        [-2.0 * g / speed, 2.0 * v / speed + 1.0],
    ])


def reflect_at_ground(state: np.ndarray) -> Tuple[np.ndarray, bool]:
    if state[0] >= 0.0:
        return state, False
    return np.array([-state[0], abs(state[1])]), True


def ball_mode(state) -> int:
    return FALLING if state[1] <= 0.0 else RISING


def _simulate_one(cfg: BallConfig, rng: np.random.Generator, y0: Optional[float]) -> Trajectory:
    if y0 is None:
        y0 = rng.uniform(cfg.y0_low, cfg.y0_high)
    proc_std = np.sqrt(cfg.process_noise)
    obs_std = np.sqrt(cfg.obs_noise)

    truth = np.zeros((cfg.steps, 2))
    truth[0] = (y0, 0.0)
    for t in range(1, cfg.steps):
        nxt, _ = ball_step(truth[t - 1], cfg)
        nxt = nxt + rng.normal(0.0, 1.0, size=2) * proc_std
        truth[t], _ = reflect_at_ground(nxt)

    modes = np.array([ball_mode(s) for s in truth], dtype=int)
    observed = truth + rng.normal(0.0, 1.0, size=truth.shape) * obs_std
    return Trajectory(observed, cfg.dt, modes)


def gen_ball(cfg: BallConfig, seed: int, n_trajectories: Optional[int] = None,
             y0: Optional[float] = None) -> LabeledDataset:
    """
    Generate bouncing-ball trajectories with ground-truth modes.

    Args:
        cfg: Simulation constants.
        seed: Seed for the whole batch.
        n_trajectories: Defaults to cfg.n_train.
        y0: Fixed initial height instead of the uniform draw.

    Returns:
        LabeledDataset whose labels are the ground-truth modes.
    """
    n = cfg.n_train if n_trajectories is None else n_trajectories
    rng = np.random.default_rng(seed)
    trajectories = [_simulate_one(cfg, rng, y0) for _ in range(n)]
    return LabeledDataset.from_ground_truth(trajectories)
