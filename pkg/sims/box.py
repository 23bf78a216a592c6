"""
Planar box pushing: a circular robot drives in +x for a while and stops;
the box moves with the robot only while they are in contact.

State is (x_o, v_o, x_r, y_r, v_r) in cm and cm/s. Mode 0 is "free",
mode 1 is "contact" (box being pushed).
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from core_types import ConfigError, LabeledDataset, Trajectory

FREE = 0
CONTACT = 1


@dataclass(frozen=True)
class BoxConfig:
    robot_radius: float = 2.0
    box_size: float = 4.0
    initial_gap: float = 6.0
    robot_speed: float = 4.0
    push_duration: float = 1.0
    total_duration: float = 2.0
    t_step: float = 0.2
    y_r_mean: float = 6.0
    y_r_var: float = 0.5
    contact_height: float = 6.0
    obs_noise: float = 0.1
    process_noise: float = 0.0
    n_train: int = 30
    n_test: int = 6
    literal_contact: bool = False

    def __post_init__(self):
        for name in ("robot_radius", "box_size", "initial_gap", "robot_speed",
                     "push_duration", "total_duration", "t_step"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"simulation.{name} must be positive")
        if self.y_r_var < 0 or self.obs_noise < 0 or self.process_noise < 0:
            raise ConfigError("simulation variances must be non-negative")
        if self.n_train < 0 or self.n_test < 0:
            raise ConfigError("simulation.n_train/n_test must be non-negative")

    @property
    def contact_distance(self) -> float:
        return self.robot_radius + self.box_size / 2.0

    @property
    def steps(self) -> int:
        return int(round(self.total_duration / self.t_step)) + 1


def box_contact(x_o: float, x_r: float, y_r: float, cfg: BoxConfig) -> bool:
    """
    Contact test between robot and box.

    The default closes the center gap to robot radius plus half the box
    width; `literal_contact` switches to the `x_o - x_r >= 4` reading.
    """
    gap = x_o - x_r
    if cfg.literal_contact:
        touching = gap >= cfg.contact_distance
    else:
        touching = gap <= cfg.contact_distance
    return bool(touching and y_r >= cfg.contact_height)


def robot_velocity(step: int, cfg: BoxConfig) -> float:
    return cfg.robot_speed if step * cfg.t_step < cfg.push_duration - 1e-9 else 0.0


def box_step(state, step: int, cfg: BoxConfig) -> np.ndarray:
    """Noiseless update of the state observed at index `step`."""
    x_o, v_o, x_r, y_r, v_r = np.asarray(state, dtype=float)
    x_o = x_o + v_o * cfg.t_step
    x_r = x_r + v_r * cfg.t_step
    v_r = robot_velocity(step + 1, cfg)
    v_o = v_r if box_contact(x_o, x_r, y_r, cfg) else 0.0
    return np.array([x_o, v_o, x_r, y_r, v_r])


def box_mode(state, cfg: BoxConfig) -> int:
    x_o, _, x_r, y_r, v_r = state
    return CONTACT if v_r > 0 and box_contact(x_o, x_r, y_r, cfg) else FREE


def _simulate_one(cfg: BoxConfig, rng: np.random.Generator, y_r: Optional[float]) -> Trajectory:
    if y_r is None:
        y_r = rng.normal(cfg.y_r_mean, np.sqrt(cfg.y_r_var))
    x_r0 = 0.0
    x_o0 = x_r0 + cfg.initial_gap
    state = np.array([x_o0, 0.0, x_r0, y_r, robot_velocity(0, cfg)])
    state[1] = state[4] if box_contact(x_o0, x_r0, y_r, cfg) else 0.0

    truth = np.zeros((cfg.steps, 5))
    truth[0] = state
    proc_std = np.sqrt(cfg.process_noise)
    for k in range(1, cfg.steps):
        nxt = box_step(truth[k - 1], k - 1, cfg)
        if proc_std > 0:
            # positions only; velocities stay on the commanded/contact values
            nxt[[0, 2]] += rng.normal(0.0, proc_std, size=2)
        truth[k] = nxt

    modes = np.array([box_mode(s, cfg) for s in truth], dtype=int)
    observed = truth + rng.normal(0.0, np.sqrt(cfg.obs_noise), size=truth.shape)
    return Trajectory(observed, cfg.t_step, modes)


def gen_box(cfg: BoxConfig, seed: int, n_trajectories: Optional[int] = None,
            heights: Optional[Sequence[float]] = None) -> LabeledDataset:
    """
    Generate box-pushing trajectories with ground-truth modes.

    Args:
        cfg: Simulation constants.
        seed: Seed for the whole batch.
        n_trajectories: Defaults to cfg.n_train (ignored when heights is given).
        heights: Fixed robot heights y_r, one per trajectory.
    """
    rng = np.random.default_rng(seed)
    if heights is not None:
        trajectories = [_simulate_one(cfg, rng, float(h)) for h in heights]
    else:
        n = cfg.n_train if n_trajectories is None else n_trajectories
        trajectories = [_simulate_one(cfg, rng, None) for _ in range(n)]
    return LabeledDataset.from_ground_truth(trajectories)


def made_contact(traj: Trajectory) -> bool:
    return bool(traj.modes is not None and np.any(traj.modes == CONTACT))
