"""
Seeded simulators for the two benchmark systems.
Ground-truth modes are attached for evaluation only.
"""

from core_types import derive_seed

from .ball import BallConfig, ball_step, gen_ball
from .box import BoxConfig, box_contact, box_step, gen_box

__all__ = ['BallConfig', 'BoxConfig', 'ball_step', 'box_contact', 'box_step',
           'gen_ball', 'gen_box', 'simulate_split']

_TRAIN_STREAM = 1
_TEST_STREAM = 2


def simulate_split(sim_cfg, seed):
    """Return (train, test) datasets for a BallConfig or BoxConfig."""
    generate = gen_ball if isinstance(sim_cfg, BallConfig) else gen_box
    train = generate(sim_cfg, derive_seed(seed, _TRAIN_STREAM), sim_cfg.n_train)
    test = generate(sim_cfg, derive_seed(seed, _TEST_STREAM), sim_cfg.n_test)
    return train, test
