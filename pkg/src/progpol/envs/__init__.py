"""Seeded control environments and the rollout machinery."""

from ..errors import ConfigError
from .acrobot import Acrobot
from .base import (BoxSpace, ChannelId, DiscreteSpace, EpisodeTrace,
                   HistoryRecorder, Pomdp, rollout)
from .blocking import NULL_READING, BlockedPomdp, BlockingConfig, wrap_blocking
from .cartpole import CartPole
from .lanekeep import TRACKS, LaneKeep, Track, lane_metrics
from .mountaincar import MountainCar

ENVS = {
    "cartpole": CartPole,
    "mountaincar": MountainCar,
    "acrobot": Acrobot,
    "lanekeep": LaneKeep,
}


def make_env(name, **kwargs):
    """Instantiate a registered environment; ``lanekeep`` takes ``track=``."""
    if name not in ENVS:
        raise ConfigError(f"unknown environment {name!r}; have {sorted(ENVS)}")
    return ENVS[name](**kwargs)


__all__ = [
    "Acrobot", "BlockedPomdp", "BlockingConfig", "BoxSpace", "CartPole",
    "ChannelId", "DiscreteSpace", "ENVS", "EpisodeTrace", "HistoryRecorder",
    "LaneKeep", "MountainCar", "NULL_READING", "Pomdp", "TRACKS", "Track",
    "lane_metrics", "make_env", "rollout", "wrap_blocking",
]
