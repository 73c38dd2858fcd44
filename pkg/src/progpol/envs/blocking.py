"""Sensor-blocking decorator.

Wraps an environment so that each step, each "defective" channel is
independently replaced by a null reading (0.0) with a fixed probability.
Dynamics, rewards, and termination pass through untouched; only the emitted
observations change. Blocking draws come from the decorator's own stream, so
a wrapped run with block_prob 0 is bit-identical to the bare environment.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError

NULL_READING = 0.0


@dataclass(frozen=True)
class BlockingConfig:
    defective: tuple      # channel names
    block_prob: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.block_prob <= 1.0:
            raise ConfigError(f"block_prob {self.block_prob} outside [0, 1]")


class BlockedPomdp:
    """Delegating wrapper; see module docstring."""

    def __init__(self, env, cfg: BlockingConfig):
        unknown = set(cfg.defective) - set(env.channel_names)
        if unknown:
            raise ConfigError(f"defective channels {sorted(unknown)} not in "
                              f"{env.channel_names}")
        self.env = env
        self.cfg = cfg
        self._rows = tuple(env.channel_names.index(n) for n in cfg.defective)
        self._rng = None

    def __getattr__(self, name):
        return getattr(self.env, name)

    @property
    def name(self):
        return self.env.name

    def _blocked(self, obs):
        obs = list(obs)
        for row in self._rows:
            if self._rng.random() < self.cfg.block_prob:
                obs[row] = NULL_READING
        return tuple(obs)

    def reset(self, seed):
        self._rng = np.random.default_rng(
            np.random.SeedSequence(entropy=self.cfg.seed,
                                   spawn_key=(int(seed) & 0x7FFFFFFF,)))
        return self._blocked(self.env.reset(seed))

    def step(self, action):
        obs, reward, done = self.env.step(action)
        return self._blocked(obs), reward, done


def wrap_blocking(env, cfg: BlockingConfig):
    return BlockedPomdp(env, cfg)
