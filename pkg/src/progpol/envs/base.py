"""Environment protocol, episode traces, and the rollout loop.

Environments are seeded POMDPs: ``reset(seed)`` returns the first observation,
``step(action)`` returns ``(observation, reward, done)``. Stepping a finished
episode is an error, as is an action outside the action space. Each instance
owns its mutable state; run one instance per worker for parallel rollouts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DomainError, ProgpolError
from ..lang import History


@dataclass(frozen=True)
class ChannelId:
    """Named observation channel at a fixed index of the observation vector."""

    name: str
    index: int


@dataclass(frozen=True)
class DiscreteSpace:
    labels: tuple

    def contains(self, action):
        try:
            return int(action) == action and int(action) in self.labels
        except (TypeError, ValueError):
            return False


@dataclass(frozen=True)
class BoxSpace:
    names: tuple
    low: tuple
    high: tuple

    def contains(self, action):
        try:
            vec = [float(a) for a in action]
        except (TypeError, ValueError):
            return False
        if len(vec) != len(self.low):
            return False
        return all(lo <= a <= hi for a, lo, hi in zip(vec, self.low, self.high))

    def clip(self, action):
        return tuple(min(max(float(a), lo), hi)
                     for a, lo, hi in zip(action, self.low, self.high))


class Pomdp:
    """Base class; subclasses set channels/action_space/horizon and dynamics."""

    name = "pomdp"
    channels: tuple = ()
    action_space = None
    horizon = 200
    gamma = 0.99

    def __init__(self):
        self._done = True
        self._steps = 0
        self.terminal_reason = None

    @property
    def channel_names(self):
        return tuple(c.name for c in self.channels)

    def reset(self, seed):
        self._done = False
        self._steps = 0
        self.terminal_reason = None
        return self._reset(np.random.default_rng(seed))

    def step(self, action):
        if self._done:
            raise ProgpolError("step() after the episode finished")
        if not self.action_space.contains(action):
            raise DomainError(f"action {action!r} outside {self.action_space}")
        obs, reward, done, reason = self._step(action)
        self._steps += 1
        if not done and self._steps >= self.horizon:
            done, reason = True, "horizon"
        if done:
            self._done = True
            self.terminal_reason = reason
        return obs, reward, done

    def episode_info(self):
        """Environment-specific end-of-episode facts (distance raced, ...)."""
        return {}

    # subclasses implement:
    def _reset(self, rng):
        raise NotImplementedError

    def _step(self, action):
        raise NotImplementedError


@dataclass
class EpisodeTrace:
    """Everything recorded about one episode."""

    env: str
    seed: int
    channel_names: tuple
    observations: list = field(default_factory=list)  # one tuple per step
    actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    terminal: str = "horizon"
    gamma: float = 0.99
    info: dict = field(default_factory=dict)

    @property
    def length(self):
        return len(self.rewards)

    @property
    def undiscounted_return(self):
        return math.fsum(self.rewards)

    @property
    def discounted_return(self):
        return math.fsum(r * self.gamma ** i for i, r in enumerate(self.rewards))

    def to_lines(self):
        head = (f"trace env={self.env} seed={self.seed} gamma={self.gamma!r} "
                f"terminal={self.terminal} channels={','.join(self.channel_names)}")
        lines = [head]
        for i, (o, a, r) in enumerate(zip(self.observations, self.actions,
                                          self.rewards)):
            obs = ",".join(repr(float(v)) for v in o)
            act = ",".join(repr(float(v)) for v in a)
            lines.append(f"{i} obs={obs} act={act} reward={r!r}")
        for k in sorted(self.info):
            lines.append(f"info {k}={self.info[k]!r}")
        return lines

    def dump(self):
        return "\n".join(self.to_lines()) + "\n"

    @classmethod
    def parse(cls, text):
        lines = [ln for ln in text.strip().split("\n") if ln.strip()]
        head = lines[0]
        if not head.startswith("trace "):
            raise ProgpolError("not a trace file")
        fields_ = dict(part.split("=", 1) for part in head.split()[1:])
        trace = cls(env=fields_["env"], seed=int(fields_["seed"]),
                    channel_names=tuple(fields_["channels"].split(",")),
                    gamma=float(fields_["gamma"]), terminal=fields_["terminal"])
        for ln in lines[1:]:
            if ln.startswith("info "):
                k, v = ln[5:].split("=", 1)
                trace.info[k] = _parse_scalar(v)
                continue
            parts = dict(part.split("=", 1) for part in ln.split()[1:])
            trace.observations.append(tuple(float(x) for x in parts["obs"].split(",")))
            trace.actions.append(tuple(float(x) for x in parts["act"].split(",")))
            trace.rewards.append(float(parts["reward"]))
        return trace


def _parse_scalar(v):
    if v in ("True", "False"):
        return v == "True"
    for conv in (int, float):
        try:
            return conv(v)
        except ValueError:
            continue
    return v


class HistoryRecorder:
    """Incrementally builds padded history snapshots during a rollout."""

    def __init__(self, names, window):
        self.names = tuple(names)
        self.window = window
        self._rows = []       # one list per step, the observation tuples
        self._actions = []

    def observe(self, obs):
        self._rows.append(tuple(float(v) for v in obs))

    def act(self, action):
        self._actions.append(tuple(float(v) for v in action))

    def snapshot(self):
        """History of the last window+1 steps, front-padded at episode start."""
        width = self.window + 1
        rows = self._rows[-width:]
        if len(rows) < width:
            rows = [rows[0]] * (width - len(rows)) + rows
        data = np.array(rows, dtype=float).T
        acts = np.array(self._actions[-self.window:], dtype=float) \
            if self._actions else None
        return History(self.names, data, acts)


def rollout(env, policy, seed, window=5):
    """Run one episode driving ``env`` with ``policy(history) -> action``.

    Returns the :class:`EpisodeTrace`. Histories handed to the policy are
    front-padded so the window precondition holds from the first step.
    """
    obs = env.reset(seed)
    rec = HistoryRecorder(env.channel_names, window)
    rec.observe(obs)
    trace = EpisodeTrace(env=env.name, seed=seed,
                         channel_names=env.channel_names, gamma=env.gamma)
    # policies that only read the latest observation skip snapshot building
    obs_fn = getattr(policy, "wants_obs", None)
    done = False
    while not done:
        action = obs_fn(rec._rows[-1]) if obs_fn else policy(rec.snapshot())
        if isinstance(env.action_space, DiscreteSpace):
            recorded = (float(action),)
            step_action = action
        else:
            recorded = tuple(float(a) for a in action)
            step_action = recorded
        obs, reward, done = env.step(step_action)
        trace.observations.append(rec._rows[-1])
        trace.actions.append(recorded)
        trace.rewards.append(float(reward))
        rec.act(recorded)
        rec.observe(obs)
    trace.terminal = env.terminal_reason
    trace.info = env.episode_info()
    return trace
