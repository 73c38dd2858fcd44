"""Underpowered car in a valley.

Position is bounded to [-1.2, 0.6] and velocity to [-0.07, 0.07]; the engine
force is 0.001 per step against a 0.0025 gravity term, so the car must rock
back and forth to gather momentum. Reward -1 per step until the goal position
0.5 is reached, with a 200-step cap.
"""

import math

from .base import ChannelId, DiscreteSpace, Pomdp

MIN_POS, MAX_POS = -1.2, 0.6
MAX_SPEED = 0.07
FORCE = 0.001
GRAVITY = 0.0025
GOAL_POS = 0.5


class MountainCar(Pomdp):
    name = "mountaincar"
    channels = (ChannelId("position", 0), ChannelId("velocity", 1))
    action_space = DiscreteSpace((0, 1, 2))  # push left / coast / push right
    horizon = 200

    def _reset(self, rng):
        self._pos = rng.uniform(-0.6, -0.4)
        self._vel = 0.0
        return (self._pos, self._vel)

    def _step(self, action):
        vel = self._vel + (int(action) - 1) * FORCE \
            + math.cos(3 * self._pos) * (-GRAVITY)
        vel = min(max(vel, -MAX_SPEED), MAX_SPEED)
        pos = min(max(self._pos + vel, MIN_POS), MAX_POS)
        if pos == MIN_POS and vel < 0:
            vel = 0.0
        self._pos, self._vel = pos, vel
        reached = pos >= GOAL_POS
        return (pos, vel), -1.0, reached, "goal" if reached else None
