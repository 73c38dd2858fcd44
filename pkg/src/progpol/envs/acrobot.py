"""Two-link underactuated arm (swing-up).

Standard two-link pendulum dynamics with torque {-1, 0, +1} applied at the
joint between the links, RK4-integrated at 0.2 s per step. Observations are
(cos t1, sin t1, cos t2, sin t2, w1, w2). Reward -1 per step until the free
end swings above the bar (-cos t1 - cos(t1 + t2) > 1), with a 200-step cap.
"""

import math

import numpy as np

from .base import ChannelId, DiscreteSpace, Pomdp

DT = 0.2
M1 = M2 = 1.0
L1 = 1.0
LC1 = LC2 = 0.5
I1 = I2 = 1.0
G = 9.8
W1_MAX = 4 * math.pi
W2_MAX = 9 * math.pi
TORQUES = (-1.0, 0.0, 1.0)


def _dynamics(state, torque):
    t1, t2, w1, w2 = state
    d1 = M1 * LC1 ** 2 + M2 * (L1 ** 2 + LC2 ** 2 + 2 * L1 * LC2 * math.cos(t2)) + I1 + I2
    d2 = M2 * (LC2 ** 2 + L1 * LC2 * math.cos(t2)) + I2
    phi2 = M2 * LC2 * G * math.cos(t1 + t2 - math.pi / 2)
    phi1 = (-M2 * L1 * LC2 * w2 ** 2 * math.sin(t2)
            - 2 * M2 * L1 * LC2 * w2 * w1 * math.sin(t2)
            + (M1 * LC1 + M2 * L1) * G * math.cos(t1 - math.pi / 2)
            + phi2)
    ddw2 = ((torque + d2 / d1 * phi1
             - M2 * L1 * LC2 * w1 ** 2 * math.sin(t2) - phi2)
            / (M2 * LC2 ** 2 + I2 - d2 ** 2 / d1))
    ddw1 = -(d2 * ddw2 + phi1) / d1
    return np.array([w1, w2, ddw1, ddw2])


def _rk4(state, torque):
    y = np.asarray(state, dtype=float)
    k1 = _dynamics(y, torque)
    k2 = _dynamics(y + DT / 2 * k1, torque)
    k3 = _dynamics(y + DT / 2 * k2, torque)
    k4 = _dynamics(y + DT * k3, torque)
    return y + DT / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _wrap(angle):
    return (angle + math.pi) % (2 * math.pi) - math.pi


class Acrobot(Pomdp):
    name = "acrobot"
    channels = (ChannelId("cos1", 0), ChannelId("sin1", 1),
                ChannelId("cos2", 2), ChannelId("sin2", 3),
                ChannelId("w1", 4), ChannelId("w2", 5))
    action_space = DiscreteSpace((0, 1, 2))  # torque -1 / 0 / +1
    horizon = 200

    def _obs(self):
        t1, t2, w1, w2 = self._state
        return (math.cos(t1), math.sin(t1), math.cos(t2), math.sin(t2), w1, w2)

    def _reset(self, rng):
        self._state = tuple(rng.uniform(-0.1, 0.1, size=4))
        return self._obs()

    def _step(self, action):
        torque = TORQUES[int(action)]
        t1, t2, w1, w2 = _rk4(self._state, torque)
        t1 = _wrap(t1)
        t2 = _wrap(t2)
        w1 = min(max(w1, -W1_MAX), W1_MAX)
        w2 = min(max(w2, -W2_MAX), W2_MAX)
        self._state = (t1, t2, w1, w2)
        up = -math.cos(t1) - math.cos(t2 + t1) > 1.0
        reward = 0.0 if up else -1.0
        return self._obs(), reward, up, "goal" if up else None
