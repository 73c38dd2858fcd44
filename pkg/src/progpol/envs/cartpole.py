"""Cart-pole balancing.

Euler-integrated cart/pole dynamics: gravity 9.8, cart mass 1.0, pole mass
0.1, pole half-length 0.5, force magnitude 10, step 0.02 s. Reward +1 per
step; the episode ends when the pole passes the angle threshold or the cart
moves more than 2.4 units from the center, with a 200-step cap.

The angle threshold is 12 degrees. Some descriptions of this system quote
15 degrees, but the widely used reference implementation this reproduces
terminates at 12, so that is what we run.
"""

import math

from .base import ChannelId, DiscreteSpace, Pomdp

GRAVITY = 9.8
MASS_CART = 1.0
MASS_POLE = 0.1
TOTAL_MASS = MASS_CART + MASS_POLE
HALF_LENGTH = 0.5
POLE_MASS_LENGTH = MASS_POLE * HALF_LENGTH
FORCE_MAG = 10.0
TAU = 0.02
THETA_LIMIT = 12 * math.pi / 180
X_LIMIT = 2.4


class CartPole(Pomdp):
    name = "cartpole"
    channels = (ChannelId("x", 0), ChannelId("x_dot", 1),
                ChannelId("theta", 2), ChannelId("theta_dot", 3))
    action_space = DiscreteSpace((0, 1))  # push left / push right
    horizon = 200

    def _reset(self, rng):
        self._state = rng.uniform(-0.05, 0.05, size=4)
        return tuple(self._state)

    def _step(self, action):
        x, x_dot, theta, theta_dot = self._state
        force = FORCE_MAG if int(action) == 1 else -FORCE_MAG
        cos = math.cos(theta)
        sin = math.sin(theta)
        temp = (force + POLE_MASS_LENGTH * theta_dot ** 2 * sin) / TOTAL_MASS
        theta_acc = (GRAVITY * sin - cos * temp) / (
            HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * cos ** 2 / TOTAL_MASS))
        x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos / TOTAL_MASS
        x += TAU * x_dot
        x_dot += TAU * x_acc
        theta += TAU * theta_dot
        theta_dot += TAU * theta_acc
        self._state = (x, x_dot, theta, theta_dot)
        fell = abs(x) > X_LIMIT or abs(theta) > THETA_LIMIT
        return tuple(self._state), 1.0, fell, "fall" if fell else None
