"""Lane-keeping car on a one-dimensional track.

The car lives in track coordinates: arc position ``s`` along the centerline,
lateral offset ``d`` in [-1, 1] track half-widths, heading error ``phi``, and
speed ``v``. A track is a piecewise-constant curvature profile over ``s``.
Per step (dt = 0.1 s):

    s   += dt * v * cos(phi)
    d   += dt * v * sin(phi + K_STEER * steer)
    phi += dt * v * (K_HEAD * steer - kappa(s))
    v   += dt * (K_ACCEL * accel - DRAG * v)

Observations are TrackPos (= d), Angle (= phi), Speed (= v), and RPM
(= v / V_MAX). Actions are steer in [-1, 1] and accel in [0, 1]. The episode
ends on a completed lap, a crash (|d| >= 1, or |phi| >= pi/2 which spins the
car off line), or the step cap. Per-step reward is v*cos(phi) - v*|d|, so
fast, centered, well-aligned driving pays. Starting pose is jittered by the
seed, which is the only stochasticity.
"""

import math
from dataclasses import dataclass

from ..errors import ConfigError
from .base import BoxSpace, ChannelId, Pomdp

DT = 0.1
V_MAX = 20.0
K_STEER = 0.3
K_HEAD = 0.25
K_ACCEL = 4.0
DRAG = 0.25
V_START = 5.0


@dataclass(frozen=True)
class Track:
    """Piecewise-constant curvature profile; curvature in 1/m."""

    name: str
    segments: tuple  # ((length_m, curvature), ...)

    @property
    def length(self):
        return sum(seg[0] for seg in self.segments)

    def curvature(self, s):
        for seg_len, kappa in self.segments:
            if s < seg_len:
                return kappa
            s -= seg_len
        return self.segments[-1][1]


TRACKS = {
    # gentle sweepers: trainable by a coarse controller at speed
    "speedway": Track("speedway", (
        (120, 0.0), (140, 0.006), (80, 0.0), (140, -0.006),
        (120, 0.0), (160, 0.005), (40, 0.0))),
    "rally": Track("rally", (
        (80, 0.0), (100, 0.010), (60, -0.012), (90, 0.0),
        (120, 0.008), (60, -0.010), (90, 0.0))),
    # tight alternating corners: punish overshoot and sloppy gains
    "chicane": Track("chicane", (
        (60, 0.0), (40, 0.030), (30, -0.032), (40, 0.028), (50, 0.0),
        (35, -0.036), (35, 0.034), (60, 0.0), (45, -0.028), (45, 0.030),
        (55, 0.0))),
    "serpent": Track("serpent", (
        (50, 0.0), (45, 0.028), (40, -0.034), (50, 0.026), (40, 0.0),
        (40, -0.036), (45, 0.032), (35, -0.028), (60, 0.0), (50, 0.028),
        (45, -0.024), (50, 0.0))),
}


class LaneKeep(Pomdp):
    name = "lanekeep"
    channels = (ChannelId("TrackPos", 0), ChannelId("Angle", 1),
                ChannelId("Speed", 2), ChannelId("RPM", 3))
    action_space = BoxSpace(names=("steer", "accel"),
                            low=(-1.0, 0.0), high=(1.0, 1.0))
    horizon = 700

    def __init__(self, track="speedway", horizon=None):
        super().__init__()
        if isinstance(track, str):
            if track not in TRACKS:
                raise ConfigError(f"unknown track {track!r}; have {sorted(TRACKS)}")
            track = TRACKS[track]
        self.track = track
        self.name = f"lanekeep:{track.name}"
        if horizon is not None:
            self.horizon = horizon

    def _obs(self):
        return (self._d, self._phi, self._v, self._v / V_MAX)

    def _reset(self, rng):
        self._s = 0.0
        self._d = rng.uniform(-0.15, 0.15)
        self._phi = rng.uniform(-0.05, 0.05)
        self._v = V_START
        return self._obs()

    def _step(self, action):
        steer, accel = float(action[0]), float(action[1])
        kappa = self.track.curvature(self._s)
        self._s += DT * self._v * math.cos(self._phi)
        self._d += DT * self._v * math.sin(self._phi + K_STEER * steer)
        self._phi += DT * self._v * (K_HEAD * steer - kappa)
        self._v = min(max(self._v + DT * (K_ACCEL * accel - DRAG * self._v),
                          0.0), V_MAX)
        reward = self._v * math.cos(self._phi) - self._v * abs(self._d)
        if abs(self._d) >= 1.0 or abs(self._phi) >= math.pi / 2:
            return self._obs(), reward, True, "crash"
        if self._s >= self.track.length:
            return self._obs(), reward, True, "lap"
        return self._obs(), reward, False, None

    def episode_info(self):
        return {"distance": min(self._s, self.track.length),
                "lap": self.terminal_reason == "lap"}


def lane_metrics(trace):
    """(distance_raced, lap_complete, steer_stddev) for a lane-keeping trace."""
    distance = float(trace.info.get("distance", 0.0))
    lap = bool(trace.info.get("lap", False))
    steers = [a[0] for a in trace.actions]
    if steers:
        mean = sum(steers) / len(steers)
        var = sum((x - mean) ** 2 for x in steers) / len(steers)
    else:
        var = 0.0
    return distance, lap, math.sqrt(var)
