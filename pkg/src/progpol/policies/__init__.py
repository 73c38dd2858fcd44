"""Bundled example policies (parseable fixtures used in tests and demos)."""

from importlib import resources

from ..lang import parse

NAMES = ("accel_a", "steer_a", "accel_b", "steer_b",
         "acrobot", "cartpole", "mountaincar")


def policy_text(name):
    if name not in NAMES:
        raise KeyError(f"unknown bundled policy {name!r}; have {NAMES}")
    return resources.files(__package__).joinpath(f"{name}.txt").read_text()


def load_policy(name):
    return parse(policy_text(name))
