"""History-to-action oracles and the imitation dataset.

An :class:`OracleRef` wraps any deterministic ``History -> action`` function:
hand-written experts, a small network trained by the cross-entropy method,
a replayed trace (nearest stored observation), or a policy program. Oracles
are queried while building the imitation dataset and when labeling states a
candidate program visits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, TrainingFailedError
from .envs import (BoxSpace, DiscreteSpace, EpisodeTrace, HistoryRecorder,
                   rollout)
from .lang import History, evaluate, evaluate_discrete


@dataclass
class OracleRef:
    """A deterministic policy usable as an imitation target."""

    query: object            # callable History -> action (tuple or int label)
    kind: str                # scripted | network | trace | program
    env_name: str
    metadata: dict = field(default_factory=dict)
    wants: str = "history"   # 'obs' marks latest-observation policies
    query_obs: object = None  # fast path used by rollouts when wants == 'obs'
    rollout_policy: object = None  # when driving the env needs e.g. clipping

    def policy(self):
        """The callable to hand to :func:`progpol.envs.rollout`."""
        if self.rollout_policy is not None:
            return self.rollout_policy
        if self.wants == "obs" and self.query_obs is not None:
            fn = lambda h: self.query_obs(tuple(h.data[:, -1]))  # noqa: E731
            fn.wants_obs = self.query_obs
            return fn
        return self.query


def program_policy(program, action_space):
    """Adapt a program to an environment policy (clipping continuous output)."""
    if isinstance(action_space, DiscreteSpace):
        labels = action_space.labels
        return lambda h: evaluate_discrete(program, h, labels)
    return lambda h: action_space.clip(evaluate(program, h))


def program_oracle(program, env):
    """Wrap a program as an oracle (used by planted-recovery experiments).

    ``query`` answers the program's raw evaluation (discrete programs answer
    their label); driving the environment goes through the clipping adapter.
    """
    if isinstance(env.action_space, DiscreteSpace):
        query = program_policy(program, env.action_space)
    else:
        query = lambda h: evaluate(program, h)  # noqa: E731
    return OracleRef(query=query, kind="program", env_name=env.name,
                     metadata={"window": program.window},
                     rollout_policy=program_policy(program, env.action_space))


def random_baseline(env, episodes=20, seed=10_007):
    """Mean return of the uniform-random policy (the scripted-random bar)."""
    rng = np.random.default_rng(seed)
    total = 0.0
    for i in range(episodes):
        if isinstance(env.action_space, DiscreteSpace):
            labels = env.action_space.labels
            policy = lambda h: labels[rng.integers(len(labels))]  # noqa: E731
        else:
            low = np.array(env.action_space.low)
            high = np.array(env.action_space.high)
            policy = lambda h: tuple(rng.uniform(low, high))  # noqa: E731
        total += rollout(env, policy, seed=int(rng.integers(2 ** 31))).undiscounted_return
    return total / episodes


# --- scripted experts --------------------------------------------------------

def _cartpole_expert(obs):
    x, x_dot, theta, theta_dot = obs
    return 1 if theta + 0.5 * theta_dot > 0 else 0


def _mountaincar_expert(obs):
    position, velocity = obs
    return 2 if velocity > 0 else 0


def _acrobot_expert(obs):
    w1 = obs[4]
    return 0 if w1 > 0 else 2


def _lanekeep_expert(obs):
    d, phi, v, _rpm = obs
    steer = max(-1.0, min(1.0, -1.2 * d - 1.5 * phi))
    accel = 1.0 if v < 14.0 else 0.3
    return (steer, accel)


_EXPERTS = {
    "cartpole": _cartpole_expert,
    "mountaincar": _mountaincar_expert,
    "acrobot": _acrobot_expert,
    "lanekeep": _lanekeep_expert,
}


def scripted_expert(env_name):
    """Closed-form expert for a known environment name."""
    base = env_name.split(":")[0]
    if base not in _EXPERTS:
        raise ConfigError(f"no scripted expert for {env_name!r}; "
                          f"have {sorted(_EXPERTS)}")
    fn = _EXPERTS[base]
    return OracleRef(query=lambda h: fn(tuple(h.data[:, -1])),
                     kind="scripted", env_name=env_name,
                     wants="obs", query_obs=fn)


# --- network oracle (cross-entropy method) -----------------------------------

_OBS_SCALES = {
    "cartpole": (2.4, 3.0, 0.21, 3.0),
    "mountaincar": (1.2, 0.07),
    "acrobot": (1.0, 1.0, 1.0, 1.0, 4 * math.pi, 9 * math.pi),
    "lanekeep": (1.0, 1.6, 20.0, 1.0),
}


@dataclass
class OracleHyper:
    hidden: int = 16
    population: int = 32
    elite_frac: float = 0.25
    iterations: int = 30
    episodes_per_eval: int = 3
    sigma_init: float = 1.0
    extra_noise: float = 0.1
    eval_episodes: int = 20
    seed: int = 0


class PolicyNet:
    """One-hidden-layer tanh network over the (scaled) latest observation."""

    def __init__(self, n_in, hidden, n_out, scales, head, labels=None,
                 low=None, high=None):
        self.n_in, self.hidden, self.n_out = n_in, hidden, n_out
        self.scales = np.asarray(scales, dtype=float)
        self.head = head  # 'discrete' or 'box'
        self.labels = labels
        self.low = None if low is None else np.asarray(low, dtype=float)
        self.high = None if high is None else np.asarray(high, dtype=float)
        self.theta = np.zeros(self.n_params)

    @property
    def n_params(self):
        return (self.n_in + 1) * self.hidden + (self.hidden + 1) * self.n_out

    def _unpack(self):
        t = self.theta
        k = self.n_in * self.hidden
        w1 = t[:k].reshape(self.hidden, self.n_in)
        b1 = t[k:k + self.hidden]
        k += self.hidden
        w2 = t[k:k + self.hidden * self.n_out].reshape(self.n_out, self.hidden)
        b2 = t[k + self.hidden * self.n_out:]
        return w1, b1, w2, b2

    def act(self, obs):
        w1, b1, w2, b2 = self._unpack()
        x = np.asarray(obs, dtype=float) / self.scales
        z = w2 @ np.tanh(w1 @ x + b1) + b2
        if self.head == "discrete":
            return self.labels[int(np.argmax(z))]
        squashed = (np.tanh(z) + 1.0) / 2.0
        return tuple(self.low + squashed * (self.high - self.low))


def _net_for(env, hidden):
    base = env.name.split(":")[0]
    scales = _OBS_SCALES.get(base, (1.0,) * len(env.channel_names))
    n_in = len(env.channel_names)
    if isinstance(env.action_space, DiscreteSpace):
        labels = env.action_space.labels
        return PolicyNet(n_in, hidden, len(labels), scales, "discrete",
                         labels=labels)
    return PolicyNet(n_in, hidden, len(env.action_space.low), scales, "box",
                     low=env.action_space.low, high=env.action_space.high)


def _mean_return(env, net, seeds):
    total = 0.0
    for s in seeds:
        total += rollout(env, _obs_rollout_policy(net), seed=int(s)).undiscounted_return
    return total / len(seeds)


def _obs_rollout_policy(net):
    fn = lambda h: net.act(tuple(h.data[:, -1]))  # noqa: E731
    fn.wants_obs = net.act
    return fn


def train_network_oracle(env, hyper: OracleHyper = None):
    """Cross-entropy training of a small policy network.

    Deterministic given ``hyper.seed``. With a nonzero iteration budget the
    returned oracle must beat the random baseline or training fails; a zero
    budget returns the untrained policy flagged ``beats_baseline=False``.
    """
    hyper = hyper or OracleHyper()
    rng = np.random.default_rng(hyper.seed)
    net = _net_for(env, hyper.hidden)
    dim = net.n_params
    mean = np.zeros(dim)
    sigma = np.full(dim, hyper.sigma_init)
    n_elite = max(1, int(hyper.population * hyper.elite_frac))
    best_theta, best_score = mean.copy(), -np.inf
    history = []
    for it in range(hyper.iterations):
        seeds = rng.integers(2 ** 31, size=hyper.episodes_per_eval)
        pop = mean + sigma * rng.standard_normal((hyper.population, dim))
        scores = np.empty(hyper.population)
        for i in range(hyper.population):
            net.theta = pop[i]
            scores[i] = _mean_return(env, net, seeds)
        elite = pop[np.argsort(scores)[-n_elite:]]
        mean = elite.mean(axis=0)
        decay = hyper.extra_noise * max(0.0, 1.0 - it / max(1, hyper.iterations))
        sigma = elite.std(axis=0) + decay
        gen_best = float(scores.max())
        history.append(gen_best)
        if gen_best > best_score:
            best_score = gen_best
            best_theta = pop[int(np.argmax(scores))].copy()

    eval_seeds = rng.integers(2 ** 31, size=hyper.eval_episodes)
    candidates = [mean, best_theta] if hyper.iterations else [mean]
    evals = []
    for theta in candidates:
        net.theta = theta
        evals.append(_mean_return(env, net, eval_seeds))
    pick = int(np.argmax(evals))
    net.theta = candidates[pick].copy()
    mean_return = evals[pick]

    baseline = random_baseline(env)
    beats = mean_return > baseline
    if hyper.iterations and not beats:
        raise TrainingFailedError(
            f"network oracle did not beat the random baseline {baseline:.2f} "
            f"on {env.name}", mean_return)
    oracle = OracleRef(query=_obs_rollout_policy(net), kind="network",
                       env_name=env.name,
                       metadata={"seed": hyper.seed, "iterations": hyper.iterations,
                                 "mean_return": mean_return, "baseline": baseline,
                                 "beats_baseline": beats,
                                 "generation_best": history},
                       wants="obs", query_obs=net.act)
    oracle.net = net
    return oracle


# --- trace-replay oracle -------------------------------------------------------

def trace_oracle(traces, env_name=None):
    """Oracle that replays recorded actions by nearest stored observation."""
    obs, acts = [], []
    for tr in traces:
        obs.extend(tr.observations)
        acts.extend(tr.actions)
    if not obs:
        raise ConfigError("trace oracle needs at least one recorded step")
    obs_arr = np.asarray(obs, dtype=float)
    scale = np.maximum(obs_arr.std(axis=0), 1e-9)
    scaled = obs_arr / scale
    act_arr = np.asarray(acts, dtype=float)
    discrete = act_arr.shape[1] == 1 and np.all(act_arr == np.round(act_arr))

    def query_obs(o):
        q = np.asarray(o, dtype=float) / scale
        idx = int(np.argmin(((scaled - q) ** 2).sum(axis=1)))
        a = act_arr[idx]
        return int(a[0]) if discrete else tuple(a)

    return OracleRef(query=lambda h: query_obs(tuple(h.data[:, -1])),
                     kind="trace", env_name=env_name or traces[0].env,
                     metadata={"pairs": len(obs)}, wants="obs",
                     query_obs=query_obs)


# --- oracle checkpoints ---------------------------------------------------------

def save_oracle(oracle: OracleRef, path):
    """Flat text checkpoint: layer sizes plus row-major weights."""
    net = getattr(oracle, "net", None)
    if net is None:
        raise ConfigError("only network oracles serialize to checkpoints")
    lines = [f"oracle env={oracle.env_name} head={net.head} "
             f"inputs={net.n_in} hidden={net.hidden} outputs={net.n_out}"]
    lines.append("scales " + " ".join(repr(float(v)) for v in net.scales))
    if net.head == "discrete":
        lines.append("labels " + " ".join(str(int(v)) for v in net.labels))
    else:
        lines.append("low " + " ".join(repr(float(v)) for v in net.low))
        lines.append("high " + " ".join(repr(float(v)) for v in net.high))
    lines.append("theta " + " ".join(repr(float(v)) for v in net.theta))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_oracle(path):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("oracle "):
        raise ConfigError(f"{path} is not an oracle checkpoint")
    head_fields = dict(part.split("=", 1) for part in lines[0].split()[1:])
    parts = {ln.split()[0]: ln.split()[1:] for ln in lines[1:]}
    head = head_fields["head"]
    net = PolicyNet(
        int(head_fields["inputs"]), int(head_fields["hidden"]),
        int(head_fields["outputs"]),
        [float(v) for v in parts["scales"]], head,
        labels=tuple(int(v) for v in parts.get("labels", ())) or None,
        low=[float(v) for v in parts["low"]] if "low" in parts else None,
        high=[float(v) for v in parts["high"]] if "high" in parts else None)
    net.theta = np.array([float(v) for v in parts["theta"]])
    oracle = OracleRef(query=_obs_rollout_policy(net), kind="network",
                       env_name=head_fields["env"], wants="obs",
                       query_obs=net.act)
    oracle.net = net
    return oracle


# --- the imitation dataset -------------------------------------------------------

@dataclass
class DatasetPair:
    history: History
    action: tuple
    provenance: str   # 'oracle' or 'augment:<round>'
    key: tuple


class Dataset:
    """Deduplicated (history, oracle action) pairs with bounded size.

    When the cap is exceeded the oldest oracle-rollout pairs are dropped;
    augmentation pairs are the states the search actually needs guidance on,
    so they are never evicted.
    """

    def __init__(self, cap=20_000):
        self.cap = cap
        self.pairs = []
        self._keys = set()
        self._slots_cache = {}

    def __len__(self):
        return len(self.pairs)

    def add(self, pair: DatasetPair):
        if pair.key in self._keys:
            return False
        self.pairs.append(pair)
        self._keys.add(pair.key)
        self._slots_cache.clear()
        if len(self.pairs) > self.cap:
            for i, p in enumerate(self.pairs):
                if p.provenance == "oracle":
                    self._keys.discard(p.key)
                    del self.pairs[i]
                    break
            else:
                self._keys.discard(self.pairs[0].key)
                del self.pairs[0]
        return True

    def extend(self, pairs):
        return sum(self.add(p) for p in pairs)

    def slots(self, names, width):
        """(N, channels, width) tensor of the last readings, cached."""
        key = (tuple(names), width)
        if key not in self._slots_cache:
            from .lang import slots_tensor
            self._slots_cache[key] = (
                slots_tensor([p.history for p in self.pairs], names, width),
                np.asarray([p.action for p in self.pairs], dtype=float))
        return self._slots_cache[key]

    def dump(self):
        lines = [f"dataset pairs={len(self.pairs)}"]
        for p in self.pairs:
            chans = ";".join(
                f"{n}:" + ",".join(repr(float(v)) for v in p.history.channel(n))
                for n in p.history.names)
            act = ",".join(repr(float(v)) for v in p.action)
            key = ",".join(str(k) for k in p.key)
            lines.append(f"pair prov={p.provenance} key={key} act={act} {chans}")
        return "\n".join(lines) + "\n"


def trace_snapshots(trace: EpisodeTrace, window):
    """Padded history prefixes, one per step of the trace."""
    rec = HistoryRecorder(trace.channel_names, window)
    for obs, act in zip(trace.observations, trace.actions):
        rec.observe(obs)
        yield rec.snapshot()
        rec.act(act)


def _as_action_tuple(a):
    return (float(a),) if np.isscalar(a) else tuple(float(v) for v in a)


def create_histories(oracle: OracleRef, env, episodes, seed=0, window=5,
                     dataset=None):
    """Roll out the oracle and emit one (history prefix, action) pair per step.

    The stored action is the oracle's answer on the prefix. For most oracles
    that is exactly the action driven into the environment; program oracles
    may answer outside the action box (the rollout clips), and the raw answer
    is the imitation target.
    """
    if episodes < 1:
        raise ConfigError("episodes must be >= 1")
    ds = dataset if dataset is not None else Dataset()
    ss = np.random.SeedSequence(seed)
    for ep, child in enumerate(ss.spawn(episodes)):
        ep_seed = int(child.generate_state(1)[0]) & 0x7FFFFFFF
        trace = rollout(env, oracle.policy(), seed=ep_seed, window=window)
        for i, snap in enumerate(trace_snapshots(trace, window)):
            ds.add(DatasetPair(history=snap,
                               action=_as_action_tuple(oracle.query(snap)),
                               provenance="oracle",
                               key=("oracle", ep_seed, i)))
    return ds


def label_with_oracle(oracle: OracleRef, trace: EpisodeTrace, window=5,
                      round_tag=0, dataset=None):
    """Label every state of a program trace with the oracle's action."""
    ds = dataset if dataset is not None else Dataset()
    for i, snap in enumerate(trace_snapshots(trace, window)):
        action = _as_action_tuple(oracle.query(snap))
        ds.add(DatasetPair(history=snap, action=action,
                           provenance=f"augment:{round_tag}",
                           key=("augment", trace.seed, i, round_tag)))
    return ds
