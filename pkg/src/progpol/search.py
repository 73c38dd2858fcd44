"""Oracle-directed program search.

The driver builds an imitation dataset from the oracle, initializes from the
best of the shortest fitted templates, then iterates: grow the dataset with
oracle labels along the current program's own trajectories, fit a structural
neighborhood of the current program, take the distance-argmin candidate, and
accept it only on strict reward improvement (common rollout seeds across all
comparisons). Among accepted programs whose rewards are within the tie
window, the simplest (fewest If nodes) is returned.

Ablation flags: ``naive`` replaces imitation distance by direct reward search
(no oracle at all); ``no_aug`` freezes the dataset after creation;
``no_sketch`` draws from the unrestricted bounded-depth grammar; ``no_if``
forbids branching.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, NoCandidateError, ProgpolError
from .fit import FitProblem, FitResult, _gp_minimize, fit_template
from .lang import format_program, if_count, program_size
from .oracle import (Dataset, create_histories, label_with_oracle,
                     program_policy)
from .envs import DiscreteSpace, lane_metrics, rollout, wrap_blocking
from .sketch import Sketch, enumerate_templates, neighborhood_pool


@dataclass
class SearchConfig:
    sketch: Sketch
    oracle_episodes: int = 10
    augment_episodes: int = 2
    neighborhood_width: int = 8
    fit_backend: str = "auto"
    fit_budget: int = 60
    init_pool: int = 5
    init_enum_budget: int = 12
    reward_rollouts: int = 3
    max_rounds: int = 8
    timeout: float = 12 * 3600.0
    tie_window: float = 1.0
    naive: bool = False
    no_aug: bool = False
    no_sketch: bool = False
    no_if: bool = False
    seed: int = 0
    dataset_cap: int = 20_000
    naive_fit_budget: int = 16

    def __post_init__(self):
        for name in ("oracle_episodes", "augment_episodes", "neighborhood_width",
                     "fit_budget", "init_pool", "init_enum_budget",
                     "reward_rollouts", "max_rounds"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.timeout <= 0:
            raise ConfigError("timeout must be positive")

    def effective_sketch(self):
        s = self.sketch
        if self.no_if:
            s = replace(s, max_if_depth=0)
        if self.no_sketch:
            s = Sketch(kind="free", channels=s.channels, window=s.window,
                       max_if_depth=min(s.max_if_depth, 3),
                       action_names=s.action_names, action_set=s.action_set,
                       bounds=s.bounds, channel_order=s.channel_order)
        return s

    def summary(self):
        flags = [k for k in ("naive", "no_aug", "no_sketch", "no_if")
                 if getattr(self, k)]
        return {"seed": self.seed, "sketch": self.sketch.kind,
                "ablations": ",".join(flags) or "none",
                "rounds": self.max_rounds, "width": self.neighborhood_width,
                "fit_budget": self.fit_budget, "backend": self.fit_backend,
                "oracle_episodes": self.oracle_episodes,
                "augment_episodes": self.augment_episodes,
                "reward_rollouts": self.reward_rollouts,
                "tie_window": self.tie_window}


@dataclass
class RoundLog:
    round: int
    kind: str            # init | search
    candidates: int
    best_distance: float
    reward: float
    hist_size: int
    accepted: bool
    if_nodes: int
    origin: str = ""


@dataclass
class SearchReport:
    best_program: object
    best_reward: float
    rounds: list = field(default_factory=list)
    termination: str = "converged"
    config: dict = field(default_factory=dict)
    elapsed: float = 0.0
    accepted_rewards: list = field(default_factory=list)

    def to_lines(self):
        cfg = " ".join(f"{k}={v}" for k, v in self.config.items())
        lines = [f"report termination={self.termination} "
                 f"best_reward={self.best_reward!r} rounds={len(self.rounds)}",
                 f"config {cfg}"]
        for r in self.rounds:
            lines.append(
                f"round {r.round} kind={r.kind} candidates={r.candidates} "
                f"best_distance={r.best_distance!r} reward={r.reward!r} "
                f"hist={r.hist_size} accepted={int(r.accepted)} "
                f"ifs={r.if_nodes} origin={r.origin}")
        return lines

    def dump(self):
        return "\n".join(self.to_lines()) + "\n"


def _policy_for(program, env):
    return program_policy(program, env.action_space)


def collect_reward(program_or_policy, env, rollouts=3, seed=0, seeds=None,
                   window=5):
    """Mean undiscounted return over seeded episodes.

    A policy evaluation error inside an episode scores that episode as if the
    agent had crashed at that step (idle reward for the remaining steps), not
    as an exception.
    """
    if seeds is None:
        ss = np.random.SeedSequence(seed)
        seeds = [int(c.generate_state(1)[0]) & 0x7FFFFFFF
                 for c in ss.spawn(rollouts)]
    policy = program_or_policy if callable(program_or_policy) \
        else _policy_for(program_or_policy, env)
    total = 0.0
    for s in seeds:
        total += _episode_score(env, policy, s, window)
    return total / len(seeds)


def _idle_step_reward(env):
    base = env.name.split(":")[0]
    return -1.0 if base in ("mountaincar", "acrobot") else 0.0


def _episode_score(env, policy, seed, window):
    obs = env.reset(seed)
    from .envs.base import HistoryRecorder
    rec = HistoryRecorder(env.channel_names, window)
    rec.observe(obs)
    score = 0.0
    steps = 0
    done = False
    while not done:
        try:
            action = policy(rec.snapshot())
        except ProgpolError:
            score += _idle_step_reward(env) * (env.horizon - steps)
            return score
        obs, reward, done = env.step(action)
        score += reward
        steps += 1
        rec.act(action if not np.isscalar(action) else (action,))
        rec.observe(obs)
    return score


def _fit_by_reward(template, env, cfg, reward_seeds, seed):
    """Naive-mode fitting: parameters chosen by direct reward search."""
    rng = np.random.default_rng(seed)
    window = cfg.sketch.window
    best = None
    d = len(template.real_holes)
    budget = max(d + 2, cfg.naive_fit_budget)
    for assign in template.discrete_assignments():
        def f(theta, _assign=assign):
            try:
                prog = template.instantiate(theta, _assign)
            except ConfigError:
                return np.inf
            return -collect_reward(prog, env, seeds=reward_seeds, window=window)
        if d == 0:
            y = f(())
            if best is None or y < best[0]:
                best = (y, (), assign)
            continue
        x, y, _hist = _gp_minimize(f, template.bounds(), budget, rng)
        if best is None or y < best[0]:
            best = (y, tuple(float(v) for v in x), assign)
    y, theta, assign = best
    return FitResult(theta=theta, assignment=assign, distance=float(y),
                     evaluations=budget)


def _fit_candidates(templates, cfg, env, dataset, reward_seeds, seed_base):
    """Fit every template; returns (program, result, template) triples."""
    out = []
    discrete = isinstance(env.action_space, DiscreteSpace)
    for i, t in enumerate(templates):
        try:
            if cfg.naive:
                res = _fit_by_reward(t, env, cfg, reward_seeds, seed_base + i)
            else:
                problem = FitProblem(
                    template=t, dataset=dataset,
                    channel_names=env.channel_names, window=cfg.sketch.window,
                    discrete=discrete, budget=cfg.fit_budget,
                    action_set=env.action_space.labels if discrete else ())
                res = fit_template(problem, seed=seed_base + i,
                                   backend=cfg.fit_backend)
            prog = t.instantiate(res.theta, res.assignment)
        except (ProgpolError, np.linalg.LinAlgError):
            continue
        out.append((prog, res, t))
    return out


def _objective_value(res: FitResult):
    if res.distance is not None:
        return res.distance
    return -float(res.agreement)


def _selection_key(res: FitResult, prog):
    # distances at floating-point zero tie, letting simpler programs win
    d = _objective_value(res)
    bucket = 0.0 if abs(d) <= 1e-9 else d
    return (bucket, if_count(prog), program_size(prog))


def initialize(oracle, dataset, env, sketch, cfg: SearchConfig, reward_seeds,
               seed=0):
    """Best-of-pool initialization: fit shortest templates, keep the best
    few by distance, simulate those, return the reward argmax."""
    templates = enumerate_templates(sketch, base=None,
                                    budget=cfg.init_enum_budget, seed=seed)
    if not templates:
        raise NoCandidateError(f"sketch {sketch.kind!r} produced no templates")
    fitted = _fit_candidates(templates, cfg, env, dataset, reward_seeds, seed)
    if not fitted:
        raise NoCandidateError("no template could be fitted")
    fitted.sort(key=lambda pr: _selection_key(pr[1], pr[0]))
    pool = fitted[:cfg.init_pool]
    scored = []
    for prog, res, t in pool:
        r = collect_reward(prog, env, seeds=reward_seeds,
                           window=cfg.sketch.window)
        scored.append((r, prog, res))
    scored.sort(key=lambda x: (-x[0], if_count(x[1]), program_size(x[1])))
    r, prog, res = scored[0]
    return prog, res, r, len(templates)


def synthesize(cfg: SearchConfig, env, oracle):
    """Run the full search; see module docstring. Returns a SearchReport."""
    start = time.monotonic()
    sketch = cfg.effective_sketch()
    window = cfg.sketch.window
    ss = np.random.SeedSequence(cfg.seed)
    children = ss.spawn(4 + cfg.reward_rollouts)
    seeds = children[:4]
    reward_seeds = [int(c.generate_state(1)[0]) & 0x7FFFFFFF
                    for c in children[4:]]
    aug_rng = np.random.default_rng(seeds[1])
    report = SearchReport(best_program=None, best_reward=-np.inf,
                          config=cfg.summary())

    dataset = Dataset(cap=cfg.dataset_cap)
    if not cfg.naive:
        create_histories(oracle, env, cfg.oracle_episodes,
                         seed=int(seeds[0].generate_state(1)[0]) & 0x7FFFFFFF,
                         window=window, dataset=dataset)

    current, fit_cur, reward_cur, n_templates = initialize(
        oracle, dataset, env, sketch, cfg, reward_seeds,
        seed=int(seeds[2].generate_state(1)[0]) & 0x7FFFFFFF)
    report.rounds.append(RoundLog(
        round=0, kind="init", candidates=n_templates,
        best_distance=_objective_value(fit_cur), reward=reward_cur,
        hist_size=len(dataset), accepted=True, if_nodes=if_count(current)))
    accepted = [(current, reward_cur)]

    termination = "budget"
    for k in range(1, cfg.max_rounds + 1):
        if time.monotonic() - start > cfg.timeout:
            termination = "timeout"
            break
        if not (cfg.naive or cfg.no_aug):
            for _ in range(cfg.augment_episodes):
                ep_seed = int(aug_rng.integers(2 ** 31))
                trace = rollout(env, _policy_for(current, env), seed=ep_seed,
                                window=window)
                label_with_oracle(oracle, trace, window=window, round_tag=k,
                                  dataset=dataset)
        pool = neighborhood_pool(current, sketch,
                                 width=cfg.neighborhood_width,
                                 seed=cfg.seed * 1009 + k)
        fitted = _fit_candidates(pool, cfg, env, dataset, reward_seeds,
                                 seed_base=cfg.seed * 7919 + 97 * k)
        if not fitted:
            termination = "converged"
            break
        fitted.sort(key=lambda pr: _selection_key(pr[1], pr[0]))
        chosen, res, tpl = fitted[0]
        reward_new = collect_reward(chosen, env, seeds=reward_seeds,
                                    window=window)
        improved = reward_new > reward_cur
        report.rounds.append(RoundLog(
            round=k, kind="search", candidates=len(fitted),
            best_distance=_objective_value(res), reward=reward_new,
            hist_size=len(dataset), accepted=improved,
            if_nodes=if_count(chosen), origin=tpl.origin))
        if not improved:
            termination = "converged"
            break
        current, reward_cur = chosen, reward_new
        accepted.append((current, reward_cur))
    else:
        termination = "budget"

    # simplicity tie-break over the accepted sequence: among programs whose
    # reward is within the tie window of the best, return the fewest-If one
    best_r = max(r for _p, r in accepted)
    eligible = [(p, r) for p, r in accepted if r >= best_r - cfg.tie_window]
    eligible.sort(key=lambda pr: (if_count(pr[0]), program_size(pr[0]), -pr[1]))
    report.best_program, report.best_reward = eligible[0]
    report.termination = termination
    report.elapsed = time.monotonic() - start
    report.accepted_rewards = [r for _p, r in accepted]
    return report


def evaluate_policy(policy_like, env, episodes, blocking=None, seed=0,
                    window=5):
    """Per-episode metrics table; optionally under a sensor-blocking config.

    ``blocking`` may be a single BlockingConfig or a list of block
    probabilities paired with a config prototype via ``replace``.
    """
    target = env if blocking is None else wrap_blocking(env, blocking)
    policy = policy_like if callable(policy_like) \
        else _policy_for(policy_like, target)
    rows = []
    ss = np.random.SeedSequence(seed)
    children = ss.spawn(episodes) if episodes else []
    for child in children:
        ep_seed = int(child.generate_state(1)[0]) & 0x7FFFFFFF
        trace = rollout(target, policy, seed=ep_seed, window=window)
        row = {"seed": ep_seed, "return": trace.undiscounted_return,
               "steps": trace.length, "terminal": trace.terminal}
        if env.name.split(":")[0] == "lanekeep":
            dist, lap, stddev = lane_metrics(trace)
            row.update({"distance": dist, "lap": lap, "steer_std": stddev})
        rows.append(row)
    return rows


def summarize(rows, keys=("return", "distance", "steer_std")):
    out = {"episodes": len(rows)}
    for k in keys:
        vals = [r[k] for r in rows if k in r]
        if vals:
            out[f"mean_{k}"] = float(np.mean(vals))
            out[f"std_{k}"] = float(np.std(vals))
    if rows and "lap" in rows[0]:
        out["laps"] = sum(1 for r in rows if r.get("lap"))
    return out
