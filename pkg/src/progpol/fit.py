"""Fitting template parameters against the imitation dataset.

Continuous templates are fitted by Gaussian-process Bayesian optimization
(squared-exponential kernel on inputs normalized to the unit box, expected
improvement maximized over sampled candidates), with an exact linear
least-squares refinement for leaves whose output is affine in the holes once
guard regions are fixed. Discrete-action templates are fitted by exact
breakpoint sweeps over guard thresholds (coordinate ascent across multiple
unknowns, per-leaf majority labels). A weighted MaxSMT export writes the
discrete fitting problem for external solvers; no solver is bundled.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import stats

from .errors import ConfigError, UnsupportedTemplateError
from .lang import (Add, AffineSeq, And, Atom, Channel, ChannelSlot, Const,
                   DiscreteSlot, Fold, Hole, If, Mul, Or, Peek, Sub,
                   batch_evaluate, walk)
from .sketch import Template, match_pid_leaf


@dataclass
class FitProblem:
    template: Template
    dataset: object             # oracle.Dataset
    channel_names: tuple        # environment channel order
    window: int = 5
    norm: str = "l2"            # l2 (squared euclidean) | l1
    discrete: bool = False
    budget: int = 100
    action_set: tuple = ()

    def __post_init__(self):
        if len(self.dataset) == 0:
            raise ConfigError("dataset is empty")
        if self.budget < 1:
            raise ConfigError("budget must be >= 1")

    def tensors(self):
        return self.dataset.slots(self.channel_names, self.window + 1)

    def distance(self, program):
        slots, targets = self.tensors()
        out = batch_evaluate(program, slots, self.channel_names)
        diff = out - targets
        if self.norm == "l1":
            return float(np.abs(diff).sum())
        return float((diff ** 2).sum())

    def agreement(self, program):
        slots, targets = self.tensors()
        out = batch_evaluate(program, slots, self.channel_names)
        return int((out[:, 0] == targets[:, 0]).sum())

    def objective(self, theta, assign):
        """Minimized quantity: distance, or -agreement for discrete fits."""
        program = self.template.instantiate(theta, assign)
        if self.discrete:
            return -float(self.agreement(program))
        return self.distance(program)


@dataclass
class FitResult:
    theta: tuple
    assignment: dict
    distance: float = None      # continuous objective at theta
    agreement: int = None       # matched pairs (discrete fits)
    evaluations: int = 0
    history: list = field(default_factory=list)  # best objective so far

    def program(self, problem: FitProblem):
        return problem.template.instantiate(self.theta, self.assignment)

    def check_self_consistency(self, problem: FitProblem, tol=1e-9):
        prog = self.program(problem)
        if self.distance is not None:
            return abs(problem.distance(prog) - self.distance) <= tol
        return problem.agreement(prog) == self.agreement


def _guard_hole_ids(template: Template):
    ids = set()
    for _name, e in template.skeleton.actions:
        for n in walk(e):
            if isinstance(n, Atom):
                for g in walk(n):
                    if isinstance(g, Hole):
                        ids.add(g.hid)
    return ids


def _instantiate_unchecked(template: Template, values, assign):
    """Skeleton substitution without bound checks (internal probing)."""
    from .sketch import _subst
    kinds = {s.hid: s.kind for s in template.discrete_holes}
    actions = tuple((name, _subst(e, values, assign, kinds))
                    for name, e in template.skeleton.actions)
    from .lang import Program
    return Program(actions=actions, window=template.skeleton.window)


# --- affine-leaf machinery ----------------------------------------------------------

def _leaf_list(expr):
    """Branch leaves in routing order."""
    if isinstance(expr, If):
        return _leaf_list(expr.then) + _leaf_list(expr.orelse)
    return [expr]


def _route_pairs(expr_inst, slots, names):
    """Leaf index per dataset pair for one instantiated action tree."""
    from .lang.batch import _eval_guard
    n = slots.shape[0]

    def go(e, mask, base):
        if not isinstance(e, If):
            return np.where(mask, base, 0), base + 1
        truth = _eval_guard(e.guard, slots, names)
        then_ids, nxt = go(e.then, mask & truth, base)
        else_ids, nxt = go(e.orelse, mask & ~truth, nxt)
        return np.where(mask & truth, then_ids, else_ids), nxt

    ids, total = go(expr_inst, np.ones(n, dtype=bool), 0)
    return ids, total


def _pid_features(parts, slots, names, window):
    """Feature matrix [−latest, −window_sum, deriv, 1] for one channel."""
    from .lang import resolve_channel
    row = resolve_channel(parts.channel.ident, names)
    width = slots.shape[2]
    latest = slots[:, row, width - 1]
    prev = slots[:, row, width - 2]
    wsum = slots[:, row, width - parts.fold_window:].sum(axis=1)
    ones = np.ones(slots.shape[0])
    return np.column_stack([-latest, -wsum, prev - latest, ones])


def _affine_leaf_kind(leaf):
    """'pid' for an all-hole PID leaf, 'const' for a bare hole, else None."""
    if isinstance(leaf, Hole):
        return "const"
    parts = match_pid_leaf(leaf)
    if parts is None:
        return None
    holes = list(parts.coeffs) + list(parts.eps)
    if all(isinstance(x, Hole) for x in holes):
        return "pid"
    return None


def _polish_affine(problem: FitProblem, assign, theta_base):
    """Exact per-leaf least squares with guard regions fixed by theta_base.

    Returns a refined theta (guard holes copied from theta_base) or None when
    the template's leaves are not affine-representable.
    """
    template = problem.template
    spec_by_hid = {s.hid: s for s in template.real_holes}
    theta_by_hid = {s.hid: v for s, v in zip(template.real_holes, theta_base)}
    values = dict(theta_by_hid)

    inst = _instantiate_unchecked(template, theta_by_hid, assign)
    slots, targets = problem.tensors()
    names = problem.channel_names

    for a_idx, (_name, skel_expr) in enumerate(template.skeleton.actions):
        leaves = _leaf_list(skel_expr)
        kinds = [_affine_leaf_kind(l) for l in leaves]
        if any(k is None for k in kinds):
            return None
        inst_expr = inst.actions[a_idx][1]
        ids, total = _route_pairs(inst_expr, slots, names)
        y_all = targets[:, a_idx]
        for leaf_idx, (leaf, kind) in enumerate(zip(leaves, kinds)):
            mask = ids == leaf_idx
            if kind == "const":
                spec = spec_by_hid[leaf.hid]
                val = float(y_all[mask].mean()) if mask.any() else 0.0
                values[leaf.hid] = min(max(val, spec.lo), spec.hi)
                continue
            parts = match_pid_leaf(leaf)
            c1h, c2h, c3h = parts.coeffs
            eps_holes = {h.hid for h in parts.eps}
            if not mask.any():
                for h in (c1h, c2h, c3h):
                    spec = spec_by_hid[h.hid]
                    values[h.hid] = min(max(0.0, spec.lo), spec.hi)
                for hid in eps_holes:
                    spec = spec_by_hid[hid]
                    values[hid] = (spec.lo + spec.hi) / 2
                continue
            phi = _pid_features(
                _pid_parts_with_channel(parts, assign), slots, names,
                problem.window)[mask]
            w, *_ = np.linalg.lstsq(phi, y_all[mask], rcond=None)
            c1, c2, c3, k = (float(v) for v in w)
            denom = c1 + parts.fold_window * c2
            eps = k / denom if abs(denom) > 1e-9 else None
            for h, v in ((c1h, c1), (c2h, c2), (c3h, c3)):
                spec = spec_by_hid[h.hid]
                values[h.hid] = min(max(v, spec.lo), spec.hi)
            for hid in eps_holes:
                spec = spec_by_hid[hid]
                mid = (spec.lo + spec.hi) / 2
                v = eps if eps is not None else mid
                values[hid] = min(max(v, spec.lo), spec.hi)
    return [values[s.hid] for s in template.real_holes]


def _pid_parts_with_channel(parts, assign):
    if isinstance(parts.channel, ChannelSlot):
        from .sketch import PidLeafParts
        return PidLeafParts(channel=Channel(f"h_{assign[parts.channel.hid]}"),
                            eps=parts.eps, coeffs=parts.coeffs,
                            fold_window=parts.fold_window)
    return parts


def fit_pid_profile(problem: FitProblem, seed=0):
    """Bayesian optimization over guard holes with exact inner least squares.

    For templates whose branch leaves are affine-representable, the guard
    thresholds are the only parameters the surrogate has to explore; the leaf
    parameters are solved exactly per region assignment inside the objective.
    Returns None when the template has no guard holes or non-affine leaves.
    """
    template = problem.template
    g_ids = _guard_hole_ids(template)
    if not g_ids:
        return None
    for _name, e in template.skeleton.actions:
        if any(_affine_leaf_kind(l) is None for l in _leaf_list(e)):
            return None
    specs = template.real_holes
    g_specs = [s for s in specs if s.hid in g_ids]
    mids = {s.hid: (s.lo + s.hi) / 2 for s in specs}
    rng = np.random.default_rng(seed)
    best = None
    evals_total = 0
    for assign in template.discrete_assignments():
        cache = {}

        def f(g_theta, _assign=assign, _cache=cache):
            base = [g_theta[g_specs.index(s)] if s.hid in g_ids else mids[s.hid]
                    for s in specs]
            theta = _polish_affine(problem, _assign, base)
            if theta is None:
                return np.inf
            y = _safe(problem, theta, _assign)
            _cache[tuple(g_theta)] = theta
            return y

        budget = max(problem.budget, len(g_specs) + 2)
        x, y, history = _gp_minimize(f, [(s.lo, s.hi) for s in g_specs],
                                     budget, rng)
        evals_total += len(history)
        theta = cache.get(tuple(x))
        if theta is None:
            continue
        if best is None or y < best[0]:
            best = (y, tuple(float(v) for v in theta), assign)
    if best is None:
        return None
    y, theta, assign = best
    return FitResult(theta=theta, assignment=assign, distance=y,
                     evaluations=evals_total)


def fit_affine(problem: FitProblem):
    """Exact least-squares fit for templates with no holes in their guards.

    Applies when every branch leaf is a PID combo (or bare constant hole);
    guard expressions, if any, must be fully concrete. Returns None when the
    template is outside this class.
    """
    template = problem.template
    if _guard_hole_ids(template):
        return None
    best = None
    for assign in template.discrete_assignments():
        theta0 = [min(max(0.0, s.lo), s.hi) for s in template.real_holes]
        theta = _polish_affine(problem, assign, theta0)
        if theta is None:
            return None
        d = problem.objective(theta, assign)
        if best is None or d < best[0]:
            best = (d, theta, assign)
    d, theta, assign = best
    return FitResult(theta=tuple(theta), assignment=assign, distance=d,
                     evaluations=1, history=[d])


# --- Gaussian-process Bayesian optimization ----------------------------------------

def _latin_hypercube(n, d, rng):
    cut = (np.arange(n)[:, None] + rng.uniform(size=(n, d))) / n
    for j in range(d):
        cut[:, j] = cut[rng.permutation(n), j]
    return cut


def _kernel(a, b, ls):
    d2 = ((a[:, None, :] - b[None, :, :]) / ls) ** 2
    return np.exp(-0.5 * d2.sum(axis=2))


def _log_marginal(x, y, ls, noise=1e-6):
    k = _kernel(x, x, ls) + noise * np.eye(len(x))
    try:
        chol = np.linalg.cholesky(k)
    except np.linalg.LinAlgError:
        return -np.inf
    alpha = np.linalg.solve(chol.T, np.linalg.solve(chol, y))
    return float(-0.5 * y @ alpha - np.log(np.diag(chol)).sum())


_LS_GRID = (0.05, 0.1, 0.2, 0.5, 1.0)


def _fit_lengthscales(x, y):
    d = x.shape[1]
    yn = (y - y.mean()) / (y.std() or 1.0)
    best_iso, best_ll = 0.2, -np.inf
    for ls in _LS_GRID:
        ll = _log_marginal(x, yn, np.full(d, ls))
        if ll > best_ll:
            best_iso, best_ll = ls, ll
    ls_vec = np.full(d, best_iso)
    for j in range(d):
        for ls in _LS_GRID:
            trial = ls_vec.copy()
            trial[j] = ls
            ll = _log_marginal(x, yn, trial)
            if ll > best_ll:
                ls_vec, best_ll = trial, ll
    return ls_vec


class _GP:
    def __init__(self, x, y, ls, noise=1e-6):
        self.x, self.ls, self.noise = x, ls, noise
        self.mean = y.mean()
        self.std = y.std() or 1.0
        self.yn = (y - self.mean) / self.std
        k = _kernel(x, x, ls) + noise * np.eye(len(x))
        self.chol = np.linalg.cholesky(k)
        self.alpha = np.linalg.solve(self.chol.T,
                                     np.linalg.solve(self.chol, self.yn))

    def predict(self, q):
        ks = _kernel(q, self.x, self.ls)
        mu = ks @ self.alpha
        v = np.linalg.solve(self.chol, ks.T)
        var = np.maximum(1.0 - (v ** 2).sum(axis=0), 1e-12)
        return mu * self.std + self.mean, np.sqrt(var) * self.std


def _expected_improvement(mu, sigma, best, xi=1e-3):
    z = (best - xi - mu) / sigma
    return (best - xi - mu) * stats.norm.cdf(z) + sigma * stats.norm.pdf(z)


def _gp_minimize(f, bounds, budget, rng, polish=None):
    """Minimize f over a box. Returns (x_best, y_best, history)."""
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    span = np.where(hi > lo, hi - lo, 1.0)
    d = len(bounds)

    def denorm(u):
        return lo + u * span

    n_init = min(budget, d + 2)
    xs = _latin_hypercube(n_init, d, rng)
    ys = np.array([f(denorm(u)) for u in xs])
    history = list(np.minimum.accumulate(
        np.where(np.isfinite(ys), ys, np.inf)))
    evals = n_init

    def try_point(u):
        nonlocal xs, ys, evals
        u = np.clip(u, 0.0, 1.0)
        y = f(denorm(u))
        xs = np.vstack([xs, u])
        ys = np.append(ys, y)
        history.append(min(history[-1], y if np.isfinite(y) else np.inf))
        evals += 1

    def run_polish():
        finite = np.isfinite(ys)
        if not finite.any():
            return
        u0 = xs[np.argmin(np.where(finite, ys, np.inf))]
        refined = polish(denorm(u0))
        if refined is not None:
            try_point((np.asarray(refined) - lo) / span)

    if polish is not None and evals < budget:
        run_polish()

    ls = np.full(d, 0.2)
    reserve = 1 if polish is not None else 0
    while evals < budget - reserve:
        finite = np.isfinite(ys)
        if finite.sum() >= 2 and np.unique(xs[finite], axis=0).shape[0] >= 2:
            x_fit, y_fit = xs[finite], ys[finite]
            if evals % 5 in (0, 1):
                ls = _fit_lengthscales(x_fit, y_fit)
            try:
                gp = _GP(x_fit, y_fit, ls)
                incumbent = x_fit[np.argmin(y_fit)]
                cand = np.vstack([
                    rng.uniform(size=(256, d)),
                    np.clip(incumbent + 0.05 * rng.standard_normal((128, d)), 0, 1),
                    np.clip(incumbent + 0.2 * rng.standard_normal((128, d)), 0, 1),
                ])
                mu, sigma = gp.predict(cand)
                ei = _expected_improvement(mu, sigma, y_fit.min())
                pick = cand[int(np.argmax(ei))]
            except np.linalg.LinAlgError:
                pick = rng.uniform(size=d)
        else:
            pick = rng.uniform(size=d)
        try_point(pick)

    if polish is not None and evals < budget:
        run_polish()

    finite = np.isfinite(ys)
    idx = int(np.argmin(np.where(finite, ys, np.inf)))
    return denorm(xs[idx]), float(ys[idx]), history


def fit_bayesopt(problem: FitProblem, seed=0):
    """GP/expected-improvement search over the template's real holes.

    Discrete holes are enumerated exhaustively, one optimization per
    assignment; a least-squares refinement of affine leaves is injected as
    extra evaluated points when the template supports it. Non-finite
    objective values are recorded as +inf and skipped by the surrogate.
    """
    template = problem.template
    d = len(template.real_holes)
    if d > 0 and problem.budget < d + 2:
        raise ConfigError(f"budget {problem.budget} < {d + 2} "
                          f"(hole count + initial design)")
    rng = np.random.default_rng(seed)
    best = None
    evals_total = 0
    history_all = []
    for assign in template.discrete_assignments():
        if d == 0:
            y = _safe(problem, (), assign)
            evals_total += 1
            history_all.append(y)
            if best is None or y < best[0]:
                best = (y, (), assign)
            continue

        def f(theta, _assign=assign):
            return _safe(problem, theta, _assign)

        def polish(theta_base, _assign=assign):
            return _polish_affine(problem, _assign, list(theta_base))

        x, y, history = _gp_minimize(f, template.bounds(), problem.budget,
                                     rng, polish=polish)
        evals_total += len(history)
        history_all.extend(history)
        if best is None or y < best[0]:
            best = (y, tuple(float(v) for v in x), assign)
    y, theta, assign = best
    if problem.discrete:
        return FitResult(theta=theta, assignment=assign, agreement=int(-y),
                         evaluations=evals_total, history=history_all)
    return FitResult(theta=theta, assignment=assign, distance=y,
                     evaluations=evals_total, history=history_all)


def _safe(problem, theta, assign):
    try:
        v = problem.objective(theta, assign)
    except (ValueError, FloatingPointError, OverflowError):
        return np.inf
    return v if np.isfinite(v) else np.inf


# --- exact discrete fitting -----------------------------------------------------------

def _atom_nodes(template: Template):
    atoms = []
    for _name, e in template.skeleton.actions:
        for n in walk(e):
            if isinstance(n, Atom) and n not in atoms:
                atoms.append(n)
    return atoms


def _atom_affine_parts(problem: FitProblem, atoms, assign):
    """Per atom: (alpha vector over pairs, beta matrix over holes).

    Atom values must be affine in the real holes; verified numerically.
    """
    template = problem.template
    slots, _ = problem.tensors()
    names = problem.channel_names
    specs = template.real_holes
    d = len(specs)
    from .lang.batch import _eval as _batch_eval
    from .sketch import _subst
    kinds = {s.hid: s.kind for s in template.discrete_holes}

    def atom_values(theta_map):
        if not atoms:
            return np.zeros((0, slots.shape[0]))
        vals = []
        for a in atoms:
            expr = _subst(a.expr, theta_map, assign, kinds)
            vals.append(_batch_eval(expr, slots, names))
        return np.array(vals)

    zero = {s.hid: 0.0 for s in specs}
    alpha = atom_values(zero)
    if not atoms:
        return alpha, np.zeros((0, d, slots.shape[0]))
    betas = np.zeros((len(atoms), d, slots.shape[0]))
    for j, spec in enumerate(specs):
        theta = dict(zero)
        theta[spec.hid] = 1.0
        betas[:, j, :] = atom_values(theta) - alpha
    # affineness check at a random-but-fixed interior point
    probe = {s.hid: 0.377 * (s.lo + s.hi) / 2 + 0.123 for s in specs}
    probe_vec = np.array([probe[s.hid] for s in specs])
    expect = alpha + np.einsum("ajn,j->an", betas, probe_vec)
    actual = atom_values(probe)
    scale = np.abs(actual).max() + 1.0
    if not np.allclose(actual, expect, atol=1e-7 * scale):
        raise UnsupportedTemplateError(
            "guard atoms are not affine in the template parameters")
    return alpha, betas


def _leaf_router(expr, atom_index):
    """Function mapping an (atoms, pairs) truth matrix to leaf ids."""
    def build(e):
        if not isinstance(e, If):
            leaf_id = build.counter
            build.counter += 1
            return ("leaf", leaf_id)
        return ("if", _guard_fn(e.guard), build(e.then), build(e.orelse))

    def _guard_fn(g):
        if isinstance(g, Atom):
            idx = atom_index[id(g)]
            return lambda truth: truth[idx]
        if isinstance(g, And):
            fa, fb = _guard_fn(g.a), _guard_fn(g.b)
            return lambda truth: fa(truth) & fb(truth)
        fa, fb = _guard_fn(g.a), _guard_fn(g.b)
        return lambda truth: fa(truth) | fb(truth)

    build.counter = 0
    tree = build(expr)

    def route(truth):
        # truth has shape (atoms, ..., pairs); ids broadcast over the rest
        shape = truth.shape[1:]

        def go(node, mask):
            if node[0] == "leaf":
                return np.where(mask, node[1], 0)
            _tag, gfn, then_n, else_n = node
            t = gfn(truth)
            return np.where(mask & t, go(then_n, mask & t),
                            go(else_n, mask & ~t))

        return go(tree, np.ones(shape, dtype=bool))

    return route, build.counter


def _truth_tensor(atoms, alpha, betas, theta_mat):
    """Atom truth for a batch of parameter vectors: (atoms, batch, pairs)."""
    vals = alpha[:, None, :] + np.einsum("adn,cd->acn", betas, theta_mat)
    truth = np.empty(vals.shape, dtype=bool)
    for i, a in enumerate(atoms):
        truth[i] = vals[i] > 0 if a.sense == ">" else vals[i] < 0
    return truth


def _agreements_batch(theta_mat, atoms, alpha, betas, route, leaf_nodes,
                      labels, action_set, want_labels=False):
    """Agreement count per candidate theta row (per-leaf majority labels)."""
    truth = _truth_tensor(atoms, alpha, betas, theta_mat)
    ids = route(truth)  # (batch, pairs)
    batch = theta_mat.shape[0]
    total = np.zeros(batch, dtype=int)
    leaf_labels = [dict() for _ in range(batch)] if want_labels else None
    for leaf_idx, leaf in enumerate(leaf_nodes):
        mask = ids == leaf_idx
        if isinstance(leaf, Const):
            total += ((labels[None, :] == int(leaf.value)) & mask).sum(axis=1)
            if want_labels:
                for c in range(batch):
                    leaf_labels[c][leaf_idx] = int(leaf.value)
            continue
        counts = np.stack([((labels[None, :] == a) & mask).sum(axis=1)
                           for a in action_set])  # (actions, batch)
        best_idx = np.argmax(counts, axis=0)
        total += counts[best_idx, np.arange(batch)]
        if want_labels:
            for c in range(batch):
                leaf_labels[c][leaf_idx] = int(action_set[int(best_idx[c])])
    return (total, leaf_labels) if want_labels else total


def _candidate_points(bps, spec):
    """Interval-representative values for a threshold sweep."""
    inner = [b for b in bps if spec.lo < b < spec.hi]
    points = sorted(set([spec.lo, spec.hi] + inner))
    cands = [spec.lo, spec.hi]
    if spec.lo <= 0.0 <= spec.hi:
        cands.append(0.0)
    cands.extend((a + b) / 2 for a, b in zip(points[:-1], points[1:]))
    return np.unique(np.array(sorted(cands)))


def _sweep_one_threshold(j, atom_idx, theta, spec, atoms, alpha, betas,
                         route, allowed, labels):
    """Exact agreement maximization over one coordinate (event sweep).

    The coordinate appears in a single atom, so each pair's truth flips at
    one breakpoint; agreement along the axis is maintained incrementally.
    Returns (best agreement, best value), ties preferring small |value|.
    """
    beta = betas[atom_idx, j, :]
    base = (alpha[atom_idx]
            + np.einsum("dn,d->n", betas[atom_idx], theta)
            - beta * theta[j])
    sense = atoms[atom_idx].sense

    # truth pattern of the unaffected atoms at the current theta
    truth = _truth_tensor(atoms, alpha, betas, theta[None, :])[:, 0, :]
    t_true, t_false = truth.copy(), truth.copy()
    t_true[atom_idx] = True
    t_false[atom_idx] = False
    ids_true = route(t_true)
    ids_false = route(t_false)

    with np.errstate(divide="ignore", invalid="ignore"):
        cross = np.where(beta != 0, -base / beta, np.nan)
    # pairs whose truth is constant on the axis resolve by their base value
    const_truth = (base > 0) if sense == ">" else (base < 0)
    true_above = (beta > 0) if sense == ">" else (beta < 0)

    cands = _candidate_points(cross[np.isfinite(cross)], spec)

    def truth_at(v):
        out = const_truth.copy()
        moving = np.isfinite(cross)
        above = v > cross
        out[moving] = np.where(true_above[moving], above[moving],
                               ~above[moving])
        # exactly at the breakpoint the strict comparison is false
        at = moving & (v == cross)
        out[at] = False
        return out

    n_leaves = len(allowed)
    label_vals = sorted({a for opts in allowed for a in opts})
    label_idx = {a: i for i, a in enumerate(label_vals)}
    lab = np.array([label_idx.get(int(v), -1) for v in labels])

    # initial state at the lowest candidate
    cur_truth = truth_at(cands[0])
    ids = np.where(cur_truth, ids_true, ids_false)
    counts = np.zeros((n_leaves, len(label_vals)), dtype=int)
    np.add.at(counts, (ids[lab >= 0], lab[lab >= 0]), 1)

    def leaf_agree(leaf):
        opts = [label_idx[a] for a in allowed[leaf] if a in label_idx]
        return int(counts[leaf, opts].max()) if opts else 0

    agree = sum(leaf_agree(l) for l in range(n_leaves))

    # events sorted by crossing point
    moving = np.isfinite(cross) & (cross > cands[0]) & (cross <= cands[-1])
    order = np.argsort(cross[moving], kind="stable")
    ev_pairs = np.nonzero(moving)[0][order]
    ev_ts = cross[moving][order]

    crossing_set = np.unique(cross[np.isfinite(cross)])

    def exact_agree_at(v):
        t = truth_at(v)
        ids_v = np.where(t, ids_true, ids_false)
        cv = np.zeros_like(counts)
        np.add.at(cv, (ids_v[lab >= 0], lab[lab >= 0]), 1)
        total = 0
        for leaf in range(n_leaves):
            opts = [label_idx[a] for a in allowed[leaf] if a in label_idx]
            total += int(cv[leaf, opts].max()) if opts else 0
        return total

    best_agree, best_val = agree, cands[0]
    if np.isin(cands[0], crossing_set):
        best_agree = exact_agree_at(cands[0])
    ei = 0
    for c in cands:
        while ei < len(ev_ts) and ev_ts[ei] < c:
            i = int(ev_pairs[ei])
            now_true = bool(true_above[i])  # crossing upward flips to this
            new_leaf = int(ids_true[i] if now_true else ids_false[i])
            old_leaf = int(ids[i])
            if new_leaf != old_leaf and lab[i] >= 0:
                before = leaf_agree(old_leaf) + leaf_agree(new_leaf)
                counts[old_leaf, lab[i]] -= 1
                counts[new_leaf, lab[i]] += 1
                agree += leaf_agree(old_leaf) + leaf_agree(new_leaf) - before
            ids[i] = new_leaf
            ei += 1
        # a candidate sitting exactly on a breakpoint scores by the strict
        # comparison (guard false there), not by the interval it borders
        c_agree = exact_agree_at(c) if np.isin(c, crossing_set) else agree
        if c_agree > best_agree or (c_agree == best_agree
                                    and abs(c) < abs(best_val)):
            best_agree, best_val = c_agree, float(c)
    return best_agree, best_val


def _sweep_by_batch(j, theta, spec, betas, alpha, scores, max_candidates=256):
    """Fallback coordinate sweep when a hole touches several atoms."""
    beta_j = betas[:, j, :]
    base = alpha + np.einsum("adn,d->an", betas, theta) - beta_j * theta[j]
    with np.errstate(divide="ignore", invalid="ignore"):
        bps = np.where(beta_j != 0, -base / beta_j, np.nan).ravel()
    bps = bps[np.isfinite(bps)]
    if len(bps) > max_candidates:
        idx = np.linspace(0, len(bps) - 1, max_candidates)
        bps = np.sort(bps)[idx.astype(int)]
    cands = _candidate_points(bps, spec)
    mat = np.repeat(theta[None, :], len(cands), axis=0)
    mat[:, j] = cands
    agrees = scores(mat)
    order = sorted(range(len(cands)), key=lambda c: (-agrees[c], abs(cands[c])))
    top = order[0]
    return int(agrees[top]), float(cands[top])


def fit_exact_discrete(problem: FitProblem):
    """Agreement-maximizing fit for discrete-action templates.

    Guard thresholds are swept exactly over their dataset-induced breakpoints
    (coordinate ascent when several unknowns interact); branch labels are
    chosen by per-leaf majority. Exact for a single unknown; ties prefer the
    smallest |theta|.
    """
    template = problem.template
    action_set = tuple(problem.action_set) or tuple(
        sorted({int(o) for s in template.discrete_holes if s.kind == "action"
                for o in s.options}))
    if len(template.skeleton.actions) != 1:
        raise UnsupportedTemplateError("discrete templates have one action")
    root = template.skeleton.actions[0][1]
    for leaf in _leaf_list(root):
        if not isinstance(leaf, (Const, DiscreteSlot)):
            raise UnsupportedTemplateError(
                f"branch leaf {type(leaf).__name__} is not a discrete label")
    atoms = _atom_nodes(template)
    atom_index = {id(a): i for i, a in enumerate(atoms)}
    specs = template.real_holes
    _, targets = problem.tensors()
    labels = targets[:, 0]

    best = None
    for assign in template.discrete_assignments(kinds=("channel",)):
        alpha, betas = _atom_affine_parts(problem, atoms, assign)
        route, _n_leaves = _leaf_router(root, atom_index)
        leaf_nodes = _leaf_list(root)
        theta = np.array([min(max(0.0, s.lo), s.hi) for s in specs])

        allowed = []  # per leaf: candidate labels (slot) or the fixed label
        for leaf in leaf_nodes:
            if isinstance(leaf, Const):
                allowed.append((int(leaf.value),))
            else:
                allowed.append(tuple(int(a) for a in action_set))

        def scores(mat):
            return _agreements_batch(mat, atoms, alpha, betas, route,
                                     leaf_nodes, labels, action_set)

        agree = int(scores(theta[None, :])[0])
        for _sweep in range(8):
            improved = False
            for j, spec in enumerate(specs):
                touched = [a for a in range(len(atoms))
                           if np.any(betas[a, j] != 0)]
                if len(touched) == 1:
                    res = _sweep_one_threshold(
                        j, touched[0], theta, spec, atoms, alpha, betas,
                        route, allowed, labels)
                else:
                    res = _sweep_by_batch(j, theta, spec, betas, alpha,
                                          scores)
                new_agree, new_val = res
                if new_agree > agree or (new_agree == agree
                                         and abs(new_val) < abs(theta[j])):
                    if new_agree > agree:
                        improved = True
                    agree = int(new_agree)
                    theta[j] = new_val
            if not improved:
                break

        _agree_final, leaf_label_rows = _agreements_batch(
            theta[None, :], atoms, alpha, betas, route, leaf_nodes, labels,
            action_set, want_labels=True)
        leaf_labels = leaf_label_rows[0]
        full_assign = dict(assign)
        for leaf_idx, leaf in enumerate(leaf_nodes):
            if isinstance(leaf, DiscreteSlot):
                full_assign[leaf.hid] = leaf_labels[leaf_idx]
        key = (agree, -sum(abs(v) for v in theta))
        if best is None or key > best[0]:
            best = (key, tuple(float(v) for v in theta), full_assign, agree)

    _, theta, assign, agree = best
    return FitResult(theta=theta, assignment=assign, agreement=int(agree),
                     evaluations=1, history=[-int(agree)])


def brute_force_agreement(problem: FitProblem, grid=2001):
    """Dense-grid oracle for the exact fitter (test reference, 1 unknown)."""
    template = problem.template
    if len(template.real_holes) != 1:
        raise ConfigError("brute force reference supports one unknown")
    spec = template.real_holes[0]
    best = -1
    for assign in template.discrete_assignments():
        for v in np.linspace(spec.lo, spec.hi, grid):
            prog = template.instantiate([v], assign)
            best = max(best, problem.agreement(prog))
    return best


# --- dispatcher -------------------------------------------------------------------

def fit_template(problem: FitProblem, seed=0, backend="auto"):
    """Fit with the appropriate backend.

    ``auto``: exact sweep for discrete templates (falling back to Bayesian
    optimization when the template is outside the exact class); least squares
    for continuous templates with hole-free guards; otherwise Bayesian
    optimization with the affine refinement.
    """
    if backend == "bayes":
        return fit_bayesopt(problem, seed)
    if backend == "exact":
        return fit_exact_discrete(problem)
    if backend != "auto":
        raise ConfigError(f"unknown fit backend {backend!r}")
    if problem.discrete:
        try:
            return fit_exact_discrete(problem)
        except UnsupportedTemplateError:
            return fit_bayesopt(problem, seed)
    result = fit_affine(problem)
    if result is not None:
        return result
    result = fit_pid_profile(problem, seed)
    if result is not None:
        return result
    return fit_bayesopt(problem, seed)


# --- MaxSMT export ---------------------------------------------------------------

def smt_number(v):
    """Exact SMT-LIB real literal for a float."""
    if v != v or v in (float("inf"), float("-inf")):
        raise ConfigError(f"cannot encode {v!r} in SMT-LIB")
    frac = Fraction(v).limit_denominator(10 ** 12) if isinstance(v, float) \
        else Fraction(v)
    if float(frac) != float(v):
        frac = Fraction(*float(v).as_integer_ratio())
    num, den = frac.numerator, frac.denominator
    def lit(n):
        return f"{n}.0" if n >= 0 else f"(- {abs(n)}.0)"
    if den == 1:
        return lit(num)
    return f"(/ {lit(num)} {den}.0)"


def _smt_expr(e, resolve):
    if isinstance(e, Const):
        return smt_number(float(e.value))
    if isinstance(e, (Hole, DiscreteSlot, Peek, Fold)):
        return resolve(e)
    if isinstance(e, Add):
        return f"(+ {_smt_expr(e.a, resolve)} {_smt_expr(e.b, resolve)})"
    if isinstance(e, Sub):
        return f"(- {_smt_expr(e.a, resolve)} {_smt_expr(e.b, resolve)})"
    if isinstance(e, Mul):
        return f"(* {_smt_expr(e.a, resolve)} {_smt_expr(e.b, resolve)})"
    if isinstance(e, If):
        return (f"(ite {_smt_guard(e.guard, resolve)} "
                f"{_smt_expr(e.then, resolve)} {_smt_expr(e.orelse, resolve)})")
    raise UnsupportedTemplateError(f"cannot encode {type(e).__name__}")


def _smt_guard(g, resolve):
    if isinstance(g, Atom):
        op = ">" if g.sense == ">" else "<"
        return f"({op} {_smt_expr(g.expr, resolve)} 0.0)"
    op = "and" if isinstance(g, And) else "or"
    return f"({op} {_smt_guard(g.a, resolve)} {_smt_guard(g.b, resolve)})"


def export_maxsmt(problem: FitProblem, path):
    """Write the discrete fitting problem as weighted-MaxSMT SMT-LIB2.

    One soft assertion per dataset pair (program output equals the recorded
    action, guards expanded by symbolic execution over the pair's concrete
    history) plus hard box bounds on the unknowns.
    """
    if not problem.discrete:
        raise ConfigError("MaxSMT export applies to discrete fit problems")
    template = problem.template
    if any(s.kind == "channel" for s in template.discrete_holes):
        raise UnsupportedTemplateError(
            "assign channel holes before exporting (see Template.instantiate)")
    slots, targets = problem.tensors()
    names = problem.channel_names
    width = slots.shape[2]
    root = template.skeleton.actions[0][1]

    lines = ["(set-logic QF_LIRA)", "(set-option :produce-models true)"]
    for s in template.real_holes:
        lines.append(f"(declare-const th{s.hid} Real)")
        lines.append(f"(assert (>= th{s.hid} {smt_number(s.lo)}))")
        lines.append(f"(assert (<= th{s.hid} {smt_number(s.hi)}))")
    for s in template.discrete_holes:
        if s.kind == "action":
            lines.append(f"(declare-const act{s.hid} Int)")
            alts = " ".join(f"(= act{s.hid} {int(o)})" for o in s.options)
            lines.append(f"(assert (or {alts}))")

    from .lang import resolve_channel

    for i in range(slots.shape[0]):
        def resolve(node, _i=i):
            if isinstance(node, Hole):
                return f"th{node.hid}"
            if isinstance(node, DiscreteSlot):
                return f"(to_real act{node.hid})"
            if isinstance(node, Peek):
                return _seq_smt(node.seq, _i, -node.offset)
            if isinstance(node, Fold):
                parts = [_seq_smt(node.seq, _i, k)
                         for k in range(1, node.window + 1)]
                return f"(+ {' '.join(parts)})" if len(parts) > 1 else parts[0]
            raise UnsupportedTemplateError(type(node).__name__)

        def _seq_smt(seq, _i, back):
            if isinstance(seq, Channel):
                row = resolve_channel(seq.ident, names)
                return smt_number(float(slots[_i, row, width - back]))
            if isinstance(seq, AffineSeq):
                inner = _seq_smt(seq.inner, _i, back)
                off = f"th{seq.offset.hid}" if isinstance(seq.offset, Hole) \
                    else smt_number(float(seq.offset))
                return f"(+ (* {smt_number(seq.scale)} {inner}) {off})"
            raise UnsupportedTemplateError(type(seq).__name__)

        term = _smt_expr(root, resolve)
        label = smt_number(float(targets[i, 0]))
        lines.append(f"(assert-soft (= {term} {label}) :weight 1 :id match)")

    lines.append("(check-sat)")
    lines.append("(get-model)")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return path
