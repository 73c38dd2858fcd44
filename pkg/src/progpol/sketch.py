"""Sketches, templates, enumeration, and structural neighborhoods.

A sketch is a restricted grammar over the policy language; it defines a
countable family of programs searched during synthesis. Two kinds are built
in:

* ``pid``: if-trees whose leaves are discretized PID controllers
  ``c1*P + c2*I + c3*D`` over one channel with a setpoint, guarded by linear
  atoms over the latest readings;
* ``guarded``: if-trees whose leaves are discrete action labels, guarded by
  threshold atoms (bias +/- latest reading, or a window sum against a
  reading).

A :class:`Template` is a program skeleton whose numeric constants are real
holes (with box bounds) and whose channel / action choices are discrete
holes. ``instantiate`` fills the holes; enumeration emits templates smallest
first; ``neighborhood_pool`` derives templates structurally close to a given
program (its own re-parameterization always included).
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field, replace

import numpy as np
import yaml

from .errors import ConfigError, LangTypeError, UnsupportedTemplateError
from .lang import (Add, AffineSeq, And, Atom, Channel, ChannelSlot, Const,
                   DiscreteSlot, Fold, Hole, If, Mul, Or, Peek, Program, Sub,
                   children, if_count, if_depth, program_size, resolve_channel,
                   validate_program, walk)

DEFAULT_BOUNDS = {
    "coeff": (-100.0, 100.0),
    "setpoint": (0.0, 1.0),
    "bias": (-1.0, 1.0),
}


@dataclass(frozen=True)
class RealHoleSpec:
    hid: int
    lo: float
    hi: float
    label: str  # coeff | setpoint | bias


@dataclass(frozen=True)
class DiscreteHoleSpec:
    hid: int
    kind: str      # channel | action
    options: tuple


@dataclass(frozen=True)
class Sketch:
    kind: str                      # pid | guarded | free
    channels: tuple                # allowed channel names
    window: int = 5
    max_if_depth: int = 5
    guard_atom_budget: int = 2
    action_set: tuple = ()         # guarded kind
    action_names: tuple = ("out",)
    guard_channels: tuple = None   # defaults to channels
    action_channels: dict = None   # per-action channel restriction (pid kind)
    bounds: dict = None
    channel_order: tuple = None    # for resolving positional idents

    def __post_init__(self):
        if self.kind not in ("pid", "guarded", "free"):
            raise ConfigError(f"unknown sketch kind {self.kind!r}")
        if self.max_if_depth < 0:
            raise ConfigError("max_if_depth must be >= 0")
        if self.kind == "guarded" and not self.action_set:
            raise ConfigError("guarded sketches need an action_set")
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "action_set",
                           tuple(int(a) for a in self.action_set))
        object.__setattr__(self, "action_names", tuple(self.action_names))
        gc = self.guard_channels if self.guard_channels is not None else self.channels
        object.__setattr__(self, "guard_channels", tuple(gc))
        merged = dict(DEFAULT_BOUNDS)
        merged.update(self.bounds or {})
        object.__setattr__(self, "bounds",
                           {k: (float(v[0]), float(v[1])) for k, v in merged.items()})
        order = self.channel_order if self.channel_order is not None else self.channels
        object.__setattr__(self, "channel_order", tuple(order))

    def channels_for(self, action_name):
        if self.action_channels and action_name in self.action_channels:
            return tuple(self.action_channels[action_name])
        return self.channels

    def resolve_ident(self, ident):
        """Channel name referenced by a policy identifier, or None."""
        try:
            return self.channel_order[resolve_channel(ident, self.channel_order)]
        except Exception:
            return None

    def contains(self, prog: Program):
        """Structural membership of a program in this sketch's family."""
        try:
            validate_program(prog)
        except LangTypeError:
            return False
        if prog.window != self.window:
            return False
        if self.kind == "free":
            return (_free_ok(prog, self)
                    and all(if_depth(e) <= self.max_if_depth for e in prog.exprs()))
        if self.kind == "pid":
            if prog.action_names() != self.action_names:
                return False
            return all(_pid_tree_ok(e, self, name)
                       for name, e in prog.actions)
        # guarded
        if len(prog.actions) != 1:
            return False
        return _guarded_tree_ok(prog.exprs()[0], self)


@dataclass
class Template:
    """A program skeleton with numeric and discrete holes."""

    skeleton: Program
    real_holes: tuple
    discrete_holes: tuple
    origin: str = "enum"

    @property
    def size(self):
        return program_size(self.skeleton)

    @property
    def if_nodes(self):
        return if_count(self.skeleton)

    def bounds(self):
        return [(h.lo, h.hi) for h in self.real_holes]

    def discrete_assignments(self, kinds=("channel", "action")):
        """All assignments of the selected discrete-hole kinds."""
        holes = [h for h in self.discrete_holes if h.kind in kinds]
        fixed = {h.hid: h.options[0] for h in self.discrete_holes
                 if h.kind not in kinds and len(h.options) == 1}
        if not holes:
            yield dict(fixed)
            return
        for combo in itertools.product(*(h.options for h in holes)):
            out = dict(fixed)
            out.update({h.hid: v for h, v in zip(holes, combo)})
            yield out

    def instantiate(self, theta, assign):
        """Fill the holes; validates dimensions and bounds."""
        theta = [float(v) for v in theta]
        if len(theta) != len(self.real_holes):
            raise ConfigError(f"theta has {len(theta)} entries, template has "
                              f"{len(self.real_holes)} real holes")
        values = {}
        for spec, v in zip(self.real_holes, theta):
            if not (spec.lo - 1e-12 <= v <= spec.hi + 1e-12):
                raise ConfigError(
                    f"theta[{spec.hid}] = {v} outside [{spec.lo}, {spec.hi}]")
            values[spec.hid] = v
        for spec in self.discrete_holes:
            if spec.hid not in assign:
                raise ConfigError(f"discrete hole {spec.hid} unassigned")
            if assign[spec.hid] not in spec.options:
                raise ConfigError(
                    f"discrete hole {spec.hid}: {assign[spec.hid]!r} not among "
                    f"{spec.options}")
        discrete_kinds = {spec.hid: spec.kind for spec in self.discrete_holes}
        actions = tuple(
            (name, _subst(e, values, assign, discrete_kinds))
            for name, e in self.skeleton.actions)
        prog = Program(actions=actions, window=self.skeleton.window)
        return validate_program(prog)


def _subst(node, values, assign, kinds):
    if isinstance(node, Hole):
        return Const(values[node.hid])
    if isinstance(node, ChannelSlot):
        return Channel(f"h_{assign[node.hid]}")
    if isinstance(node, DiscreteSlot):
        return Const(float(assign[node.hid]))
    if isinstance(node, AffineSeq):
        offset = values[node.offset.hid] if isinstance(node.offset, Hole) \
            else node.offset
        return AffineSeq(node.scale, offset, _subst(node.inner, values, assign, kinds))
    if isinstance(node, (Const, Channel)):
        return node
    kwargs = {}
    for f in node.__dataclass_fields__:
        v = getattr(node, f)
        if isinstance(v, (Hole, ChannelSlot, DiscreteSlot, AffineSeq, Const,
                          Channel, Add, Sub, Mul, If, Peek, Fold, Atom, And, Or)):
            kwargs[f] = _subst(v, values, assign, kinds)
        else:
            kwargs[f] = v
    return type(node)(**kwargs)


# --- skeleton builders ---------------------------------------------------------

class _Holes:
    """Allocates hole ids and records their specs during skeleton builds."""

    def __init__(self, bounds):
        self.bounds = bounds
        self.real = []
        self.discrete = []
        self._next = 0

    def _nid(self):
        hid = self._next
        self._next += 1
        return hid

    def real_hole(self, label):
        lo, hi = self.bounds[label]
        hid = self._nid()
        self.real.append(RealHoleSpec(hid, lo, hi, label))
        return Hole(hid)

    def channel(self, options):
        hid = self._nid()
        self.discrete.append(DiscreteHoleSpec(hid, "channel", tuple(options)))
        return ChannelSlot(hid)

    def action(self, options):
        hid = self._nid()
        self.discrete.append(DiscreteHoleSpec(hid, "action",
                                              tuple(int(a) for a in options)))
        return DiscreteSlot(hid)

    def template(self, actions, window, origin):
        prog = Program(actions=tuple(actions), window=window)
        return Template(skeleton=prog, real_holes=tuple(self.real),
                        discrete_holes=tuple(self.discrete), origin=origin)


def _pid_leaf(h: _Holes, channels, window):
    """c1*P + c2*I + c3*D over one channel with a shared setpoint."""
    ch = h.channel(channels)
    eps = h.real_hole("setpoint")
    seq = AffineSeq(-1.0, eps, ch)
    p_term = Mul(h.real_hole("coeff"), Peek(seq, -1))
    i_term = Mul(h.real_hole("coeff"), Fold(seq, window))
    d_term = Mul(h.real_hole("coeff"), Sub(Peek(ch, -2), Peek(ch, -1)))
    return Add(Add(p_term, i_term), d_term)


def _pid_guard(h: _Holes, form, channels):
    ch = h.channel(channels)
    if form == "band":
        # |reading| < bias, written as two atoms sharing the bias hole
        bias = h.real_hole("bias")
        return And(Atom(Sub(bias, Peek(ch, -1)), ">"),
                   Atom(Add(bias, Peek(ch, -1)), ">"))
    sense = ">" if form == "gt" else "<"
    return Atom(Add(h.real_hole("bias"), Peek(ch, -1)), sense)


PID_GUARD_FORMS = ("band", "gt", "lt")


def _guarded_atom(h: _Holes, form, sense, channels):
    if form == "peek+":
        return Atom(Add(h.real_hole("bias"), Peek(h.channel(channels), -1)), sense)
    if form == "peek-":
        return Atom(Sub(h.real_hole("bias"), Peek(h.channel(channels), -1)), sense)
    if form == "foldpeek":
        return Atom(Sub(Fold(h.channel(channels), None), Peek(h.channel(channels), -1)),
                    sense)
    raise ConfigError(f"unknown atom form {form!r}")


GUARDED_ATOM_FORMS = tuple(
    (form, sense) for form in ("peek+", "peek-", "foldpeek") for sense in "><")


def _build_pid_action(h, structure, sketch, action_name):
    channels = sketch.channels_for(action_name)
    if structure == "leaf":
        return _pid_leaf(h, channels, sketch.window)
    _tag, guard_form, then_s, else_s = structure
    guard = _pid_guard(h, guard_form, sketch.guard_channels)
    return If(guard, _build_pid_action(h, then_s, sketch, action_name),
              _build_pid_action(h, else_s, sketch, action_name))


def _build_guarded_tree(h, structure, sketch):
    if structure == "leaf":
        return h.action(sketch.action_set)
    _tag, atoms, connectors, then_s, else_s = structure
    guard = _guarded_atom(h, atoms[0][0], atoms[0][1], sketch.guard_channels)
    for (form, sense), conn in zip(atoms[1:], connectors):
        nxt = _guarded_atom(h, form, sense, sketch.guard_channels)
        guard = And(guard, nxt) if conn == "and" else Or(guard, nxt)
    return If(guard, _build_guarded_tree(h, then_s, sketch),
              _build_guarded_tree(h, else_s, sketch))


def _fix_fold_windows(template: Template):
    """Guarded atoms build Fold(..., None); patch to the sketch window."""
    def patch(node, window):
        if isinstance(node, Fold) and node.window is None:
            return Fold(node.seq, window)
        if isinstance(node, (Hole, ChannelSlot, DiscreteSlot, Const, Channel)):
            return node
        kwargs = {}
        for f in node.__dataclass_fields__:
            v = getattr(node, f)
            kwargs[f] = patch(v, window) if isinstance(v, tuple(_NODE_TYPES)) else v
        return type(node)(**kwargs)

    w = template.skeleton.window
    actions = tuple((n, patch(e, w)) for n, e in template.skeleton.actions)
    template.skeleton = Program(actions=actions, window=w)
    return template


_NODE_TYPES = (Hole, ChannelSlot, DiscreteSlot, Const, Channel, AffineSeq,
               Add, Sub, Mul, If, Peek, Fold, Atom, And, Or)


# --- structure enumeration -------------------------------------------------------

def _pid_structures(max_depth, max_ifs=3):
    """If-tree shapes in non-decreasing if-count order."""
    def trees(n_ifs, depth):
        if n_ifs == 0:
            return ["leaf"]
        if depth <= 0:
            return []
        out = []
        for guard_form in PID_GUARD_FORMS:
            for i in range(n_ifs):
                for t in trees(i, depth - 1):
                    for e in trees(n_ifs - 1 - i, depth - 1):
                        out.append(("if", guard_form, t, e))
        return out

    for n in range(0, max_ifs + 1):
        yield from trees(n, max_depth)


def _guard_specs(budget):
    """Guard shapes: 1..budget atoms with and/or connectors."""
    for n_atoms in range(1, budget + 1):
        for atoms in itertools.product(GUARDED_ATOM_FORMS, repeat=n_atoms):
            for conns in itertools.product(("and", "or"), repeat=n_atoms - 1):
                yield atoms, conns


def _guarded_structures(sketch, max_ifs=2):
    guards = list(_guard_specs(sketch.guard_atom_budget))

    def trees(n_ifs, depth):
        if n_ifs == 0:
            return ["leaf"]
        if depth <= 0:
            return []
        out = []
        for g_atoms, g_conns in guards:
            for i in range(n_ifs):
                for t in trees(i, depth - 1):
                    for e in trees(n_ifs - 1 - i, depth - 1):
                        out.append(("if", g_atoms, g_conns, t, e))
        return out

    yield "leaf"
    for n in range(1, max_ifs + 1):
        yield from trees(n, sketch.max_if_depth)


def _template_from_structures(sketch, structures):
    h = _Holes(sketch.bounds)
    if sketch.kind == "pid":
        actions = tuple(
            (name, _build_pid_action(h, s, sketch, name))
            for name, s in zip(sketch.action_names, structures))
    else:
        actions = (("out", _build_guarded_tree(h, structures[0], sketch)),)
    t = h.template(actions, sketch.window, origin="enum")
    return _fix_fold_windows(t)


def enumerate_templates(sketch: Sketch, base=None, budget=16, seed=0):
    """Templates in non-decreasing size order; see module docstring.

    With ``base`` given, derives templates from it: its re-parameterization
    plus single-edit variants under the sketch grammar.
    """
    if budget < 1:
        raise ConfigError("budget must be >= 1")
    if base is not None:
        pool = neighborhood_pool(base, sketch, width=budget, seed=seed)
        return sorted(pool, key=lambda t: t.size)

    if sketch.kind == "free":
        return _free_enumerate(sketch, budget, seed)

    per_action = []
    if sketch.kind == "pid":
        n_actions = len(sketch.action_names)
        structures = list(itertools.islice(
            _pid_structures(sketch.max_if_depth), max(budget * 4, 32)))
    else:
        n_actions = 1
        structures = list(itertools.islice(
            _guarded_structures(sketch), max(budget * 4, 64)))
    if not structures:
        return []
    per_action = [structures] * n_actions

    # merge per-action structure streams by total skeleton size
    templates = []
    seen = set()
    heap = [(0, (0,) * n_actions)]
    sizes = {}

    def tpl_for(idx):
        if idx not in sizes:
            t = _template_from_structures(
                sketch, tuple(per_action[a][i] for a, i in enumerate(idx)))
            sizes[idx] = t
        return sizes[idx]

    heap = [(tpl_for((0,) * n_actions).size, (0,) * n_actions)]
    seen = {(0,) * n_actions}
    while heap and len(templates) < budget:
        _, idx = heapq.heappop(heap)
        templates.append(tpl_for(idx))
        for a in range(n_actions):
            nxt = tuple(i + 1 if j == a else i for j, i in enumerate(idx))
            if nxt[a] < len(per_action[a]) and nxt not in seen:
                seen.add(nxt)
                heapq.heappush(heap, (tpl_for(nxt).size, nxt))
    templates.sort(key=lambda t: t.size)
    return templates[:budget]


# --- pattern matching ------------------------------------------------------------

@dataclass
class PidLeafParts:
    """Decomposed ``c1*P + c2*I + c3*D`` leaf."""

    channel: object    # Channel or ChannelSlot
    eps: tuple         # setpoint of the P term and of the I term
    coeffs: tuple      # (c1, c2, c3)
    fold_window: int


def _same_channel(a, b):
    return a == b


def match_pid_leaf(expr):
    """Parse a PID-combo leaf; None if the shape does not match."""
    if not isinstance(expr, Add) or not isinstance(expr.a, Add):
        return None
    t1, t2, t3 = expr.a.a, expr.a.b, expr.b
    if not all(isinstance(t, Mul) for t in (t1, t2, t3)):
        return None
    c1, c2, c3 = t1.a, t2.a, t3.a
    if not all(isinstance(c, (Const, Hole)) for c in (c1, c2, c3)):
        return None
    p, i, d = t1.b, t2.b, t3.b
    if not (isinstance(p, Peek) and p.offset == -1
            and isinstance(p.seq, AffineSeq) and p.seq.scale == -1.0):
        return None
    if not (isinstance(i, Fold) and isinstance(i.seq, AffineSeq)
            and i.seq.scale == -1.0):
        return None
    if not (isinstance(d, Sub) and isinstance(d.a, Peek) and isinstance(d.b, Peek)
            and d.a.offset == -2 and d.b.offset == -1):
        return None
    ch = p.seq.inner
    if not isinstance(ch, (Channel, ChannelSlot)):
        return None
    if not (_same_channel(i.seq.inner, ch) and _same_channel(d.a.seq, ch)
            and _same_channel(d.b.seq, ch)):
        return None
    def val(c):
        return c if isinstance(c, Hole) else Const(float(c.value))
    return PidLeafParts(channel=ch, eps=(p.seq.offset, i.seq.offset),
                        coeffs=(c1, c2, c3), fold_window=i.window)


def match_linear_atom(atom: Atom):
    """Decompose ``bias + sum(coeff * peek(ch, -1))``; None if not that shape.

    Returns (bias, [(coeff, seq_node)]) where bias/coeffs are Const or Hole
    and seq nodes are Channel/ChannelSlot (peeked at -1 only).
    """
    bias = None
    terms = []

    def add_term(e, sign):
        nonlocal bias
        if isinstance(e, (Const, Hole)):
            if bias is not None:
                return False
            bias = (e, sign)
            return True
        if isinstance(e, Peek) and e.offset == -1 \
                and isinstance(e.seq, (Channel, ChannelSlot)):
            terms.append((Const(float(sign)), e.seq))
            return True
        if isinstance(e, Mul) and isinstance(e.a, (Const, Hole)) \
                and isinstance(e.b, Peek) and e.b.offset == -1 \
                and isinstance(e.b.seq, (Channel, ChannelSlot)):
            coeff = e.a
            if sign < 0:
                if isinstance(coeff, Hole):
                    return False
                coeff = Const(-coeff.value)
            terms.append((coeff, e.b.seq))
            return True
        return False

    def split(e, sign):
        if isinstance(e, Add):
            return split(e.a, sign) and add_term(e.b, sign)
        if isinstance(e, Sub):
            return split(e.a, sign) and add_term(e.b, -sign)
        return add_term(e, sign)

    if not split(atom.expr, 1) or bias is None or not terms:
        return None
    b, sign = bias
    if sign < 0:
        if isinstance(b, Hole):
            return None
        b = Const(-b.value)
    return b, terms


def _flatten_guard(g):
    """Left-leaning chain -> (atoms, connectors); None for other shapes."""
    atoms, conns = [], []

    def go(node):
        if isinstance(node, Atom):
            atoms.append(node)
            return True
        if isinstance(node, (And, Or)):
            if not go(node.a):
                return False
            if not isinstance(node.b, Atom):
                return False
            atoms.append(node.b)
            conns.append("and" if isinstance(node, And) else "or")
            return True
        return False

    return (atoms, conns) if go(g) else None


def _atom_channels_ok(atom, sketch):
    ok_names = set(sketch.guard_channels)
    for n in walk(atom.expr):
        if isinstance(n, Channel):
            name = sketch.resolve_ident(n.ident)
            if name is None or name not in ok_names:
                return False
        if isinstance(n, Peek) and n.offset != -1 and not _in_fold_form(atom):
            pass
    return True


def _in_fold_form(atom):
    return any(isinstance(n, Fold) for n in walk(atom.expr))


def _guard_ok(guard, sketch, allow_fold):
    flat = _flatten_guard(guard)
    if flat is None:
        return False
    atoms, _ = flat
    if len(atoms) > sketch.guard_atom_budget:
        return False
    for a in atoms:
        if match_linear_atom(a) is not None:
            if not _atom_channels_ok(a, sketch):
                return False
            continue
        if allow_fold and _fold_atom_ok(a, sketch):
            continue
        return False
    return True


def _fold_atom_ok(atom, sketch):
    """fold(ch) - peek(ch', -1) style atoms (window-sum thresholds)."""
    e = atom.expr
    def term_ok(t):
        if isinstance(t, (Const, Hole)):
            return True
        if isinstance(t, Fold) and isinstance(t.seq, (Channel, ChannelSlot)):
            return True
        if isinstance(t, Peek) and t.offset == -1 \
                and isinstance(t.seq, (Channel, ChannelSlot)):
            return True
        return False
    def go(t):
        if isinstance(t, (Add, Sub)):
            return go(t.a) and term_ok(t.b)
        return term_ok(t)
    return go(e) and _atom_channels_ok(atom, sketch)


def _pid_tree_ok(expr, sketch, action_name, depth=0):
    if depth > sketch.max_if_depth:
        return False
    if isinstance(expr, If):
        if not _guard_ok(expr.guard, sketch, allow_fold=False):
            return False
        return (_pid_tree_ok(expr.then, sketch, action_name, depth + 1)
                and _pid_tree_ok(expr.orelse, sketch, action_name, depth + 1))
    parts = match_pid_leaf(expr)
    if parts is None or not isinstance(parts.channel, Channel):
        return False
    name = sketch.resolve_ident(parts.channel.ident)
    return name is not None and name in sketch.channels_for(action_name)


def _guarded_tree_ok(expr, sketch, depth=0):
    if depth > sketch.max_if_depth:
        return False
    if isinstance(expr, If):
        if not _guard_ok(expr.guard, sketch, allow_fold=True):
            return False
        return (_guarded_tree_ok(expr.then, sketch, depth + 1)
                and _guarded_tree_ok(expr.orelse, sketch, depth + 1))
    return (isinstance(expr, Const) and float(expr.value).is_integer()
            and int(expr.value) in sketch.action_set)


def _free_ok(prog, sketch):
    for e in prog.exprs():
        for n in walk(e):
            if isinstance(n, Channel):
                name = sketch.resolve_ident(n.ident)
                if name is None or name not in sketch.channels:
                    return False
    return True


# --- re-parameterization -----------------------------------------------------------

def _reparam_pid_tree(expr, sketch, h, action_name):
    if isinstance(expr, If):
        guard = _reparam_guard(expr.guard, sketch, h)
        return If(guard,
                  _reparam_pid_tree(expr.then, sketch, h, action_name),
                  _reparam_pid_tree(expr.orelse, sketch, h, action_name))
    parts = match_pid_leaf(expr)
    if parts is not None and isinstance(parts.channel, Channel):
        name = sketch.resolve_ident(parts.channel.ident)
        ch = h.channel((name,))
        eps = h.real_hole("setpoint")
        seq = AffineSeq(-1.0, eps, ch)
        return Add(Add(Mul(h.real_hole("coeff"), Peek(seq, -1)),
                       Mul(h.real_hole("coeff"), Fold(seq, parts.fold_window))),
                   Mul(h.real_hole("coeff"),
                       Sub(Peek(ch, -2), Peek(ch, -1))))
    return _reparam_generic(expr, sketch, h, in_guard=False)


def _reparam_guard(guard, sketch, h):
    band = _match_band(guard)
    if band is not None:
        ch_ident, _bias = band
        name = sketch.resolve_ident(ch_ident)
        ch = h.channel((name if name else ch_ident,))
        bias = h.real_hole("bias")
        return And(Atom(Sub(bias, Peek(ch, -1)), ">"),
                   Atom(Add(bias, Peek(ch, -1)), ">"))
    if isinstance(guard, Atom):
        return Atom(_reparam_generic(guard.expr, sketch, h, in_guard=True),
                    guard.sense)
    if isinstance(guard, (And, Or)):
        cls = type(guard)
        return cls(_reparam_guard(guard.a, sketch, h),
                   _reparam_guard(guard.b, sketch, h))
    raise UnsupportedTemplateError(f"cannot re-parameterize {guard!r}")


def _match_band(guard):
    """And of (b - peek > 0, b + peek > 0) with equal b and channel."""
    if not isinstance(guard, And):
        return None
    a, b = guard.a, guard.b
    if not (isinstance(a, Atom) and isinstance(b, Atom)
            and a.sense == ">" and b.sense == ">"):
        return None
    ea, eb = a.expr, b.expr
    if (isinstance(ea, Sub) and isinstance(eb, Add)
            and isinstance(ea.a, Const) and isinstance(eb.a, Const)
            and ea.a.value == eb.a.value
            and isinstance(ea.b, Peek) and isinstance(eb.b, Peek)
            and ea.b.offset == -1 and eb.b.offset == -1
            and isinstance(ea.b.seq, Channel) and ea.b.seq == eb.b.seq):
        return ea.b.seq.ident, ea.a.value
    return None


def _reparam_generic(node, sketch, h, in_guard):
    """Fallback: every numeric constant becomes a hole (label by context)."""
    if isinstance(node, Const):
        return h.real_hole("bias" if in_guard else "coeff")
    if isinstance(node, Channel):
        return node
    if isinstance(node, AffineSeq):
        return AffineSeq(node.scale, h.real_hole("setpoint"),
                         _reparam_generic(node.inner, sketch, h, in_guard))
    if isinstance(node, Atom):
        return Atom(_reparam_generic(node.expr, sketch, h, True), node.sense)
    if isinstance(node, (Add, Sub, Mul, And, Or)):
        cls = type(node)
        return cls(_reparam_generic(node.a, sketch, h, in_guard),
                   _reparam_generic(node.b, sketch, h, in_guard))
    if isinstance(node, Peek):
        return Peek(_reparam_generic(node.seq, sketch, h, in_guard), node.offset)
    if isinstance(node, Fold):
        return Fold(_reparam_generic(node.seq, sketch, h, in_guard), node.window)
    if isinstance(node, If):
        return If(_reparam_generic(node.guard, sketch, h, True),
                  _reparam_generic(node.then, sketch, h, in_guard),
                  _reparam_generic(node.orelse, sketch, h, in_guard))
    return node


def _reparam_guarded_tree(expr, sketch, h):
    if isinstance(expr, If):
        return If(_reparam_guard_guarded(expr.guard, sketch, h),
                  _reparam_guarded_tree(expr.then, sketch, h),
                  _reparam_guarded_tree(expr.orelse, sketch, h))
    return h.action(sketch.action_set)


def _guarded_atom_form(atom):
    e = atom.expr
    if isinstance(e, Add) and isinstance(e.a, (Const, Hole)) \
            and isinstance(e.b, Peek):
        return "peek+", e.b.seq
    if isinstance(e, Sub) and isinstance(e.a, (Const, Hole)) \
            and isinstance(e.b, Peek):
        return "peek-", e.b.seq
    if isinstance(e, Sub) and isinstance(e.a, Fold) and isinstance(e.b, Peek):
        return "foldpeek", (e.a.seq, e.b.seq)
    return None, None


def _reparam_guard_guarded(guard, sketch, h):
    if isinstance(guard, Atom):
        form, seqs = _guarded_atom_form(guard)
        if form == "foldpeek":
            a_name = sketch.resolve_ident(seqs[0].ident) if isinstance(seqs[0], Channel) else None
            b_name = sketch.resolve_ident(seqs[1].ident) if isinstance(seqs[1], Channel) else None
            return Atom(Sub(Fold(h.channel((a_name,)), sketch.window),
                            Peek(h.channel((b_name,)), -1)), guard.sense)
        if form in ("peek+", "peek-"):
            name = sketch.resolve_ident(seqs.ident) if isinstance(seqs, Channel) else None
            ch = h.channel((name,))
            bias = h.real_hole("bias")
            expr = Add(bias, Peek(ch, -1)) if form == "peek+" \
                else Sub(bias, Peek(ch, -1))
            return Atom(expr, guard.sense)
        return Atom(_reparam_generic(guard.expr, sketch, h, True), guard.sense)
    cls = type(guard)
    return cls(_reparam_guard_guarded(guard.a, sketch, h),
               _reparam_guard_guarded(guard.b, sketch, h))


def reparameterize(prog: Program, sketch: Sketch):
    """Template whose holes are the numeric constants of ``prog``."""
    h = _Holes(sketch.bounds)
    actions = []
    for name, e in prog.actions:
        if sketch.kind == "guarded":
            actions.append((name, _reparam_guarded_tree(e, sketch, h)))
        elif sketch.kind == "pid":
            actions.append((name, _reparam_pid_tree(e, sketch, h, name)))
        else:
            actions.append((name, _reparam_generic(e, sketch, h, False)))
    return h.template(actions, prog.window, origin="reparam")


# --- neighborhoods ------------------------------------------------------------------

def _concrete_pid_leaf(channel_name, window):
    ch = Channel(f"h_{channel_name}")
    seq = AffineSeq(-1.0, 0.0, ch)
    return Add(Add(Mul(Const(0.0), Peek(seq, -1)),
                   Mul(Const(0.0), Fold(seq, window))),
               Mul(Const(0.0), Sub(Peek(ch, -2), Peek(ch, -1))))


def _concrete_pid_guard(form, channel_name):
    ch = Channel(f"h_{channel_name}")
    if form == "band":
        return And(Atom(Sub(Const(0.0), Peek(ch, -1)), ">"),
                   Atom(Add(Const(0.0), Peek(ch, -1)), ">"))
    sense = ">" if form == "gt" else "<"
    return Atom(Add(Const(0.0), Peek(ch, -1)), sense)


def _concrete_guarded_atom(form, sense, channels, window):
    if form == "foldpeek":
        c1, c2 = channels
        return Atom(Sub(Fold(Channel(f"h_{c1}"), window),
                        Peek(Channel(f"h_{c2}"), -1)), sense)
    ch = Channel(f"h_{channels[0]}")
    expr = Add(Const(0.0), Peek(ch, -1)) if form == "peek+" \
        else Sub(Const(0.0), Peek(ch, -1))
    return Atom(expr, sense)


def _expr_sites(expr, path=()):
    """(path, node) for every If node and every branch leaf."""
    if isinstance(expr, If):
        yield path, expr
        yield from _expr_sites(expr.then, path + ("then",))
        yield from _expr_sites(expr.orelse, path + ("orelse",))
    else:
        yield path, expr


def _replace_at(expr, path, replacement):
    if not path:
        return replacement
    head, rest = path[0], path[1:]
    if head == "then":
        return If(expr.guard, _replace_at(expr.then, rest, replacement),
                  expr.orelse)
    if head == "orelse":
        return If(expr.guard, expr.then,
                  _replace_at(expr.orelse, rest, replacement))
    raise AssertionError(path)


def _replace_guard_at(expr, path, guard):
    if not path:
        return If(guard, expr.then, expr.orelse)
    head, rest = path[0], path[1:]
    if head == "then":
        return If(expr.guard, _replace_guard_at(expr.then, rest, guard),
                  expr.orelse)
    return If(expr.guard, expr.then,
              _replace_guard_at(expr.orelse, rest, guard))


def _program_edits(prog: Program, sketch: Sketch):
    """Single-edit program variants under the sketch grammar.

    Each variant changes exactly one site: a leaf grows an If level, an If
    collapses to one branch, or one guard is regenerated. Unedited parts keep
    their channels; re-parameterization reopens every numeric constant.
    """
    out = []
    for a_idx, (name, root) in enumerate(prog.actions):
        def emit(origin, new_root):
            if if_depth(new_root) > sketch.max_if_depth:
                return
            actions = tuple((n, new_root if i == a_idx else e)
                            for i, (n, e) in enumerate(prog.actions))
            out.append((origin, Program(actions=actions, window=prog.window)))

        leaf_channels = sketch.channels_for(name) if sketch.kind == "pid" \
            else sketch.channels
        for path, node in _expr_sites(root):
            if isinstance(node, If):
                emit("drop-if", _replace_at(root, path, node.then))
                emit("drop-if", _replace_at(root, path, node.orelse))
                if sketch.kind == "pid":
                    for form in PID_GUARD_FORMS:
                        for gch in sketch.guard_channels:
                            emit("regen-guard", _replace_guard_at(
                                root, path, _concrete_pid_guard(form, gch)))
                else:
                    for form, sense in GUARDED_ATOM_FORMS:
                        for chs in _atom_channel_choices(form, sketch):
                            emit("regen-guard", _replace_guard_at(
                                root, path,
                                _concrete_guarded_atom(form, sense, chs,
                                                       sketch.window)))
            else:
                if sketch.kind == "pid":
                    for form in PID_GUARD_FORMS:
                        for gch in sketch.guard_channels:
                            for lch in leaf_channels:
                                new_leaf = If(_concrete_pid_guard(form, gch),
                                              node,
                                              _concrete_pid_leaf(lch,
                                                                 prog.window))
                                emit("add-if", _replace_at(root, path, new_leaf))
                else:
                    other = Const(float(sketch.action_set[0]))
                    for form, sense in GUARDED_ATOM_FORMS:
                        for chs in _atom_channel_choices(form, sketch):
                            new_leaf = If(
                                _concrete_guarded_atom(form, sense, chs,
                                                       sketch.window),
                                node, other)
                            emit("add-if", _replace_at(root, path, new_leaf))
    return out


def _atom_channel_choices(form, sketch):
    if form == "foldpeek":
        return [(a, b) for a in sketch.guard_channels
                for b in sketch.guard_channels]
    return [(c,) for c in sketch.guard_channels]


def neighborhood_pool(prog: Program, sketch: Sketch, width=8, seed=0):
    """Templates structurally close to ``prog`` (its re-parameterization first)."""
    if width < 1:
        raise ConfigError("width must be >= 1")
    pool = [reparameterize(prog, sketch)]
    if width == 1:
        return pool
    if sketch.kind == "free":
        extra = _free_enumerate(sketch, budget=width - 1, seed=seed)
        for t in extra:
            t.origin = "regen"
        return pool + extra

    edits = _program_edits(prog, sketch)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(edits))
    for i in order[:width - 1]:
        origin, edited = edits[int(i)]
        t = reparameterize(edited, sketch)
        t.origin = origin
        pool.append(t)
    return pool


# --- the unrestricted (no-sketch) grammar --------------------------------------------

def _free_expr(rng, h: _Holes, sketch, depth):
    choices = ["const", "peek", "fold"] if depth <= 0 else \
        ["const", "peek", "fold", "add", "sub", "mul", "if"]
    kind = choices[int(rng.integers(len(choices)))]
    if kind == "const":
        return h.real_hole("coeff")
    if kind == "peek":
        seq = h.channel(sketch.channels)
        if rng.random() < 0.4:
            seq = AffineSeq(-1.0, h.real_hole("setpoint"), seq)
        return Peek(seq, -int(rng.integers(1, sketch.window + 1)))
    if kind == "fold":
        seq = h.channel(sketch.channels)
        if rng.random() < 0.4:
            seq = AffineSeq(-1.0, h.real_hole("setpoint"), seq)
        return Fold(seq, int(rng.integers(1, sketch.window + 1)))
    if kind in ("add", "sub", "mul"):
        cls = {"add": Add, "sub": Sub, "mul": Mul}[kind]
        if kind == "mul" and rng.random() < 0.7:
            return Mul(h.real_hole("coeff"), _free_expr(rng, h, sketch, depth - 1))
        return cls(_free_expr(rng, h, sketch, depth - 1),
                   _free_expr(rng, h, sketch, depth - 1))
    guard = Atom(Add(h.real_hole("bias"), Peek(h.channel(sketch.channels), -1)),
                 ">" if rng.random() < 0.5 else "<")
    return If(guard, _free_expr(rng, h, sketch, depth - 1),
              _free_expr(rng, h, sketch, depth - 1))


def _free_enumerate(sketch, budget, seed):
    rng = np.random.default_rng(seed)
    templates = []
    attempts = 0
    while len(templates) < budget * 3 and attempts < budget * 20:
        attempts += 1
        h = _Holes(sketch.bounds)
        depth = int(rng.integers(0, min(sketch.max_if_depth, 3) + 1))
        actions = tuple((name, _free_expr(rng, h, sketch, depth))
                        for name in sketch.action_names)
        t = h.template(actions, sketch.window, origin="enum")
        templates.append(t)
    templates.sort(key=lambda t: t.size)
    return templates[:budget]


# --- config loading ---------------------------------------------------------------

def load_sketch(path):
    """Load a sketch definition from a YAML key-value document."""
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    return sketch_from_dict(raw)


def sketch_from_dict(raw):
    known = {"kind", "channels", "window", "max_if_depth", "guard_atom_budget",
             "action_set", "actions", "guard_channels", "action_channels",
             "bounds", "channel_order"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown sketch keys: {sorted(unknown)}")
    if "kind" not in raw or "channels" not in raw:
        raise ConfigError("sketch config needs at least 'kind' and 'channels'")
    bounds = None
    if "bounds" in raw and raw["bounds"] is not None:
        bounds = {k: tuple(v) for k, v in raw["bounds"].items()}
    return Sketch(
        kind=raw["kind"],
        channels=tuple(raw["channels"]),
        window=int(raw.get("window", 5)),
        max_if_depth=int(raw.get("max_if_depth", 5)),
        guard_atom_budget=int(raw.get("guard_atom_budget", 2)),
        action_set=tuple(raw.get("action_set", ())),
        action_names=tuple(raw.get("actions", ("out",))),
        guard_channels=tuple(raw["guard_channels"]) if raw.get("guard_channels") else None,
        action_channels={k: tuple(v) for k, v in raw["action_channels"].items()}
        if raw.get("action_channels") else None,
        bounds=bounds,
        channel_order=tuple(raw["channel_order"]) if raw.get("channel_order") else None,
    )
