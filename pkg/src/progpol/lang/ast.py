"""AST for the policy language.

A policy program maps an observation history to an action vector. Expressions
read per-channel time series through ``peek`` (a single reading at a negative
offset) and ``fold`` (a sum over the last ``window`` readings); ``if`` selects
between branches on boolean guards over comparisons with zero.

All nodes are immutable; structural equality is field equality. Template
placeholders (:class:`Hole`, :class:`ChannelSlot`, :class:`DiscreteSlot`) may
appear only in sketch skeletons, never in an executable program.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Union

from ..errors import LangTypeError

DEFAULT_WINDOW = 5


# --- template placeholders -------------------------------------------------

@dataclass(frozen=True)
class Hole:
    """Real-valued parameter slot (usable as a constant or a sequence offset)."""

    hid: int


@dataclass(frozen=True)
class ChannelSlot:
    """Channel-choice slot standing for a sequence."""

    hid: int


@dataclass(frozen=True)
class DiscreteSlot:
    """Finite-choice value slot (e.g. a discrete action label)."""

    hid: int


# --- sequence expressions ---------------------------------------------------

@dataclass(frozen=True)
class Channel:
    """A named observation channel, e.g. ``h_RPM`` or ``h4``."""

    ident: str


@dataclass(frozen=True)
class AffineSeq:
    """Elementwise ``scale * s + offset`` over a sequence.

    The surface grammar only writes the ``offset - s`` form (scale -1), which
    is what sketches generate; other scales are evaluable but not printable.
    """

    scale: float
    offset: Union[float, Hole]
    inner: "SeqExpr"


SeqExpr = Union[Channel, AffineSeq, ChannelSlot]


# --- scalar expressions -----------------------------------------------------

@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Peek:
    """Reading at ``offset`` steps back (-1 = most recent)."""

    seq: SeqExpr
    offset: int


@dataclass(frozen=True)
class Fold:
    """Sum of the last ``window`` transformed readings."""

    seq: SeqExpr
    window: int


@dataclass(frozen=True)
class Add:
    a: "Expr"
    b: "Expr"


@dataclass(frozen=True)
class Sub:
    a: "Expr"
    b: "Expr"


@dataclass(frozen=True)
class Mul:
    a: "Expr"
    b: "Expr"


@dataclass(frozen=True)
class If:
    guard: "Guard"
    then: "Expr"
    orelse: "Expr"


Expr = Union[Const, Peek, Fold, Add, Sub, Mul, If, Hole, DiscreteSlot]


# --- guards ------------------------------------------------------------------

@dataclass(frozen=True)
class Atom:
    """Comparison of an If-free expression against zero.

    ``sense`` is ``'>'`` or ``'<'``; equality with zero is false either way,
    so ties fall through to the else-branch.
    """

    expr: Expr
    sense: str


@dataclass(frozen=True)
class And:
    a: "Guard"
    b: "Guard"


@dataclass(frozen=True)
class Or:
    a: "Guard"
    b: "Guard"


Guard = Union[Atom, And, Or]


def linear_atom(coeffs, bias, sense=">"):
    """Build the restricted atom ``bias + sum(c * peek(h, -1)) sense 0``.

    ``coeffs`` maps channel identifiers to coefficients (floats or Holes);
    this is the guard form sketches generate.
    """
    expr: Expr = bias if isinstance(bias, Hole) else Const(float(bias))
    for ident, c in coeffs.items():
        term = Peek(Channel(ident), -1)
        if not (isinstance(c, float) and c == 1.0):
            coef = c if isinstance(c, Hole) else Const(float(c))
            term = Mul(coef, term)
        expr = Add(expr, term)
    return Atom(expr, sense)


# --- programs ----------------------------------------------------------------

@dataclass(frozen=True)
class Program:
    """One root expression per action dimension plus the declared window."""

    actions: tuple  # tuple[(name: str, Expr), ...]
    window: int = DEFAULT_WINDOW

    def exprs(self):
        return tuple(e for _, e in self.actions)

    def action_names(self):
        return tuple(n for n, _ in self.actions)


def program(expr, name="out", window=DEFAULT_WINDOW):
    """Single-action program."""
    return Program(actions=((name, expr),), window=window)


# --- structural walks ---------------------------------------------------------

_CHILD_TYPES = (Channel, AffineSeq, Const, Peek, Fold, Add, Sub, Mul, If,
                Atom, And, Or, Hole, ChannelSlot, DiscreteSlot)


def children(node):
    """Immediate AST children (dataclass fields that are themselves nodes)."""
    out = []
    for f in fields(node):
        v = getattr(node, f.name)
        if isinstance(v, _CHILD_TYPES):
            out.append(v)
    return out


def walk(node):
    """Depth-first pre-order traversal."""
    yield node
    for c in children(node):
        yield from walk(c)


def node_count(node):
    return sum(1 for _ in walk(node))


def program_size(p: Program):
    return sum(node_count(e) for e in p.exprs())


def if_count(p: Program):
    return sum(1 for e in p.exprs() for n in walk(e) if isinstance(n, If))


def if_depth(expr):
    """Maximum nesting depth of If nodes in one expression."""
    if isinstance(expr, If):
        return 1 + max(if_depth(expr.then), if_depth(expr.orelse))
    kids = children(expr)
    return max((if_depth(k) for k in kids), default=0)


def referenced_channels(p: Program):
    out = set()
    for e in p.exprs():
        for n in walk(e):
            if isinstance(n, Channel):
                out.add(n.ident)
    return out


def has_slots(node):
    # Hole offsets inside AffineSeq are node-typed fields, so walk reaches them.
    return any(isinstance(n, (Hole, ChannelSlot, DiscreteSlot)) for n in walk(node))


def validate_program(p: Program, allow_slots=False):
    """Structural checks: offsets in range, guards If-free, no stray holes."""
    if p.window < 1:
        raise LangTypeError(f"window must be >= 1, got {p.window}")
    if not p.actions:
        raise LangTypeError("program has no action expressions")
    for name, e in p.actions:
        for n in walk(e):
            if isinstance(n, Peek):
                if not (-p.window <= n.offset <= -1):
                    raise LangTypeError(
                        f"peek offset {n.offset} outside -1..-{p.window} in action {name!r}")
            elif isinstance(n, Fold):
                if not (1 <= n.window <= p.window):
                    raise LangTypeError(
                        f"fold window {n.window} outside 1..{p.window} in action {name!r}")
            elif isinstance(n, Atom):
                for g in walk(n.expr):
                    if isinstance(g, If):
                        raise LangTypeError("If inside a guard atom")
            if not allow_slots and isinstance(n, (Hole, ChannelSlot, DiscreteSlot)):
                raise LangTypeError("template slot in an executable program")
    return p
