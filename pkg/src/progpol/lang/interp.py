"""Histories and the reference (scalar) evaluator.

A :class:`History` is an immutable, bounded record of per-channel readings
(oldest to newest) plus the actions taken between them. Policy evaluation is
pure: identical program/history pairs give bitwise-identical outputs, and only
the last ``window + 1`` readings of each channel can influence the result.
"""

from __future__ import annotations

import numpy as np

from ..errors import (ChannelResolutionError, InsufficientHistoryError,
                      InvalidDiscreteProgramError, LangTypeError)
from . import ast


class History:
    """Per-channel time series plus recorded actions.

    ``data`` has shape (channels, steps); ``actions`` has shape
    (steps - 1, action_dims) for rollout-produced histories (padded histories
    keep the original, shorter action record).
    """

    __slots__ = ("names", "data", "actions")

    def __init__(self, names, data, actions=None):
        self.names = tuple(names)
        arr = np.asarray(data, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != len(self.names):
            raise ValueError("data must have shape (len(names), steps)")
        if arr.shape[1] < 1:
            raise ValueError("a history holds at least one step")
        arr = arr.copy()
        arr.flags.writeable = False
        self.data = arr
        if actions is None:
            acts = np.zeros((0, 0))
        else:
            acts = np.asarray(actions, dtype=float)
            if acts.ndim == 1:
                acts = acts.reshape(-1, 1)
        acts = acts.copy()
        acts.flags.writeable = False
        self.actions = acts

    @classmethod
    def from_channels(cls, channels, actions=None, order=None):
        """Build from a mapping name -> sequence (all sequences equal length)."""
        names = tuple(order) if order is not None else tuple(channels)
        rows = [np.asarray(channels[n], dtype=float) for n in names]
        lengths = {len(r) for r in rows}
        if len(lengths) != 1:
            raise ValueError(f"channel sequences differ in length: {sorted(lengths)}")
        return cls(names, np.stack(rows), actions)

    @property
    def length(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return {n: self.data[i] for i, n in enumerate(self.names)}

    def channel(self, name):
        return self.data[self._index_of(name)]

    def _index_of(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise ChannelResolutionError(f"no channel named {name!r}") from None

    def resolve(self, ident):
        """Row index for a policy-text identifier (``h_RPM``, ``h4``, ``RPM``)."""
        return resolve_channel(ident, self.names)

    def padded(self, min_len):
        """Front-pad by repeating the first reading until ``min_len`` steps."""
        if self.length >= min_len:
            return self
        pad = np.repeat(self.data[:, :1], min_len - self.length, axis=1)
        return History(self.names, np.hstack([pad, self.data]), self.actions)

    def suffix(self, steps):
        """The last ``steps`` readings (actions trimmed to match)."""
        if steps >= self.length:
            return self
        acts = self.actions[-(steps - 1):] if len(self.actions) else self.actions
        return History(self.names, self.data[:, -steps:], acts)

    def __repr__(self):
        return f"History({self.names}, steps={self.length})"


def resolve_channel(ident, names):
    """Map a channel identifier to its row index in ``names``.

    Accepted forms: the bare channel name, ``h_<name>``, and positional
    ``h<k>`` / ``h_<k>`` (k = 0-based index in the environment's order).
    """
    if ident in names:
        return names.index(ident)
    if ident.startswith("h_"):
        rest = ident[2:]
        if rest in names:
            return names.index(rest)
        if rest.isdigit() and int(rest) < len(names):
            return int(rest)
    elif ident.startswith("h") and ident[1:].isdigit():
        k = int(ident[1:])
        if k < len(names):
            return k
    raise ChannelResolutionError(
        f"cannot resolve channel {ident!r} among {list(names)}")


def _eval_seq_at(seq, hist, back):
    if isinstance(seq, ast.Channel):
        row = hist.resolve(seq.ident)
        return float(hist.data[row, hist.length - back])
    if isinstance(seq, ast.AffineSeq):
        if isinstance(seq.offset, ast.Hole):
            raise LangTypeError("template slot in an executable program")
        return seq.scale * _eval_seq_at(seq.inner, hist, back) + seq.offset
    raise LangTypeError(f"cannot evaluate sequence node {type(seq).__name__}")


def _eval_expr(e, hist):
    if isinstance(e, ast.Const):
        return float(e.value)
    if isinstance(e, ast.Peek):
        return _eval_seq_at(e.seq, hist, -e.offset)
    if isinstance(e, ast.Fold):
        return sum(_eval_seq_at(e.seq, hist, k) for k in range(1, e.window + 1))
    if isinstance(e, ast.Add):
        return _eval_expr(e.a, hist) + _eval_expr(e.b, hist)
    if isinstance(e, ast.Sub):
        return _eval_expr(e.a, hist) - _eval_expr(e.b, hist)
    if isinstance(e, ast.Mul):
        return _eval_expr(e.a, hist) * _eval_expr(e.b, hist)
    if isinstance(e, ast.If):
        return _eval_expr(e.then if _eval_guard(e.guard, hist) else e.orelse, hist)
    raise LangTypeError(f"cannot evaluate node {type(e).__name__}")


def _eval_guard(g, hist):
    if isinstance(g, ast.Atom):
        v = _eval_expr(g.expr, hist)
        return v > 0.0 if g.sense == ">" else v < 0.0
    if isinstance(g, ast.And):
        return _eval_guard(g.a, hist) and _eval_guard(g.b, hist)
    if isinstance(g, ast.Or):
        return _eval_guard(g.a, hist) or _eval_guard(g.b, hist)
    raise LangTypeError(f"cannot evaluate guard node {type(g).__name__}")


def evaluate(p: ast.Program, hist: History):
    """Evaluate a program on a history; returns one float per action channel."""
    if hist.length < p.window + 1:
        raise InsufficientHistoryError(
            f"history has {hist.length} steps, program window {p.window} "
            f"needs {p.window + 1}")
    return tuple(_eval_expr(e, hist) for e in p.exprs())


def _const_leaves(e):
    """All branch leaves of an If tree (the leaf exprs, not just Consts)."""
    if isinstance(e, ast.If):
        yield from _const_leaves(e.then)
        yield from _const_leaves(e.orelse)
    else:
        yield e


def evaluate_discrete(p: ast.Program, hist: History, action_set):
    """Evaluate a discrete-action program; returns the selected action label.

    Every branch leaf must be a constant whose value is one of ``action_set``.
    """
    if len(p.actions) != 1:
        raise InvalidDiscreteProgramError(
            f"discrete programs have one action expression, got {len(p.actions)}")
    labels = set(int(a) for a in action_set)
    root = p.exprs()[0]
    for leaf in _const_leaves(root):
        if not isinstance(leaf, ast.Const) or not float(leaf.value).is_integer() \
                or int(leaf.value) not in labels:
            raise InvalidDiscreteProgramError(
                f"branch leaf {leaf!r} is not a constant in {sorted(labels)}")
    (value,) = evaluate(p, hist)
    return int(value)
