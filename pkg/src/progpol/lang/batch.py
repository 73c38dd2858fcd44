"""Vectorized evaluation over batches of history windows.

Only the last ``window + 1`` readings per channel matter to a policy, so a
batch of histories reduces to a slots tensor of shape (N, channels, window+1)
with the newest reading in the last column. ``batch_evaluate`` computes all N
action vectors at once; it must agree with the scalar evaluator bitwise on
every input (tested), and exists because parameter fitting evaluates the same
template on thousands of stored histories per candidate.
"""

from __future__ import annotations

import numpy as np

from ..errors import InsufficientHistoryError, LangTypeError
from . import ast
from .interp import resolve_channel


def slots_tensor(histories, names, width):
    """Stack the last ``width`` readings of each history into (N, C, width)."""
    out = np.empty((len(histories), len(names), width))
    for i, h in enumerate(histories):
        if h.length < width:
            raise InsufficientHistoryError(
                f"history {i} has {h.length} steps, need {width}")
        for c, name in enumerate(names):
            out[i, c] = h.channel(name)[-width:]
    return out


def _seq_col(seq, slots, names, back):
    """Transformed readings ``back`` slots from the end, for every row."""
    if isinstance(seq, ast.Channel):
        row = resolve_channel(seq.ident, names)
        return slots[:, row, slots.shape[2] - back]
    if isinstance(seq, ast.AffineSeq):
        if isinstance(seq.offset, ast.Hole):
            raise LangTypeError("template slot in an executable program")
        return seq.scale * _seq_col(seq.inner, slots, names, back) + seq.offset
    raise LangTypeError(f"cannot evaluate sequence node {type(seq).__name__}")


def _eval(e, slots, names):
    if isinstance(e, ast.Const):
        return np.full(slots.shape[0], float(e.value))
    if isinstance(e, ast.Peek):
        return _seq_col(e.seq, slots, names, -e.offset).copy()
    if isinstance(e, ast.Fold):
        acc = _seq_col(e.seq, slots, names, 1).copy()
        for k in range(2, e.window + 1):
            acc += _seq_col(e.seq, slots, names, k)
        return acc
    if isinstance(e, ast.Add):
        return _eval(e.a, slots, names) + _eval(e.b, slots, names)
    if isinstance(e, ast.Sub):
        return _eval(e.a, slots, names) - _eval(e.b, slots, names)
    if isinstance(e, ast.Mul):
        return _eval(e.a, slots, names) * _eval(e.b, slots, names)
    if isinstance(e, ast.If):
        mask = _eval_guard(e.guard, slots, names)
        return np.where(mask, _eval(e.then, slots, names),
                        _eval(e.orelse, slots, names))
    raise LangTypeError(f"cannot evaluate node {type(e).__name__}")


def _eval_guard(g, slots, names):
    if isinstance(g, ast.Atom):
        v = _eval(g.expr, slots, names)
        return v > 0.0 if g.sense == ">" else v < 0.0
    if isinstance(g, ast.And):
        return _eval_guard(g.a, slots, names) & _eval_guard(g.b, slots, names)
    if isinstance(g, ast.Or):
        return _eval_guard(g.a, slots, names) | _eval_guard(g.b, slots, names)
    raise LangTypeError(f"cannot evaluate guard node {type(g).__name__}")


def batch_evaluate(p: ast.Program, slots, names):
    """All action vectors for a slots tensor; shape (N, action_dims)."""
    if slots.shape[2] < p.window + 1:
        raise InsufficientHistoryError(
            f"slots provide {slots.shape[2]} readings, window {p.window} "
            f"needs {p.window + 1}")
    cols = [_eval(e, slots, names) for e in p.exprs()]
    return np.stack(cols, axis=1)
