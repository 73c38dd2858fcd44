"""Pretty-printer (surface syntax) and canonical serialization.

``format_program`` emits text that reparses to a structurally identical
program. The canonical form (``to_canon``) is a line-per-action dataclass
dump with stable field order, intended for machine diffing.
"""

from __future__ import annotations

from ..errors import UnprintableProgramError
from . import ast

_PREC_ADD = 1
_PREC_MUL = 2
_PREC_ATOM = 3


def format_number(v):
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _format_seq(seq, parens=False):
    if isinstance(seq, ast.Channel):
        return seq.ident
    if isinstance(seq, ast.AffineSeq):
        if seq.scale != -1.0 or isinstance(seq.offset, ast.Hole):
            raise UnprintableProgramError(
                "only 'offset - seq' affine sequences have surface syntax")
        body = f"{format_number(seq.offset)} - {_format_seq(seq.inner)}"
        return f"({body})" if parens else body
    raise UnprintableProgramError(f"no surface syntax for {type(seq).__name__}")


def _format_expr(e, prec, window):
    if isinstance(e, ast.Const):
        s = format_number(e.value)
        # a negative literal already binds tighter than any operator
        return s
    if isinstance(e, ast.Peek):
        return f"peek({_format_seq(e.seq, parens=True)}, {e.offset})"
    if isinstance(e, ast.Fold):
        if e.window == window:
            return f"fold(+, {_format_seq(e.seq, parens=True)})"
        return f"fold(+, {_format_seq(e.seq, parens=True)}, {e.window})"
    if isinstance(e, (ast.Add, ast.Sub)):
        op = "+" if isinstance(e, ast.Add) else "-"
        left = _format_expr(e.a, _PREC_ADD, window)
        right = _format_expr(e.b, _PREC_ADD + 1, window)
        s = f"{left} {op} {right}"
        return f"({s})" if prec > _PREC_ADD else s
    if isinstance(e, ast.Mul):
        left = _format_expr(e.a, _PREC_MUL, window)
        right = _format_expr(e.b, _PREC_MUL + 1, window)
        s = f"{left} * {right}"
        return f"({s})" if prec > _PREC_MUL else s
    if isinstance(e, ast.If):
        s = (f"if {_format_guard(e.guard, window)} "
             f"then {_format_expr(e.then, 0, window)} "
             f"else {_format_expr(e.orelse, 0, window)}")
        return f"({s})" if prec > 0 else s
    raise UnprintableProgramError(f"no surface syntax for {type(e).__name__}")


def _format_guard(g, window):
    if isinstance(g, ast.Atom):
        return f"({_format_expr(g.expr, 0, window)} {g.sense} 0)"
    if isinstance(g, (ast.And, ast.Or)):
        # the grammar has no guard parentheses: only left-leaning chains print
        if isinstance(g.b, (ast.And, ast.Or)):
            raise UnprintableProgramError(
                "guard chains must associate to the left")
        op = "and" if isinstance(g, ast.And) else "or"
        return f"{_format_guard(g.a, window)} {op} {_format_guard(g.b, window)}"
    raise UnprintableProgramError(f"no surface syntax for {type(g).__name__}")


def format_expr(e, window=ast.DEFAULT_WINDOW):
    return _format_expr(e, 0, window)


def format_program(p: ast.Program):
    """Surface text for a program; ``parse(format_program(p)) == p``."""
    lines = []
    if p.window != ast.DEFAULT_WINDOW:
        lines.append(f"window {p.window}")
    if len(p.actions) == 1 and p.actions[0][0] == "out":
        lines.append(_format_expr(p.actions[0][1], 0, p.window))
    else:
        for name, e in p.actions:
            lines.append(f"{name}: {_format_expr(e, 0, p.window)}")
    return "\n".join(lines) + "\n"


def to_canon(p: ast.Program):
    """Canonical line-delimited structured form (stable field order)."""
    lines = [f"window {p.window}"]
    for name, e in p.actions:
        lines.append(f"action {name} {e!r}")
    return "\n".join(lines) + "\n"
