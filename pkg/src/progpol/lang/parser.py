"""Tokenizer and recursive-descent parser for policy text.

Grammar (also documented in the README):

    policy    := [ 'window' INT ] ( labeled+ | expr )
    labeled   := IDENT ':' expr
    expr      := term (('+' | '-') term)*
    term      := factor ('*' factor)*
    factor    := NUMBER | 'peek' '(' seq ',' INT ')'
               | 'fold' '(' '+' ',' seq [',' INT] ')'
               | 'if' guard 'then' expr 'else' expr
               | '(' expr ')'
    seq       := IDENT | NUMBER '-' seq | '(' seq ')'
    guard     := atom (('and' | 'or') atom)*
    atom      := '(' linear cmp '0' ')'  |  '(' linear ')' cmp '0'
    cmp       := '>' | '<'
    linear    := expr            -- must be If-free (checked)

NUMBER and INT literals may carry a leading minus sign. ``#`` starts a
comment that runs to end of line. Channel identifiers bind by name
(``h_RPM`` -> channel RPM) or by position (``h4`` / ``h_4`` -> channel 4).
The optional ``window`` directive sets the program window (default 5) and is
the window a ``fold`` without an explicit count uses.
"""

from __future__ import annotations

from ..errors import LangTypeError, ParseError
from . import ast

KEYWORDS = {"if", "then", "else", "and", "or", "peek", "fold", "window"}

NUM, IDENT, KW, PUNCT, EOF = "num", "ident", "kw", "punct", "eof"


class Token:
    __slots__ = ("kind", "value", "line", "col")

    def __init__(self, kind, value, line, col):
        self.kind = kind
        self.value = value
        self.line = line
        self.col = col

    def __repr__(self):
        return f"Token({self.kind}, {self.value!r})"


def tokenize(text):
    """Token list for ``text``. Numeric values are parsed floats, so two
    spellings of the same number (``0.40`` / ``0.4``) tokenize equally."""
    toks = []
    line, col, i = 1, 1, 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        start_col = col
        if ch.isdigit() or (ch == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            seen_dot = False
            while j < n and (text[j].isdigit() or (text[j] == "." and not seen_dot)):
                seen_dot = seen_dot or text[j] == "."
                j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    j = k
                    while j < n and text[j].isdigit():
                        j += 1
            toks.append(Token(NUM, float(text[i:j]), line, start_col))
            col += j - i
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            word = text[i:j]
            toks.append(Token(KW if word in KEYWORDS else IDENT, word, line, start_col))
            col += j - i
            i = j
            continue
        if ch in "()+-*,:<>":
            toks.append(Token(PUNCT, ch, line, start_col))
            i += 1
            col += 1
            continue
        raise ParseError(f"unexpected character {ch!r}", line, col)
    toks.append(Token(EOF, None, line, col))
    return toks


class _Parser:
    def __init__(self, toks):
        self.toks = toks
        self.pos = 0

    def peek(self, ahead=0):
        return self.toks[min(self.pos + ahead, len(self.toks) - 1)]

    def next(self):
        tok = self.toks[self.pos]
        if tok.kind != EOF:
            self.pos += 1
        return tok

    def fail(self, msg, tok=None):
        tok = tok or self.peek()
        where = "end of input" if tok.kind == EOF else repr(tok.value)
        raise ParseError(f"{msg}, found {where}", tok.line, tok.col)

    def at_punct(self, ch):
        t = self.peek()
        return t.kind == PUNCT and t.value == ch

    def at_kw(self, word):
        t = self.peek()
        return t.kind == KW and t.value == word

    def expect_punct(self, ch):
        if not self.at_punct(ch):
            self.fail(f"expected {ch!r}")
        return self.next()

    def expect_kw(self, word):
        if not self.at_kw(word):
            self.fail(f"expected {word!r}")
        return self.next()

    # --- literals ---

    def signed_number(self):
        neg = False
        if self.at_punct("-"):
            self.next()
            neg = True
        t = self.peek()
        if t.kind != NUM:
            self.fail("expected a number")
        self.next()
        return -t.value if neg else t.value

    # --- sequences ---

    def seq(self):
        t = self.peek()
        if t.kind == IDENT:
            self.next()
            return ast.Channel(t.value)
        if self.at_punct("("):
            self.next()
            inner = self.seq()
            self.expect_punct(")")
            return inner
        # NUMBER '-' seq
        offset = self.signed_number()
        self.expect_punct("-")
        return ast.AffineSeq(-1.0, offset, self.seq())

    # --- expressions ---

    def expr(self):
        node = self.term()
        while self.at_punct("+") or self.at_punct("-"):
            op = self.next().value
            rhs = self.term()
            node = ast.Add(node, rhs) if op == "+" else ast.Sub(node, rhs)
        return node

    def term(self):
        node = self.factor()
        while self.at_punct("*"):
            self.next()
            node = ast.Mul(node, self.factor())
        return node

    def factor(self):
        t = self.peek()
        if t.kind == NUM or (t.kind == PUNCT and t.value == "-"):
            return ast.Const(self.signed_number())
        if self.at_kw("peek"):
            self.next()
            self.expect_punct("(")
            s = self.seq()
            self.expect_punct(",")
            off = self.signed_number()
            if off != int(off):
                self.fail("peek offset must be an integer", t)
            self.expect_punct(")")
            return ast.Peek(s, int(off))
        if self.at_kw("fold"):
            self.next()
            self.expect_punct("(")
            self.expect_punct("+")
            self.expect_punct(",")
            s = self.seq()
            window = None
            if self.at_punct(","):
                self.next()
                w = self.signed_number()
                if w != int(w) or w < 1:
                    self.fail("fold window must be a positive integer", t)
                window = int(w)
            self.expect_punct(")")
            return ast.Fold(s, window if window is not None else self.default_window)
        if self.at_kw("if"):
            self.next()
            g = self.guard()
            self.expect_kw("then")
            then = self.expr()
            self.expect_kw("else")
            orelse = self.expr()
            return ast.If(g, then, orelse)
        if self.at_punct("("):
            self.next()
            inner = self.expr()
            self.expect_punct(")")
            return inner
        self.fail("expected a number, peek, fold, if, or '('")

    # --- guards ---

    def guard(self):
        node = self.atom()
        while self.at_kw("and") or self.at_kw("or"):
            op = self.next().value
            rhs = self.atom()
            node = ast.And(node, rhs) if op == "and" else ast.Or(node, rhs)
        return node

    def atom(self):
        open_tok = self.expect_punct("(")
        linear = self.expr()
        for g in ast.walk(linear):
            if isinstance(g, ast.If):
                raise ParseError("If inside a guard atom",
                                 open_tok.line, open_tok.col)
        if self.at_punct(">") or self.at_punct("<"):
            sense = self.next().value
            self.cmp_zero()
            self.expect_punct(")")
            return ast.Atom(linear, sense)
        if self.at_punct(")"):
            self.next()
            if not (self.at_punct(">") or self.at_punct("<")):
                self.fail("expected '>' or '<' after guard expression")
            sense = self.next().value
            self.cmp_zero()
            return ast.Atom(linear, sense)
        self.fail("expected a comparison in guard atom")

    def cmp_zero(self):
        t = self.peek()
        if t.kind != NUM or t.value != 0.0:
            self.fail("guard atoms compare against 0")
        self.next()

    # --- top level ---

    def policy(self, default_window):
        window = default_window
        if self.at_kw("window"):
            self.next()
            w = self.signed_number()
            if w != int(w) or w < 1:
                self.fail("window must be a positive integer")
            window = int(w)
        self.default_window = window
        actions = []
        if self.peek().kind == IDENT and self.peek(1).kind == PUNCT \
                and self.peek(1).value == ":":
            while self.peek().kind != EOF:
                name_tok = self.next()
                if name_tok.kind != IDENT:
                    self.fail("expected an action name", name_tok)
                self.expect_punct(":")
                actions.append((name_tok.value, self.expr()))
        else:
            actions.append(("out", self.expr()))
        if self.peek().kind != EOF:
            self.fail("unexpected trailing input")
        return ast.Program(actions=tuple(actions), window=window)


def parse(text, default_window=ast.DEFAULT_WINDOW):
    """Parse policy text into a validated :class:`Program`."""
    p = _Parser(tokenize(text))
    p.default_window = default_window
    prog = p.policy(default_window)
    try:
        ast.validate_program(prog)
    except LangTypeError as exc:
        raise ParseError(str(exc)) from exc
    return prog


def parse_expr(text, window=ast.DEFAULT_WINDOW):
    """Parse a single expression (test convenience)."""
    p = _Parser(tokenize(text))
    p.default_window = window
    e = p.expr()
    if p.peek().kind != EOF:
        p.fail("unexpected trailing input")
    return e
