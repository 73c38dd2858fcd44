"""Policy language: parsing, printing, evaluation, and their contracts."""

import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from progpol.errors import (ChannelResolutionError, InsufficientHistoryError,
                            InvalidDiscreteProgramError, ParseError)
from progpol.lang import (AffineSeq, Atom, Channel, Const, Fold, History, If,
                          Peek, Program, Sub, batch_evaluate, evaluate,
                          evaluate_discrete, format_program, linear_atom,
                          parse, parse_expr, program, slots_tensor, to_canon,
                          tokenize)
from progpol.policies import NAMES, load_policy, policy_text

CLASSIC = ("acrobot", "cartpole", "mountaincar")


def hist(**channels):
    order = tuple(channels)
    return History.from_channels({k: v for k, v in channels.items()}, order=order)


def lane_hist(trackpos, rpm):
    return History.from_channels(
        {"TrackPos": trackpos, "Angle": [0.0] * len(rpm),
         "Speed": [0.0] * len(rpm), "RPM": rpm},
        order=("TrackPos", "Angle", "Speed", "RPM"))


# --- parsing and round trips -------------------------------------------------

@pytest.mark.parametrize("name", NAMES)
def test_fixture_round_trip(name):
    p = load_policy(name)
    again = parse(format_program(p))
    assert again == p
    # and idempotent printing
    assert format_program(again) == format_program(p)


def test_fixture_token_stream_identity():
    # canonical printing reproduces the guarded-accel fixture token for token
    text = policy_text("accel_a")
    printed = format_program(parse(text))
    orig = [(t.kind, t.value) for t in tokenize(text)]
    new = [(t.kind, t.value) for t in tokenize(printed)]
    assert orig == new


def test_parse_acrobot_shape():
    p = load_policy("acrobot")
    (name, e), = p.actions
    assert isinstance(e, If)
    assert isinstance(e.guard, Atom) and e.guard.sense == "<"
    assert e.then == Const(2.0) and e.orelse == Const(0.0)


def test_parse_error_at_end_of_input():
    with pytest.raises(ParseError, match="end of input"):
        parse("peek(h0, -1) +")


def test_parse_error_has_position():
    with pytest.raises(ParseError) as err:
        parse("1 + &")
    assert err.value.line == 1 and err.value.col == 5


def test_guard_must_compare_against_zero():
    with pytest.raises(ParseError):
        parse("if (peek(h0, -1) > 1) then 1 else 0")


def test_if_inside_guard_atom_rejected():
    with pytest.raises(ParseError):
        parse("if ((if (1 > 0) then 1 else 0) > 0) then 1 else 0")


def test_window_directive_and_labels_round_trip():
    text = "window 3\nsteer: peek(h_TrackPos, -1)\naccel: fold(+, h_RPM)\n"
    p = parse(text)
    assert p.window == 3
    assert p.action_names() == ("steer", "accel")
    assert p.actions[1][1] == Fold(Channel("h_RPM"), 3)
    assert parse(format_program(p)) == p


def test_explicit_fold_window_survives():
    p = parse("fold(+, h0, 2)")
    assert p.actions[0][1] == Fold(Channel("h0"), 2)
    assert "fold(+, h0, 2)" in format_program(p)


def test_peek_offset_out_of_range_rejected():
    with pytest.raises(ParseError):
        parse("window 2\npeek(h0, -3)")


def test_both_atom_paren_styles_parse_the_same():
    a = parse("if (0.5 - peek(h0, -1) > 0) then 1 else 0")
    b = parse("if (0.5 - peek(h0, -1)) > 0 then 1 else 0")
    assert a == b


def test_signed_literals():
    p = parse("-3.5 * peek(h0, -1)")
    assert parse(format_program(p)) == p


_num = st.one_of(
    st.integers(-50, 50).map(float),
    st.floats(allow_nan=False, allow_infinity=False, min_value=-1e6,
              max_value=1e6),
)
_ident = st.sampled_from(["h0", "h1", "h3", "h_RPM", "h_TrackPos", "speed"])


@st.composite
def _seqs(draw, depth=2):
    if depth <= 0 or draw(st.booleans()):
        return Channel(draw(_ident))
    return AffineSeq(-1.0, draw(_num), draw(_seqs(depth - 1)))


@st.composite
def _exprs(draw, window, depth):
    import progpol.lang as L
    if depth <= 0:
        kind = draw(st.sampled_from(["const", "peek", "fold"]))
    else:
        kind = draw(st.sampled_from(
            ["const", "peek", "fold", "add", "sub", "mul", "if"]))
    if kind == "const":
        return Const(draw(_num))
    if kind == "peek":
        return Peek(draw(_seqs()), draw(st.integers(-window, -1)))
    if kind == "fold":
        return Fold(draw(_seqs()), draw(st.integers(1, window)))
    if kind in ("add", "sub", "mul"):
        a = draw(_exprs(window, depth - 1))
        b = draw(_exprs(window, depth - 1))
        return {"add": L.Add, "sub": L.Sub, "mul": L.Mul}[kind](a, b)
    atoms = draw(st.lists(st.tuples(_exprs(window, 0), st.sampled_from("><")),
                          min_size=1, max_size=3))
    g = Atom(*atoms[0])
    for e, sense in atoms[1:]:
        g = draw(st.sampled_from([L.And, L.Or]))(g, Atom(e, sense))
    return If(g, draw(_exprs(window, depth - 1)), draw(_exprs(window, depth - 1)))


@st.composite
def _programs(draw):
    window = draw(st.integers(1, 7))
    n_actions = draw(st.integers(1, 2))
    if n_actions == 1:
        actions = (("out", draw(_exprs(window, 3))),)
    else:
        actions = (("steer", draw(_exprs(window, 2))),
                   ("accel", draw(_exprs(window, 2))))
    return Program(actions=actions, window=window)


@given(_programs())
@settings(max_examples=200, deadline=None)
def test_round_trip_random_programs(p):
    assert parse(format_program(p)) == p


def test_canonical_form_is_line_structured():
    p = load_policy("acrobot")
    lines = to_canon(p).strip().split("\n")
    assert lines[0] == "window 5"
    assert lines[1].startswith("action out If(")
    assert to_canon(p) == to_canon(parse(format_program(p)))


# --- evaluation ---------------------------------------------------------------

def test_peek_latest():
    p = program(Peek(Channel("c"), -1), window=2)
    assert evaluate(p, hist(c=[1.0, 2.0, 3.0])) == (3.0,)


def test_fold_affine_window():
    p = program(Fold(AffineSeq(-1.0, 0.44, Channel("RPM")), 5))
    h = hist(RPM=[0.5] * 6)
    (v,) = evaluate(p, h)
    assert v == pytest.approx(5 * (0.44 - 0.5), abs=1e-12)


def test_guarded_pid_matches_straight_line_arithmetic():
    # independent straight-line computation of the guarded-accel fixture
    rpm = [0.52, 0.50, 0.48, 0.46, 0.45, 0.43]
    h = lane_hist([0.0] * 6, rpm)
    eps = 0.44  # both guard atoms hold at TrackPos 0, selecting this branch
    p_term = eps - rpm[-1]
    i_term = sum(eps - r for r in rpm[-5:])
    d_term = rpm[-2] - rpm[-1]
    expected = 3.97 * p_term + 0.01 * i_term + 48.79 * d_term
    (got,) = evaluate(load_policy("accel_a"), h)
    assert got == pytest.approx(expected, abs=1e-12)
    # flip the guard: TrackPos far from center selects the 0.40 branch
    h2 = lane_hist([0.0] * 5 + [0.5], rpm)
    eps = 0.40
    expected2 = (3.97 * (eps - rpm[-1])
                 + 0.01 * sum(eps - r for r in rpm[-5:])
                 + 48.79 * d_term)
    (got2,) = evaluate(load_policy("accel_a"), h2)
    assert got2 == pytest.approx(expected2, abs=1e-12)


def test_missing_channel():
    with pytest.raises(ChannelResolutionError):
        evaluate(program(Peek(Channel("h_missing"), -1), window=1),
                 hist(c=[0.0, 0.0]))


def test_insufficient_history():
    with pytest.raises(InsufficientHistoryError):
        evaluate(program(Peek(Channel("c"), -1), window=5), hist(c=[1.0, 2.0]))


def test_padded_history_meets_window():
    h = hist(c=[7.0]).padded(6)
    assert h.length == 6
    assert list(h.channel("c")) == [7.0] * 6
    p = program(Fold(Channel("c"), 5))
    assert evaluate(p, h) == (35.0,)


def test_evaluate_discrete_examples():
    acro = load_policy("acrobot")
    base = {f"c{i}": [0.0] * 6 for i in range(4)}
    h = History.from_channels(base | {"w1": [0.0] * 5 + [-0.2], "w2": [0.0] * 6},
                              order=tuple(base) + ("w1", "w2"))
    assert evaluate_discrete(acro, h, [0, 1, 2]) == 2
    h0 = History.from_channels(base | {"w1": [0.0] * 6, "w2": [0.0] * 6},
                               order=tuple(base) + ("w1", "w2"))
    assert evaluate_discrete(acro, h0, [0, 1, 2]) == 0

    cart = load_policy("cartpole")
    hc = hist(x=[0.0] * 6, v=[0.0] * 6, th=[0.0] * 6, w=[0.0] * 5 + [1.0])
    assert evaluate_discrete(cart, hc, [0, 1]) == 1


def test_evaluate_discrete_rejects_labels_outside_action_set():
    acro = load_policy("acrobot")
    h = hist(a=[0.0] * 6, b=[0.0] * 6, c=[0.0] * 6, d=[0.0] * 6,
             e=[0.0] * 6, f=[0.0] * 6)
    with pytest.raises(InvalidDiscreteProgramError):
        evaluate_discrete(acro, h, [0, 1])  # leaf 2 not allowed


def test_evaluate_discrete_rejects_non_constant_leaves():
    p = parse("peek(h0, -1)")
    with pytest.raises(InvalidDiscreteProgramError):
        evaluate_discrete(p, hist(c=[0.0] * 6), [0, 1])


def test_ties_resolve_to_else_branch():
    p = parse("if (peek(h0, -1) > 0) then 1 else 0")
    assert evaluate(p, hist(c=[0.0] * 6)) == (0.0,)
    q = parse("if (peek(h0, -1) < 0) then 1 else 0")
    assert evaluate(q, hist(c=[0.0] * 6)) == (0.0,)


def _random_evaluable(rng, window=5):
    """Small random program over channels a/b, linear guards only."""
    def expr(depth):
        k = rng.choice(["const", "peek", "fold", "add", "mul", "if"]
                       if depth else ["const", "peek", "fold"])
        if k == "const":
            return Const(round(rng.uniform(-3, 3), 3))
        if k == "peek":
            seq = Channel(rng.choice("ab"))
            if rng.random() < 0.5:
                seq = AffineSeq(-1.0, round(rng.uniform(-1, 1), 3), seq)
            return Peek(seq, -rng.randint(1, window))
        if k == "fold":
            return Fold(Channel(rng.choice("ab")), rng.randint(1, window))
        if k == "add":
            return Sub(expr(depth - 1), expr(depth - 1))
        if k == "mul":
            import progpol.lang as L
            return L.Mul(Const(round(rng.uniform(-2, 2), 2)), expr(depth - 1))
        g = linear_atom({rng.choice("ab"): round(rng.uniform(-2, 2), 2)},
                        round(rng.uniform(-1, 1), 2),
                        rng.choice("><"))
        return If(g, expr(depth - 1), expr(depth - 1))
    return program(expr(3), window=window)


def test_evaluate_is_deterministic_and_window_local():
    rng = random.Random(7)
    for _ in range(50):
        p = _random_evaluable(rng)
        tail = {c: [rng.uniform(-1, 1) for _ in range(6)] for c in "ab"}
        h1 = hist(**tail)
        assert evaluate(p, h1) == evaluate(p, h1)
        # prepending older readings never changes the result
        extended = {c: [rng.uniform(-5, 5) for _ in range(4)] + tail[c]
                    for c in "ab"}
        assert evaluate(p, hist(**extended)) == evaluate(p, h1)


def test_linear_guards_read_only_latest():
    rng = random.Random(11)
    g = linear_atom({"a": 1.5}, -0.25, ">")
    p = program(If(g, Const(1.0), Const(0.0)))
    for _ in range(20):
        tail = [rng.uniform(-1, 1) for _ in range(6)]
        h1 = hist(a=tail)
        mutated = [rng.uniform(-9, 9) for _ in range(5)] + tail[-1:]
        assert evaluate(p, hist(a=mutated)) == evaluate(p, h1)


@given(st.lists(st.floats(-100, 100), min_size=6, max_size=12),
       st.integers(1, 5))
@settings(max_examples=100, deadline=None)
def test_fold_equals_naive_loop(values, w):
    p = program(Fold(AffineSeq(-1.0, 0.3, Channel("a")), w))
    (got,) = evaluate(p, hist(a=values))
    naive = 0.0
    for v in values[-w:]:
        naive += 0.3 - v
    assert got == pytest.approx(naive, abs=1e-9)


def test_batch_evaluator_matches_scalar():
    rng = random.Random(3)
    for _ in range(30):
        p = _random_evaluable(rng)
        hs = [hist(**{c: [rng.uniform(-1, 1) for _ in range(6)] for c in "ab"})
              for _ in range(17)]
        slots = slots_tensor(hs, ("a", "b"), 6)
        out = batch_evaluate(p, slots, ("a", "b"))
        ref = np.array([evaluate(p, h) for h in hs])
        assert np.array_equal(out, ref)


def test_history_invariants():
    with pytest.raises(ValueError):
        History.from_channels({"a": [1.0, 2.0], "b": [1.0]})
    h = hist(a=[1.0, 2.0, 3.0])
    assert h.length == 3
    with pytest.raises(ValueError):
        h.data[0, 0] = 9.0  # immutable

    assert h.suffix(2).length == 2
    assert list(h.suffix(2).channel("a")) == [2.0, 3.0]


def test_channel_resolution_forms():
    h = History.from_channels({"RPM": [1.0], "TrackPos": [2.0]},
                              order=("RPM", "TrackPos"))
    assert h.resolve("h_RPM") == 0
    assert h.resolve("RPM") == 0
    assert h.resolve("h1") == 1
    assert h.resolve("h_1") == 1
    with pytest.raises(ChannelResolutionError):
        h.resolve("h_Gear")
