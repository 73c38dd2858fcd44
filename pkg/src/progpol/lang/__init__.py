"""Policy language: AST, parser, printer, evaluator."""

from .ast import (DEFAULT_WINDOW, Add, AffineSeq, And, Atom, Channel,
                  ChannelSlot, Const, DiscreteSlot, Fold, Hole, If, Mul, Or,
                  Peek, Program, Sub, children, has_slots, if_count, if_depth,
                  linear_atom, node_count, program, program_size,
                  referenced_channels, validate_program, walk)
from .batch import batch_evaluate, slots_tensor
from .interp import (History, evaluate, evaluate_discrete, resolve_channel)
from .parser import parse, parse_expr, tokenize
from .printer import format_expr, format_number, format_program, to_canon

__all__ = [
    "DEFAULT_WINDOW", "Add", "AffineSeq", "And", "Atom", "Channel",
    "ChannelSlot", "Const", "DiscreteSlot", "Fold", "History", "Hole", "If",
    "Mul", "Or", "Peek", "Program", "Sub", "batch_evaluate", "children",
    "evaluate", "evaluate_discrete", "format_expr", "format_number",
    "format_program", "has_slots", "if_count", "if_depth", "linear_atom",
    "node_count", "parse", "parse_expr", "program", "program_size",
    "referenced_channels", "resolve_channel", "slots_tensor", "to_canon",
    "tokenize", "validate_program", "walk",
]
