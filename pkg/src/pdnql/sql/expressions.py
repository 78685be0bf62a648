"""Expression trees: unresolved names, bound column references, literals and operators.

Predicates follow a two-valued null rule: any comparison touching a null is false,
arithmetic over a null yields null.
"""
from __future__ import annotations

import operator
from dataclasses import dataclass
from typing import Any, Callable, Iterator, Optional, Union

from ..catalog import SecurityLevel, ValueType, format_date


@dataclass(frozen=True)
class Name:
    qualifier: Optional[str]
    name: str


@dataclass(frozen=True)
class ColRef:
    cid: int
    name: str
    type: ValueType
    level: SecurityLevel
    qualifier: Optional[str] = None


@dataclass(frozen=True)
class IntLit:
    value: int
    unit: Optional[str] = None  # "days" for interval literals


@dataclass(frozen=True)
class TextLit:
    value: str


@dataclass(frozen=True)
class DateLit:
    days: int


@dataclass(frozen=True)
class Arith:
    op: str  # + or -
    lhs: "Expr"
    rhs: "Expr"


@dataclass(frozen=True)
class Compare:
    op: str  # = <> < <= > >=
    lhs: "Expr"
    rhs: "Expr"


@dataclass(frozen=True)
class Logical:
    op: str  # AND or OR
    lhs: "Expr"
    rhs: "Expr"


@dataclass(frozen=True)
class InList:
    """``expr IN table``: membership in a single-column (replicated) table."""

    expr: "Expr"
    table: str
    level: SecurityLevel = SecurityLevel.PUBLIC


Expr = Union[Name, ColRef, IntLit, TextLit, DateLit, Arith, Compare, Logical, InList]

_COMPARE = {
    "=": operator.eq, "<>": operator.ne, "<": operator.lt,
    "<=": operator.le, ">": operator.gt, ">=": operator.ge,
}


def children(expr: Expr) -> tuple:
    if isinstance(expr, (Arith, Compare, Logical)):
        return (expr.lhs, expr.rhs)
    if isinstance(expr, InList):
        return (expr.expr,)
    return ()


def walk(expr: Expr) -> Iterator[Expr]:
    yield expr
    for c in children(expr):
        yield from walk(c)


def refs(expr: Expr) -> Iterator[ColRef]:
    for e in walk(expr):
        if isinstance(e, ColRef):
            yield e


def ref_cids(expr: Expr) -> set[int]:
    return {r.cid for r in refs(expr)}


def level_of(expr: Expr) -> SecurityLevel:
    """Provenance level: the max level of every attribute the expression touches."""
    levels = [r.level for r in refs(expr)]
    levels += [e.level for e in walk(expr) if isinstance(e, InList)]
    return max(levels, default=SecurityLevel.PUBLIC)


def conjuncts(expr: Optional[Expr]) -> list[Expr]:
    if expr is None:
        return []
    if isinstance(expr, Logical) and expr.op == "AND":
        return conjuncts(expr.lhs) + conjuncts(expr.rhs)
    return [expr]


def conjoin(parts: list[Expr]) -> Optional[Expr]:
    out: Optional[Expr] = None
    for p in parts:
        out = p if out is None else Logical("AND", out, p)
    return out


def render(expr: Expr) -> str:
    if isinstance(expr, Name):
        return f"{expr.qualifier}.{expr.name}" if expr.qualifier else expr.name
    if isinstance(expr, ColRef):
        return f"{expr.qualifier}.{expr.name}" if expr.qualifier else expr.name
    if isinstance(expr, IntLit):
        return f"{expr.value} DAYS" if expr.unit == "days" else str(expr.value)
    if isinstance(expr, TextLit):
        return "'" + expr.value.replace("'", "''") + "'"
    if isinstance(expr, DateLit):
        return f"DATE '{format_date(expr.days)}'"
    if isinstance(expr, InList):
        return f"{_render_operand(expr.expr, expr)} IN {expr.table}"
    if isinstance(expr, Logical):
        return f"{_render_operand(expr.lhs, expr)} {expr.op} {_render_operand(expr.rhs, expr, right=True)}"
    if isinstance(expr, (Arith, Compare)):
        return f"{_render_operand(expr.lhs, expr)} {expr.op} {_render_operand(expr.rhs, expr, right=True)}"
    raise TypeError(f"cannot render {expr!r}")


def _prec(expr: Expr) -> int:
    if isinstance(expr, Logical):
        return 1 if expr.op == "OR" else 2
    if isinstance(expr, (Compare, InList)):
        return 3
    if isinstance(expr, Arith):
        return 4
    return 5


def _render_operand(child: Expr, parent: Expr, right: bool = False) -> str:
    text = render(child)
    pc, pp = _prec(child), _prec(parent)
    if pc < pp or (right and pc == pp) or pc == pp == 3:
        return f"({text})"
    return text


def literal_type(expr: Expr) -> Optional[ValueType]:
    if isinstance(expr, IntLit):
        return ValueType.INT64
    if isinstance(expr, TextLit):
        return ValueType.TEXT
    if isinstance(expr, DateLit):
        return ValueType.DATE
    return None


class ExprTypeError(TypeError):
    pass


def type_of(expr: Expr) -> Optional[ValueType]:
    """Value type of a resolved expression; None for boolean-valued expressions."""
    lit = literal_type(expr)
    if lit is not None:
        return lit
    if isinstance(expr, ColRef):
        return expr.type
    if isinstance(expr, Arith):
        lt, rt = type_of(expr.lhs), type_of(expr.rhs)
        if lt is ValueType.INT64 and rt is ValueType.INT64:
            return ValueType.INT64
        if lt is ValueType.DATE and rt is ValueType.DATE and expr.op == "-":
            return ValueType.INT64
        if lt is ValueType.DATE and rt is ValueType.INT64:
            return ValueType.DATE
        if lt is ValueType.INT64 and rt is ValueType.DATE and expr.op == "+":
            return ValueType.DATE
        raise ExprTypeError(f"type mismatch: {render(expr)} ({lt} {expr.op} {rt})")
    if isinstance(expr, Compare):
        lt, rt = type_of(expr.lhs), type_of(expr.rhs)
        if lt is None or rt is None or lt is not rt:
            raise ExprTypeError(f"type mismatch: {render(expr)} ({lt} {expr.op} {rt})")
        return None
    if isinstance(expr, Logical):
        for side in (expr.lhs, expr.rhs):
            if type_of(side) is not None:
                raise ExprTypeError(f"type mismatch: {render(side)} is not a predicate")
        return None
    if isinstance(expr, InList):
        type_of(expr.expr)
        return None
    raise ExprTypeError(f"unresolved expression {expr!r}")


Row = tuple
Compiled = Callable[[Row], Any]


def compile_expr(expr: Expr, positions: dict[int, int],
                 lists: Optional[dict[str, frozenset]] = None) -> Compiled:
    """Turn a resolved expression into a row -> value closure over a schema layout."""
    if isinstance(expr, ColRef):
        try:
            pos = positions[expr.cid]
        except KeyError:
            raise KeyError(f"column {expr.name} (#{expr.cid}) not available") from None
        return operator.itemgetter(pos)
    if isinstance(expr, IntLit):
        v = expr.value
        return lambda row: v
    if isinstance(expr, TextLit):
        t = expr.value
        return lambda row: t
    if isinstance(expr, DateLit):
        d = expr.days
        return lambda row: d
    if isinstance(expr, Arith):
        lhs, rhs = compile_expr(expr.lhs, positions, lists), compile_expr(expr.rhs, positions, lists)
        fn = operator.add if expr.op == "+" else operator.sub

        def arith(row):
            a, b = lhs(row), rhs(row)
            if a is None or b is None:
                return None
            return fn(a, b)
        return arith
    if isinstance(expr, Compare):
        lhs, rhs = compile_expr(expr.lhs, positions, lists), compile_expr(expr.rhs, positions, lists)
        fn = _COMPARE[expr.op]

        def compare(row):
            a, b = lhs(row), rhs(row)
            if a is None or b is None:
                return False
            return fn(a, b)
        return compare
    if isinstance(expr, Logical):
        lhs, rhs = compile_expr(expr.lhs, positions, lists), compile_expr(expr.rhs, positions, lists)
        if expr.op == "AND":
            return lambda row: bool(lhs(row)) and bool(rhs(row))
        return lambda row: bool(lhs(row)) or bool(rhs(row))
    if isinstance(expr, InList):
        inner = compile_expr(expr.expr, positions, lists)
        if lists is None or expr.table not in lists:
            raise KeyError(f"membership list {expr.table!r} not supplied")
        members = lists[expr.table]

        def member(row):
            v = inner(row)
            return v is not None and v in members
        return member
    raise TypeError(f"cannot compile {expr!r}")


def compile_branchless(expr: Expr, positions: dict[int, int],
                       lists: Optional[dict[str, frozenset]] = None) -> Compiled:
    """Predicate compiled for oblivious kernels: AND/OR evaluate both operands."""
    if isinstance(expr, Logical):
        lhs = compile_branchless(expr.lhs, positions, lists)
        rhs = compile_branchless(expr.rhs, positions, lists)
        if expr.op == "AND":
            return lambda row: bool(lhs(row)) & bool(rhs(row))
        return lambda row: bool(lhs(row)) | bool(rhs(row))
    return compile_expr(expr, positions, lists)
