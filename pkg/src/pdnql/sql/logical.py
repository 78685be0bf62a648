"""Logical operator DAG produced by the parser and bound by the resolver."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional

from ..catalog import SecurityLevel, ValueType
from .expressions import ColRef, Expr

AGG_FUNCTIONS = ("COUNT", "COUNT_DISTINCT", "SUM", "MIN", "MAX")


@dataclass(frozen=True)
class Column:
    cid: int
    name: str
    type: ValueType
    level: SecurityLevel
    qualifier: Optional[str] = None

    def ref(self) -> ColRef:
        return ColRef(self.cid, self.name, self.type, self.level, self.qualifier)


@dataclass(frozen=True)
class AggCall:
    fn: str
    arg: Optional[Expr] = None  # None only for COUNT(*)


@dataclass(eq=False, kw_only=True)
class LogicalOp:
    children: list["LogicalOp"] = field(default_factory=list)
    schema: list[Column] = field(default_factory=list)
    id: int = -1

    @property
    def kind(self) -> str:
        return type(self).__name__

    @property
    def child(self) -> "LogicalOp":
        return self.children[0]

    def expressions(self) -> list[Expr]:
        """Every expression the operator evaluates itself."""
        return []

    def positions(self) -> dict[int, int]:
        """cid -> slot layout of the rows this operator's expressions read."""
        return {c.cid: i for i, c in enumerate(self.children[0].schema)} if self.children else {}


@dataclass(eq=False, kw_only=True)
class Scan(LogicalOp):
    table: str
    alias: Optional[str] = None


@dataclass(eq=False, kw_only=True)
class Filter(LogicalOp):
    predicate: Expr

    def expressions(self):
        return [self.predicate]


@dataclass(eq=False, kw_only=True)
class Project(LogicalOp):
    exprs: list[Expr]
    names: list[str]

    def expressions(self):
        return list(self.exprs)


@dataclass(eq=False, kw_only=True)
class Join(LogicalOp):
    predicate: Optional[Expr] = None
    # per output column: (child index, child cid)
    sides: list[tuple[int, int]] = field(default_factory=list)

    def expressions(self):
        return [self.predicate] if self.predicate is not None else []

    def positions(self):
        # join predicates are bound against the join's own (concatenated) output
        return {c.cid: i for i, c in enumerate(self.schema)}


@dataclass(eq=False, kw_only=True)
class Aggregate(LogicalOp):
    group_by: list[Expr]
    aggs: list[AggCall]
    names: list[str]  # group names followed by aggregate names

    def expressions(self):
        return list(self.group_by) + [a.arg for a in self.aggs if a.arg is not None]


@dataclass(eq=False, kw_only=True)
class Distinct(LogicalOp):
    columns: Optional[list[Expr]] = None  # None before resolution means "all"

    def expressions(self):
        return list(self.columns or [])


@dataclass(eq=False, kw_only=True)
class Sort(LogicalOp):
    keys: list[tuple[Expr, bool]]  # (expression, ascending)

    def expressions(self):
        return [k for k, _ in self.keys]


@dataclass(eq=False, kw_only=True)
class Limit(LogicalOp):
    count: int


@dataclass(eq=False, kw_only=True)
class WindowNumber(LogicalOp):
    partition_by: list[Expr]
    order_by: list[tuple[Expr, bool]]
    out_name: str = "row_no"

    def expressions(self):
        return list(self.partition_by) + [k for k, _ in self.order_by]


@dataclass(eq=False, kw_only=True)
class SetOp(LogicalOp):
    """UNION / INTERSECT / EXCEPT. Typed by the security rules, never executed."""

    op: str


@dataclass
class LogicalPlan:
    root: LogicalOp
    ctes: dict[str, LogicalOp] = field(default_factory=dict)

    @property
    def output_schema(self) -> list[Column]:
        return self.root.schema

    def operators(self) -> list[LogicalOp]:
        return list(postorder(self.root))


def postorder(root: LogicalOp) -> Iterator[LogicalOp]:
    """Each node once, children before parents (shared nodes visited once)."""
    seen: set[int] = set()

    def visit(op):
        if id(op) in seen:
            return
        seen.add(id(op))
        for c in op.children:
            yield from visit(c)
        yield op

    yield from visit(root)


def parents_map(root: LogicalOp) -> dict[int, list[LogicalOp]]:
    out: dict[int, list[LogicalOp]] = {id(op): [] for op in postorder(root)}
    for op in postorder(root):
        for c in op.children:
            if op not in out[id(c)]:
                out[id(c)].append(op)
    return out
