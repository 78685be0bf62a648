"""Name resolution: binds parser ``Name`` nodes to catalog columns and types the plan.

Every column gets a plan-unique integer identity (cid). Joins mint fresh cids for
their outputs so the two sides of a self-join stay distinguishable, while WITH
bodies are resolved once and shared by every reference.
"""
from __future__ import annotations

import itertools
from dataclasses import replace
from typing import Optional

from ..catalog import Catalog, CatalogError, Distribution, SecurityLevel, ValueType, max_level
from .expressions import (Arith, ColRef, Compare, Expr, ExprTypeError, InList, Logical, Name,
                          level_of, render, type_of)
from .logical import (AggCall, Aggregate, Column, Distinct, Filter, Join, Limit, LogicalOp,
                      LogicalPlan, Project, Scan, SetOp, Sort, WindowNumber, postorder)
from .parser import SqlError

Scope = list  # list of (qualifier, Column), aligned with an operator's schema


class ResolveError(SqlError):
    stage = "resolve"


class _Resolver:
    def __init__(self, catalog: Catalog):
        self.catalog = catalog
        self.cids = itertools.count(1)
        self.ctes: dict[str, tuple[LogicalOp, Scope]] = {}

    def fresh(self, name: str, vtype: ValueType, level: SecurityLevel,
              qualifier: Optional[str] = None) -> Column:
        return Column(next(self.cids), name, vtype, level, qualifier)

    # expressions
    def expr(self, e: Expr, scope: Scope) -> Expr:
        if isinstance(e, Name):
            return self.lookup(e, scope)
        if isinstance(e, (Arith, Compare, Logical)):
            return replace(e, lhs=self.expr(e.lhs, scope), rhs=self.expr(e.rhs, scope))
        if isinstance(e, InList):
            try:
                tdef = self.catalog.table(e.table)
            except CatalogError:
                raise ResolveError(f"unknown table {e.table!r} in IN list") from None
            if tdef.distribution is not Distribution.REPLICATED or len(tdef.columns) != 1:
                raise ResolveError(f"IN list {e.table!r} must be a replicated single-column table")
            inner = self.expr(e.expr, scope)
            if self._typed(inner) is not tdef.columns[0].value_type:
                raise ResolveError(f"type mismatch: {render(inner)} IN {e.table}")
            return InList(inner, tdef.name, tdef.columns[0].level)
        return e

    def lookup(self, name: Name, scope: Scope) -> ColRef:
        hits = [c for q, c in scope if c.name == name.name and (name.qualifier is None or q == name.qualifier)]
        if not hits:
            label = f"{name.qualifier}.{name.name}" if name.qualifier else name.name
            raise ResolveError(f"unknown column {label!r}")
        if len({c.cid for c in hits}) > 1:
            raise ResolveError(f"ambiguous column {name.name!r}")
        c = hits[0]
        qual = name.qualifier or next(q for q, col in scope if col.cid == c.cid)
        return ColRef(c.cid, c.name, c.type, c.level, qual)

    def _typed(self, e: Expr) -> Optional[ValueType]:
        try:
            return type_of(e)
        except ExprTypeError as exc:
            raise ResolveError(str(exc)) from None

    def value_expr(self, e: Expr, scope: Scope) -> Expr:
        out = self.expr(e, scope)
        if self._typed(out) is None:
            raise ResolveError(f"type mismatch: {render(out)} is a predicate, not a value")
        return out

    def predicate(self, e: Expr, scope: Scope) -> Expr:
        out = self.expr(e, scope)
        if self._typed(out) is not None:
            raise ResolveError(f"type mismatch: {render(out)} is not a predicate")
        return out

    # operators
    def op(self, op: LogicalOp) -> tuple[LogicalOp, Scope]:
        method = getattr(self, "_" + op.kind.lower(), None)
        if method is None:
            raise ResolveError(f"cannot resolve {op.kind}")
        return method(op)

    def _scan(self, op: Scan):
        if op.table in self.ctes:
            node, scope = self.ctes[op.table]
            qual = op.alias or op.table
            return node, [(qual, c) for _, c in scope]
        try:
            tdef = self.catalog.table(op.table)
        except CatalogError:
            raise ResolveError(f"unknown table {op.table!r}") from None
        qual = op.alias or op.table
        cols = [self.fresh(c.name, c.value_type, c.level, qual) for c in tdef.columns]
        return Scan(table=tdef.name, alias=op.alias, schema=cols), [(qual, c) for c in cols]

    def _join(self, op: Join):
        (left, lscope), (right, rscope) = self.op(op.children[0]), self.op(op.children[1])
        cols, sides, scope = [], [], []
        for idx, part in enumerate((lscope, rscope)):
            for q, c in part:
                new = self.fresh(c.name, c.type, c.level, q)
                cols.append(new)
                sides.append((idx, c.cid))
                scope.append((q, new))
        pred = self.predicate(op.predicate, scope) if op.predicate is not None else None
        return Join(predicate=pred, sides=sides, children=[left, right], schema=cols), scope

    def _filter(self, op: Filter):
        child, scope = self.op(op.child)
        return Filter(predicate=self.predicate(op.predicate, scope), children=[child],
                      schema=list(child.schema)), scope

    def _project(self, op: Project):
        child, scope = self.op(op.child)
        exprs, cols, out_scope, used = [], [], [], set()
        for e, name in zip(op.exprs, op.names):
            r = self.value_expr(e, scope)
            exprs.append(r)
            if isinstance(r, ColRef) and r.cid not in used:
                col = Column(r.cid, name, r.type, r.level, r.qualifier)
                used.add(r.cid)
            else:
                col = self.fresh(name, type_of(r), level_of(r))
            cols.append(col)
            out_scope.append((col.qualifier if isinstance(r, ColRef) else None, col))
        if len(set(op.names)) != len(op.names):
            raise ResolveError(f"duplicate output column name in {', '.join(op.names)}")
        return Project(exprs=exprs, names=list(op.names), children=[child], schema=cols), out_scope

    def _aggregate(self, op: Aggregate):
        child, scope = self.op(op.child)
        group = [self.value_expr(g, scope) for g in op.group_by]
        group_level = max_level(level_of(g) for g in group)
        cols, out_scope = [], []
        for g, name in zip(group, op.names):
            if isinstance(g, ColRef):
                col = Column(g.cid, name, g.type, g.level, g.qualifier)
            else:
                col = self.fresh(name, type_of(g), level_of(g))
            cols.append(col)
            out_scope.append((col.qualifier, col))
        aggs = []
        for call, name in zip(op.aggs, op.names[len(group):]):
            arg = self.value_expr(call.arg, scope) if call.arg is not None else None
            if call.fn in ("COUNT", "COUNT_DISTINCT"):
                vtype = ValueType.INT64
            else:
                vtype = type_of(arg)
                if call.fn == "SUM" and vtype is not ValueType.INT64:
                    raise ResolveError(f"type mismatch: SUM over {vtype}")
            level = max(group_level, level_of(arg) if arg is not None else SecurityLevel.PUBLIC)
            col = self.fresh(name, vtype, level)
            aggs.append(AggCall(call.fn, arg))
            cols.append(col)
            out_scope.append((None, col))
        return Aggregate(group_by=group, aggs=aggs, names=list(op.names), children=[child],
                         schema=cols), out_scope

    def _windownumber(self, op: WindowNumber):
        child, scope = self.op(op.child)
        part = [self.value_expr(p, scope) for p in op.partition_by]
        order = [(self.value_expr(e, scope), asc) for e, asc in op.order_by]
        level = max_level([level_of(p) for p in part] + [level_of(e) for e, _ in order])
        col = self.fresh(op.out_name, ValueType.INT64, level)
        return (WindowNumber(partition_by=part, order_by=order, out_name=op.out_name,
                             children=[child], schema=list(child.schema) + [col]),
                scope + [(None, col)])

    def _distinct(self, op: Distinct):
        child, scope = self.op(op.child)
        columns = [c.ref() for c in child.schema]
        return Distinct(columns=columns, children=[child], schema=list(child.schema)), scope

    def _sort(self, op: Sort):
        child, scope = self.op(op.child)
        keys = [(self.value_expr(e, scope), asc) for e, asc in op.keys]
        return Sort(keys=keys, children=[child], schema=list(child.schema)), scope

    def _limit(self, op: Limit):
        child, scope = self.op(op.child)
        return Limit(count=op.count, children=[child], schema=list(child.schema)), scope

    def _setop(self, op: SetOp):
        (left, lscope), (right, _) = self.op(op.children[0]), self.op(op.children[1])
        if [c.type for c in left.schema] != [c.type for c in right.schema]:
            raise ResolveError(f"type mismatch: {op.op} inputs differ")
        cols = [self.fresh(a.name, a.type, max(a.level, b.level))
                for a, b in zip(left.schema, right.schema)]
        return SetOp(op=op.op, children=[left, right], schema=cols), [(None, c) for c in cols]


def resolve(plan: LogicalPlan, catalog: Catalog) -> LogicalPlan:
    r = _Resolver(catalog)
    ctes = {}
    for name, body in plan.ctes.items():
        if name in catalog.tables:
            raise ResolveError(f"WITH name {name!r} shadows a table")
        node, scope = r.op(body)
        r.ctes[name] = (node, scope)
        ctes[name] = node
    root, _ = r.op(plan.root)
    for i, op in enumerate(postorder(root)):
        op.id = i
    return LogicalPlan(root, ctes)


def compile_sql(sql_text: str, catalog: Catalog) -> LogicalPlan:
    from .parser import parse
    return resolve(parse(sql_text), catalog)
