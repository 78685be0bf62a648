"""Security type system: low/high labels for expressions, expression sets and operators."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .catalog import Catalog, SecurityLevel
from .sql.expressions import ColRef, Expr, InList, Name, ref_cids, walk
from .sql.logical import (Aggregate, Distinct, Filter, Join, Limit, LogicalOp, LogicalPlan,
                          Project, Scan, SetOp, Sort, WindowNumber, postorder)
from .sql.parser import SqlError


class Label(enum.IntEnum):
    LOW = 0
    HIGH = 1

    def __str__(self) -> str:
        return self.name.lower()


def lub(labels: Iterable[Label]) -> Label:
    return max(labels, default=Label.LOW)


class PolicyError(SqlError):
    stage = "policy"


class UnresolvedError(SqlError):
    stage = "label"


def _sensitive(level: SecurityLevel, all_sensitive: bool) -> bool:
    return all_sensitive or level.is_sensitive


def label_expression(expr: Expr, catalog: Optional[Catalog] = None, all_sensitive: bool = False) -> Label:
    """Low iff no attribute the expression touches is sensitive."""
    for e in walk(expr):
        if isinstance(e, Name):
            raise UnresolvedError(f"unresolved attribute {e.name!r}")
        if isinstance(e, ColRef) and _sensitive(e.level, all_sensitive):
            return Label.HIGH
        if isinstance(e, InList) and _sensitive(e.level, all_sensitive):
            return Label.HIGH
    return Label.LOW


def label_expression_set(exprs: Iterable[Expr], catalog: Optional[Catalog] = None,
                         all_sensitive: bool = False) -> Label:
    return lub(label_expression(e, catalog, all_sensitive) for e in exprs)


def live_columns(root: LogicalOp) -> dict[int, set[int]]:
    """For each operator id: the cids of its output that some ancestor still reads."""
    order = list(postorder(root))
    needed: dict[int, set[int]] = {id(op): set() for op in order}
    needed[id(root)] = {c.cid for c in root.schema}
    for op in reversed(order):
        for child, cids in zip(op.children, input_requirements(op, needed[id(op)])):
            needed[id(child)] |= cids
    return {op.id: needed[id(op)] for op in order}


def input_requirements(op: LogicalOp, out_needed: set[int]) -> list[set[int]]:
    """Per child, the cids the operator reads given which of its outputs are needed."""
    refs: set[int] = set()
    for e in op.expressions():
        refs |= ref_cids(e)
    if isinstance(op, Join):
        want = out_needed | refs
        per = [set(), set()]
        for col, (side, cid) in zip(op.schema, op.sides):
            if col.cid in want:
                per[side].add(cid)
        return per
    if isinstance(op, Project):
        out = set()
        for e, col in zip(op.exprs, op.schema):
            if col.cid in out_needed:
                out |= ref_cids(e)
        return [out]
    if isinstance(op, Aggregate):
        return [refs]
    if isinstance(op, (Distinct, SetOp)):
        return [{c.cid for c in child.schema} for child in op.children]
    if isinstance(op, WindowNumber):
        return [(out_needed - {op.schema[-1].cid}) | refs]
    if isinstance(op, (Filter, Sort, Limit)):
        return [out_needed | refs]
    return [set() for _ in op.children]


def _columns_by_cid(op: LogicalOp) -> dict:
    out = {}
    for child in op.children:
        for c in child.schema:
            out[c.cid] = c
    return out


def input_set(op: LogicalOp, live: dict[int, set[int]]) -> list[ColRef]:
    """The attributes a multi-tuple operator consumes: referenced plus passed-through live ones."""
    cols = _columns_by_cid(op)
    reqs = input_requirements(op, live.get(op.id, {c.cid for c in op.schema}))
    cids = set().union(*reqs) if reqs else set()
    return [cols[c].ref() for c in sorted(cids) if c in cols]


@dataclass
class LabeledPlan:
    plan: LogicalPlan
    op_labels: dict[int, Label] = field(default_factory=dict)
    expr_labels: dict[tuple[int, int], Label] = field(default_factory=dict)
    live: dict[int, set[int]] = field(default_factory=dict)
    all_sensitive: bool = False

    def label(self, op: LogicalOp) -> Label:
        return self.op_labels[op.id]


def required_label(op: LogicalOp, child_labels: list[Label], live: dict[int, set[int]],
                   all_sensitive: bool = False) -> Label:
    """The least label the typing rules allow for ``op`` given its children's labels."""
    nest = lub(child_labels)  # r-nest / r-nest-bin
    if isinstance(op, Scan):
        return Label.LOW  # r-scan
    if isinstance(op, Filter):
        return lub([label_expression(op.predicate, None, all_sensitive), nest])
    if isinstance(op, (Project, Limit)):
        return nest
    if isinstance(op, Join):
        own = [label_expression(op.predicate, None, all_sensitive)] if op.predicate is not None else []
        own.append(label_expression_set(input_set(op, live), None, all_sensitive))
        return lub(own + [nest])
    if isinstance(op, (Aggregate, Distinct, Sort, WindowNumber, SetOp)):
        return lub([label_expression_set(input_set(op, live), None, all_sensitive), nest])
    raise TypeError(f"no typing rule for {op.kind}")


def label_plan(plan: LogicalPlan, catalog: Optional[Catalog] = None, all_sensitive: bool = False,
               check_policy: bool = True) -> LabeledPlan:
    if check_policy:
        enforce_policy(plan)
    live = live_columns(plan.root)
    out = LabeledPlan(plan, live=live, all_sensitive=all_sensitive)
    for op in postorder(plan.root):
        for i, e in enumerate(op.expressions()):
            out.expr_labels[(op.id, i)] = label_expression(e, catalog, all_sensitive)
        out.op_labels[op.id] = required_label(op, [out.op_labels[c.id] for c in op.children],
                                              live, all_sensitive)
    return out


def enforce_policy(plan: LogicalPlan) -> None:
    for col in plan.output_schema:
        if col.level is SecurityLevel.PRIVATE:
            raise PolicyError(f"policy violation: private attribute in output ({col.name})")


def check_labels(plan: LogicalPlan, op_labels: dict[int, Label], all_sensitive: bool = False) -> list[str]:
    """Replay every rule against an assignment; returns the violated judgements."""
    live = live_columns(plan.root)
    problems = []
    for op in postorder(plan.root):
        need = required_label(op, [op_labels[c.id] for c in op.children], live, all_sensitive)
        if op_labels[op.id] < need:
            problems.append(f"{op.kind}#{op.id}: labeled {op_labels[op.id]}, rules require {need}")
    return problems
