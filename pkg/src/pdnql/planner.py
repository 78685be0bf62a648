"""Physical planning: slice keys, execution modes, split operators, semi-join tracks,
attribute trimming, operator coalescing and EXPLAIN rendering.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Optional

from .catalog import SecurityLevel
from .sql.expressions import ColRef, Compare, Expr, conjoin, conjuncts, ref_cids, render
from .sql.logical import (AggCall, Aggregate, Column, Distinct, Filter, Join, Limit, LogicalOp,
                          LogicalPlan, Project, Scan, SetOp, Sort, WindowNumber, postorder)
from .sql.parser import SqlError
from .typer import Label, LabeledPlan, input_requirements, label_expression, label_plan

SliceKey = list  # list of slots; a slot is a frozenset of cids naming one key column


class PlanError(SqlError):
    stage = "plan"


class Mode(enum.IntEnum):
    PLAIN = 0
    SLICED = 1
    SECURE = 2

    def __str__(self) -> str:
        return self.name.lower()


class Phase(enum.Enum):
    WHOLE = "whole"
    SPLIT_LOW = "low"
    SPLIT_HIGH = "high"


TUPLE_LOCAL = (Scan, Filter, Project)
MERGE_FN = {"COUNT": "SUM", "SUM": "SUM", "MIN": "MIN", "MAX": "MAX"}


@dataclass(frozen=True)
class PlannerOptions:
    all_sensitive: bool = False  # treat every attribute as protected (unoptimized baseline)
    split: bool = True
    semijoin: bool = True
    slicing: bool = True  # False: sliced regions run their secure track as one combined step
    trim: bool = True
    coalesce: bool = True
    pushdown: bool = True

    @classmethod
    def optimized(cls) -> "PlannerOptions":
        return cls()

    @classmethod
    def smc_minimized(cls) -> "PlannerOptions":
        return cls(slicing=False)

    @classmethod
    def baseline(cls) -> "PlannerOptions":
        return cls(all_sensitive=True, split=False, semijoin=False, slicing=False,
                   trim=False, coalesce=False)

    def encode(self) -> str:
        return ",".join(f"{k}={int(v)}" for k, v in vars(self).items())

    @classmethod
    def decode(cls, text: str) -> "PlannerOptions":
        pairs = dict(p.split("=") for p in text.split(",") if p)
        return cls(**{k: bool(int(v)) for k, v in pairs.items()})


@dataclass(eq=False)
class PhysicalOp:
    logical: LogicalOp
    label: Label
    children: list["PhysicalOp"] = field(default_factory=list)
    id: int = -1
    mode: Mode = Mode.PLAIN
    phase: Phase = Phase.WHOLE
    key_out: SliceKey = field(default_factory=list)
    key_in: list[SliceKey] = field(default_factory=list)
    fused: list["PhysicalOp"] = field(default_factory=list)
    fused_into: Optional["PhysicalOp"] = None
    live: set[int] = field(default_factory=set)
    schema: list[Column] = field(default_factory=list)

    @property
    def kind(self) -> str:
        return self.logical.kind

    @property
    def child(self) -> "PhysicalOp":
        return self.children[0]

    @property
    def live_schema(self) -> list[Column]:
        return [c for c in self.schema if c.cid in self.live]

    @property
    def is_tuple_local(self) -> bool:
        return isinstance(self.logical, TUPLE_LOCAL)

    def __repr__(self) -> str:
        return f"<{self.kind}#{self.id} {self.mode} {self.phase.value}>"


@dataclass
class SemiJoinTracks:
    secure: tuple
    plaintext: dict[str, tuple]


@dataclass
class Region:
    """A maximal connected group of Sliced (or Secure) operators executed as one step."""

    id: int
    mode: Mode
    ops: list[PhysicalOp]  # postorder
    exits: list[PhysicalOp]
    frontier: list[tuple[PhysicalOp, int, PhysicalOp]]  # (consumer, child index, child)
    key_columns: list[list[int]] = field(default_factory=list)  # per frontier input: cid per key class
    key_names: list[str] = field(default_factory=list)

    def contains(self, op: PhysicalOp) -> bool:
        return any(o is op for o in self.ops)


@dataclass
class PhysicalPlan:
    root: PhysicalOp
    logical: LogicalPlan
    options: PlannerOptions
    partition_census: dict[int, dict[str, frozenset]] = field(default_factory=dict)
    semi_join_tracks: dict[int, SemiJoinTracks] = field(default_factory=dict)
    regions: list[Region] = field(default_factory=list)

    def operators(self) -> list[PhysicalOp]:
        return list(phys_postorder(self.root))

    def op(self, op_id: int) -> PhysicalOp:
        for o in phys_postorder(self.root):
            if o.id == op_id:
                return o
        raise KeyError(op_id)

    def region_of(self, op: PhysicalOp) -> Optional[Region]:
        for r in self.regions:
            if r.contains(op):
                return r
        return None

    def region(self, region_id: int) -> Region:
        for r in self.regions:
            if r.id == region_id:
                return r
        raise KeyError(region_id)


def phys_postorder(root: PhysicalOp):
    seen: set[int] = set()

    def visit(op):
        if id(op) in seen:
            return
        seen.add(id(op))
        for c in op.children:
            yield from visit(c)
        yield op

    yield from visit(root)


def phys_parents(root: PhysicalOp) -> dict[int, list[tuple[PhysicalOp, int]]]:
    out: dict[int, list] = {id(op): [] for op in phys_postorder(root)}
    for op in phys_postorder(root):
        for i, c in enumerate(op.children):
            out[id(c)].append((op, i))
    return out


# ---------------------------------------------------------------- rewrites

def rewrite(plan: LogicalPlan, options: PlannerOptions = PlannerOptions()) -> LogicalPlan:
    """Pre-labeling rewrites: filter pushdown below joins and DISTINCT below COUNT(DISTINCT)."""
    root = _rebuild(plan.root, lambda op: op, {})
    if options.pushdown:
        root = _rebuild(root, _push_filter, {})
    root = _rebuild(root, _distinct_below_count_distinct, {})
    for i, op in enumerate(postorder(root)):
        op.id = i
    return LogicalPlan(root, plan.ctes)


def _rebuild(op: LogicalOp, fn: Callable, memo: dict) -> LogicalOp:
    if id(op) in memo:
        return memo[id(op)]
    key = id(op)
    kids = [_rebuild(c, fn, memo) for c in op.children]
    op = replace(op, children=kids)  # copy: the caller's plan stays untouched
    memo[key] = fn(op)
    return memo[key]


def _push_filter(op: LogicalOp) -> LogicalOp:
    if not isinstance(op, Filter) or not isinstance(op.child, Join):
        return op
    join = op.child
    by_out = {col.cid: side for col, side in zip(join.schema, join.sides)}
    keep, pushed = [], ([], [])
    for c in conjuncts(op.predicate):
        sides = {by_out[cid][0] for cid in ref_cids(c)}
        if len(sides) == 1:
            side = sides.pop()
            pushed[side].append(_rebind(c, {col.cid: (cid, col) for col, (s, cid) in
                                            zip(join.schema, join.sides) if s == side},
                                        join.children[side]))
        else:
            keep.append(c)
    if not pushed[0] and not pushed[1]:
        return op
    kids = []
    for side, child in enumerate(join.children):
        if pushed[side]:
            child = Filter(predicate=conjoin(pushed[side]), children=[child], schema=list(child.schema))
        kids.append(child)
    new_join = replace(join, children=kids)
    if not keep:
        return new_join
    return Filter(predicate=conjoin(keep), children=[new_join], schema=list(new_join.schema))


def _rebind(expr: Expr, mapping: dict, child: LogicalOp) -> Expr:
    """Rewrite join-output column refs to the matching child columns."""
    from dataclasses import fields, is_dataclass
    if isinstance(expr, ColRef):
        cid, _ = mapping[expr.cid]
        col = next(c for c in child.schema if c.cid == cid)
        return ColRef(col.cid, col.name, col.type, col.level, expr.qualifier)
    if is_dataclass(expr):
        changes = {f.name: _rebind(getattr(expr, f.name), mapping, child)
                   for f in fields(expr) if is_dataclass(getattr(expr, f.name))}
        return replace(expr, **changes) if changes else expr
    return expr


def _distinct_below_count_distinct(op: LogicalOp) -> LogicalOp:
    if not isinstance(op, Aggregate) or not op.aggs:
        return op
    if any(a.fn != "COUNT_DISTINCT" for a in op.aggs):
        return op
    args = {a.arg for a in op.aggs}
    if len(args) != 1 or not isinstance(next(iter(args)), ColRef):
        return op
    if not all(isinstance(g, ColRef) for g in op.group_by):
        return op
    if isinstance(op.child, Distinct):
        return op
    child = op.child
    wanted = []
    for r in list(op.group_by) + [next(iter(args))]:
        if r.cid not in [w.cid for w in wanted]:
            wanted.append(r)
    cols = {c.cid: c for c in child.schema}
    schema = [cols[r.cid] for r in wanted]
    proj = Project(exprs=wanted, names=[c.name for c in schema], children=[child], schema=schema)
    dist = Distinct(columns=[c.ref() for c in schema], children=[proj], schema=list(schema))
    return replace(op, children=[dist])


# ---------------------------------------------------------------- slice keys

def _is_public(level: SecurityLevel, all_sensitive: bool) -> bool:
    return not all_sensitive and not level.is_sensitive


def infer_slice_key(op: LogicalOp, all_sensitive: bool = False) -> SliceKey:
    """The operator's own slice key (output cids); inherited keys are resolved by the planner."""
    pub = lambda r: isinstance(r, ColRef) and _is_public(r.level, all_sensitive)
    if isinstance(op, Join):
        side_of = {col.cid: s for col, (s, _) in zip(op.schema, op.sides)}
        slots = []
        for c in conjuncts(op.predicate):
            if isinstance(c, Compare) and c.op == "=" and pub(c.lhs) and pub(c.rhs) \
                    and side_of[c.lhs.cid] != side_of[c.rhs.cid]:
                slot = frozenset({c.lhs.cid, c.rhs.cid})
                if slot not in slots:
                    slots.append(slot)
        return slots
    if isinstance(op, Aggregate):
        return _prefix(op.group_by, pub)
    if isinstance(op, WindowNumber):
        return [frozenset({p.cid}) for p in op.partition_by if pub(p)]
    if isinstance(op, Distinct):
        return [frozenset({c.cid}) for c in op.columns if pub(c)]
    if isinstance(op, Sort):
        out = []
        for e, asc in op.keys:
            if not (asc and pub(e)):
                break
            out.append(frozenset({e.cid}))
        return out
    return []


def _prefix(exprs, pred) -> SliceKey:
    out = []
    for e in exprs:
        if not pred(e):
            break
        out.append(frozenset({e.cid}))
    return out


def _own_keys(op: PhysicalOp, all_sensitive: bool) -> tuple[SliceKey, list[SliceKey]]:
    lg = op.logical
    if op.phase is Phase.SPLIT_LOW or isinstance(lg, (Scan, Limit, SetOp)):
        return [], [[] for _ in op.children]
    key = infer_slice_key(lg, all_sensitive)
    if isinstance(lg, Join):
        side = {col.cid: (s, cid) for col, (s, cid) in zip(lg.schema, lg.sides)}
        per = [[], []]
        for slot in key:
            for cid in slot:
                s, ccid = side[cid]
                per[s].append(frozenset({ccid}))
        return key, per
    return key, [list(key) for _ in op.children]


def _passthrough(op: PhysicalOp) -> set[int]:
    lg = op.logical
    if isinstance(lg, Project):
        return {col.cid for e, col in zip(lg.exprs, lg.schema) if isinstance(e, ColRef) and e.cid == col.cid}
    return {c.cid for c in op.schema}


def _restrict(key: SliceKey, allowed: set[int]) -> SliceKey:
    out = [frozenset(slot & allowed) for slot in key]
    return out if out and all(out) else []


def assign_slice_keys(root: PhysicalOp, all_sensitive: bool = False) -> None:
    order = list(phys_postorder(root))
    for op in order:
        if isinstance(op.logical, (Filter, Project)):
            key = _restrict(op.child.key_out, _passthrough(op)) if op.children else []
            op.key_out, op.key_in = key, [list(key)]
        else:
            op.key_out, op.key_in = _own_keys(op, all_sensitive)
    parents = phys_parents(root)
    for op in reversed(order):  # parents first: prefer the parent's key when it has one
        if not isinstance(op.logical, (Filter, Project)):
            continue
        for p, i in parents[id(op)]:
            cand = _restrict(p.key_in[i], _passthrough(op)) if p.key_in[i] else []
            if cand and len(cand) == len(p.key_in[i]):
                op.key_out, op.key_in = cand, [list(cand)]
                break


def shares_slice_key(parent: PhysicalOp, child: PhysicalOp, index: Optional[int] = None) -> bool:
    if index is None:
        index = next(i for i, c in enumerate(parent.children) if c is child)
    a, b = parent.key_in[index], child.key_out
    if not a or not b or len(a) != len(b):
        return False
    return all(any(x & y for y in b) for x in a) and all(any(x & y for x in a) for y in b)


# ---------------------------------------------------------------- modes

def build_physical(labeled: LabeledPlan) -> PhysicalOp:
    memo: dict[int, PhysicalOp] = {}

    def make(op: LogicalOp) -> PhysicalOp:
        if id(op) not in memo:
            memo[id(op)] = PhysicalOp(logical=op, label=labeled.op_labels[op.id],
                                      children=[make(c) for c in op.children],
                                      schema=list(op.schema))
        return memo[id(op)]

    return make(labeled.plan.root)


def assign_modes(root: PhysicalOp) -> None:
    for op in phys_postorder(root):
        if isinstance(op.logical, SetOp):
            raise PlanError("set operations are typed but cannot be executed")
        if op.label is Label.LOW or op.phase is Phase.SPLIT_LOW:
            op.mode = Mode.PLAIN
            continue
        e = Mode.PLAIN
        for i, c in enumerate(op.children):
            if c.mode is Mode.SLICED:
                e = Mode.SLICED if shares_slice_key(op, c, i) and e is not Mode.SECURE else Mode.SECURE
            elif c.mode is Mode.SECURE:
                e = Mode.SECURE
        if e is Mode.PLAIN:
            e = Mode.SLICED if op.key_out else Mode.SECURE
        if e is Mode.SLICED and any(c.mode is Mode.PLAIN and not op.key_in[i]
                                    for i, c in enumerate(op.children)):
            e = Mode.SECURE  # a plain input without key columns cannot be partitioned
        op.mode = e
    check_mode_monotonicity(root)


def check_mode_monotonicity(root: PhysicalOp) -> None:
    for op in phys_postorder(root):
        for c in op.children:
            if op.mode < c.mode:
                raise PlanError(f"mode monotonicity violated at {op.kind}: {op.mode} above {c.mode}")


def assign_execution_modes(labeled: LabeledPlan, options: PlannerOptions = PlannerOptions()) -> PhysicalPlan:
    root = build_physical(labeled)
    assign_slice_keys(root, options.all_sensitive)
    assign_modes(root)
    plan = PhysicalPlan(root, labeled.plan, options)
    _number(plan)
    return plan


def _number(plan: PhysicalPlan) -> None:
    for i, op in enumerate(phys_postorder(plan.root)):
        op.id = i


# ---------------------------------------------------------------- split operators

def _max_cid(root: PhysicalOp) -> int:
    return max((c.cid for op in phys_postorder(root) for c in op.schema), default=0)


def split_operators(plan: PhysicalPlan) -> PhysicalPlan:
    all_sensitive = plan.options.all_sensitive
    cids = itertools.count(_max_cid(plan.root) + 1)
    for op in list(phys_postorder(plan.root)):
        if op.label is not Label.HIGH or op.phase is not Phase.WHOLE or op.mode is Mode.PLAIN:
            continue
        if not op.children or any(c.mode is not Mode.PLAIN for c in op.children):
            continue
        lg = op.logical
        if isinstance(lg, Aggregate) and all(a.fn in MERGE_FN for a in lg.aggs):
            n = len(lg.group_by)
            partial_cols = [Column(next(cids), f"partial_{name}", col.type, col.level)
                            for name, col in zip(lg.names[n:], lg.schema[n:])]
            low_lg = Aggregate(group_by=list(lg.group_by), aggs=list(lg.aggs), names=list(lg.names),
                               children=list(lg.children), schema=list(lg.schema[:n]) + partial_cols,
                               id=lg.id)
            low = PhysicalOp(logical=low_lg, label=op.label, children=op.children,
                             phase=Phase.SPLIT_LOW, schema=list(low_lg.schema))
            op.children = [low]
            op.phase = Phase.SPLIT_HIGH
        elif isinstance(lg, Filter):
            parts = conjuncts(lg.predicate)
            low_parts = [c for c in parts if label_expression(c, None, all_sensitive) is Label.LOW]
            high_parts = [c for c in parts if label_expression(c, None, all_sensitive) is Label.HIGH]
            if not low_parts or not high_parts:
                continue
            low_lg = Filter(predicate=conjoin(low_parts), children=list(lg.children),
                            schema=list(lg.schema), id=lg.id)
            low = PhysicalOp(logical=low_lg, label=Label.LOW, children=op.children,
                             phase=Phase.SPLIT_LOW, schema=list(lg.schema))
            op.logical = Filter(predicate=conjoin(high_parts), children=[low_lg],
                                schema=list(lg.schema), id=lg.id)
            op.children = [low]
            op.phase = Phase.SPLIT_HIGH
    assign_slice_keys(plan.root, all_sensitive)
    assign_modes(plan.root)
    _number(plan)
    return plan


# ---------------------------------------------------------------- trimming

def trim_attributes(plan: PhysicalPlan) -> PhysicalPlan:
    order = list(phys_postorder(plan.root))
    needed: dict[int, set[int]] = {id(op): set() for op in order}
    needed[id(plan.root)] = {c.cid for c in plan.root.schema}
    for op in reversed(order):
        if op.phase is Phase.SPLIT_HIGH and isinstance(op.logical, Aggregate):
            reqs = [{c.cid for c in op.child.schema}]
        else:
            reqs = input_requirements(op.logical, needed[id(op)])
        for i, child in enumerate(op.children):
            keys = set().union(*op.key_in[i]) if op.key_in and op.key_in[i] else set()
            needed[id(child)] |= reqs[i] | keys
    for op in order:
        cids = {c.cid for c in op.schema}
        op.live = (needed[id(op)] & cids) if plan.options.trim else cids
    plan.root.live = {c.cid for c in plan.root.schema}
    return plan


# ---------------------------------------------------------------- coalescing

def absorber(op: PhysicalOp) -> PhysicalOp:
    while op.fused_into is not None:
        op = op.fused_into
    return op


def coalesce_operators(plan: PhysicalPlan) -> PhysicalPlan:
    parents = phys_parents(plan.root)
    for op in phys_postorder(plan.root):
        ps = parents[id(op)]
        if isinstance(op.logical, Filter) and op.label is Label.HIGH and len(ps) == 1:
            p = ps[0][0]
            if p.mode is op.mode and p.label is Label.HIGH and \
                    not isinstance(p.logical, (Filter, Project, Limit)):
                op.fused_into = p
                p.fused.append(op)
        elif isinstance(op.logical, Project) and op.children:
            c = op.child
            if c.mode is op.mode and len(parents[id(c)]) == 1:
                target = absorber(c)
                op.fused_into = target
                target.fused.append(op)
    return plan


# ---------------------------------------------------------------- regions

def compute_regions(plan: PhysicalPlan) -> list[Region]:
    parents = phys_parents(plan.root)
    order = list(phys_postorder(plan.root))
    seen: set[int] = set()
    regions = []
    for start in reversed(order):
        if start.mode is Mode.PLAIN or id(start) in seen:
            continue
        comp, stack = [], [start]
        seen.add(id(start))
        while stack:
            op = stack.pop()
            comp.append(op)
            nbrs = [c for c in op.children] + [p for p, _ in parents[id(op)]]
            for n in nbrs:
                if n.mode is start.mode and id(n) not in seen:
                    seen.add(id(n))
                    stack.append(n)
        members = {id(o) for o in comp}
        ops = [o for o in order if id(o) in members]
        exits = [o for o in ops if o is plan.root or any(id(p) not in members for p, _ in parents[id(o)])]
        frontier = [(o, i, c) for o in ops for i, c in enumerate(o.children) if id(c) not in members]
        region = Region(id=max(o.id for o in ops), mode=start.mode, ops=ops, exits=exits, frontier=frontier)
        if start.mode is Mode.SLICED:
            _key_classes(region)
        regions.append(region)
    regions.sort(key=lambda r: r.id)
    plan.regions = regions
    return regions


def _key_classes(region: Region) -> None:
    uf: dict[int, int] = {}

    def find(x):
        uf.setdefault(x, x)
        while uf[x] != x:
            uf[x] = uf[uf[x]]
            x = uf[x]
        return x

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            uf[max(ra, rb)] = min(ra, rb)

    for op in region.ops:
        for slot in op.key_out:
            for c in slot:
                union(min(slot), c)
        for slots in op.key_in:
            for j, slot in enumerate(slots):
                for c in slot:
                    union(min(slot), c)
                if j < len(op.key_out):
                    union(min(slot), min(op.key_out[j]))
    top = region.exits[-1]
    classes = [find(min(slot)) for slot in top.key_out]
    names = {c.cid: c.name for op in region.ops for c in op.schema}
    region.key_names = [names.get(min(slot), "?") for slot in top.key_out]
    region.key_columns = []
    for consumer, i, child in region.frontier:
        child_cids = {c.cid for c in child.schema}
        cols = []
        for k in classes:
            hits = [c for slot in consumer.key_in[i] for c in slot if c in child_cids and find(c) == k]
            if not hits:
                raise PlanError(f"slice key of {consumer.kind}#{consumer.id} not available from its input")
            cols.append(hits[0])
        region.key_columns.append(cols)


# ---------------------------------------------------------------- census and semi-join

def compute_partition_census(plan: PhysicalPlan, providers: Mapping[str, Callable[[Region], Iterable]],
                             broker: Optional[Callable[[Region], Iterable]] = None,
                             regions: Optional[Iterable[Region]] = None) -> PhysicalPlan:
    """Collect each provider's distinct slice-key values for every (or each given) sliced region."""
    for region in (plan.regions if regions is None else regions):
        if region.mode is not Mode.SLICED:
            continue
        census = {name: frozenset(fn(region)) for name, fn in providers.items()}
        if broker is not None:
            census["broker"] = frozenset(broker(region))
        plan.partition_census[region.id] = census
    return plan


def partition_sort_key(value: tuple):
    return tuple((v is not None, v) for v in value)


def apply_secure_semi_join(plan: PhysicalPlan) -> PhysicalPlan:
    for region_id, census in plan.partition_census.items():
        providers = [p for p in census if p != "broker"]
        shared = frozenset(census.get("broker", frozenset()))
        if plan.options.semijoin:
            common = frozenset.intersection(*(census[p] for p in providers)) if providers else frozenset()
        else:
            common = frozenset().union(*(census[p] for p in providers))
        secure = common | shared
        plaintext = {p: tuple(sorted(census[p] - secure, key=partition_sort_key)) for p in providers}
        plan.semi_join_tracks[region_id] = SemiJoinTracks(
            tuple(sorted(secure, key=partition_sort_key)), plaintext)
    return plan


# ---------------------------------------------------------------- pipeline

def plan_query(logical: LogicalPlan, options: PlannerOptions = PlannerOptions()) -> PhysicalPlan:
    logical = rewrite(logical, options)
    labeled = label_plan(logical, all_sensitive=options.all_sensitive)
    plan = assign_execution_modes(labeled, options)
    if options.split:
        split_operators(plan)
    trim_attributes(plan)
    if options.coalesce:
        coalesce_operators(plan)
    compute_regions(plan)
    return plan


# ---------------------------------------------------------------- explain

def _args(op: PhysicalOp) -> str:
    lg = op.logical
    if isinstance(lg, Scan):
        return lg.table + (f" AS {lg.alias}" if lg.alias else "")
    if isinstance(lg, Filter):
        return render(lg.predicate)
    if isinstance(lg, Project):
        return ", ".join(render(e) if isinstance(e, ColRef) and e.name == n else f"{render(e)} AS {n}"
                         for e, n in zip(lg.exprs, lg.names))
    if isinstance(lg, Join):
        return render(lg.predicate) if lg.predicate is not None else "cross"
    if isinstance(lg, Aggregate):
        n = len(lg.group_by)
        aggs = []
        for a, name in zip(lg.aggs, lg.names[n:]):
            arg = "*" if a.arg is None else render(a.arg)
            fn = "COUNT(DISTINCT " + arg + ")" if a.fn == "COUNT_DISTINCT" else f"{a.fn}({arg})"
            aggs.append(f"{name}={fn}")
        groups = ", ".join(render(g) for g in lg.group_by)
        return f"{groups}; {', '.join(aggs)}" if groups else ", ".join(aggs)
    if isinstance(lg, Distinct):
        return ", ".join(render(c) for c in lg.columns)
    if isinstance(lg, Sort):
        return ", ".join(render(e) + ("" if asc else " DESC") for e, asc in lg.keys)
    if isinstance(lg, Limit):
        return str(lg.count)
    if isinstance(lg, WindowNumber):
        parts = []
        if lg.partition_by:
            parts.append("PARTITION BY " + ", ".join(render(p) for p in lg.partition_by))
        if lg.order_by:
            parts.append("ORDER BY " + ", ".join(render(e) + ("" if a else " DESC") for e, a in lg.order_by))
        return f"{lg.out_name}; " + " ".join(parts)
    return ""


def _key_text(op: PhysicalOp) -> str:
    names = {}
    for o in [op] + op.children:
        for c in o.schema:
            names.setdefault(c.cid, c.name)
    return ", ".join(names.get(min(slot), "?") for slot in op.key_out)


def describe(op: PhysicalOp) -> str:
    mode = f"sliced({_key_text(op)})" if op.mode is Mode.SLICED else str(op.mode)
    text = f"{op.kind}({_args(op)}) label={op.label} mode={mode}"
    if op.phase is not Phase.WHOLE:
        text += f" phase={op.phase.value}"
    if op.fused:
        text += " fused: " + ", ".join(f"{f.kind}#{f.id}" for f in op.fused)
    return text


def explain(plan: PhysicalPlan) -> str:
    depth: dict[int, int] = {}

    def walk(op, d):
        if id(op) in depth:
            return
        depth[id(op)] = d
        for c in op.children:
            walk(c, d + 1)

    walk(plan.root, 0)
    lines = []
    for op in phys_postorder(plan.root):
        marker = f" [in #{op.fused_into.id}]" if op.fused_into is not None else ""
        lines.append(f"{'  ' * depth[id(op)]}#{op.id}{marker} {describe(op)}")
    for region_id, tracks in sorted(plan.semi_join_tracks.items()):
        fmt = lambda vals: "{" + ", ".join(",".join(map(str, v)) for v in vals) + "}"
        plain = " ".join(f"{p}={fmt(v)}" for p, v in tracks.plaintext.items())
        lines.append(f"semi-join #{region_id}: secure={fmt(tracks.secure)} plaintext {plain}")
    return "\n".join(lines)
