"""Plaintext relational interpreter over (cids, rows) tables.

Providers use it for Plain fragments and plaintext semi-join tracks; the broker uses
it for public-only work. Layouts are carried explicitly so trimmed inputs work.
"""
from __future__ import annotations

from typing import Optional

from .planner import MERGE_FN, Phase, PhysicalOp
from .sql.expressions import compile_expr
from .sql.logical import Aggregate, Distinct, Filter, Join, Limit, Project, Scan, Sort, WindowNumber

Table = tuple  # (cids: list[int], rows: list[tuple])


def null_first(value):
    return (value is not None, value)


class _Desc:
    """Wrapper inverting the order of a sort key component."""

    __slots__ = ("key",)

    def __init__(self, key):
        self.key = key

    def __lt__(self, other):
        return other.key < self.key

    def __eq__(self, other):
        return self.key == other.key


def positions(cids: list[int]) -> dict[int, int]:
    return {c: i for i, c in enumerate(cids)}


def project_table(table: Table, cids: list[int]) -> Table:
    src, rows = table
    pos = positions(src)
    idx = [pos[c] for c in cids]
    return list(cids), [tuple(r[i] for i in idx) for r in rows]


def fold(fn: str, values: list):
    """SQL aggregate over one group's argument values (None for COUNT(*) rows)."""
    if fn == "COUNT*":
        return len(values)
    present = [v for v in values if v is not None]
    if fn == "COUNT":
        return len(present)
    if fn == "COUNT_DISTINCT":
        return len(set(present))
    if not present:
        return None
    if fn == "SUM":
        return sum(present)
    if fn == "MIN":
        return min(present)
    if fn == "MAX":
        return max(present)
    raise ValueError(f"unknown aggregate {fn}")


def _group_rows(rows, key_fns):
    groups: dict[tuple, list] = {}
    for r in rows:
        groups.setdefault(tuple(f(r) for f in key_fns), []).append(r)
    return groups


def evaluate(op: PhysicalOp, inputs: list[Table], lists: Optional[dict] = None) -> Table:
    lg = op.logical
    if isinstance(lg, Scan):
        raise TypeError("scans are served from provider storage")
    if isinstance(lg, (Filter, Sort, Limit, Distinct, Project, WindowNumber, Aggregate)):
        cids, rows = inputs[0]
        pos = positions(cids)
    if isinstance(lg, Filter):
        pred = compile_expr(lg.predicate, pos, lists)
        return cids, [r for r in rows if pred(r)]
    if isinstance(lg, Project):
        out_cids, fns = [], []
        for e, col in zip(lg.exprs, lg.schema):
            try:
                fns.append(compile_expr(e, pos, lists))
            except KeyError:
                continue
            out_cids.append(col.cid)
        return out_cids, [tuple(f(r) for f in fns) for r in rows]
    if isinstance(lg, Join):
        return _join(lg, inputs, lists)
    if isinstance(lg, Aggregate):
        if op.phase is Phase.SPLIT_HIGH:
            return merge_partials(op, inputs[0])
        return _aggregate(lg, op, pos, rows, lists)
    if isinstance(lg, Distinct):
        seen, out = set(), []
        for r in rows:
            if r not in seen:
                seen.add(r)
                out.append(r)
        return cids, out
    if isinstance(lg, Sort):
        fns = [(compile_expr(e, pos, lists), asc) for e, asc in lg.keys]

        def key(r):
            return tuple(null_first(f(r)) if asc else _Desc(null_first(f(r))) for f, asc in fns)
        return cids, sorted(rows, key=key)
    if isinstance(lg, Limit):
        return cids, rows[:lg.count]
    if isinstance(lg, WindowNumber):
        part = [compile_expr(e, pos, lists) for e in lg.partition_by]
        order = [(compile_expr(e, pos, lists), asc) for e, asc in lg.order_by]

        def okey(i):
            r = rows[i]
            return tuple(null_first(f(r)) if asc else _Desc(null_first(f(r))) for f, asc in order)
        numbers = [0] * len(rows)
        buckets: dict[tuple, list[int]] = {}
        for i, r in enumerate(rows):
            buckets.setdefault(tuple(f(r) for f in part), []).append(i)
        for idxs in buckets.values():
            for n, i in enumerate(sorted(idxs, key=okey), start=1):
                numbers[i] = n
        return cids + [lg.schema[-1].cid], [r + (n,) for r, n in zip(rows, numbers)]
    raise TypeError(f"cannot evaluate {lg.kind}")


def _join(lg: Join, inputs: list[Table], lists) -> Table:
    (lc, lrows), (rc, rrows) = inputs
    lpos, rpos = positions(lc), positions(rc)
    out_cids, picks = [], []
    for col, (side, ccid) in zip(lg.schema, lg.sides):
        p = (lpos if side == 0 else rpos).get(ccid)
        if p is not None:
            out_cids.append(col.cid)
            picks.append((side, p))
    pred = compile_expr(lg.predicate, positions(out_cids), lists) if lg.predicate is not None else None
    out = []
    for lr in lrows:
        for rr in rrows:
            row = tuple(lr[p] if s == 0 else rr[p] for s, p in picks)
            if pred is None or pred(row):
                out.append(row)
    return out_cids, out


def _aggregate(lg: Aggregate, op: PhysicalOp, pos, rows, lists) -> Table:
    group_fns = [compile_expr(g, pos, lists) for g in lg.group_by]
    arg_fns = [compile_expr(a.arg, pos, lists) if a.arg is not None else None for a in lg.aggs]
    groups = _group_rows(rows, group_fns)
    if not lg.group_by and not groups:
        groups = {(): []}
    out = []
    for key, members in groups.items():
        vals = []
        for a, f in zip(lg.aggs, arg_fns):
            if f is None:
                vals.append(fold("COUNT*", members))
            else:
                vals.append(fold(a.fn, [f(r) for r in members]))
        out.append(key + tuple(vals))
    return [c.cid for c in op.schema], out


def merge_partials(op: PhysicalOp, table: Table) -> Table:
    """High phase of a split aggregate: combine per-provider partial aggregates."""
    lg = op.logical
    n = len(lg.group_by)
    _, rows = table
    groups = _group_rows(rows, [lambda r, i=i: r[i] for i in range(n)])
    if n == 0 and not groups:
        groups = {(): []}
    out = []
    for key, members in groups.items():
        vals = []
        for j, a in enumerate(lg.aggs):
            merged = fold(MERGE_FN[a.fn], [r[n + j] for r in members])
            if merged is None and a.fn == "COUNT":
                merged = 0
            vals.append(merged)
        out.append(key + tuple(vals))
    return [c.cid for c in op.schema], out


def evaluate_region(ops: list[PhysicalOp], frontier: dict[tuple[int, int], Table],
                    lists: Optional[dict] = None) -> dict[int, Table]:
    """Evaluate a connected group of operators (postorder) given its frontier inputs."""
    results: dict[int, Table] = {}
    for op in ops:
        inputs = []
        for i, c in enumerate(op.children):
            if (op.id, i) in frontier:
                inputs.append(frontier[(op.id, i)])
            else:
                inputs.append(results[c.id])
        results[op.id] = evaluate(op, inputs, lists)
    return results
