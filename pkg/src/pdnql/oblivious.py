"""Data-oblivious relational kernels over validity-flagged, padded tuple arrays.

Every kernel's control flow, slot count and memory-access trace depend only on slot
counts and schema widths. Values are touched through closures whose results are
selected, never branched on for scheduling. Tracing records positions and kinds only.
"""
from __future__ import annotations

import functools
import json
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence, Union

import numpy as np

from .catalog import ValueType
from .sql.expressions import Expr, ExprTypeError, compile_branchless, compile_expr, type_of

MERGE = {"COUNT": "SUM", "SUM": "SUM", "MIN": "MIN", "MAX": "MAX"}


class ObliviousError(ValueError):
    stage = "execute"


@dataclass
class PaddedRelation:
    schema: list  # (name, ValueType) pairs
    valid: list[bool]
    rows: list[tuple]
    origin_counts: tuple = (0, 0)
    cids: Optional[list[int]] = None  # column identities, when produced from a plan

    def __post_init__(self):
        if self.cids is None:
            self.cids = list(range(len(self.schema)))
        if len(self.valid) != len(self.rows):
            raise ObliviousError("validity flags and rows differ in length")

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def positions(self) -> dict[int, int]:
        return {c: i for i, c in enumerate(self.cids)}

    @property
    def width_bits(self) -> int:
        return 1 + sum(t.bits for _, t in self.schema)

    def valid_rows(self) -> list[tuple]:
        return [r for v, r in zip(self.valid, self.rows) if v]

    def placeholder(self) -> tuple:
        return tuple(t.placeholder for _, t in self.schema)

    @classmethod
    def from_rows(cls, schema, rows, cids=None, origin_counts=None) -> "PaddedRelation":
        rows = [tuple(r) for r in rows]
        return cls(list(schema), [True] * len(rows), rows,
                   origin_counts if origin_counts is not None else (len(rows), 0), cids)

    @classmethod
    def empty(cls, schema, cids=None) -> "PaddedRelation":
        return cls(list(schema), [], [], (0, 0), cids)


class TraceEvent(NamedTuple):
    kind: str  # Compare | Swap | Read | Write | Emit
    operands: tuple
    operator_id: object


@dataclass
class OpCost:
    compares: int = 0
    accesses: int = 0
    tuple_bits: int = 0
    output_slots: int = 0


class Run:
    """Accumulates trace events (optional) and per-operator cost counters."""

    def __init__(self, trace: bool = False):
        self.trace = trace
        self.events: list[TraceEvent] = []
        self.costs: dict = {}

    def cost(self, op_id) -> OpCost:
        return self.costs.setdefault(op_id, OpCost())

    def emit(self, kind: str, operands: tuple, op_id) -> None:
        if self.trace:
            self.events.append(TraceEvent(kind, operands, op_id))

    def charge(self, op_id, compares=0, accesses=0) -> None:
        c = self.cost(op_id)
        c.compares += compares
        c.accesses += accesses

    def output(self, op_id, rel: PaddedRelation) -> None:
        c = self.cost(op_id)
        c.output_slots += len(rel)
        c.tuple_bits += len(rel) * rel.width_bits
        self.emit("Emit", (len(rel),), op_id)


class _Silent(Run):
    def emit(self, kind, operands, op_id):
        pass

    def charge(self, op_id, compares=0, accesses=0):
        pass

    def output(self, op_id, rel):
        pass


SILENT = _Silent()


@dataclass
class CostReport:
    operators: dict = field(default_factory=dict)  # op id -> OpCost

    @property
    def total_compares(self) -> int:
        return sum(c.compares for c in self.operators.values())

    @property
    def total_accesses(self) -> int:
        return sum(c.accesses for c in self.operators.values())

    def merge(self, other: "CostReport") -> "CostReport":
        for k, c in other.operators.items():
            mine = self.operators.setdefault(k, OpCost())
            mine.compares += c.compares
            mine.accesses += c.accesses
            mine.tuple_bits += c.tuple_bits
            mine.output_slots += c.output_slots
        return self

    def to_dict(self) -> dict:
        ops = []
        for k in sorted(self.operators, key=str):
            c = self.operators[k]
            ops.append({"id": k, "compares": c.compares, "accesses": c.accesses,
                        "tuple_bits": c.tuple_bits, "output_slots": c.output_slots})
        return {"operators": ops}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def trace_of(run: Run) -> list[TraceEvent]:
    return list(run.events)


def cost_of(run: Run) -> CostReport:
    return CostReport({k: OpCost(**vars(v)) for k, v in run.costs.items()})


def encode_trace(events: Sequence[TraceEvent]) -> bytes:
    return "\n".join(json.dumps([e.kind, list(e.operands), e.operator_id]) for e in events).encode()


# ---------------------------------------------------------------- helpers

Pred = Union[Expr, Callable]


def _compile(e, rel: PaddedRelation, lists, predicate=False) -> Callable:
    if callable(e) and not isinstance(e, Expr):
        return e
    try:
        type_of(e)
    except (ValueError, ExprTypeError) as exc:
        raise ObliviousError(str(exc)) from None
    fn = compile_branchless if predicate else compile_expr
    return fn(e, rel.positions, lists)


def _select(flag: bool, a, b):
    """Two-sided select: both operands are already computed."""
    return a if flag else b


# ---------------------------------------------------------------- bitonic network

@functools.lru_cache(maxsize=None)
def _network(size: int) -> tuple:
    """Compare-exchange stages of a bitonic sorter on ``size`` (a power of two) slots."""
    stages = []
    idx = np.arange(size)
    k = 2
    while k <= size:
        j = k // 2
        while j >= 1:
            partner = idx ^ j
            m = partner > idx
            lo, hi = idx[m], partner[m]
            stages.append((lo, hi, (lo & k) == 0))
            j //= 2
        k *= 2
    return tuple(stages)


def network_size(n: int) -> int:
    """Number of compare-exchanges the sorter performs for ``n`` input slots."""
    size = _padded(n)
    return sum(len(lo) for lo, _, _ in _network(size))


def _padded(n: int) -> int:
    return 1 if n <= 1 else 1 << (n - 1).bit_length()


def _rank(values: list, descending: bool) -> list[int]:
    """Order-preserving integer codes; None is lowest (so last when descending)."""
    present = sorted({v for v in values if v is not None})
    code = {v: i + 1 for i, v in enumerate(present)}
    out = [0 if v is None else code[v] for v in values]
    return [-c for c in out] if descending else out


def _lex_greater(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a - b
    first = (d != 0).argmax(axis=1)
    return d[np.arange(len(d)), first] > 0


def bitonic_permutation(keys: np.ndarray, run: Run, op_id) -> list[int]:
    """Run the network over composite integer keys (unique per row); returns the output order."""
    n = len(keys)
    size = _padded(n)
    width = keys.shape[1] if keys.ndim == 2 and n else 1
    k = np.zeros((size, width + 1), dtype=np.int64)
    if n:
        k[:n, 1:] = keys
    k[n:, 0] = 1  # network padding sorts after every real slot
    k[n:, -1] = np.arange(n, size)  # distinct tie-break for padding too
    perm = np.arange(size)
    for lo, hi, asc in _network(size):
        a, b = k[lo], k[hi]
        gt = _lex_greater(a, b)
        swap = np.where(asc, gt, ~gt)
        sl, sh = lo[swap], hi[swap]
        k[sl], k[sh] = b[swap], a[swap]
        perm[sl], perm[sh] = perm[sh].copy(), perm[sl].copy()
        if run.trace:
            for i, j in zip(lo.tolist(), hi.tolist()):
                run.emit("Compare", (i, j), op_id)
                run.emit("Swap", (i, j), op_id)
    exchanges = (size // 2) * len(_network(size))
    run.charge(op_id, compares=exchanges, accesses=4 * exchanges)
    return perm[:n].tolist()


def oblivious_sort(r: PaddedRelation, keys: Sequence, run: Run = SILENT, op_id=0,
                   lists=None, record: bool = True) -> PaddedRelation:
    """Sort valid slots by ``keys`` [(expr, asc)]; invalid slots follow. Stable via index tie-break."""
    n = len(r)
    fns = [(_compile(e, r, lists), asc) for e, asc in keys]
    cols = [[0 if v else 1 for v in r.valid]]
    for f, asc in fns:
        vals = [f(row) if v else None for v, row in zip(r.valid, r.rows)]
        ranks = _rank(vals, not asc)
        cols.append([c if v else 0 for c, v in zip(ranks, r.valid)])  # placeholders never rank
    cols.append(list(range(n)))
    arr = np.array(cols, dtype=np.int64).T if n else np.zeros((0, len(cols)), dtype=np.int64)
    perm = bitonic_permutation(arr, run, op_id)
    out = PaddedRelation(r.schema, [r.valid[i] for i in perm], [r.rows[i] for i in perm],
                         r.origin_counts, list(r.cids))
    if record:
        run.output(op_id, out)
    return out


# ---------------------------------------------------------------- kernels

def merge_inputs(a: PaddedRelation, b: PaddedRelation, run: Run = SILENT, op_id=0) -> PaddedRelation:
    """Concatenate Alice's slots then Bob's."""
    if [t for _, t in a.schema] != [t for _, t in b.schema]:
        raise ObliviousError("schema mismatch between merged inputs")
    out = PaddedRelation(list(a.schema), a.valid + b.valid, a.rows + b.rows,
                         (sum(a.origin_counts), sum(b.origin_counts)), list(a.cids))
    for i in range(len(out)):
        run.emit("Write", (i,), op_id)
    run.charge(op_id, accesses=len(out))
    return out


def oblivious_filter(r: PaddedRelation, predicate: Pred, run: Run = SILENT, op_id=0,
                     lists=None) -> PaddedRelation:
    pred = _compile(predicate, r, lists, predicate=True)
    valid = []
    for i, (v, row) in enumerate(zip(r.valid, r.rows)):
        run.emit("Read", (i,), op_id)
        keep = bool(pred(row))
        valid.append(v & keep)
        run.emit("Write", (i,), op_id)
    run.charge(op_id, compares=len(r), accesses=2 * len(r))
    out = PaddedRelation(r.schema, valid, list(r.rows), r.origin_counts, list(r.cids))
    run.output(op_id, out)
    return out


def oblivious_join(l: PaddedRelation, r: PaddedRelation, predicate: Optional[Pred], run: Run = SILENT,
                   op_id=0, lists=None, out_cids: Optional[list[int]] = None) -> PaddedRelation:
    """Nested loops into an m*n array; slot i*n+j holds l[i] ++ r[j]."""
    schema = list(l.schema) + list(r.schema)
    cids = out_cids if out_cids is not None else list(l.cids) + [c + len(l.cids) for c in r.cids]
    shell = PaddedRelation(schema, [], [], (0, 0), cids)
    pred = _compile(predicate, shell, lists, predicate=True) if predicate is not None else (lambda row: True)
    m, n = len(l), len(r)
    valid, rows = [], []
    for i in range(m):
        for j in range(n):
            row = l.rows[i] + r.rows[j]
            run.emit("Compare", (i, j), op_id)
            ok = bool(pred(row))
            valid.append(l.valid[i] & r.valid[j] & ok)
            rows.append(row)
            run.emit("Write", (i * n + j,), op_id)
    run.charge(op_id, compares=m * n, accesses=3 * m * n)
    out = PaddedRelation(schema, valid, rows, (m, n), cids)
    run.output(op_id, out)
    return out


def _linear_pass(run: Run, op_id, n: int) -> None:
    """Adjacent-pair scan bookkeeping: one compare and one write per neighbour pair."""
    for i in range(1, n):
        run.emit("Compare", (i - 1, i), op_id)
        run.emit("Write", (i,), op_id)
    if n > 1:
        run.charge(op_id, compares=n - 1, accesses=3 * (n - 1))


def oblivious_distinct(r: PaddedRelation, columns: Optional[Sequence] = None, run: Run = SILENT,
                       op_id=0, lists=None) -> PaddedRelation:
    cols = list(columns) if columns is not None else [(lambda row, i=i: row[i]) for i in range(len(r.schema))]
    s = oblivious_sort(r, [(c, True) for c in cols], run, op_id, lists, record=False)
    fns = [_compile(c, s, lists) for c in cols]
    keys = [tuple(f(row) for f in fns) for row in s.rows]
    valid = list(s.valid)
    for i in range(1, len(s)):
        dup = s.valid[i - 1] & (keys[i] == keys[i - 1])
        valid[i] = _select(dup, False, s.valid[i])
    _linear_pass(run, op_id, len(s))
    out = PaddedRelation(s.schema, valid, s.rows, s.origin_counts, list(s.cids))
    run.output(op_id, out)
    return out


def oblivious_window_number(r: PaddedRelation, partition_by: Sequence, order_by: Sequence,
                            out_name: str = "row_no", run: Run = SILENT, op_id=0, lists=None,
                            out_cid: Optional[int] = None) -> PaddedRelation:
    keys = [(p, True) for p in partition_by] + list(order_by)
    s = oblivious_sort(r, keys, run, op_id, lists, record=False)
    part = [_compile(p, s, lists) for p in partition_by]
    pkeys = [tuple(f(row) for f in part) for row in s.rows]
    numbers = [1] * len(s)
    for i in range(1, len(s)):
        same = s.valid[i - 1] & (pkeys[i] == pkeys[i - 1])
        numbers[i] = _select(same, numbers[i - 1] + 1, 1)
    _linear_pass(run, op_id, len(s))
    cid = out_cid if out_cid is not None else max(s.cids, default=-1) + 1
    rows = [row + (k if v else 0,) for row, k, v in zip(s.rows, numbers, s.valid)]
    out = PaddedRelation(list(s.schema) + [(out_name, ValueType.INT64)], list(s.valid), rows,
                         s.origin_counts, list(s.cids) + [cid])
    run.output(op_id, out)
    return out


def _fold_step(fn: str, acc, value, fresh: bool):
    """One aggregate accumulation; ``fresh`` restarts the accumulator at this slot."""
    if fn == "COUNT":
        base = 0 if fresh else acc
        return base + (value is not None)
    if fn == "SUM":
        base = None if fresh else acc
        return base if value is None else (value if base is None else base + value)
    if fn in ("MIN", "MAX"):
        base = None if fresh else acc
        if value is None:
            return base
        if base is None:
            return value
        return min(base, value) if fn == "MIN" else max(base, value)
    raise ObliviousError(f"unsupported aggregate {fn}")


def _aggregate(r: PaddedRelation, group_fns, arg_fns, fns, schema, cids, run, op_id,
               distinct_keys=None) -> PaddedRelation:
    """Linear fold over slots already sorted by group; emits at the last slot of each run."""
    n = len(r)
    gkeys = [tuple(f(row) for f in group_fns) for row in r.rows]
    if not group_fns:
        accs = [0 if fn in ("COUNT", "COUNT_DISTINCT", "COUNT*") else None for fn in fns]
        for i in range(n):
            run.emit("Read", (i,), op_id)
            v = r.valid[i]
            new_distinct = distinct_keys is not None and (i == 0 or distinct_keys[i] != distinct_keys[i - 1]
                                                          or not r.valid[i - 1])
            for j, (fn, f) in enumerate(zip(fns, arg_fns)):
                val = f(r.rows[i]) if f is not None else 1
                if fn == "COUNT_DISTINCT":
                    val = val if new_distinct else None
                    step = _fold_step("COUNT", accs[j], val, False)
                elif fn == "COUNT*":
                    step = accs[j] + 1
                else:
                    step = _fold_step(fn, accs[j], val, False)
                accs[j] = _select(v, step, accs[j])
        run.charge(op_id, compares=n, accesses=n + 1)
        run.emit("Write", (0,), op_id)
        out = PaddedRelation(schema, [True], [tuple(accs)], r.origin_counts, cids)
        run.output(op_id, out)
        return out
    accs = [None] * len(fns)
    valid, rows = [], []
    placeholder = tuple(t.placeholder for _, t in schema)
    for i in range(n):
        fresh = i == 0 or not r.valid[i - 1] or gkeys[i] != gkeys[i - 1]
        new_distinct = distinct_keys is not None and (fresh or distinct_keys[i] != distinct_keys[i - 1])
        for j, (fn, f) in enumerate(zip(fns, arg_fns)):
            val = f(r.rows[i]) if f is not None else 1
            if fn == "COUNT*":
                accs[j] = _select(fresh, 1, (accs[j] or 0) + 1)
            elif fn == "COUNT_DISTINCT":
                accs[j] = _fold_step("COUNT", accs[j], val if new_distinct else None, fresh)
            else:
                accs[j] = _fold_step(fn, accs[j], val, fresh)
        last = i == n - 1 or not r.valid[i + 1] or gkeys[i + 1] != gkeys[i]
        emit = r.valid[i] & last
        valid.append(emit)
        rows.append(_select(emit, gkeys[i] + tuple(accs), placeholder))
        if i:
            run.emit("Compare", (i - 1, i), op_id)
        run.emit("Write", (i,), op_id)
    run.charge(op_id, compares=max(n - 1, 0), accesses=3 * max(n - 1, 0) + (1 if n else 0))
    out = PaddedRelation(schema, valid, rows, r.origin_counts, cids)
    run.output(op_id, out)
    return out


def oblivious_aggregate(r: PaddedRelation, group_by: Sequence, aggs: Sequence, out_schema, run: Run = SILENT,
                        op_id=0, lists=None, out_cids=None) -> PaddedRelation:
    """Whole aggregate. ``aggs`` are (fn, arg) with arg None for COUNT(*). n slots, or 1 without GROUP BY."""
    has_distinct = any(fn == "COUNT_DISTINCT" for fn, _ in aggs)
    darg = next((a for fn, a in aggs if fn == "COUNT_DISTINCT"), None)
    if any(a != darg for fn, a in aggs if fn == "COUNT_DISTINCT"):
        raise ObliviousError("at most one COUNT(DISTINCT) argument per aggregate")
    keys = [(g, True) for g in group_by] + ([(darg, True)] if has_distinct else [])
    s = oblivious_sort(r, keys, run, op_id, lists, record=False) if keys else r
    group_fns = [_compile(g, s, lists) for g in group_by]
    arg_fns = [_compile(a, s, lists) if a is not None else None for _, a in aggs]
    fns = ["COUNT*" if a is None else fn for fn, a in aggs]
    dkeys = None
    if has_distinct:
        df = _compile(darg, s, lists)
        dkeys = [(tuple(f(row) for f in group_fns), df(row)) for row in s.rows]
    cids = out_cids if out_cids is not None else list(range(len(out_schema)))
    return _aggregate(s, group_fns, arg_fns, fns, list(out_schema), cids, run, op_id, dkeys)


def oblivious_aggregate_merge(partials: PaddedRelation, group_cols: int, agg_fns: Sequence[str],
                              run: Run = SILENT, op_id=0, out_schema=None, out_cids=None) -> PaddedRelation:
    """Combine partial aggregates: the first ``group_cols`` columns are the group key."""
    for fn in agg_fns:
        if fn not in MERGE:
            raise ObliviousError(f"{fn} has no partial form to merge")
    keys = [(lambda row, i=i: row[i], True) for i in range(group_cols)]
    s = oblivious_sort(partials, keys, run, op_id, record=False) if keys else partials
    group_fns = [lambda row, i=i: row[i] for i in range(group_cols)]
    arg_fns = [lambda row, i=i: row[group_cols + i] for i in range(len(agg_fns))]
    schema = list(out_schema) if out_schema is not None else list(partials.schema)
    cids = out_cids if out_cids is not None else list(partials.cids)
    out = _aggregate(s, group_fns, arg_fns, [MERGE[f] for f in agg_fns], schema, cids, run, op_id)
    for j, fn in enumerate(agg_fns):
        if fn == "COUNT":  # a group seen by nobody still counts zero
            out.rows = [row[:group_cols + j] + ((0 if row[group_cols + j] is None else row[group_cols + j]),)
                        + row[group_cols + j + 1:] for row in out.rows]
    return out


def oblivious_limit(r: PaddedRelation, k: int, run: Run = SILENT, op_id=0) -> PaddedRelation:
    m = min(k, len(r))
    for i in range(m):
        run.emit("Read", (i,), op_id)
        run.emit("Write", (i,), op_id)
    run.charge(op_id, accesses=2 * m)
    out = PaddedRelation(r.schema, r.valid[:m], r.rows[:m], r.origin_counts, list(r.cids))
    run.output(op_id, out)
    return out


def oblivious_project(r: PaddedRelation, exprs: Sequence, schema, cids, run: Run = SILENT, op_id=0,
                      lists=None) -> PaddedRelation:
    fns = [_compile(e, r, lists) for e in exprs]
    placeholder = tuple(t.placeholder for _, t in schema)
    rows = []
    for i, (v, row) in enumerate(zip(r.valid, r.rows)):
        run.emit("Read", (i,), op_id)
        rows.append(_select(v, tuple(f(row) for f in fns), placeholder))
        run.emit("Write", (i,), op_id)
    run.charge(op_id, accesses=2 * len(r))
    out = PaddedRelation(list(schema), list(r.valid), rows, r.origin_counts, list(cids))
    run.output(op_id, out)
    return out


def decode(r: PaddedRelation) -> list[tuple]:
    """Broker-side: strip invalid slots from a final secure output."""
    return r.valid_rows()
