"""Federated execution: an honest broker, two data providers and the oblivious engine.

Placement of every operator is a pure function of the plan, so all parties agree on
where each result lives without exchanging it:

* ``local``: computed by each provider over its own rows (tuple-local operators,
  split-low phases, anything over replicated tables only);
* ``broker``: low multi-tuple work over public columns, gathered to the broker;
* ``sliced`` / ``secure``: run inside the oblivious engine, with sliced regions
  partitioned by their census and singleton partitions computed locally.
"""
from __future__ import annotations

import copy
import itertools
from dataclasses import dataclass, field
from typing import Optional

from .catalog import Catalog, DataStore, Distribution
from .messages import (CensusReply, CensusRequest, FinalResult, LocalResult, Network, PlanFragment,
                       SecureStepInput, SocketTransport)
from .oblivious import (SILENT, CostReport, PaddedRelation, Run, cost_of, decode, merge_inputs,
                        oblivious_aggregate, oblivious_aggregate_merge, oblivious_distinct,
                        oblivious_filter, oblivious_join, oblivious_limit, oblivious_project,
                        oblivious_sort, oblivious_window_number)
from .planner import (Mode, Phase, PhysicalOp, PhysicalPlan, PlannerOptions, Region,
                      apply_secure_semi_join, compute_partition_census, explain, partition_sort_key,
                      phys_postorder, plan_query)
from .plaintext import evaluate, evaluate_region, positions
from .sql.expressions import InList, ref_cids, walk
from .sql.logical import (Aggregate, Distinct, Filter, Join, Limit, Project, Scan, Sort,
                          WindowNumber)
from .sql.parser import SqlError
from .sql.resolve import compile_sql

ENGINE = "engine"
BROKER = "broker"
CLIENT = "client"


class ExecutionError(SqlError):
    stage = "execute"


# ---------------------------------------------------------------- static placement

@dataclass
class Placement:
    place: dict  # op id -> local | broker | sliced | secure
    replicated: dict  # op id -> bool (for local ops)


def placement(plan: PhysicalPlan, catalog: Catalog) -> Placement:
    place, rep = {}, {}
    for op in phys_postorder(plan.root):
        if op.mode is Mode.SLICED:
            place[op.id], rep[op.id] = "sliced", False
            continue
        if op.mode is Mode.SECURE:
            place[op.id], rep[op.id] = "secure", False
            continue
        if isinstance(op.logical, Scan):
            place[op.id] = "local"
            rep[op.id] = catalog.table(op.logical.table).distribution is Distribution.REPLICATED
            continue
        kids_local = all(place[c.id] == "local" for c in op.children)
        kids_rep = all(rep[c.id] for c in op.children)
        if kids_local and (op.is_tuple_local or op.phase is Phase.SPLIT_LOW or kids_rep):
            place[op.id], rep[op.id] = "local", kids_rep
        else:
            place[op.id], rep[op.id] = "broker", False
    return Placement(place, rep)


def plan_columns(plan: PhysicalPlan) -> dict:
    cols = {}
    for op in phys_postorder(plan.root):
        for c in op.schema:
            cols.setdefault(c.cid, c)
    return cols


def list_tables(ops) -> list:
    """(table, level) of every IN list the operators (and their fused neighbours) reference."""
    out = {}
    for op in ops:
        for e in op.logical.expressions():
            for node in walk(e):
                if isinstance(node, InList):
                    out[node.table] = node.level
    return sorted(out.items())


def canonical(table, op: PhysicalOp):
    """Narrow a plaintext (cids, rows) table to the operator's live columns in schema order."""
    cids, rows = table
    pos = positions(cids)
    keep = [c.cid for c in op.live_schema if c.cid in pos]
    if keep == list(cids):
        return table
    idx = [pos[c] for c in keep]
    return keep, [tuple(r[i] for i in idx) for r in rows]


def to_relation(table, columns: dict, valid=True) -> PaddedRelation:
    cids, rows = table
    schema = [(columns[c].name, columns[c].type) for c in cids]
    return PaddedRelation(schema, [valid] * len(rows), [tuple(r) for r in rows], (len(rows), 0), list(cids))


def from_relation(rel: PaddedRelation):
    return list(rel.cids), rel.valid_rows()


def key_filter(table, key_cids: list, values) -> tuple:
    cids, rows = table
    pos = positions(cids)
    idx = [pos[c] for c in key_cids]
    wanted = set(values)
    return cids, [r for r in rows if tuple(r[i] for i in idx) in wanted]


def key_values(table, key_cids: list) -> set:
    cids, rows = table
    pos = positions(cids)
    idx = [pos[c] for c in key_cids]
    return {tuple(r[i] for i in idx) for r in rows}


class _QueryContext:
    """A party's view of the current query: the plan, placement and column metadata."""

    def __init__(self, catalog: Catalog, sql: str, options: str, cache: dict):
        key = (sql, options)
        if key not in cache:
            opts = PlannerOptions.decode(options)
            plan = plan_query(compile_sql(sql, catalog), opts)
            cache[key] = (plan, placement(plan, catalog), plan_columns(plan))
        self.plan, self.placement, self.columns = cache[key]
        self.ops = {op.id: op for op in phys_postorder(self.plan.root)}


# ---------------------------------------------------------------- providers

class DataProvider:
    """Holds one party's rows and evaluates fragments addressed to it in plaintext."""

    def __init__(self, name: str, catalog: Catalog, store: DataStore):
        self.name = name
        self.catalog = catalog
        self.store = store
        self.first = name == catalog.providers[0]
        self.cache: dict = {}
        self.ctx: Optional[_QueryContext] = None
        self.memo: dict = {}

    def lists(self) -> dict:
        out = {}
        for tdef in self.catalog.tables.values():
            if tdef.distribution is Distribution.REPLICATED and len(tdef.columns) == 1:
                out[tdef.name] = frozenset(r[0] for r in self.store.get(self.name, tdef.name).rows)
        return out

    def local(self, op: PhysicalOp):
        """This provider's share of a ``local`` operator's output."""
        if op.id in self.memo:
            return self.memo[op.id]
        if self.ctx.placement.place[op.id] != "local":
            raise ExecutionError(f"{op.kind}#{op.id} is not evaluated at the providers")
        if isinstance(op.logical, Scan):
            rel = self.store.get(self.name, op.logical.table)
            table = ([c.cid for c in op.schema], list(rel.rows))
        else:
            table = evaluate(op, [self.local(c) for c in op.children], self._lists)
        self.memo[op.id] = canonical(table, op)
        return self.memo[op.id]

    def _relation(self, table) -> PaddedRelation:
        return to_relation(table, self.ctx.columns)

    def _contributes(self, op: PhysicalOp) -> bool:
        return self.first or not self.ctx.placement.replicated[op.id]

    def handle(self, src: str, msg):
        if isinstance(msg, PlanFragment):
            if msg.action == "compile":
                self.ctx = _QueryContext(self.catalog, msg.sql, msg.options, self.cache)
                self.memo = {}
                self._lists = self.lists()
                return []
            return getattr(self, "_" + msg.action)(msg)
        if isinstance(msg, CensusRequest):
            return self._census(msg)
        raise ExecutionError(f"provider {self.name} cannot handle {type(msg).__name__}")

    def _census(self, msg: CensusRequest):
        region = self.ctx.plan.region(msg.region)
        place, rep = self.ctx.placement.place, self.ctx.placement.replicated
        local = [(i, child) for i, (_, _, child) in enumerate(region.frontier) if place[child.id] == "local"]
        counted = [(i, c) for i, c in local if not rep[c.id]]
        if not counted and self.first:
            counted = local  # only replicated inputs: the first provider speaks for them
        values = set()
        for i, child in counted:
            values |= key_values(self.local(child), region.key_columns[i])
        reply = CensusReply(msg.fragment_id, region.id, self.name, sorted(values, key=partition_sort_key))
        return [(BROKER, reply)]

    def _secure_input(self, msg: PlanFragment):
        region = self.ctx.plan.region(msg.op)
        out = []
        for i, (_, _, child) in enumerate(region.frontier):
            if self.ctx.placement.place[child.id] != "local" or not self._contributes(child):
                continue
            table = self.local(child)
            if region.mode is Mode.SECURE:
                parts = [(None, table)]
            elif self.ctx.plan.options.slicing:
                parts = [(v, key_filter(table, region.key_columns[i], [v])) for v in msg.partitions]
            else:
                parts = [(None, key_filter(table, region.key_columns[i], msg.partitions))]
            for v, t in parts:
                out.append((ENGINE, SecureStepInput(region.id, i, self.name, v, self._relation(t))))
        return out

    def _plaintext_track(self, msg: PlanFragment):
        region = self.ctx.plan.region(msg.op)
        out = []
        for v in msg.partitions:
            frontier = {}
            for i, (consumer, idx, child) in enumerate(region.frontier):
                if self.ctx.placement.place[child.id] == "local":
                    t = key_filter(self.local(child), region.key_columns[i], [v])
                else:
                    t = ([c.cid for c in child.live_schema], [])
                frontier[(consumer.id, idx)] = t
            results = evaluate_region(region.ops, frontier, self._lists)
            for ex in region.exits:
                rel = self._relation(canonical(results[ex.id], ex))
                out.append((BROKER, LocalResult(msg.fragment_id, "plaintext", ex.id, v, rel)))
        return out

    def _gather(self, msg: PlanFragment):
        op = self.ctx.ops[msg.op]
        cids, rows = self.local(op)
        public = [c for c in cids if not self.ctx.columns[c].level.is_sensitive]
        table = canonical((cids, rows), op)
        pos = positions(table[0])
        narrowed = (public, [tuple(r[pos[c]] for c in public) for r in table[1]])
        return [(BROKER, LocalResult(msg.fragment_id, "plain", op.id, None, self._relation(narrowed)))]

    def _root(self, msg: PlanFragment):
        root = self.ctx.plan.root
        rel = self._relation(self.local(root))
        return [(BROKER, LocalResult(msg.fragment_id, "root", root.id, None, rel))]

    def _list(self, msg: PlanFragment):
        tdef = self.catalog.table(msg.table)
        col = tdef.columns[0]
        rows = [(v,) for v in sorted(self._lists[tdef.name], key=lambda x: (x is None, x))]
        rel = PaddedRelation.from_rows([(col.name, col.value_type)], rows, [-1])
        if msg.op < 0:
            if col.level.is_sensitive:
                raise ExecutionError(f"list {tdef.name} is not public")
            return [(BROKER, LocalResult(msg.fragment_id, "plain", -1, None, rel))]
        return [(ENGINE, SecureStepInput(msg.op, -1, self.name, None, rel, tdef.name))]


# ---------------------------------------------------------------- oblivious engine

class ObliviousEngine:
    """Stand-in for the joint secure computation: the only component that reads
    SecureStepInput payloads. Only root outputs leave it, decoded, to the broker."""

    PARTIES_ORDER = ("alice", "bob", BROKER)

    def __init__(self, catalog: Catalog, trace: bool = False):
        self.catalog = catalog
        self.trace = trace
        self.cache: dict = {}
        self.ctx: Optional[_QueryContext] = None
        self.run = Run(trace)
        self.inbox: dict = {}
        self.lists: dict = {}
        self.outputs: dict = {}  # (region id, exit id) -> [(partition, PaddedRelation)]
        self.runs = 0

    def cost_report(self) -> CostReport:
        return cost_of(self.run)

    def handle(self, src: str, msg):
        if isinstance(msg, SecureStepInput):
            if msg.table:
                self.lists[msg.table] = frozenset(r[0] for r in msg.relation.valid_rows())
            else:
                self.inbox.setdefault((msg.step, msg.input_index, msg.partition), {})[msg.party] = msg.relation
            return []
        if isinstance(msg, PlanFragment) and msg.action == "compile":
            self.ctx = _QueryContext(self.catalog, msg.sql, msg.options, self.cache)
            self.run, self.inbox, self.lists, self.outputs, self.runs = Run(self.trace), {}, {}, {}, 0
            return []
        if isinstance(msg, PlanFragment) and msg.action == "run":
            return self._run(msg)
        raise ExecutionError(f"engine cannot handle {type(msg).__name__}")

    def _empty(self, op: PhysicalOp) -> PaddedRelation:
        cols = op.live_schema
        return PaddedRelation([(c.name, c.type) for c in cols], [], [], (0, 0), [c.cid for c in cols])

    def _take(self, step: int, index: int, partition, consumer: PhysicalOp, child: PhysicalOp,
              extra=()) -> PaddedRelation:
        parts = self.inbox.pop((step, index, partition), {})
        rels = list(extra) + [parts[p] for p in self.PARTIES_ORDER if p in parts]
        if not rels:
            return self._empty(child)
        out = rels[0]
        for r in rels[1:]:
            out = merge_inputs(out, r, self.run, consumer.id)
        return out

    def _run(self, msg: PlanFragment):
        region = self.ctx.plan.region(msg.op)
        root = self.ctx.plan.root
        replies = []
        if region.mode is Mode.SLICED:
            parts = list(msg.partitions) if self.ctx.plan.options.slicing else [None]
            for v in parts:
                frontier = {(cons.id, idx): self._take(region.id, i, v, cons, child)
                            for i, (cons, idx, child) in enumerate(region.frontier)}
                results = self._execute(region, frontier)
                for ex in region.exits:
                    self.outputs.setdefault((region.id, ex.id), []).append((v, results[ex.id]))
            if any(ex is root for ex in region.exits):
                for v, rel in self.outputs.get((region.id, root.id), []):
                    replies.append((BROKER, self._decoded(msg, root, v, rel)))
            return replies
        frontier = {}
        for i, (cons, idx, child) in enumerate(region.frontier):
            extra = []
            if self.ctx.placement.place[child.id] == "sliced":
                child_region = self.ctx.plan.region_of(child)
                extra = [rel for _, rel in self.outputs.get((child_region.id, child.id), [])]
            frontier[(cons.id, idx)] = self._take(region.id, i, None, cons, child, extra)
        results = self._execute(region, frontier)
        return [(BROKER, self._decoded(msg, root, None, results[root.id]))]

    def _decoded(self, msg, op: PhysicalOp, partition, rel: PaddedRelation) -> LocalResult:
        rows = decode(rel)
        out = PaddedRelation(list(rel.schema), [True] * len(rows), rows, (len(rows), 0), list(rel.cids))
        return LocalResult(msg.fragment_id, "decoded", op.id, partition, out)

    def _execute(self, region: Region, frontier: dict) -> dict:
        self.runs += 1
        results: dict = {}
        for op in region.ops:
            inputs = []
            for i, c in enumerate(op.children):
                inputs.append(frontier[(op.id, i)] if (op.id, i) in frontier else results[c.id])
            run = SILENT if op.fused_into is not None else self.run
            results[op.id] = self._narrow(self._apply(op, inputs, run, region), op)
        return results

    def _narrow(self, rel: PaddedRelation, op: PhysicalOp) -> PaddedRelation:
        pos = rel.positions
        cols = [c for c in op.live_schema if c.cid in pos]
        idx = [pos[c.cid] for c in cols]
        rows = rel.rows if idx == list(range(len(rel.cids))) else [tuple(r[i] for i in idx) for r in rel.rows]
        return PaddedRelation([(c.name, c.type) for c in cols], rel.valid, rows, rel.origin_counts,
                              [c.cid for c in cols])

    def _apply(self, op: PhysicalOp, inputs: list, run: Run, region: Region) -> PaddedRelation:
        lg, oid, lists = op.logical, op.id, self.lists
        if isinstance(lg, Filter):
            return oblivious_filter(inputs[0], lg.predicate, run, oid, lists)
        if isinstance(lg, Project):
            r = inputs[0]
            have = set(r.cids)
            keep = [(e, col) for e, col in zip(lg.exprs, lg.schema)
                    if col.cid in op.live and all(c in have for c in ref_cids(e))]
            return oblivious_project(r, [e for e, _ in keep], [(c.name, c.type) for _, c in keep],
                                     [c.cid for _, c in keep], run, oid, lists)
        if isinstance(lg, Join):
            left, right = inputs
            side_map = {(s, ccid): col.cid for col, (s, ccid) in zip(lg.schema, lg.sides)}
            out_cids = [side_map[(0, c)] for c in left.cids] + [side_map[(1, c)] for c in right.cids]
            return oblivious_join(left, right, lg.predicate, run, oid, lists, out_cids)
        if isinstance(lg, Aggregate):
            schema = [(c.name, c.type) for c in op.schema]
            cids = [c.cid for c in op.schema]
            if op.phase is Phase.SPLIT_HIGH:
                return oblivious_aggregate_merge(inputs[0], len(lg.group_by), [a.fn for a in lg.aggs],
                                                 run, oid, schema, cids)
            return oblivious_aggregate(inputs[0], lg.group_by, [(a.fn, a.arg) for a in lg.aggs], schema,
                                       run, oid, lists, cids)
        if isinstance(lg, Distinct):
            return oblivious_distinct(inputs[0], None, run, oid)
        if isinstance(lg, Sort):
            return oblivious_sort(inputs[0], lg.keys, run, oid, lists)
        if isinstance(lg, Limit):
            r = inputs[0]
            child = op.child
            if isinstance(child.logical, Sort) and not region.contains(child):
                # partitions arrive concatenated: restore the global order first
                r = oblivious_sort(r, child.logical.keys, run, oid, lists, record=False)
            return oblivious_limit(r, lg.count, run, oid)
        if isinstance(lg, WindowNumber):
            return oblivious_window_number(inputs[0], lg.partition_by, lg.order_by, lg.out_name, run, oid,
                                           lists, lg.schema[-1].cid)
        raise ExecutionError(f"no oblivious form for {lg.kind}")


# ---------------------------------------------------------------- broker

@dataclass
class QueryResult:
    names: list
    rows: list
    cost: CostReport
    explain: str
    plan: PhysicalPlan
    engine_runs: int = 0


class _Client:
    def __init__(self):
        self.results: list = []

    def handle(self, src, msg):
        self.results.append(msg)
        return []


class Broker:
    """Plans queries, hands out fragments, runs census and semi-join, assembles results."""

    def __init__(self, catalog: Catalog, network: Network, engine: ObliviousEngine):
        self.catalog = catalog
        self.net = network
        self.engine = engine
        self.providers = list(catalog.providers)
        self.cache: dict = {}
        self.fragments = itertools.count(1)
        self.inbox: list = []

    def handle(self, src: str, msg):
        self.inbox.append((src, msg))
        return []

    def _ask(self, dst: str, msg) -> list:
        """Send one request and collect the replies it produced."""
        mark = len(self.inbox)
        self.net.send(BROKER, dst, msg)
        return [m for _, m in self.inbox[mark:]]

    def _fragment(self, action: str, op: int = -1, table: str = "", partitions=()) -> PlanFragment:
        return PlanFragment(next(self.fragments), self.sql, self.options.encode(), action, op, table,
                            list(partitions))

    # query pipeline
    def run_query(self, sql: str, options: PlannerOptions = PlannerOptions()) -> QueryResult:
        self.sql, self.options = sql, options
        key = (sql, options.encode())
        if key not in self.cache:
            plan = plan_query(compile_sql(sql, self.catalog), options)
            self.cache[key] = (plan, placement(plan, self.catalog), plan_columns(plan))
        cached, self.placement, self.columns = self.cache[key]
        plan = copy.copy(cached)
        plan.partition_census, plan.semi_join_tracks = {}, {}
        self.plan = plan
        self.inbox, self.broker_tables, self.region_done = [], {}, set()
        self.plaintext_parts: dict = {}  # (region id, exit id) -> [(partition, party, table)]
        self.secure_parts: dict = {}  # region id -> secure partitions
        self.decoded: dict = {}  # (op id, partition) -> table
        self.list_cache: dict = {}
        for dst in self.providers + [ENGINE]:
            self._ask(dst, self._fragment("compile"))
        try:
            table = self._root_rows()
        except SqlError:
            raise
        except Exception as exc:  # surfaced with stage attribution
            raise ExecutionError(str(exc)) from exc
        root = plan.root
        names = [c.name for c in root.schema]
        cids, rows = table
        out_cids = [c.cid for c in root.schema]
        pos = positions(cids)
        rows = [tuple(r[pos[c]] for c in out_cids) for r in rows]
        final = PaddedRelation.from_rows([(c.name, c.type) for c in root.schema], rows, out_cids)
        self.net.send(BROKER, CLIENT, FinalResult(names, final))
        return QueryResult(names, rows, self.engine.cost_report(), explain(plan), plan, self.engine.runs)

    def _root_rows(self):
        root = self.plan.root
        place = self.placement.place[root.id]
        if place == "local":
            tables = []
            for p in self._contributors(root):
                tables.extend(from_relation(m.relation) for m in self._ask(p, self._fragment("root")))
            return self._concat(tables, root)
        if place == "broker":
            return self._broker_table(root)
        if place == "sliced":
            table = self._sliced_assembled(root)
            if isinstance(root.logical, Sort):
                table = evaluate(root, [table], self._lists([root]))  # output is public to the user anyway
            return table
        self._run_secure(self.plan.region_of(root))
        return self.decoded[(root.id, None)]

    def _contributors(self, op: PhysicalOp) -> list:
        return self.providers[:1] if self.placement.replicated[op.id] else self.providers

    def _concat(self, tables, op: PhysicalOp):
        cids = [c.cid for c in op.live_schema]
        rows = []
        for t in tables:
            rows.extend(canonical(t, op)[1])
        return cids, rows

    def _lists(self, ops) -> dict:
        out = {}
        for table, level in list_tables(ops):
            if table not in self.list_cache:
                msgs = self._ask(self.providers[0], self._fragment("list", -1, table))
                self.list_cache[table] = frozenset(r[0] for r in msgs[0].relation.valid_rows())
            out[table] = self.list_cache[table]
        return out

    def _input_table(self, op: PhysicalOp):
        """Plaintext rows of a plain operator, gathered to the broker (public columns only)."""
        if self.placement.place[op.id] == "broker":
            return self._broker_table(op)
        tables = []
        for p in self._contributors(op):
            tables.extend(from_relation(m.relation) for m in self._ask(p, self._fragment("gather", op.id)))
        cids = tables[0][0] if tables else [c.cid for c in op.live_schema]
        return cids, [r for t in tables for r in t[1]]

    def _broker_table(self, op: PhysicalOp):
        if op.id not in self.broker_tables:
            inputs = [self._input_table(c) for c in op.children]
            self.broker_tables[op.id] = canonical(evaluate(op, inputs, self._lists([op])), op)
        return self.broker_tables[op.id]

    # sliced regions
    def _run_sliced(self, region: Region) -> None:
        if region.id in self.region_done:
            return
        self.region_done.add(region.id)
        broker_inputs = {}
        broker_values = set()
        for i, (_, _, child) in enumerate(region.frontier):
            if self.placement.place[child.id] == "broker":
                broker_inputs[i] = self._broker_table(child)
                broker_values |= key_values(broker_inputs[i], region.key_columns[i])
        census = {}
        for p in self.providers:
            replies = self._ask(p, CensusRequest(next(self.fragments), region.id, list(region.key_names)))
            census[p] = [tuple(v) for v in replies[0].values]
        compute_partition_census(self.plan, {p: (lambda r, p=p: census[p]) for p in self.providers},
                                 (lambda r: broker_values) if broker_inputs else None, [region])
        apply_secure_semi_join(self.plan)
        tracks = self.plan.semi_join_tracks[region.id]
        for p in self.providers:
            if tracks.plaintext.get(p):
                for m in self._ask(p, self._fragment("plaintext_track", region.id, partitions=tracks.plaintext[p])):
                    self.plaintext_parts.setdefault((region.id, m.op), []).append(
                        (m.partition, p, from_relation(m.relation)))
        self.secure_parts[region.id] = list(tracks.secure)
        if not tracks.secure:
            return
        for p in self.providers:
            self._ask(p, self._fragment("secure_input", region.id, partitions=tracks.secure))
        for i, table in broker_inputs.items():
            keyed = region.key_columns[i]
            parts = ([(v, key_filter(table, keyed, [v])) for v in tracks.secure] if self.options.slicing
                     else [(None, key_filter(table, keyed, tracks.secure))])
            for v, t in parts:
                self.net.send(BROKER, ENGINE, SecureStepInput(region.id, i, BROKER, v,
                                                              to_relation(t, self.columns)))
        self._send_lists(region)
        for m in self._ask(ENGINE, self._fragment("run", region.id, partitions=tracks.secure)):
            self.decoded[(m.op, m.partition)] = from_relation(m.relation)

    def _send_lists(self, region: Region) -> None:
        for table, _ in list_tables(region.ops):
            self._ask(self.providers[0], self._fragment("list", region.id, table))

    def _sliced_assembled(self, op: PhysicalOp):
        """Rows of a sliced exit held in plaintext by the broker: partitions ascending by value."""
        region = self.plan.region_of(op)
        self._run_sliced(region)
        parts = [(v, 0, t) for v, _, t in self.plaintext_parts.get((region.id, op.id), [])]
        if op is self.plan.root:
            if self.options.slicing:
                parts += [(v, 1, self.decoded[(op.id, v)]) for v in self.secure_parts[region.id]]
            elif self.secure_parts[region.id]:
                parts.append((None, 1, self.decoded[(op.id, None)]))
        parts.sort(key=lambda x: (x[0] is not None, partition_sort_key(x[0]) if x[0] is not None else (), x[1]))
        return self._concat([t for _, _, t in parts], op)

    # the secure region
    def _run_secure(self, region: Region) -> None:
        place = self.placement.place
        local, broker_held = False, {}
        for i, (_, _, child) in enumerate(region.frontier):
            where = place[child.id]
            if where == "local":
                local = True
            elif where == "broker":
                broker_held[i] = self._broker_table(child)
            else:
                child_region = self.plan.region_of(child)
                self._run_sliced(child_region)
                if self.secure_parts[child_region.id]:
                    local = True  # part of this input lives inside the engine
                broker_held[i] = self._concat(
                    [t for _, _, t in sorted(self.plaintext_parts.get((child_region.id, child.id), []),
                                             key=lambda x: partition_sort_key(x[0]))], child)
        sensitive_lists = any(level.is_sensitive for _, level in list_tables(region.ops))
        if not local and not sensitive_lists:
            # every input is already plaintext at the broker: no joint computation needed
            frontier = {(cons.id, idx): broker_held[i] for i, (cons, idx, _) in enumerate(region.frontier)}
            results = evaluate_region(region.ops, frontier, self._lists(region.ops))
            self.decoded[(self.plan.root.id, None)] = canonical(results[self.plan.root.id], self.plan.root)
            return
        for p in self.providers:
            self._ask(p, self._fragment("secure_input", region.id))
        for i, table in broker_held.items():
            if table[1] or place[region.frontier[i][2].id] == "broker":
                self.net.send(BROKER, ENGINE, SecureStepInput(region.id, i, BROKER, None,
                                                              to_relation(table, self.columns)))
        self._send_lists(region)
        for m in self._ask(ENGINE, self._fragment("run", region.id)):
            self.decoded[(m.op, m.partition)] = from_relation(m.relation)


# ---------------------------------------------------------------- assembly

@dataclass
class Federation:
    catalog: Catalog
    store: DataStore
    network: Network
    broker: Broker
    engine: ObliviousEngine
    providers: dict = field(default_factory=dict)
    client: _Client = field(default_factory=_Client)

    def run(self, sql: str, options: PlannerOptions = PlannerOptions()) -> QueryResult:
        return self.broker.run_query(sql, options)

    def close(self) -> None:
        self.network.close()


def build_federation(catalog: Catalog, store: DataStore, trace: bool = False,
                     sockets: bool = False) -> Federation:
    net = Network(SocketTransport() if sockets else None)
    engine = ObliviousEngine(catalog, trace)
    broker = Broker(catalog, net, engine)
    providers = {name: DataProvider(name, catalog, store) for name in catalog.providers}
    client = _Client()
    for name, actor in list(providers.items()) + [(ENGINE, engine), (BROKER, broker), (CLIENT, client)]:
        net.attach(name, actor)
    return Federation(catalog, store, net, broker, engine, providers, client)


def run_query(federation: Federation, sql: str, options: PlannerOptions = PlannerOptions()) -> QueryResult:
    return federation.run(sql, options)


# ---------------------------------------------------------------- information-flow audit

def sensitive_values(catalog: Catalog, store: DataStore) -> set:
    """Every value stored in a Protected or Private base column at any provider."""
    out = set()
    for tdef in catalog.tables.values():
        idx = [i for i, c in enumerate(tdef.columns) if c.level.is_sensitive]
        for p in catalog.providers:
            for row in store.get(p, tdef.name).rows:
                out.update(row[i] for i in idx if row[i] is not None)
    return out


def _payload_values(msg) -> list:
    if isinstance(msg, CensusReply):
        return [v for t in msg.values for v in t]
    rel = getattr(msg, "relation", None)
    return [v for row in rel.rows for v in row] if rel is not None else []


def audit(network: Network, catalog: Catalog, store: DataStore) -> list[str]:
    """Messages carrying raw sensitive values outside the sanctioned paths.

    Sanctioned: SecureStepInput to the engine, plaintext-track results of singleton
    partitions, and decoded or root outputs. Meaningful when sensitive values are
    drawn from a domain disjoint from public ones.
    """
    secret = sensitive_values(catalog, store)
    providers = set(catalog.providers)
    problems = []
    for env in network.log:
        msg = env.msg
        if isinstance(msg, SecureStepInput):
            if env.dst != ENGINE:
                problems.append(f"#{env.seq}: secure input from {env.src} delivered to {env.dst}")
            continue
        if isinstance(msg, LocalResult) and msg.track in ("plaintext", "root", "decoded"):
            if env.dst != BROKER:
                problems.append(f"#{env.seq}: {msg.track} result delivered to {env.dst}")
            continue
        if env.src not in providers and env.src != ENGINE:
            continue
        leaked = sorted({repr(v) for v in _payload_values(msg) if v in secret})
        if leaked:
            problems.append(f"#{env.seq}: {type(msg).__name__} {env.src}->{env.dst} carries {', '.join(leaked[:3])}")
    return problems
