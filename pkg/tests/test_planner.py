from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from pdnql.catalog import SecurityLevel as L
from pdnql.planner import (Mode, Phase, PlanError, PlannerOptions, apply_secure_semi_join,
                           assign_execution_modes, compute_partition_census, explain,
                           infer_slice_key, phys_postorder, plan_query, shares_slice_key)
from pdnql.plaintext import evaluate, merge_partials
from pdnql.sql.logical import Aggregate, Join, WindowNumber, postorder
from pdnql.sql.resolve import compile_sql
from pdnql.typer import label_plan
from pdnql.workload import QUERY_NAMES, SUBQUERIES, default_catalog, query_text

from conftest import GOLDENS
from plans import Builder, finish

CATALOG = default_catalog()
PRESETS = [PlannerOptions.optimized(), PlannerOptions.smc_minimized(), PlannerOptions.baseline()]


def planned(sql, options=PlannerOptions()):
    return plan_query(compile_sql(sql, CATALOG), options)


def ops_of(plan, kind):
    return [op for op in plan.operators() if op.kind == kind]


def key_names(op):
    names = {c.cid: c.name for o in [op] + op.children for c in o.schema}
    return [names[min(slot)] for slot in op.key_out]


# ---------------------------------------------------------------- slice keys

def test_window_key_is_pid():
    lg = compile_sql(query_text("recurrent_cdiff"), CATALOG)
    win = next(op for op in postorder(lg.root) if isinstance(op, WindowNumber))
    key = infer_slice_key(win)
    assert [sorted(s) for s in key] == [[win.partition_by[0].cid]]


def test_protected_group_key_is_not_sliceable():
    lg = compile_sql(query_text("comorbidity"), CATALOG)
    agg = next(op for op in postorder(lg.root) if isinstance(op, Aggregate))
    assert infer_slice_key(agg) == []


def test_aspirin_join_key_is_pid():
    lg = compile_sql(query_text("aspirin_count"), CATALOG)
    join = next(op for op in postorder(lg.root) if isinstance(op, Join))
    key = infer_slice_key(join)
    assert len(key) == 1 and {join.schema[i].name for i, c in enumerate(join.schema)
                              if c.cid in key[0]} == {"pid"}


def test_all_sensitive_disables_keys():
    lg = compile_sql(query_text("aspirin_count"), CATALOG)
    join = next(op for op in postorder(lg.root) if isinstance(op, Join))
    assert infer_slice_key(join, all_sensitive=True) == []


def test_shares_slice_key_examples():
    plan = planned(query_text("recurrent_cdiff"), PlannerOptions(coalesce=False))
    join = ops_of(plan, "Join")[0]
    proj = join.children[0]
    assert shares_slice_key(join, proj, 0) and shares_slice_key(join, proj, 1)
    win = ops_of(plan, "WindowNumber")[0]
    assert key_names(win) == ["pid"]

    plan = planned(query_text("aspirin_count"))
    agg, = ops_of(plan, "Aggregate")
    distinct = agg.child
    assert agg.key_out == [] and not shares_slice_key(agg, distinct, 0)
    assert key_names(distinct) == ["pid"]


# ---------------------------------------------------------------- modes

def modes(plan):
    return [(op.kind, op.mode, op.phase) for op in plan.operators()]


def test_comorbidity_modes():
    assert modes(planned(query_text("comorbidity"))) == [
        ("Scan", Mode.PLAIN, Phase.WHOLE), ("Filter", Mode.PLAIN, Phase.WHOLE),
        ("Aggregate", Mode.PLAIN, Phase.SPLIT_LOW), ("Aggregate", Mode.SECURE, Phase.SPLIT_HIGH),
        ("Sort", Mode.SECURE, Phase.WHOLE), ("Limit", Mode.SECURE, Phase.WHOLE)]


def test_recurrent_runs_sliced_after_the_scan():
    plan = planned(query_text("recurrent_cdiff"))
    got = modes(plan)
    assert got[0] == ("Scan", Mode.PLAIN, Phase.WHOLE)
    assert all(m is Mode.SLICED for _, m, _ in got[1:])
    assert all(key_names(op) == ["pid"] for op in plan.operators()[1:])


def test_aspirin_modes():
    plan = planned(query_text("aspirin_count"))
    got = [(k, m) for k, m, _ in modes(plan)]
    assert got[-1] == ("Aggregate", Mode.SECURE)
    assert [m for k, m in got if k not in ("Scan", "Aggregate")] == [Mode.SLICED] * 6


def test_baseline_is_all_secure():
    plan = planned(query_text("aspirin_count"), PlannerOptions.baseline())
    assert {op.mode for op in plan.operators() if op.kind != "Scan"} == {Mode.SECURE}


def test_set_operations_cannot_execute():
    b = Builder()
    plan = finish(b.setop(b.scan(L.PUBLIC), b.scan(L.PROTECTED)))
    with pytest.raises(PlanError, match="set operations"):
        assign_execution_modes(label_plan(plan))


@pytest.mark.parametrize("options", PRESETS, ids=["optimized", "smc", "baseline"])
def test_mode_monotonicity_and_public_keys(options):
    for sql in [query_text(q) for q in QUERY_NAMES] + SUBQUERIES:
        plan = planned(sql, options)
        for op in plan.operators():
            for c in op.children:
                assert op.mode >= c.mode, sql
            if op.mode is Mode.SLICED:
                assert op.key_out
                cols = {c.cid: c for o in [op] + op.children for c in o.schema}
                for slot in op.key_out:
                    assert all(not cols[cid].level.is_sensitive for cid in slot if cid in cols)
            if op.mode is Mode.PLAIN and op.label.name == "HIGH":
                assert op.phase is Phase.SPLIT_LOW, sql


# ---------------------------------------------------------------- split

def test_split_filter_on_conjunct_labels():
    plan = planned("SELECT pid FROM diagnoses WHERE pid IN cdiff_cohort AND diag = 'hd';")
    low, high = ops_of(plan, "Filter")
    assert (low.mode, low.phase) == (Mode.PLAIN, Phase.SPLIT_LOW)
    assert "IN cdiff_cohort" in explain(plan).splitlines()[1]
    assert (high.phase, high.mode) == (Phase.SPLIT_HIGH, Mode.SECURE)
    assert "diag = 'hd'" in explain(plan).splitlines()[2]


def test_count_distinct_is_not_split():
    plan = planned("SELECT diag, COUNT(DISTINCT pid) n FROM diagnoses GROUP BY diag;")
    assert all(op.phase is Phase.WHOLE for op in ops_of(plan, "Aggregate"))


def test_no_split_when_disabled():
    plan = planned(query_text("comorbidity"), PlannerOptions(split=False))
    assert [op.phase for op in ops_of(plan, "Aggregate")] == [Phase.WHOLE]


rows = st.lists(st.tuples(st.integers(1, 6), st.sampled_from(["a", "b", "c"]), st.integers(0, 9)),
                max_size=10)


@settings(max_examples=150)
@given(rows, rows)
def test_split_aggregate_merge_matches_whole(a, b):
    sql = "SELECT diag, COUNT(*) n, SUM(pid) s, MIN(pid) lo, MAX(pid) hi, COUNT(pid) c FROM diagnoses " \
          "GROUP BY diag;"
    split = planned(sql, PlannerOptions(trim=False, coalesce=False))
    low, high = ops_of(split, "Aggregate")
    scan = low.child
    cids = [c.cid for c in scan.schema]
    partial_a = evaluate(low, [(cids, a)])
    partial_b = evaluate(low, [(cids, b)])
    merged = merge_partials(high, (partial_a[0], partial_a[1] + partial_b[1]))

    whole = planned(sql, PlannerOptions(split=False, trim=False, coalesce=False))
    agg, = ops_of(whole, "Aggregate")
    expected = evaluate(agg, [([c.cid for c in agg.child.schema], a + b)])
    assert Counter(merged[1]) == Counter(expected[1])


def test_global_count_split_has_one_output():
    sql = "SELECT COUNT(diag) n FROM diagnoses;"
    plan = planned(sql, PlannerOptions(trim=False, coalesce=False))
    low, high = ops_of(plan, "Aggregate")
    cids = [c.cid for c in low.child.schema]
    empty = evaluate(low, [(cids, [])])
    assert merge_partials(high, (empty[0], empty[1] + empty[1]))[1] == [(0,)]


# ---------------------------------------------------------------- census and semi-join

def region_plan():
    plan = planned(query_text("recurrent_cdiff"))
    region, = [r for r in plan.regions if r.mode is Mode.SLICED]
    return plan, region


def census(plan, a, b):
    return compute_partition_census(plan, {"alice": lambda r: [(v,) for v in a],
                                           "bob": lambda r: [(v,) for v in b]})


def test_census_is_distinct():
    plan, region = region_plan()
    census(plan, [1, 2, 3, 3, 2], [2, 4])
    assert plan.partition_census[region.id] == {"alice": {(1,), (2,), (3,)}, "bob": {(2,), (4,)}}


def test_empty_census():
    plan, region = region_plan()
    census(plan, [], [])
    apply_secure_semi_join(plan)
    tracks = plan.semi_join_tracks[region.id]
    assert tracks.secure == () and tracks.plaintext == {"alice": (), "bob": ()}


def test_semi_join_example():
    plan, region = region_plan()
    apply_secure_semi_join(census(plan, [1, 2, 3], [2, 4]))
    tracks = plan.semi_join_tracks[region.id]
    assert tracks.secure == ((2,),)
    assert tracks.plaintext == {"alice": ((1,), (3,)), "bob": ((4,),)}
    assert explain(plan).splitlines()[-1] == f"semi-join #{region.id}: secure={{2}} plaintext alice={{1, 3}} bob={{4}}"


def test_semi_join_disjoint_and_identical():
    plan, region = region_plan()
    apply_secure_semi_join(census(plan, [1, 3], [2, 4]))
    assert plan.semi_join_tracks[region.id].secure == ()
    plan, region = region_plan()
    apply_secure_semi_join(census(plan, [5, 1], [1, 5]))
    tracks = plan.semi_join_tracks[region.id]
    assert tracks.secure == ((1,), (5,)) and tracks.plaintext == {"alice": (), "bob": ()}


def test_semi_join_off_sends_everything_secure():
    plan = planned(query_text("recurrent_cdiff"), PlannerOptions(semijoin=False))
    region, = [r for r in plan.regions if r.mode is Mode.SLICED]
    apply_secure_semi_join(census(plan, [1, 2, 3], [2, 4]))
    assert plan.semi_join_tracks[region.id].secure == ((1,), (2,), (3,), (4,))


@given(st.sets(st.integers(0, 20)), st.sets(st.integers(0, 20)))
def test_semi_join_partitions_census(a, b):
    plan, region = region_plan()
    apply_secure_semi_join(census(plan, a, b))
    tracks = plan.semi_join_tracks[region.id]
    secure = {v for (v,) in tracks.secure}
    assert secure == a & b
    assert {v for (v,) in tracks.plaintext["alice"]} == a - b
    assert {v for (v,) in tracks.plaintext["bob"]} == b - a
    assert list(tracks.secure) == sorted(tracks.secure)


# ---------------------------------------------------------------- trim and coalesce

def test_trim_recurrent_distinct_sees_only_pid():
    plan = planned(query_text("recurrent_cdiff"))
    distinct, = ops_of(plan, "Distinct")
    assert [c.name for c in distinct.child.live_schema] == ["pid"]
    assert [c.name for c in plan.root.live_schema] == ["pid"]


def test_no_trimming_when_everything_is_used():
    plan = planned("SELECT DISTINCT pid, diag FROM diagnoses;")
    scan, = ops_of(plan, "Scan")
    assert [c.name for c in scan.live_schema] == ["pid", "diag"]


def test_trim_off_keeps_all_columns():
    plan = planned(query_text("recurrent_cdiff"), PlannerOptions(trim=False))
    scan, = ops_of(plan, "Scan")
    assert [c.name for c in scan.live_schema] == ["pid", "diag", "time"]


def test_coalesce_filter_into_join():
    plan = planned(query_text("aspirin_count"))
    join, = ops_of(plan, "Join")
    assert sorted(f.kind for f in join.fused) == ["Filter", "Filter"]
    assert all(f.fused_into is join for f in join.fused)


def test_coalesce_project_into_plain_scan():
    plan = planned("SELECT pid FROM diagnoses;")
    scan, = ops_of(plan, "Scan")
    assert [f.kind for f in scan.fused] == ["Project"]


def test_coalesce_never_crosses_mode_boundary():
    for sql in [query_text(q) for q in QUERY_NAMES] + SUBQUERIES:
        for op in planned(sql).operators():
            if op.fused_into is not None:
                assert op.fused_into.mode is op.mode, sql


def test_coalesce_off():
    plan = planned(query_text("aspirin_count"), PlannerOptions(coalesce=False))
    assert all(not op.fused for op in plan.operators())


# ---------------------------------------------------------------- explain

@pytest.mark.parametrize("name", QUERY_NAMES)
def test_explain_goldens(name):
    assert explain(planned(query_text(name))) + "\n" == (GOLDENS / f"{name}.explain").read_text()


def test_explain_comorbidity_ends_with_secure_limit():
    lines = explain(planned(query_text("comorbidity"))).splitlines()
    assert len(lines) == 6 and lines[-1].endswith("Limit(10) label=high mode=secure")


def test_explain_all_low_plan_is_plain():
    lines = explain(planned("SELECT pid FROM diagnoses WHERE pid > 3;")).splitlines()
    assert all("mode=plain" in line for line in lines)


def test_explain_is_deterministic():
    for sql in SUBQUERIES:
        assert explain(planned(sql)) == explain(planned(sql))


def test_options_round_trip():
    for o in PRESETS:
        assert PlannerOptions.decode(o.encode()) == o


def test_postorder_is_children_first():
    plan = planned(query_text("aspirin_count"))
    seen = set()
    for op in phys_postorder(plan.root):
        assert all(id(c) in seen for c in op.children)
        seen.add(id(op))
