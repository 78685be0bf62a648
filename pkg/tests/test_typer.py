import random

import pytest

from pdnql.catalog import SecurityLevel as L, ValueType
from pdnql.plaintext import evaluate
from pdnql.planner import PlannerOptions, plan_query
from pdnql.sql.expressions import ColRef, Compare, IntLit, Name
from pdnql.sql.logical import Scan, postorder
from pdnql.sql.resolve import compile_sql
from pdnql.typer import (Label, PolicyError, UnresolvedError, check_labels, label_expression,
                         label_expression_set, label_plan, lub)
from pdnql.workload import query_text

from plans import Builder, finish, random_plan

LOW, HIGH = Label.LOW, Label.HIGH


def ref(level, name="a", cid=1):
    return ColRef(cid, name, ValueType.INT64, level)


def labels_by_kind(labeled):
    return [(op.kind, labeled.label(op)) for op in postorder(labeled.plan.root)]


# ---------------------------------------------------------------- lattice and expressions

def test_lub():
    assert lub([LOW, LOW]) is LOW
    assert lub([LOW, HIGH]) is HIGH and lub([HIGH, LOW]) is HIGH
    assert lub([]) is LOW


def test_e_low_public_attributes():
    assert label_expression(Compare("=", ref(L.PUBLIC), IntLit(3))) is LOW
    assert label_expression(IntLit(10)) is LOW


@pytest.mark.parametrize("level", [L.PROTECTED, L.PRIVATE])
def test_e_base_sensitive_attributes_are_high(level):
    assert label_expression(Compare("=", ref(level), IntLit(3))) is HIGH


def test_e_base_all_sensitive_mode():
    assert label_expression(ref(L.PUBLIC), all_sensitive=True) is HIGH


def test_e_set():
    assert label_expression_set([ref(L.PUBLIC), ref(L.PRIVATE, "time", 2)]) is HIGH
    assert label_expression_set([ref(L.PUBLIC), ref(L.PUBLIC)]) is LOW
    assert label_expression_set([]) is LOW


def test_in_list_labels(catalog):
    plan = compile_sql("SELECT pid FROM diagnoses WHERE pid IN cdiff_cohort;", catalog)
    assert label_expression(plan.root.child.predicate) is LOW
    plan = compile_sql("SELECT pid FROM diagnoses WHERE diag = 'cdiff';", catalog)
    assert label_expression(plan.root.child.predicate) is HIGH


def test_unresolved_attribute_is_an_error():
    with pytest.raises(UnresolvedError):
        label_expression(Compare("=", Name(None, "zip"), IntLit(1)))


# ---------------------------------------------------------------- operator rules

def test_r_scan_is_low_even_over_private_columns():
    b = Builder()
    lp = label_plan(finish(b.scan(L.PRIVATE, L.PROTECTED)), check_policy=False)
    assert labels_by_kind(lp) == [("Scan", LOW)]


@pytest.mark.parametrize("level, expected", [(L.PUBLIC, LOW), (L.PROTECTED, HIGH), (L.PRIVATE, HIGH)])
def test_r_filter_follows_predicate(level, expected):
    b = Builder()
    scan = b.scan(L.PUBLIC, level)
    lp = label_plan(finish(b.project(b.filter(scan, 1), [0])))
    assert labels_by_kind(lp)[1] == ("Filter", expected)


def test_r_filter_literals_never_raise():
    b = Builder()
    lp = label_plan(finish(b.filter(b.scan(L.PUBLIC))))
    assert labels_by_kind(lp) == [("Scan", LOW), ("Filter", LOW)]


@pytest.mark.parametrize("level, expected", [(L.PUBLIC, LOW), (L.PROTECTED, HIGH)])
def test_r_join_input_sets(level, expected):
    b = Builder()
    j = b.join(b.scan(L.PUBLIC), b.scan(L.PUBLIC, level))
    lp = label_plan(finish(j))
    assert lp.label(j) is expected


def test_r_join_sensitive_predicate():
    b = Builder()
    j = b.join(b.scan(L.PROTECTED), b.scan(L.PROTECTED))
    assert label_plan(finish(j)).label(j) is HIGH


def test_r_join_only_live_columns_count():
    b = Builder()
    j = b.join(b.scan(L.PUBLIC, L.PROTECTED), b.scan(L.PUBLIC))
    top = b.project(j, [0])
    assert label_plan(finish(top)).label(j) is LOW


@pytest.mark.parametrize("group, arg, expected", [
    ((0,), None, LOW), ((1,), None, HIGH), ((0,), 1, HIGH), ((), 0, LOW), ((), None, LOW)])
def test_r_aggregate(group, arg, expected):
    b = Builder()
    agg = b.aggregate(b.scan(L.PUBLIC, L.PROTECTED), group, arg)
    assert label_plan(finish(agg)).label(agg) is expected


@pytest.mark.parametrize("level, expected", [(L.PUBLIC, LOW), (L.PROTECTED, HIGH)])
def test_r_distinct(level, expected):
    b = Builder()
    d = b.distinct(b.project(b.scan(L.PUBLIC, level), [0, 1]))
    assert label_plan(finish(d)).label(d) is expected


def test_r_sort_uses_whole_input_set():
    b = Builder()
    s = b.sort(b.scan(L.PUBLIC, L.PROTECTED), 0)
    assert label_plan(finish(s)).label(s) is HIGH
    b = Builder()
    s = b.sort(b.project(b.scan(L.PUBLIC, L.PROTECTED), [0]), 0)
    assert label_plan(finish(s)).label(s) is LOW


def test_window_number_is_multi_tuple():
    b = Builder()
    w = b.window(b.scan(L.PUBLIC, L.PRIVATE), 0, 1)
    assert label_plan(finish(b.project(w, [0, 2]))).label(w) is HIGH


@pytest.mark.parametrize("a, c, expected", [
    (L.PUBLIC, L.PUBLIC, LOW), (L.PUBLIC, L.PROTECTED, HIGH), (L.PRIVATE, L.PUBLIC, HIGH)])
def test_r_setop_synthetic(a, c, expected):
    b = Builder()
    s = b.setop(b.scan(a), b.scan(c), "INTERSECT")
    assert label_plan(finish(s), check_policy=False).label(s) is expected


def test_r_setop_intersection_of_public_censuses_is_public():
    b = Builder()
    s = b.setop(b.scan(L.PUBLIC, table="census_a"), b.scan(L.PUBLIC, table="census_b"), "INTERSECT")
    assert labels_by_kind(label_plan(finish(s))) == [("Scan", LOW), ("Scan", LOW), ("SetOp", LOW)]


def test_r_nest_high_child_forces_high():
    b = Builder()
    f = b.filter(b.scan(L.PUBLIC, L.PROTECTED), 1)
    top = b.limit(b.project(f, [0]))
    lp = label_plan(finish(top))
    assert [lab for _, lab in labels_by_kind(lp)] == [LOW, HIGH, HIGH, HIGH]


def test_r_nest_low_child_keeps_tuple_local_low():
    b = Builder()
    top = b.limit(b.project(b.filter(b.scan(L.PUBLIC, L.PROTECTED), 0), [0]))
    assert [lab for _, lab in labels_by_kind(label_plan(finish(top)))] == [LOW] * 4


@pytest.mark.parametrize("side", [0, 1])
def test_r_nest_bin_one_high_child(side):
    b = Builder()
    hi = b.project(b.filter(b.scan(L.PUBLIC, L.PROTECTED), 1), [0])
    lo = b.scan(L.PUBLIC)
    kids = [hi, lo] if side == 0 else [lo, hi]
    j = b.join(*kids)
    assert label_plan(finish(j)).label(j) is HIGH
    b2 = Builder()
    hi2 = b2.project(b2.filter(b2.scan(L.PUBLIC, L.PROTECTED), 1), [0])
    s = b2.setop(*([hi2, b2.scan(L.PUBLIC)] if side == 0 else [b2.scan(L.PUBLIC), hi2]), "UNION")
    assert label_plan(finish(s)).label(s) is HIGH


# ---------------------------------------------------------------- workload plans

def test_comorbidity_labels(catalog):
    lp = label_plan(compile_sql(query_text("comorbidity"), catalog))
    assert labels_by_kind(lp) == [("Scan", LOW), ("Filter", LOW), ("Aggregate", HIGH), ("Sort", HIGH),
                                  ("Limit", HIGH)]


def test_recurrent_labels(catalog):
    lp = label_plan(compile_sql(query_text("recurrent_cdiff"), catalog))
    got = labels_by_kind(lp)
    assert got[0] == ("Scan", LOW)
    assert all(lab is HIGH for _, lab in got[1:])


def test_public_only_plan_is_low(catalog):
    lp = label_plan(compile_sql("SELECT pid FROM diagnoses;", catalog))
    assert set(lp.op_labels.values()) == {LOW}


def test_private_output_is_a_policy_violation(catalog):
    with pytest.raises(PolicyError, match="policy violation: private attribute in output") as info:
        label_plan(compile_sql("SELECT pid, time FROM diagnoses;", catalog))
    assert info.value.stage == "policy"


def test_protected_output_is_allowed(catalog):
    label_plan(compile_sql("SELECT diag FROM diagnoses;", catalog))


# ---------------------------------------------------------------- properties

def test_label_monotonicity_500_random_plans():
    for seed in range(500):
        plan = random_plan(random.Random(seed))
        lp = label_plan(plan, check_policy=False)
        for op in postorder(plan.root):
            assert isinstance(op, Scan) is (not op.children)
            if isinstance(op, Scan):
                assert lp.label(op) is LOW
            for child in op.children:
                assert lp.label(op) >= lp.label(child), (seed, op.kind)
        assert check_labels(plan, lp.op_labels) == []


def test_minimality_against_rule_replay():
    """Raising one label never breaks that operator's own rule; lowering any High does."""
    for seed in range(200):
        plan = random_plan(random.Random(seed))
        lp = label_plan(plan, check_policy=False)
        for op in postorder(plan.root):
            flipped = dict(lp.op_labels)
            mark = f"{op.kind}#{op.id}:"
            if lp.label(op) is LOW:
                flipped[op.id] = HIGH
                assert not any(p.startswith(mark) for p in check_labels(plan, flipped))
            else:
                flipped[op.id] = LOW
                assert any(p.startswith(mark) for p in check_labels(plan, flipped)), (seed, op.kind)


def test_soundness_low_filters_ignore_sensitive_values(catalog):
    """Low operators keep their output cardinality when sensitive columns are permuted."""
    rng = random.Random(5)
    sqls = ["SELECT pid FROM diagnoses WHERE pid IN cdiff_cohort;",
            "SELECT pid, diag FROM diagnoses WHERE pid > 4;"]
    for sql in sqls:
        plan = plan_query(compile_sql(sql, catalog), PlannerOptions())
        low = [op for op in plan.operators() if op.label is LOW and op.kind == "Filter"]
        assert low
        for _ in range(20):
            rows = [(rng.randint(1, 9), rng.choice("abc"), rng.randint(0, 50)) for _ in range(12)]
            diags = rng.sample([r[1] for r in rows], len(rows))
            times = rng.sample([r[2] for r in rows], len(rows))
            permuted = [(r[0], d, t) for r, d, t in zip(rows, diags, times)]
            for op in low:
                cids = [c.cid for c in op.child.schema]
                lists = {"cdiff_cohort": {1, 3, 5}}
                a = evaluate(op, [(cids, [r[:len(cids)] for r in rows])], lists)
                c = evaluate(op, [(cids, [r[:len(cids)] for r in permuted])], lists)
                assert len(a[1]) == len(c[1])
