import itertools
import random
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from pdnql.garbled import (CircuitError, GarbledCircuit, Gate, decode, evaluate, evaluate_plain, garble,
                           int_to_bits, make_circuit, parse_circuit, run_circuit, select_input_labels)

from circuits import bundled, random_circuit, small_circuits

OR_TEXT = "INPUT A a\nINPUT B b\nOUTPUT out\nG0 OR a b -> out\n"


def assignments(circuit):
    n = len(circuit.alice_inputs) + len(circuit.bob_inputs)
    for bits in itertools.product((0, 1), repeat=n):
        yield list(bits[:len(circuit.alice_inputs)]), list(bits[len(circuit.alice_inputs):])


# ---------------------------------------------------------------- parsing

def test_parse_or_gate():
    c = parse_circuit(OR_TEXT)
    assert c.alice_inputs == ["a"] and c.bob_inputs == ["b"] and c.outputs == ["out"]
    assert c.gates == [Gate("0", "OR", ("a", "b"), "out")]


def test_parse_orders_gates_topologically():
    c = parse_circuit("INPUT A a\nINPUT B b\nOUTPUT y\nG2 NOT x -> y\nG1 AND a b -> x\n")
    assert [g.gate_id for g in c.gates] == ["1", "2"]


@pytest.mark.parametrize("text, message", [
    ("INPUT A a\nOUTPUT x\nG1 NOT a -> x\nG1 NOT a -> y\n", "duplicate gate id G1"),
    ("INPUT A a\nOUTPUT x\nG1 NOT a -> x\nG2 NOT a -> x\n", "more than one driver"),
    ("INPUT A a\nOUTPUT x\nG1 AND a q -> x\n", "wire q has no driver"),
    ("INPUT A a\nOUTPUT x\nG1 AND a y -> x\nG2 NOT x -> y\n", "cycle"),
    ("INPUT A a\nOUTPUT z\nG1 NOT a -> x\n", "output wire z has no driver"),
    ("INPUT C a\n", "owner A or B"),
    ("INPUT A a\nG1 NAND a a -> x\n", "unknown gate kind"),
    ("INPUT A a\nG1 AND a -> x\n", "takes 2 input"),
    ("INPUT A a\nG1 NOT a a -> x\n", "takes 1 input"),
    ("INPUT A a\nwhat\n", "line 2: cannot parse"),
    ("INPUT A a\nINPUT B a\n", "declared as input twice"),
])
def test_parse_errors(text, message):
    with pytest.raises(CircuitError, match=message):
        parse_circuit(text)


def test_comments_and_blank_lines_are_ignored():
    c = parse_circuit("# header\n\n" + OR_TEXT.replace("\n", "  # trailing\n", 1))
    assert len(c.gates) == 1


# ---------------------------------------------------------------- garbling

def test_or_gate_has_four_rows_and_not_gate_two():
    g, _ = garble(parse_circuit(OR_TEXT), seed=1)
    assert len(g.gates[0].rows) == 4
    g, _ = garble(parse_circuit("INPUT A a\nOUTPUT x\nG1 NOT a -> x\n"), seed=1)
    assert len(g.gates[0].rows) == 2
    assert all(len(row) == 24 for row in g.gates[0].rows)


def test_same_seed_same_garbling():
    c = bundled("eq2")
    assert garble(c, 11) == garble(c, 11)
    assert garble(c, 11)[0] != garble(c, 12)[0]


def test_wire_labels_are_distinct():
    _, tables = garble(bundled("eq2"), 3)
    flat = [k for pair in tables.labels.values() for k in pair]
    assert len(set(flat)) == len(flat)
    assert all(len(k) == 16 for k in flat)


def test_evaluator_view_holds_no_labels():
    garbled, tables = garble(parse_circuit(OR_TEXT), 5)
    assert isinstance(garbled, GarbledCircuit)
    labels = {k for pair in tables.labels.values() for k in pair}
    visible = {bytes(x) for g in garbled.gates for x in (g.nonce, *g.rows)}
    assert not labels & visible


# ---------------------------------------------------------------- input selection

def test_select_or_inputs():
    garbled, tables = garble(parse_circuit(OR_TEXT), 2)
    got = select_input_labels(garbled, tables, [1], [0])
    assert got == {"a": tables.labels["a"][1], "b": tables.labels["b"][0]}


def test_select_alice_only_circuit():
    c = parse_circuit("INPUT A a\nOUTPUT x\nG1 NOT a -> x\n")
    garbled, tables = garble(c, 2)
    assert select_input_labels(garbled, tables, [0], []) == {"a": tables.labels["a"][0]}


@pytest.mark.parametrize("alice, bob", [([1, 0], [0]), ([1], []), ([2], [0])])
def test_select_rejects_bad_inputs(alice, bob):
    garbled, tables = garble(parse_circuit(OR_TEXT), 2)
    with pytest.raises(CircuitError):
        select_input_labels(garbled, tables, alice, bob)
    with pytest.raises(CircuitError):
        evaluate_plain(parse_circuit(OR_TEXT), alice, bob)


# ---------------------------------------------------------------- evaluation and decode

def test_or_zero_zero_decodes_to_zero():
    assert run_circuit(parse_circuit(OR_TEXT), [0], [0], seed=9) == [0]


@pytest.mark.parametrize("a, b", list(itertools.product((0, 1), repeat=2)))
def test_or_truth_table(a, b):
    assert run_circuit(parse_circuit(OR_TEXT), [a], [b], seed=a * 2 + b) == [a | b]


def test_eq2_all_sixteen_inputs():
    c = bundled("eq2")
    for x, y in itertools.product(range(4), repeat=2):
        assert run_circuit(c, int_to_bits(x, 2), int_to_bits(y, 2), seed=x * 4 + y) == [int(x == y)]


def test_all_one_and_two_gate_circuits():
    count = 0
    for i, c in enumerate(small_circuits()):
        for alice, bob in assignments(c):
            assert run_circuit(c, alice, bob, seed=i) == evaluate_plain(c, alice, bob)
            count += 1
    assert count == 434 * 4


def test_decode_forged_label():
    garbled, tables = garble(parse_circuit(OR_TEXT), 4)
    with pytest.raises(CircuitError, match="unknown label on output wire out"):
        decode(tables, {"out": bytes(16)})


def test_multi_output_order():
    c = parse_circuit("INPUT A a\nINPUT B b\nOUTPUT n x o\nG1 AND a b -> x\nG2 OR a b -> o\nG3 NOT a -> n\n")
    assert run_circuit(c, [1], [0]) == [0, 0, 1]


def test_corrupted_table_is_detected():
    garbled, tables = garble(parse_circuit(OR_TEXT), 4)
    gate = garbled.gates[0]
    broken = type(gate)(gate.gate_id, gate.nonce, gate.kind, gate.inputs, gate.output,
                        tuple(bytes(24) for _ in gate.rows))
    bad = GarbledCircuit((broken,), garbled.alice_inputs, garbled.bob_inputs, garbled.outputs)
    with pytest.raises(CircuitError, match="0 rows decrypted validly"):
        evaluate(bad, select_input_labels(garbled, tables, [1], [1]))


def test_missing_input_label():
    garbled, tables = garble(parse_circuit(OR_TEXT), 4)
    with pytest.raises(CircuitError, match="missing label for wire b"):
        evaluate(garbled, {"a": tables.labels["a"][0]})


def test_int_to_bits():
    assert int_to_bits(3, 2) == [1, 1] and int_to_bits(2, 3) == [0, 1, 0]
    with pytest.raises(CircuitError):
        int_to_bits(4, 2)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 64))
def test_random_circuits_match_plaintext(seed, n_gates):
    rng = random.Random(seed)
    c = random_circuit(rng, n_gates)
    shuffled = list(c.gates)
    rng.shuffle(shuffled)
    c = make_circuit(shuffled, c.alice_inputs, c.bob_inputs, c.outputs)
    alice = [rng.randint(0, 1) for _ in c.alice_inputs]
    bob = [rng.randint(0, 1) for _ in c.bob_inputs]
    assert run_circuit(c, alice, bob, seed) == evaluate_plain(c, alice, bob)


# ---------------------------------------------------------------- row permutation

def matched_positions(inputs, seeds):
    c = parse_circuit(OR_TEXT)
    hits = Counter()
    for seed in seeds:
        garbled, tables = garble(c, seed)
        log = []
        evaluate(garbled, select_input_labels(garbled, tables, *inputs), log)
        hits[log[0][1]] += 1
    return hits


@pytest.mark.parametrize("inputs", [([0], [0]), ([0], [1]), ([1], [0]), ([1], [1])])
def test_each_truth_row_lands_uniformly(inputs):
    n = 4000
    hits = matched_positions(inputs, range(n))
    assert set(hits) == {0, 1, 2, 3}
    assert all(abs(hits[p] / n - 0.25) < 0.03 for p in range(4)), hits


def test_matched_row_position_independent_of_inputs():
    n = 4000
    low, high = matched_positions(([0], [0]), range(n)), matched_positions(([1], [1]), range(n))
    assert all(abs(low[p] - high[p]) / n < 0.04 for p in range(4)), (low, high)
