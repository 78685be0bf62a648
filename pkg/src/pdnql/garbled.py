"""Yao garbled circuits over small boolean circuits.

Each wire gets two random 128-bit labels. A gate's table holds, per truth-table row,
H(k_a || k_b || nonce) XOR (k_out || 0^64) in shuffled order; the evaluator tries every
row and keeps the one whose trailing 64 bits decrypt to zero. Oblivious transfer is
simulated by a selector that holds the garbler's tables.
"""
from __future__ import annotations

import hashlib
import random
import re
from dataclasses import dataclass, field
from typing import Optional

LABEL_BYTES = 16
TAG = bytes(8)
KINDS = {"AND": 2, "OR": 2, "XOR": 2, "NOT": 1}
TRUTH = {
    "AND": lambda a, b: a & b,
    "OR": lambda a, b: a | b,
    "XOR": lambda a, b: a ^ b,
    "NOT": lambda a: 1 - a,
}


class CircuitError(ValueError):
    pass


@dataclass(frozen=True)
class Gate:
    gate_id: str
    kind: str
    inputs: tuple
    output: str


@dataclass
class Circuit:
    gates: list[Gate]  # topological order
    alice_inputs: list[str] = field(default_factory=list)
    bob_inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)


_GATE = re.compile(r"^G(\S+)\s+(\w+)\s+(\S+)(?:\s+(\S+))?\s*->\s*(\S+)$")


def parse_circuit(text: str) -> Circuit:
    """``INPUT A|B w..``, ``OUTPUT w..`` and ``G<id> KIND in1 [in2] -> out`` lines; ``#`` comments."""
    alice, bob, outputs, gates = [], [], [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "INPUT":
            if len(parts) < 2 or parts[1] not in ("A", "B"):
                raise CircuitError(f"line {lineno}: INPUT needs owner A or B")
            (alice if parts[1] == "A" else bob).extend(parts[2:])
            continue
        if parts[0] == "OUTPUT":
            outputs.extend(parts[1:])
            continue
        m = _GATE.match(line)
        if not m:
            raise CircuitError(f"line {lineno}: cannot parse {line!r}")
        gid, kind, in1, in2, out = m.groups()
        kind = kind.upper()
        if kind not in KINDS:
            raise CircuitError(f"line {lineno}: unknown gate kind {kind}")
        ins = (in1,) if in2 is None else (in1, in2)
        if len(ins) != KINDS[kind]:
            raise CircuitError(f"line {lineno}: {kind} takes {KINDS[kind]} input(s)")
        gates.append(Gate(gid, kind, ins, out))
    return make_circuit(gates, alice, bob, outputs)


def make_circuit(gates, alice_inputs, bob_inputs, outputs) -> Circuit:
    """Validate wiring and order gates topologically."""
    ids = [g.gate_id for g in gates]
    dup = sorted({i for i in ids if ids.count(i) > 1})
    if dup:
        raise CircuitError(f"duplicate gate id G{dup[0]}")
    drivers: dict[str, Optional[Gate]] = {}
    for w in list(alice_inputs) + list(bob_inputs):
        if w in drivers:
            raise CircuitError(f"wire {w} declared as input twice")
        drivers[w] = None
    for g in gates:
        if g.output in drivers:
            raise CircuitError(f"wire {g.output} has more than one driver")
        drivers[g.output] = g
    for g in gates:
        for w in g.inputs:
            if w not in drivers:
                raise CircuitError(f"wire {w} has no driver")
    for w in outputs:
        if w not in drivers:
            raise CircuitError(f"output wire {w} has no driver")
    order, state = [], {}

    def visit(g: Gate):
        if state.get(g.gate_id) == 2:
            return
        if state.get(g.gate_id) == 1:
            raise CircuitError(f"cycle through gate G{g.gate_id}")
        state[g.gate_id] = 1
        for w in g.inputs:
            if drivers[w] is not None:
                visit(drivers[w])
        state[g.gate_id] = 2
        order.append(g)

    for g in gates:
        visit(g)
    return Circuit(order, list(alice_inputs), list(bob_inputs), list(outputs))


def evaluate_plain(circuit: Circuit, alice_bits, bob_bits) -> list[int]:
    _check_widths(circuit, alice_bits, bob_bits)
    values = dict(zip(circuit.alice_inputs, alice_bits))
    values.update(zip(circuit.bob_inputs, bob_bits))
    for g in circuit.gates:
        values[g.output] = TRUTH[g.kind](*(values[w] for w in g.inputs))
    return [values[w] for w in circuit.outputs]


def _check_widths(circuit: Circuit, alice_bits, bob_bits) -> None:
    if len(alice_bits) != len(circuit.alice_inputs) or len(bob_bits) != len(circuit.bob_inputs):
        raise CircuitError(f"input width mismatch: expected {len(circuit.alice_inputs)} Alice and "
                           f"{len(circuit.bob_inputs)} Bob bits, got {len(alice_bits)} and {len(bob_bits)}")
    if any(b not in (0, 1) for b in list(alice_bits) + list(bob_bits)):
        raise CircuitError("input bits must be 0 or 1")


def H(*parts: bytes) -> bytes:
    """SHA-256 truncated to 192 bits: room for a 128-bit label and a 64-bit zero tag."""
    return hashlib.sha256(b"".join(parts)).digest()[:LABEL_BYTES + len(TAG)]


def _xor(a: bytes, b: bytes) -> bytes:
    return bytes(x ^ y for x, y in zip(a, b))


@dataclass(frozen=True)
class GarbledGate:
    gate_id: str
    nonce: bytes
    kind: str
    inputs: tuple
    output: str
    rows: tuple  # shuffled ciphertexts


@dataclass(frozen=True)
class GarbledCircuit:
    """What the evaluator receives: gate tables and wiring, no labels."""

    gates: tuple
    alice_inputs: tuple
    bob_inputs: tuple
    outputs: tuple


@dataclass(frozen=True)
class GarblerTables:
    """Held by the garbler: both labels of every wire, and the output decode table."""

    labels: dict  # wire -> (k0, k1)
    decode_table: dict  # output wire -> {label: bit}


def garble(circuit: Circuit, seed: int = 0) -> tuple[GarbledCircuit, GarblerTables]:
    rng = random.Random(seed)
    labels: dict[str, tuple[bytes, bytes]] = {}
    for w in circuit.alice_inputs + circuit.bob_inputs:
        labels[w] = (rng.randbytes(LABEL_BYTES), rng.randbytes(LABEL_BYTES))
    gates = []
    for g in circuit.gates:
        labels[g.output] = (rng.randbytes(LABEL_BYTES), rng.randbytes(LABEL_BYTES))
        nonce = g.gate_id.encode() + b"|" + rng.randbytes(8)
        rows = []
        if g.kind == "NOT":
            for a in (0, 1):
                rows.append(_xor(H(labels[g.inputs[0]][a], nonce), labels[g.output][TRUTH["NOT"](a)] + TAG))
        else:
            for a in (0, 1):
                for b in (0, 1):
                    key = H(labels[g.inputs[0]][a], labels[g.inputs[1]][b], nonce)
                    rows.append(_xor(key, labels[g.output][TRUTH[g.kind](a, b)] + TAG))
        rng.shuffle(rows)
        gates.append(GarbledGate(g.gate_id, nonce, g.kind, g.inputs, g.output, tuple(rows)))
    decode_table = {w: {labels[w][0]: 0, labels[w][1]: 1} for w in circuit.outputs}
    garbled = GarbledCircuit(tuple(gates), tuple(circuit.alice_inputs), tuple(circuit.bob_inputs),
                             tuple(circuit.outputs))
    return garbled, GarblerTables(labels, decode_table)


def select_input_labels(garbled: GarbledCircuit, tables: GarblerTables, alice_bits, bob_bits) -> dict:
    """Simulated oblivious transfer: exactly one label per input wire leaves the garbler."""
    if len(alice_bits) != len(garbled.alice_inputs) or len(bob_bits) != len(garbled.bob_inputs):
        raise CircuitError(f"input width mismatch: expected {len(garbled.alice_inputs)} Alice and "
                           f"{len(garbled.bob_inputs)} Bob bits, got {len(alice_bits)} and {len(bob_bits)}")
    out = {}
    for w, bit in list(zip(garbled.alice_inputs, alice_bits)) + list(zip(garbled.bob_inputs, bob_bits)):
        if bit not in (0, 1):
            raise CircuitError("input bits must be 0 or 1")
        out[w] = tables.labels[w][bit]
    return out


def evaluate(garbled: GarbledCircuit, input_labels: dict, log: Optional[list] = None) -> dict:
    """Try every row of each gate; the one ending in the zero tag yields the output label."""
    wires = dict(input_labels)
    for g in garbled.gates:
        try:
            ins = [wires[w] for w in g.inputs]
        except KeyError as exc:
            raise CircuitError(f"missing label for wire {exc.args[0]}") from None
        key = H(*ins, g.nonce)
        hits = []
        for idx, row in enumerate(g.rows):
            plain = _xor(key, row)
            if plain[LABEL_BYTES:] == TAG:
                hits.append((idx, plain[:LABEL_BYTES]))
        if len(hits) != 1:
            raise CircuitError(f"gate G{g.gate_id}: {len(hits)} rows decrypted validly")
        if log is not None:
            log.append((g.gate_id, hits[0][0], hits[0][1]))
        wires[g.output] = hits[0][1]
    return {w: wires[w] for w in garbled.outputs}


def decode(tables: GarblerTables, output_labels: dict) -> list[int]:
    bits = []
    for w, table in tables.decode_table.items():
        label = output_labels.get(w)
        if label not in table:
            raise CircuitError(f"unknown label on output wire {w}")
        bits.append(table[label])
    return bits


def run_circuit(circuit: Circuit, alice_bits, bob_bits, seed: int = 0) -> list[int]:
    garbled, tables = garble(circuit, seed)
    return decode(tables, evaluate(garbled, select_input_labels(garbled, tables, alice_bits, bob_bits)))


def int_to_bits(value: int, width: int) -> list[int]:
    """Most significant bit first."""
    if value < 0 or value >= 1 << width:
        raise CircuitError(f"value {value} does not fit in {width} bit(s)")
    return [(value >> (width - 1 - i)) & 1 for i in range(width)]
