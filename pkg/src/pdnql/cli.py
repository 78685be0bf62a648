"""pdnql: explain and run queries over a two-party private data network, or walk
through a garbled-circuit evaluation."""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .catalog import Catalog, CatalogError, DataStore, ValueType, format_value, load_catalog
from .federation import build_federation
from .garbled import (CircuitError, decode, evaluate, garble, int_to_bits, parse_circuit,
                      select_input_labels)
from .oblivious import encode_trace
from .planner import PlannerOptions, explain, plan_query
from .sql.parser import SqlError
from .sql.resolve import compile_sql
from .workload import QUERY_NAMES, data_path

DEFAULT_SEED = 7
PRESETS = {"optimized": PlannerOptions.optimized, "smc-minimized": PlannerOptions.smc_minimized,
           "baseline": PlannerOptions.baseline}


class ConfigError(Exception):
    pass


@dataclass
class CliConfig:
    catalog_path: Path
    data_manifest: list = field(default_factory=list)  # (provider, table, csv path)
    seed: int = DEFAULT_SEED


def read_config(path: str) -> CliConfig:
    p = Path(path)
    try:
        doc = json.loads(p.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict) or "catalog" not in doc:
        raise ConfigError(f"config {path}: missing \"catalog\"")
    base = p.parent
    manifest = []
    for entry in doc.get("data", []):
        try:
            manifest.append((entry["provider"], entry["table"], base / entry["path"]))
        except (KeyError, TypeError):
            raise ConfigError(f"config {path}: data entries need provider, table and path") from None
    return CliConfig(base / doc["catalog"], manifest, int(doc.get("seed", DEFAULT_SEED)))


def load_catalog_file(config: CliConfig) -> Catalog:
    try:
        text = config.catalog_path.read_text()
    except OSError:
        raise ConfigError(f"cannot read catalog {config.catalog_path}") from None
    return load_catalog(text)


def load_store(config: CliConfig, catalog: Catalog) -> DataStore:
    store = DataStore(catalog)
    for provider, table, path in config.data_manifest:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError:
            raise ConfigError(f"missing data file {path}") from None
        try:
            store.load_csv(provider, table, text)
        except CatalogError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    store.check_replicated()
    return store


def read_sql(arg: str) -> str:
    if arg in QUERY_NAMES:
        return data_path("queries", f"{arg}.sql").read_text()
    p = Path(arg)
    if p.suffix == ".sql" or p.exists():
        try:
            return p.read_text()
        except OSError:
            raise ConfigError(f"cannot read query file {arg}") from None
    return arg


def _fail(stage: str, message: str, code: int) -> int:
    print(f"error [{stage}]: {message}", file=sys.stderr)
    return code


def cmd_explain(args) -> int:
    try:
        config = read_config(args.config)
        catalog = load_catalog_file(config)
        sql = read_sql(args.query)
        plan = plan_query(compile_sql(sql, catalog), PRESETS[args.plan]())
    except (ConfigError, CatalogError) as exc:
        return _fail("config", str(exc), 2)
    except SqlError as exc:
        return _fail(exc.stage, str(exc), 2)
    print(explain(plan))
    return 0


def format_rows(names, types, rows, fmt: str) -> str:
    if fmt == "json":
        objs = []
        for row in rows:
            objs.append({n: (format_value(v, t) if t is ValueType.DATE and v is not None else v)
                         for n, t, v in zip(names, types, row)})
        return json.dumps(objs)
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(names)
    for row in rows:
        w.writerow([format_value(v, t) for t, v in zip(types, row)])
    return out.getvalue().rstrip("\n")


def cmd_run(args) -> int:
    try:
        config = read_config(args.config)
        catalog = load_catalog_file(config)
        store = load_store(config, catalog)
        sql = read_sql(args.query)
        compile_sql(sql, catalog)
    except (ConfigError, CatalogError) as exc:
        return _fail("config", str(exc), 2)
    except SqlError as exc:
        return _fail(exc.stage, str(exc), 2)
    fed = build_federation(catalog, store, trace=args.trace)
    try:
        result = fed.run(sql, PRESETS[args.plan]())
    except SqlError as exc:
        return _fail(exc.stage, str(exc), 3 if exc.stage == "execute" else 2)
    finally:
        fed.close()
    types = [c.type for c in result.plan.root.schema]
    print(format_rows(result.names, types, result.rows, args.format))
    if args.stats:
        print(result.cost.to_json(), file=sys.stderr)
    if args.trace:
        sys.stderr.write(encode_trace(fed.engine.run.events).decode() + "\n")
    return 0


def _circuit_text(arg: str) -> str:
    bundled = data_path("circuits", f"{arg}.txt")
    if bundled.is_file():
        return bundled.read_text()
    try:
        return Path(arg).read_text()
    except OSError:
        raise CircuitError(f"cannot read circuit file {arg}") from None


def _split_inputs(text: str, circuit) -> tuple[list[int], list[int]]:
    parts = [p.strip() for p in text.split(",")] if text else []
    widths = [len(circuit.alice_inputs), len(circuit.bob_inputs)]
    owners = [w for w in widths if w]
    if len(parts) != len(owners):
        raise CircuitError(f"expected {len(owners)} comma-separated input value(s), got {len(parts)}")
    bits, it = [[], []], iter(parts)
    for i, w in enumerate(widths):
        if w:
            try:
                value = int(next(it))
            except ValueError:
                raise CircuitError("inputs must be integers") from None
            bits[i] = int_to_bits(value, w)
    return bits[0], bits[1]


def cmd_demo_garble(args) -> int:
    seed = args.seed if args.seed is not None else DEFAULT_SEED
    try:
        circuit = parse_circuit(_circuit_text(args.circuit))
        alice, bob = _split_inputs(args.inputs, circuit)
        garbled, tables = garble(circuit, seed)
        print(f"circuit: {len(circuit.gates)} gate(s); Alice wires {' '.join(circuit.alice_inputs) or '-'}; "
              f"Bob wires {' '.join(circuit.bob_inputs) or '-'}; seed {seed}")
        print(f"inputs: Alice={''.join(map(str, alice)) or '-'} Bob={''.join(map(str, bob)) or '-'}")
        for g in garbled.gates:
            print(f"garbled G{g.gate_id} {g.kind} {' '.join(g.inputs)} -> {g.output}")
            for i, row in enumerate(g.rows):
                print(f"  row {i}: {row.hex()}")
        labels = select_input_labels(garbled, tables, alice, bob)
        for w in list(garbled.alice_inputs) + list(garbled.bob_inputs):
            print(f"label {w}: {labels[w].hex()}")
        log: list = []
        out = evaluate(garbled, labels, log)
        for gid, row, label in log:
            print(f"evaluate G{gid}: row {row} decrypts, output label {label.hex()}")
        bits = decode(tables, out)
    except CircuitError as exc:
        return _fail("circuit", str(exc), 2)
    print("decoded: " + " ".join(f"{w}={b}" for w, b in zip(circuit.outputs, bits)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pdnql", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="PDN manifest (JSON)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--plan", choices=sorted(PRESETS), default="optimized")

    p = sub.add_parser("explain", help="print the secure execution plan")
    common(p)
    p.add_argument("query", help="SQL file, inline SQL, or a bundled query name")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("run", help="execute a query across the providers")
    common(p)
    p.add_argument("query")
    p.add_argument("--stats", action="store_true", help="cost report JSON on stderr")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--trace", action="store_true", help="oblivious trace events as JSON lines on stderr")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("demo-garble", help="garble, evaluate and decode a boolean circuit")
    p.add_argument("circuit", help="circuit file or bundled name (or, eq2)")
    p.add_argument("inputs", help="Alice and Bob values, comma separated (e.g. 1,0)")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_demo_garble)
    return parser


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
