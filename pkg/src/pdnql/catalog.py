"""Annotated PDN schema, security levels and per-provider table storage."""
from __future__ import annotations

import csv
import datetime as dt
import enum
import io
import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Any

EPOCH = dt.date(1970, 1, 1)


class CatalogError(ValueError):
    pass


class SecurityLevel(enum.IntEnum):
    PUBLIC = 0
    PROTECTED = 1
    PRIVATE = 2

    @property
    def is_sensitive(self) -> bool:
        # protected attributes are planned as if they were private
        return self > SecurityLevel.PUBLIC

    @classmethod
    def parse(cls, text: str) -> "SecurityLevel":
        try:
            return cls[text.upper()]
        except KeyError:
            raise CatalogError(f"unknown security level {text!r}") from None

    def __str__(self) -> str:
        return self.name.lower()


class ValueType(enum.Enum):
    INT64 = "int64"
    TEXT = "text"
    DATE = "date"

    @classmethod
    def parse(cls, text: str) -> "ValueType":
        try:
            return cls(text.lower())
        except ValueError:
            raise CatalogError(f"unknown value type {text!r}") from None

    @property
    def bits(self) -> int:
        """Width of a value of this type inside a secure tuple."""
        return {ValueType.INT64: 64, ValueType.DATE: 32, ValueType.TEXT: 256}[self]

    @property
    def placeholder(self) -> Any:
        return "" if self is ValueType.TEXT else 0

    def __str__(self) -> str:
        return self.value


class Distribution(enum.Enum):
    PARTITIONED = "partitioned"
    REPLICATED = "replicated"


@dataclass(frozen=True)
class ColumnDef:
    name: str
    value_type: ValueType
    level: SecurityLevel


@dataclass(frozen=True)
class TableDef:
    name: str
    columns: tuple[ColumnDef, ...]
    distribution: Distribution = Distribution.PARTITIONED

    def column(self, name: str) -> ColumnDef:
        name = name.lower()
        for c in self.columns:
            if c.name == name:
                return c
        raise CatalogError(f"unknown column {self.name}.{name}")

    @property
    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]


@dataclass(frozen=True)
class Catalog:
    tables: dict[str, TableDef]
    providers: tuple[str, str] = ("alice", "bob")

    def table(self, name: str) -> TableDef:
        try:
            return self.tables[name.lower()]
        except KeyError:
            raise CatalogError(f"unknown table {name!r}") from None

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Catalog):
            return NotImplemented
        return self.tables == other.tables and self.providers == other.providers

    __hash__ = None  # type: ignore[assignment]


@dataclass
class Relation:
    """A plaintext relation: ordered (name, type) schema plus rows of python values."""

    schema: list[tuple[str, ValueType]]
    rows: list[tuple] = field(default_factory=list)

    def __post_init__(self) -> None:
        n = len(self.schema)
        for row in self.rows:
            if len(row) != n:
                raise CatalogError(f"row arity {len(row)} does not match schema arity {n}")

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.schema]

    def __len__(self) -> int:
        return len(self.rows)


def _no_duplicate_keys(pairs):
    seen = {}
    for k, v in pairs:
        if k.lower() in seen:
            raise CatalogError(f"duplicate entry {k!r} (duplicate table or key)")
        seen[k.lower()] = v
    return dict(pairs)


def load_catalog(config_text: str) -> Catalog:
    try:
        doc = json.loads(config_text, object_pairs_hook=_no_duplicate_keys)
    except json.JSONDecodeError as exc:
        raise CatalogError(f"parse error at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise CatalogError("catalog config must be a JSON object")

    providers = doc.get("providers", ["alice", "bob"])
    if not isinstance(providers, list) or len(providers) != 2:
        raise CatalogError("exactly two providers are required")
    providers = tuple(str(p).lower() for p in providers)
    if providers[0] == providers[1]:
        raise CatalogError("provider identifiers must differ")

    raw_tables = doc.get("tables")
    if not raw_tables:
        raise CatalogError("no tables defined")
    tables: dict[str, TableDef] = {}
    for tname, tdoc in raw_tables.items():
        key = tname.lower()
        if key in tables:
            raise CatalogError(f"duplicate table {tname!r}")
        try:
            distribution = Distribution(tdoc.get("distribution", "partitioned").lower())
        except ValueError:
            raise CatalogError(f"table {tname!r}: unknown distribution {tdoc.get('distribution')!r}") from None
        columns: list[ColumnDef] = []
        seen: set[str] = set()
        for cdoc in tdoc.get("columns", []):
            cname = str(cdoc["name"]).lower()
            if cname in seen:
                raise CatalogError(f"table {tname!r}: duplicate column {cname!r}")
            seen.add(cname)
            columns.append(ColumnDef(cname, ValueType.parse(cdoc["type"]),
                                     SecurityLevel.parse(cdoc["level"])))
        if not columns:
            raise CatalogError(f"table {tname!r} has no columns")
        tables[key] = TableDef(key, tuple(columns), distribution)
    return Catalog(tables, providers)  # type: ignore[arg-type]


def render_catalog(catalog: Catalog) -> str:
    doc = {
        "providers": list(catalog.providers),
        "tables": {
            t.name: {
                "distribution": t.distribution.value,
                "columns": [{"name": c.name, "type": str(c.value_type), "level": str(c.level)}
                            for c in t.columns],
            }
            for t in catalog.tables.values()
        },
    }
    return json.dumps(doc, indent=2)


def column_level(catalog: Catalog, table: str, column: str) -> SecurityLevel:
    return catalog.table(table).column(column).level


def parse_date(text: str) -> int:
    return (dt.date.fromisoformat(text) - EPOCH).days


def format_date(days: int) -> str:
    return (EPOCH + dt.timedelta(days=days)).isoformat()


def parse_value(text: str, value_type: ValueType) -> Any:
    if text == "":
        return None
    if value_type is ValueType.INT64:
        return int(text)
    if value_type is ValueType.DATE:
        return parse_date(text)
    return text


def format_value(value: Any, value_type: ValueType) -> str:
    if value is None:
        return ""
    if value_type is ValueType.DATE:
        return format_date(value)
    return str(value)


def load_table_csv(catalog: Catalog, provider: str, table: str, csv_text: str) -> Relation:
    if provider.lower() not in catalog.providers:
        raise CatalogError(f"unknown provider {provider!r}")
    tdef = catalog.table(table)
    reader = csv.reader(io.StringIO(csv_text, newline=""))
    try:
        header = next(reader)
    except StopIteration:
        raise CatalogError(f"{table}: empty CSV (missing header)") from None
    header = [h.strip().lower() for h in header]
    if header != tdef.column_names:
        raise CatalogError(f"{table}: header mismatch: expected {','.join(tdef.column_names)}, "
                           f"got {','.join(header)}")
    rows = []
    for lineno, record in enumerate(reader, start=2):
        if not record:
            continue
        if len(record) != len(tdef.columns):
            raise CatalogError(f"{table}: row {lineno} has {len(record)} fields, expected {len(tdef.columns)}")
        values = []
        for text, col in zip(record, tdef.columns):
            try:
                values.append(parse_value(text, col.value_type))
            except ValueError:
                raise CatalogError(f"{table}: type error at row {lineno}, column {col.name}: "
                                   f"{text!r} is not {col.value_type}") from None
        rows.append(tuple(values))
    return Relation([(c.name, c.value_type) for c in tdef.columns], rows)


def dump_table_csv(relation: Relation) -> str:
    out = io.StringIO()
    # text is always quoted so a bare carriage return survives the trip
    writer = csv.writer(out, lineterminator="\n", quoting=csv.QUOTE_NONNUMERIC)
    writer.writerow(relation.names)
    for row in relation.rows:
        writer.writerow([v if t is ValueType.INT64 or v is None else format_value(v, t)
                         for v, (_, t) in zip(row, relation.schema)])
    return out.getvalue()


class DataStore:
    """Per-provider table storage, keyed by (provider, table)."""

    def __init__(self, catalog: Catalog):
        self.catalog = catalog
        self._tables: dict[tuple[str, str], Relation] = {}

    def load_csv(self, provider: str, table: str, csv_text: str) -> Relation:
        rel = load_table_csv(self.catalog, provider, table, csv_text)
        self._tables[(provider.lower(), table.lower())] = rel
        return rel

    def put(self, provider: str, table: str, rows: list[tuple]) -> Relation:
        tdef = self.catalog.table(table)
        rel = Relation([(c.name, c.value_type) for c in tdef.columns], list(rows))
        self._tables[(provider.lower(), table.lower())] = rel
        return rel

    def get(self, provider: str, table: str) -> Relation:
        key = (provider.lower(), table.lower())
        if key not in self._tables:
            tdef = self.catalog.table(table)
            return Relation([(c.name, c.value_type) for c in tdef.columns], [])
        return self._tables[key]

    def provider_tables(self, provider: str) -> dict[str, Relation]:
        return {t: self.get(provider, t) for t in self.catalog.tables}

    def check_replicated(self) -> None:
        a, b = self.catalog.providers
        for tdef in self.catalog.tables.values():
            if tdef.distribution is not Distribution.REPLICATED:
                continue
            if Counter(self.get(a, tdef.name).rows) != Counter(self.get(b, tdef.name).rows):
                raise CatalogError(f"replicated table {tdef.name!r} differs between providers")


def max_level(levels) -> SecurityLevel:
    return max(levels, default=SecurityLevel.PUBLIC)
