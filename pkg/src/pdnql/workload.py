"""Bundled workload: the three medical queries, a suite of sub-queries, random
two-provider instances and a single-database sqlite oracle."""
from __future__ import annotations

import random
import re
import sqlite3
from dataclasses import dataclass
from importlib import resources

from .catalog import Catalog, DataStore, load_catalog

QUERY_NAMES = ("comorbidity", "recurrent_cdiff", "aspirin_count")

SUBQUERIES = [
    "SELECT pid FROM diagnoses WHERE diag = 'cdiff';",
    "SELECT DISTINCT pid FROM diagnoses WHERE diag = 'hd';",
    "SELECT diag, COUNT(*) cnt FROM diagnoses GROUP BY diag;",
    "SELECT COUNT(*) n FROM medications WHERE med = 'aspirin';",
    "SELECT pid, COUNT(*) c FROM diagnoses GROUP BY pid;",
    "SELECT pid, MIN(diag) d FROM diagnoses GROUP BY pid;",
    "SELECT med, MAX(pid) m FROM medications GROUP BY med;",
    "SELECT d.pid, m.med FROM diagnoses d JOIN medications m ON d.pid = m.pid WHERE d.diag = 'hd';",
    "SELECT COUNT(DISTINCT pid) np FROM medications WHERE med = 'aspirin';",
    "WITH w AS (SELECT pid, row_no() OVER (PARTITION BY pid ORDER BY time) FROM diagnoses) "
    "SELECT DISTINCT pid FROM w WHERE row_no = 2;",
    "SELECT pid FROM diagnoses WHERE pid IN cdiff_cohort AND diag = 'cdiff';",
    "SELECT diag, COUNT(*) cnt FROM diagnoses GROUP BY diag ORDER BY cnt DESC, diag LIMIT 3;",
    "SELECT pid FROM cdiff_cohort;",
    "SELECT DISTINCT d.pid FROM diagnoses d JOIN cdiff_cohort c ON d.pid = c.pid;",
    "SELECT DISTINCT d.diag FROM diagnoses d JOIN cdiff_cohort c ON d.pid = c.pid;",
    "SELECT m.med, COUNT(*) n FROM medications m JOIN diagnoses d ON m.pid = d.pid "
    "WHERE d.diag = 'cdiff' GROUP BY m.med;",
    "SELECT pid, SUM(pid) s FROM medications WHERE med = 'statin' GROUP BY pid;",
    "SELECT DISTINCT pid FROM medications ORDER BY pid LIMIT 5;",
    "SELECT diag, COUNT(DISTINCT pid) np FROM diagnoses GROUP BY diag;",
    "SELECT DISTINCT r1.pid FROM diagnoses r1 JOIN diagnoses r2 ON r1.pid = r2.pid "
    "WHERE r1.diag = 'hd' AND r2.diag = 'cdiff' AND r1.time < r2.time;",
]

DIAGNOSES = ("cdiff", "hd", "flu", "copd", "asthma")
MEDICATIONS = ("aspirin", "statin", "insulin", "vancomycin")
EPOCH_2015 = 16436  # 2015-01-01 in days; keeps dates disjoint from ids and counts


def data_path(*parts: str):
    return resources.files("pdnql").joinpath("data", *parts)


def default_catalog() -> Catalog:
    return load_catalog(data_path("catalog.json").read_text())


def query_text(name: str) -> str:
    return data_path("queries", f"{name}.sql").read_text()


def all_queries() -> dict:
    out = {name: query_text(name) for name in QUERY_NAMES}
    for i, sql in enumerate(SUBQUERIES, start=1):
        out[f"sub{i:02d}"] = sql
    return out


@dataclass
class Instance:
    tables: dict  # provider -> table -> rows


def random_instance(rng: random.Random, max_rows: int = 16, pids: int = 12, cohort: int = 6) -> Instance:
    """A two-provider instance; pids overlap across providers so both tracks occur."""
    def diag_rows(n):
        return [(rng.randint(1, pids), rng.choice(DIAGNOSES), EPOCH_2015 + rng.randint(0, 120))
                for _ in range(n)]

    def med_rows(n):
        return [(rng.randint(1, pids), rng.choice(MEDICATIONS), EPOCH_2015 + rng.randint(0, 120))
                for _ in range(n)]

    cohort_rows = [(p,) for p in sorted(rng.sample(range(1, pids + 1), min(cohort, pids)))]
    tables = {}
    for p in ("alice", "bob"):
        tables[p] = {"diagnoses": diag_rows(rng.randint(0, max_rows)),
                     "medications": med_rows(rng.randint(0, max_rows)),
                     "cdiff_cohort": list(cohort_rows)}
    return Instance(tables)


def instance_store(catalog: Catalog, instance: Instance) -> DataStore:
    store = DataStore(catalog)
    for p, tables in instance.tables.items():
        for t, rows in tables.items():
            store.put(p, t, rows)
    store.check_replicated()
    return store


# ---------------------------------------------------------------- oracle

def to_sqlite(sql: str, catalog: Catalog) -> str:
    out = re.sub(r"\brow_no\s*\(\s*\)", "row_number()", sql, flags=re.I)
    out = re.sub(r"\b(\d+)\s+DAYS\b", r"\1", out, flags=re.I)

    def in_table(m):
        tdef = catalog.table(m.group(1))
        return f"IN (SELECT {tdef.columns[0].name} FROM {tdef.name})"

    out = re.sub(r"\bIN\s+([A-Za-z_]\w*)\b(?!\s*\()", in_table, out)
    out = re.sub(r"row_number\(\)\s+OVER\s*\(([^)]*)\)(?!\s+AS)", r"row_number() OVER (\1) AS row_no", out)
    return out


def oracle(sql: str, catalog: Catalog, store: DataStore) -> list[tuple]:
    """Run the query over one database: partitioned tables unioned, replicated ones once."""
    con = sqlite3.connect(":memory:")
    try:
        for tdef in catalog.tables.values():
            cols = ", ".join(c.name for c in tdef.columns)
            con.execute(f"CREATE TABLE {tdef.name} ({cols})")
            providers = catalog.providers[:1] if tdef.distribution.value == "replicated" else catalog.providers
            marks = ", ".join("?" for _ in tdef.columns)
            for p in providers:
                con.executemany(f"INSERT INTO {tdef.name} VALUES ({marks})", store.get(p, tdef.name).rows)
        return [tuple(r) for r in con.execute(to_sqlite(sql, catalog)).fetchall()]
    finally:
        con.close()


def ordered(sql: str) -> bool:
    return re.search(r"\bORDER\s+BY\b", sql.split(")")[-1], flags=re.I) is not None
