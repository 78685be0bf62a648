import random
from collections import Counter
from pathlib import Path

import pytest

from pdnql.cli import CliConfig, load_catalog_file, load_store, read_config
from pdnql.workload import data_path, default_catalog, instance_store, ordered, random_instance

GOLDENS = Path(__file__).parent / "goldens"
SAMPLE_CONFIG = str(data_path("sample", "pdn.json"))


def same_result(sql, got, expected) -> bool:
    """Ordered queries compare as lists, the rest as multisets."""
    if ordered(sql):
        return list(got) == list(expected)
    return Counter(got) == Counter(expected)


def make_store(catalog, seed, **kw):
    return instance_store(catalog, random_instance(random.Random(seed), **kw))


@pytest.fixture(scope="session")
def catalog():
    return default_catalog()


@pytest.fixture(scope="session")
def sample_store(catalog):
    config = read_config(SAMPLE_CONFIG)
    return load_store(config, load_catalog_file(config))


# ---------------------------------------------------------------- acceptance report

_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


def pytest_runtest_logreport(report):
    mark = _CRITERIA.get(report.nodeid)
    if mark is None or (report.when != "call" and report.passed):
        return
    mark["ok"] = mark.get("ok", True) and report.passed


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            _CRITERIA[item.nodeid] = {"number": m.args[0], "title": m.args[1]}


def pytest_terminal_summary(terminalreporter):
    ran = [m for m in _CRITERIA.values() if "ok" in m]
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for m in sorted(ran, key=lambda m: m["number"]):
        status = "PASS" if m["ok"] else "FAIL"
        terminalreporter.write_line(f"criterion {m['number']:>2} {status}: {m['title']}")
