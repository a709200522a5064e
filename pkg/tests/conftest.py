import json

import numpy as np
import pytest

from lyapctl import config as cfgmod
from lyapctl.cli import run_pipeline

ACCEPTANCE = []


@pytest.fixture
def record():
    """Register one acceptance line: ``record(criterion, passed, detail)``."""
    def _add(criterion, passed, detail=""):
        ACCEPTANCE.append((criterion, bool(passed), detail))
        print(f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}")
    return _add


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")


def standard_map_config(out_dir, **overrides):
    data = json.loads((cfgmod.resources.files("lyapctl") / "configs" / "standard_map.json").read_text())
    for key, value in overrides.items():
        block, _, field = key.partition(".")
        data[block][field] = value
    return cfgmod.parse_config(data, out_dir=out_dir)


@pytest.fixture(scope="session")
def standard_map_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("standard_map")
    return run_pipeline(standard_map_config(out))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
