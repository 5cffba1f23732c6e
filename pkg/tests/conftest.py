import pytest
import torch

from helpers import layout_from


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(1234)
    yield


@pytest.fixture
def make_layout():
    return layout_from


def pytest_terminal_summary(terminalreporter):
    rows = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            name = getattr(rep, "nodeid", "").rpartition("::")[2]
            if rep.when == "call" and name.startswith("test_criterion_"):
                rows.append((int(name.split("_")[2]), name, "PASS" if outcome == "passed" else "FAIL"))
    if rows:
        terminalreporter.section("acceptance")
        for _, name, verdict in sorted(rows):
            terminalreporter.write_line(f"{verdict}  {name}")
