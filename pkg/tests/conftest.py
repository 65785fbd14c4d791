import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mmcvo.demo import seed_store  # noqa: E402
from mmcvo.store import open_store  # noqa: E402
from mmcvo.workflow import AccessWorkflow  # noqa: E402

ACCEPTANCE_RESULTS = []


@pytest.fixture
def store(tmp_path):
    s = open_store(tmp_path / "store")
    seed_store(s)
    return s


@pytest.fixture
def workflow(store):
    return AccessWorkflow(store)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(ACCEPTANCE_RESULTS):
        line = f"[{'PASS' if ok else 'FAIL'}] AC{number:>2} {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
