import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

ACCEPTANCE_LINES: list[str] = []
DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def physics_passage():
    """Published base and adapted segmentations of a physics passage (60 and 39 pieces)."""
    return json.loads((DATA / "physics_passage.json").read_text(encoding="utf-8"))


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
