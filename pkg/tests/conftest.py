import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ghostwit.frontend import parse_program  # noqa: E402

DATA = Path(__file__).parent / "data"


def load(name):
    text = (DATA / name).read_text()
    p, sm = parse_program(text)
    return p, sm, text


@pytest.fixture
def running():
    return load("running_example.cw")


@pytest.fixture
def unsafe_variant():
    return load("unsafe_variant.cw")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS):
            terminalreporter.write_line(line)
