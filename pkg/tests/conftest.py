import sys

import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def run_dir(tmp_path):
    return tmp_path / "run"


def pytest_terminal_summary(terminalreporter):
    module = next((m for name, m in sys.modules.items()
                   if name.rsplit(".", 1)[-1] == "test_acceptance"), None)
    lines = getattr(module, "VERDICTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
