import os

import pytest
from hypothesis import settings

from entrobound.system import load_spec

HERE = os.path.dirname(os.path.abspath(__file__))
FIXTURES = os.path.join(os.path.dirname(HERE), "fixtures")

settings.register_profile("repo", deadline=None, derandomize=True, print_blob=True)
settings.load_profile("repo")


def fixture_path(name):
    return os.path.join(FIXTURES, name)


@pytest.fixture
def load():
    def _load(name):
        return load_spec(fixture_path(name))
    return _load


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
