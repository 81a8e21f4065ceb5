import pytest

from wsal.data import Manifest
from wsal.synthetic import SyntheticSpec, generate

_CRITERIA = {}


def record(number, ok, detail):
    """Store and print one acceptance line."""
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    _CRITERIA[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])


@pytest.fixture(scope="session")
def default_benchmark(tmp_path_factory):
    """The default synthetic benchmark (seed 7), generated once per session."""
    out = tmp_path_factory.mktemp("synthetic_default")
    generate(SyntheticSpec(), out)
    return Manifest.load(out / "manifest.json")
