from pathlib import Path

import pytest

from gridcoord.netmodel import load_case

CASES = Path(__file__).resolve().parents[1] / "src" / "gridcoord" / "cases"


@pytest.fixture(scope="session")
def case_dir() -> Path:
    return CASES


@pytest.fixture(scope="session")
def two_region_path() -> Path:
    return CASES / "two_region.json"


@pytest.fixture(scope="session")
def two_region():
    return load_case(CASES / "two_region.json")


@pytest.fixture(scope="session")
def two_region_case2():
    return load_case(CASES / "two_region_case2.json")


@pytest.fixture(scope="session")
def three_region():
    return load_case(CASES / "three_region.json")


ACCEPTANCE: dict[int, tuple[bool, list[str]]] = {}


def acceptance_line(number: int) -> str:
    ok, details = ACCEPTANCE[number]
    return f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {'; '.join(details)}"


@pytest.fixture
def criterion():
    """Record and print one PASS/FAIL line for an acceptance criterion, then assert it.

    Reports for the same criterion (parametrized runs) merge into one line.
    """

    def report(number: int, ok: bool, detail: str) -> None:
        prev_ok, details = ACCEPTANCE.get(number, (True, []))
        ACCEPTANCE[number] = (prev_ok and ok, [*details, detail])
        print(acceptance_line(number))
        assert ok, detail

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(acceptance_line(n))
