import pytest
from hypothesis import settings

from neurofield.simulator import available_backends

settings.register_profile("neurofield", deadline=None, max_examples=60)
settings.load_profile("neurofield")


@pytest.fixture(params=available_backends())
def backend(request):
    return request.param


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def acceptance():
    def record(number: int, ok: bool, detail: str) -> None:
        ACCEPTANCE[number] = f"C{number:<2d} {'PASS' if ok else 'FAIL'}  {detail}"
        print(ACCEPTANCE[number])
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
