import numpy as np
import pytest

from putt.tt import QttLayout, TensorTrain


def random_train(rng, phys, ranks):
    """TT with given physical dims and internal ranks (boundary 1s added)."""
    prof = [1, *ranks, 1]
    return TensorTrain([rng.normal(size=(prof[k], n, prof[k + 1])) for k, n in enumerate(phys)])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def layout16():
    return QttLayout(2, 4)


_ACCEPTANCE: list[tuple[str, bool, str]] = []


def record_criterion(name: str, ok: bool, detail: str) -> None:
    """Store a criterion outcome; printed in the terminal summary and immediately."""
    _ACCEPTANCE.append((name, ok, detail))
    print(f"{name}: {'PASS' if ok else 'FAIL'} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
