import pytest

_VERDICTS = []


@pytest.fixture
def verdict(capsys):
    """Record one PASS/FAIL line for an acceptance criterion and print it."""

    def record(number, title, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title}"
        if detail:
            line += f" ({detail})"
        _VERDICTS.append((number, line))
        with capsys.disabled():
            print("\n" + line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_VERDICTS):
        terminalreporter.write_line(line)


@pytest.fixture(autouse=True)
def sparsity_audit(monkeypatch):
    """Every coefficient matrix built during a test must respect its sparsity bound."""
    from dlsc.core import CoefficientMatrix, validate_column_sparsity

    original = CoefficientMatrix.__post_init__
    seen = []

    def audited(self):
        original(self)
        seen.append(self)

    monkeypatch.setattr(CoefficientMatrix, "__post_init__", audited)
    yield seen
    bad = [a.coeffs.shape for a in seen if not validate_column_sparsity(a)]
    assert not bad, f"coefficient matrices over their sparsity bound: {bad}"
