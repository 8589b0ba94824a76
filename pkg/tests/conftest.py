import pytest


@pytest.fixture
def criterion_report(request):
    """Emit one always-visible PASS/FAIL line per acceptance criterion."""
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")

    def emit(num: int, name: str, ok: bool, detail: str = ""):
        status = "PASS" if ok else "FAIL"
        line = f"[criterion {num}] {status} {name}"
        if detail:
            line += f" ({detail})"
        if reporter is not None:
            reporter.write_line(line)
        else:
            print(line)
        assert ok, line

    return emit
