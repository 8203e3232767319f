import os
import sys

from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# acceptance criteria report their verdicts here; printed after the run
_ACCEPTANCE = {}


def record_criterion(number, title, ok, detail):
    """Fold one check into the verdict for criterion ``number``."""
    prev = _ACCEPTANCE.get(number)
    if prev is not None:
        ok = ok and prev[1]
        detail = f"{prev[2]}; {detail}"
    _ACCEPTANCE[number] = (title, ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, ok, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {number}. {title}: {detail}")
