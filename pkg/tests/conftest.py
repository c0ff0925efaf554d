import numpy as np
import pytest

from rpin.numcore import Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def t64(a, grad=True):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


# ---------------------------------------------------------------- acceptance summary
# Tests marked ``criterion(n, title)`` get one verdict line in the terminal summary.
# A test adds measured values to the line with ``record_property("detail", text)``.

_VERDICTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion n")
    config.stash[_VERDICTS] = {}


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    report = yield
    mark = item.get_closest_marker("criterion")
    decisive = report.when == "call" or (report.when == "setup" and not report.passed)
    if mark is None or not decisive:
        return report
    n, title = mark.args
    if hasattr(report, "wasxfail"):
        verdict = "FAIL (known shortfall, xfail)"
    elif report.passed:
        verdict = "PASS"
    elif report.skipped:
        verdict = "NOT RUN"
    else:
        verdict = "FAIL"
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    if report.skipped and not hasattr(report, "wasxfail"):
        detail = detail or str(report.longrepr[-1])
    item.config.stash[_VERDICTS][n] = f"criterion {n:>2} {verdict:<30} {title}" + (f": {detail}" if detail else "")
    return report


def pytest_terminal_summary(terminalreporter, config):
    verdicts = config.stash.get(_VERDICTS, {})
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for n in sorted(verdicts):
            terminalreporter.write_line(verdicts[n])
