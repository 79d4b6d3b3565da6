import pytest

from dso_opl import _accel


@pytest.fixture(params=["numpy", "numba"])
def backend(request):
    """Run a test under each compiled-kernel backend."""
    if request.param == "numba" and not _accel.HAVE_NUMBA:
        pytest.skip("numba not installed")
    previous = _accel.get_backend()
    _accel.set_backend(request.param)
    yield request.param
    _accel.set_backend(previous)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
