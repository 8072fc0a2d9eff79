import numpy as np
import pytest

from condcov import ConfoundedSeries


def make_series(n=50, p=2, seed=0, z_lo=-5.0, z_hi=25.0, step=3600):
    """Random dense series with a z-dependent mean and hourly timestamps."""
    rng = np.random.default_rng(seed)
    z = rng.uniform(z_lo, z_hi, n)
    X = 0.05 * z[:, None] * np.arange(1, p + 1) + rng.standard_normal((n, p)) * (1 + 0.02 * z[:, None])
    t = np.arange(n, dtype=np.int64) * step
    return ConfoundedSeries(t, X, z)


@pytest.fixture
def series50():
    return make_series()


@pytest.fixture(params=["numba", "numpy"])
def backend(request):
    """Run a test under each available kernel backend."""
    from condcov._accel import backend_name, numba_available, set_backend

    if request.param == "numba" and not numba_available():
        pytest.skip("numba not installed")
    before = backend_name()
    set_backend(request.param)
    yield request.param
    set_backend(before)


# -- acceptance report -----------------------------------------------------------

_CRITERIA: dict[int, list] = {}


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None or call.when not in ("setup", "call"):
        return
    n, title = mark.args
    entry = _CRITERIA.setdefault(n, [title, True, []])
    if call.excinfo is not None:
        skipped = call.excinfo.errisinstance(pytest.skip.Exception)
        entry[1] = "SKIP" if skipped and entry[1] is True else (entry[1] if skipped else False)
    if call.when == "call":
        entry[2] += [v for k, v in item.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, ok, details = _CRITERIA[n]
        status = ok if isinstance(ok, str) else ("PASS" if ok else "FAIL")
        line = f"criterion {n:2d} {status}  {title}"
        if details:
            line += "  [" + "; ".join(details) + "]"
        terminalreporter.write_line(line)
