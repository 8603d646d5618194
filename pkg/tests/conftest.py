import functools

import pytest

from morsewitten import builtin, morse_complex

SURFACES = ("sphere_height", "sphere_quadratic", "sphere_two_peaks", "torus_tilted", "rp2")


@functools.lru_cache(maxsize=None)
def bundle(name, seed=0):
    """Critical points, orientations, orbits and complex of a built-in, cached per session."""
    return morse_complex(builtin(name), seed)


@pytest.fixture(params=SURFACES)
def surface(request):
    return bundle(request.param)


@functools.lru_cache(maxsize=None)
def scenario_run(name):
    """``(scenario, report, exit code, seconds)`` of a full pipeline run, cached per session."""
    import time

    from morsewitten.cli import builtin_scenario, run_scenario

    s = builtin_scenario(name)
    t0 = time.perf_counter()
    report, code = run_scenario(s)
    return s, report, code, time.perf_counter() - t0


# --------------------------------------------------------------------------
# one verdict line per acceptance criterion in the terminal summary
# --------------------------------------------------------------------------

_VERDICTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by a test")


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    failed = call.excinfo is not None and not call.excinfo.errisinstance(pytest.skip.Exception)
    if call.when == "call" or failed:
        prev = _VERDICTS.get(number, (title, True))[1]
        _VERDICTS[number] = (title, prev and not failed)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        title, ok = _VERDICTS[number]
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}")
