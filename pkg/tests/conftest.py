import numpy as np
import pytest

from hjbdelay.paths import HistoryPath, TimedPath


_CRITERIA = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_CRITERIA] = []


@pytest.fixture
def criterion(request):
    """``criterion(number, ok, detail)`` prints and records one PASS/FAIL line."""

    def record(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        print(line)
        request.config.stash[_CRITERIA].append((number, line))
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines, key=lambda t: t[0]):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def ramp(values, left=4.0, d=1):
    """Piecewise-linear path through equally spaced nodes ending at 0."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    nodes = np.linspace(-left, 0.0, len(values))
    return HistoryPath(nodes, values)


def at(t, x):
    return TimedPath(t, x)


# fast settings per subcommand, shared by the CLI tests
CLI_SMALL = {
    "gauge-verify": ["--samples", "500", "--mixed-samples", "100", "--pairs", "100", "--n-max", "50"],
    "deriv-check": ["--probes", "10"],
    "ito-check": ["--paths", "200", "--dt", "0.01", "--horizon", "0.5", "--functional", "square", "--process", "ou"],
    "bp-search": ["--size", "100"],
    "simulate": ["--dt", "0.01", "--horizon", "0.2", "--paths", "3", "--path-index", "2"],
    "sde-estimates": ["--paths", "200", "--dt", "0.05", "--horizon", "1.0"],
    "value-lq": ["--paths", "500", "--dt", "0.01", "--horizon", "2.0"],
    "dpp-check": ["--paths", "200", "--dt", "0.01", "--horizon", "1.0", "--t", "0.1"],
    "lipschitz-v": ["--pairs", "3", "--paths", "100", "--dt", "0.05", "--horizon", "1.0"],
    "shift-modulus": ["--paths", "200", "--dt", "0.05", "--horizon", "1.0"],
    "hjb-residual": ["--probes", "10"],
    "stability": ["--paths", "200", "--dt", "0.05", "--horizon", "1.0"],
    "reduce-check": ["--probes", "5", "--paths", "100", "--dt", "0.05", "--horizon", "1.0"],
}
