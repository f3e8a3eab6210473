import numpy as np
import pytest

from mmspace import Box, FiniteMetricMeasureSpace, WeightSpec, build_cubes, build_nets, discretize, truncation_box


def line_space(n: int, spacing: float = 1.0, mass=None) -> FiniteMetricMeasureSpace:
    """Equally spaced points on a line with the Euclidean metric."""
    x = np.arange(n, dtype=float) * spacing
    return FiniteMetricMeasureSpace.from_points(x[:, None], np.ones(n) if mass is None else mass)


def cloud(n: int, d: int, seed: int) -> FiniteMetricMeasureSpace:
    rng = np.random.default_rng(seed)
    return FiniteMetricMeasureSpace.from_points(rng.uniform(0, 4, size=(n, d)), rng.uniform(0.5, 2.0, size=n))


@pytest.fixture(scope="session")
def gauss1d():
    """phi = x^2 on the line, mu = e^{-phi}, h = 0.01 (561 points)."""
    spec = WeightSpec.gaussian(1)
    return discretize(spec, "-", truncation_box(spec), 0.01)


@pytest.fixture(scope="session")
def gauss1d_small():
    spec = WeightSpec.gaussian(1)
    return discretize(spec, "-", Box.cube(-3, 3, 1), 0.05)


@pytest.fixture(scope="session")
def gauss2d():
    spec = WeightSpec.gaussian(2)
    return discretize(spec, "-", Box.cube(-2, 2, 2), 0.2)


@pytest.fixture(scope="session")
def gauss2d_tree(gauss2d):
    nets = build_nets(gauss2d, 0.5)
    return nets, build_cubes(gauss2d, nets)


@pytest.fixture(scope="session")
def gauss1d_tree(gauss1d):
    nets = build_nets(gauss1d, 0.5)
    return nets, build_cubes(gauss1d, nets)


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion and echo it to the terminal."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])
    rep = request.config.pluginmanager.get_plugin("terminalreporter")

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d}: {detail}"
        lines.append((number, line))
        if rep is not None:
            rep.write_line("")
            rep.write_line(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
