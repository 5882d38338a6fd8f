from importlib.resources import files

import numpy as np
import pytest

from neuroswarms.geometry import load_environment, parse_environment

SQUARE_SVG = """<svg xmlns="http://www.w3.org/2000/svg" width="120" height="120">
  <rect x="10" y="10" width="100" height="100"/>
</svg>"""


def bundled(name):
    return files("neuroswarms") / "data" / f"{name}.svg"


@pytest.fixture(scope="session")
def multireward():
    return load_environment(bundled("multireward"))


@pytest.fixture(scope="session")
def hairpin():
    return load_environment(bundled("hairpin"))


@pytest.fixture(scope="session")
def square():
    return parse_environment(SQUARE_SVG)


def square_with(entities="", side=100, margin=10):
    size = side + 2 * margin
    return parse_environment(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">'
        f'<rect x="{margin}" y="{margin}" width="{side}" height="{side}"/>{entities}</svg>'
    )


def interior_points(env, n, rng, margin=0.0):
    """Uniform random points inside the interior, at least ``margin`` from any non-interior cell."""
    out = []
    rows, cols = env.interior.shape
    while len(out) < n:
        p = rng.uniform([0, 0], [cols, rows])
        if env.contains(p) and (margin == 0 or _clearance(env, p) >= margin):
            out.append(p)
    return np.array(out)


def _clearance(env, p):
    from neuroswarms.geometry import point_segment_distance
    return min(point_segment_distance(p[0], p[1], seg)[0] for seg in env.walls)


# -- acceptance reporting ------------------------------------------------------

_ACCEPTANCE: list = []


@pytest.fixture
def acceptance(capsys):
    """``record(criterion, ok, detail)`` prints one PASS/FAIL line and fails the test on FAIL."""

    def record(criterion, ok, detail):
        line = f"ACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} | {detail}"
        _ACCEPTANCE.append(line)
        with capsys.disabled():
            print("\n" + line, flush=True)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
