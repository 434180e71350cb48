import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from qprecon.geometry import FactoredPoint, TangentPair
from qprecon.instances import GeneratorSpec, InitSpec, generate, initialize

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

FROZEN = json.loads((Path(__file__).parent / "oracles" / "frozen.json").read_text())


@pytest.fixture(scope="session")
def frozen():
    return FROZEN


def random_point(rng, m, n, k):
    return FactoredPoint(rng.normal(size=(m, k)), rng.normal(size=(n, k)))


def random_tangent(rng, m, n, k):
    return TangentPair(rng.normal(size=(m, k)), rng.normal(size=(n, k)))


def small_instance(kind, seed=0, m=12, n=10, k=2, p=0.6, d=150):
    spec = GeneratorSpec(m, n, k, sampling=kind, p=p, d=d, seed=seed)
    return generate(spec)


def random_start(inst, seed=0):
    return initialize(inst, InitSpec("random_gaussian", seed=seed))


def rel(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def check(number, title, ok, detail=""):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
