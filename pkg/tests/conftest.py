import math
import os

import pytest
from hypothesis import HealthCheck, settings

from llab import DomainOmega, FenchelNielsenCoords, PlanePoint, Surface, generate_scheme
from llab import moebius as mb
from llab.moebius import Arc

settings.register_profile("llab", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "llab"))

# base point minimizing the circumradius of the Dirichlet polygon for the uniform genus-2 structure
UNIFORM_BASE = -0.30764202377293987 + 1.8295861430869568e-09j


def half_arc(x1, x2):
    return Arc(mb.x_to_theta(x1), mb.x_to_theta(x2))


def symmetric_pair(alpha):
    """Arcs [-e^a, -1] and [1, e^a] of the real line; Liouville mass 2 log cosh(a/2)."""
    return half_arc(-math.exp(alpha), -1.0), half_arc(1.0, math.exp(alpha))


@pytest.fixture(scope="session")
def fn2():
    return FenchelNielsenCoords.uniform(2, 2.0, 0.0)


@pytest.fixture(scope="session")
def surface(fn2):
    return Surface.build(fn2, base=PlanePoint(UNIFORM_BASE))


@pytest.fixture(scope="session")
def center_surface(fn2):
    return Surface.build(fn2, base="center")


@pytest.fixture(scope="session")
def omega(surface):
    return DomainOmega(surface.polygon)


@pytest.fixture(scope="session")
def scheme6(omega):
    return generate_scheme(omega, max_depth=6)


# acceptance criterion -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
