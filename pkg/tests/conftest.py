import sys
import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

finite = st.floats(-8.0, 8.0, allow_nan=False, allow_infinity=False)


@st.composite
def logit_vectors(draw, min_v=2, max_v=5):
    v = draw(st.integers(min_v, max_v))
    return draw(arrays(np.float64, v, elements=finite))


@st.composite
def states(draw, max_v=5, max_d=5, scale=1.0):
    """(W, phi, y) with bounded entries and a nonzero feature vector."""
    v = draw(st.integers(2, max_v))
    d = draw(st.integers(1, max_d))
    w = draw(arrays(np.float64, (v, d), elements=st.floats(-scale, scale)))
    phi = draw(arrays(np.float64, d, elements=st.floats(-2.0, 2.0)))
    if float(phi @ phi) < 1e-2:
        phi = phi + 1.0
    y = draw(st.integers(0, v - 1))
    return w, phi, y


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(key=1234))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
