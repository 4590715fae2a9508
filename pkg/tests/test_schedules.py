import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ctac.schedules import episodic_rate, ergodic_rate, schedule_eval
from ctac.sim import InvalidInput


def test_episodic_examples():
    assert episodic_rate(1) == 1.0
    assert episodic_rate(100) == pytest.approx(100**-0.51)
    assert episodic_rate(100) == pytest.approx(0.09550, abs=1e-5)


def test_ergodic_examples():
    assert ergodic_rate(0.5) == 1.0
    assert ergodic_rate(math.e) == 1.0
    assert ergodic_rate(math.e**2) == pytest.approx(0.5)


@pytest.mark.parametrize("bad", [0, -3])
def test_episodic_domain(bad):
    with pytest.raises(InvalidInput):
        episodic_rate(bad)


def test_ergodic_domain():
    with pytest.raises(InvalidInput):
        ergodic_rate(0.0)


def test_dispatch():
    assert schedule_eval("episodic", 4, 0.5) == 0.5
    assert schedule_eval("ergodic", math.e**4) == 0.25
    with pytest.raises(InvalidInput):
        schedule_eval("cosine", 1)


@given(st.integers(1, 10**6), st.integers(1, 10**6))
def test_episodic_monotone(i, j):
    lo, hi = sorted((i, j))
    assert episodic_rate(hi) <= episodic_rate(lo) <= 1.0


@given(st.floats(1e-6, 1e12))
def test_ergodic_bounded(t):
    assert 0 < ergodic_rate(t) <= 1.0
