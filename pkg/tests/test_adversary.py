import io
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdmon import adversary
from fdmon.adversary import (AttackScenario, mean_detection_cycles, pd_asymptote, pd_closed_form,
                             simulate)
from fdmon.errors import ParameterError

# frozen from exact rational arithmetic: 1 - (213/214)**214
PD_214_1 = 0.6329817676960562
MEAN_CYCLES_214 = 1.5798243


def _exact_pd(n, t):
    q = Fraction(n - 1, n) ** n
    return float(q ** (t - 1) * (1 - q))


def test_frozen_values():
    assert pd_closed_form(214, 1) == pytest.approx(PD_214_1, abs=1e-15)
    assert mean_detection_cycles(214) == pytest.approx(MEAN_CYCLES_214, abs=1e-7)
    assert PD_214_1 == pytest.approx(_exact_pd(214, 1), abs=1e-15)


def test_asymptote():
    assert pd_asymptote() == pytest.approx(1 - 1 / math.e, abs=1e-15)
    assert pd_closed_form(10**7, 1) == pytest.approx(pd_asymptote(), abs=1e-7)


def test_small_n_cases():
    assert pd_closed_form(1, 1) == 1.0
    assert pd_closed_form(1, 2) == 0.0
    assert pd_closed_form(2, 1) == pytest.approx(0.75)
    assert pd_closed_form(2, 2) == pytest.approx(0.1875)
    assert mean_detection_cycles(1) == 1.0


@pytest.mark.parametrize("n", [2, 3, 10, 50, 214, 1000])
def test_matches_exact_rational_oracle(n):
    for t in (1, 2, 5, 20):
        assert pd_closed_form(n, t) == pytest.approx(_exact_pd(n, t), rel=1e-12, abs=1e-300)


@pytest.mark.parametrize("n", [2, 10, 214])
def test_geometric_law_identity(n):
    p1 = pd_closed_form(n, 1)
    for t in range(1, 51):
        assert abs(pd_closed_form(n, t) - (1 - p1) ** (t - 1) * p1) < 1e-9


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 5000), st.integers(1, 200))
def test_pd_is_a_probability_and_decreasing(n, t):
    p = pd_closed_form(n, t)
    assert 0.0 <= p <= 1.0
    assert pd_closed_form(n, t + 1) <= p


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 500))
def test_partial_sums_converge_to_one(n):
    total = sum(pd_closed_form(n, t) for t in range(1, 200))
    assert total == pytest.approx(1.0, abs=1e-9)


def test_per_cycle_rate_decreases_toward_asymptote():
    vals = [pd_closed_form(n, 1) for n in (2, 5, 10, 50, 214, 10000)]
    assert np.all(np.diff(vals) < 0)
    assert vals[-1] > pd_asymptote()


def test_argument_validation():
    for bad in (0, -3, 2.5):
        with pytest.raises(ParameterError):
            pd_closed_form(bad, 1)
    with pytest.raises(ParameterError):
        pd_closed_form(10, 0)
    with pytest.raises(ParameterError):
        AttackScenario(10, "teleport")
    with pytest.raises(ParameterError):
        AttackScenario(10, "dwell", dwell_slots=0)
    with pytest.raises(ParameterError):
        simulate(AttackScenario(10), cycles=3, trials=0)


@pytest.mark.parametrize("n", [10, 50, 214])
def test_monte_carlo_matches_closed_form(n):
    res = simulate(AttackScenario(n, seed=n), cycles=5, trials=10000)
    for t, p in enumerate(res.p_first_detect_by_cycle, start=1):
        assert abs(p - pd_closed_form(n, t)) < 0.015
    assert res.mean_cycles == pytest.approx(mean_detection_cycles(n), abs=0.1)
    ci = res.confidence_intervals()
    assert np.all(ci[:, 0] <= res.p_first_detect_by_cycle + 1e-12)
    assert np.all(ci[:, 1] >= res.p_first_detect_by_cycle - 1e-12)


def test_fixed_attacker_is_always_caught_in_first_cycle():
    res = simulate(AttackScenario(30, "fixed", seed=1), cycles=3, trials=2000)
    np.testing.assert_array_equal(res.p_first_detect_by_cycle, [1.0, 0.0, 0.0])
    assert res.undetected == 0


def test_long_dwell_is_caught_more_often_than_uniform_hopping():
    n = 214
    uni = simulate(AttackScenario(n, "uniform", seed=2), cycles=1, trials=10000)
    dwell = simulate(AttackScenario(n, "dwell", dwell_slots=107, seed=2), cycles=1, trials=10000)
    assert dwell.p_first_detect_by_cycle[0] > uni.p_first_detect_by_cycle[0] + 0.05


def test_simulation_is_deterministic():
    a = simulate(AttackScenario(20, seed=9), cycles=4, trials=500)
    b = simulate(AttackScenario(20, seed=9), cycles=4, trials=500)
    np.testing.assert_array_equal(a.p_first_detect_by_cycle, b.p_first_detect_by_cycle)


def test_csv_output():
    res = simulate(AttackScenario(10, seed=0), cycles=2, trials=100)
    buf = io.StringIO()
    adversary.write_csv(buf, adversary.rows(10, res))
    lines = buf.getvalue().splitlines()
    assert lines[0] == ",".join(adversary.CSV_HEADER)
    assert len(lines) == 3
    assert lines[1].startswith("10,1,")
