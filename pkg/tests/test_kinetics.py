import math
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpdiscover.data import TimeSeries
from dpdiscover.kinetics import (
    HOURS_PER_YEAR,
    REFERENCE_ARRHENIUS,
    REFERENCE_EKENSTAM,
    REFERENCE_EMSLEY,
    ArrheniusParams,
    EkenstamModel,
    EmsleyParams,
    IntegrationError,
    arrhenius_rate,
    crossing_time,
    ekenstam_closed_form,
    ekenstam_derivative,
    ekenstam_end_of_life,
    ekenstam_rhs,
    emsley_closed_form,
    emsley_rhs,
    end_of_life,
    integrate,
)


def decimal_rate(A, E, T, R=8.314):
    getcontext().prec = 40
    return Decimal(A) * (-(Decimal(E) / (Decimal(R) * Decimal(T)))).exp()


def test_scaled_arrhenius_values():
    assert REFERENCE_ARRHENIUS.ln_A == pytest.approx(19.650, abs=5e-4)
    assert REFERENCE_ARRHENIUS.E_over_RT == pytest.approx(37.587, abs=5e-4)


def test_rate_matches_high_precision_evaluation():
    k = arrhenius_rate(REFERENCE_ARRHENIUS)
    assert k == pytest.approx(float(decimal_rate(3.42e8, 1.1e5, 352.0)), rel=1e-13)
    assert k == pytest.approx(1.62e-8, rel=5e-3)


def test_zero_activation_energy_gives_prefactor():
    assert arrhenius_rate(ArrheniusParams(A=5.0, E=0.0, T=300.0)) == 5.0


@pytest.mark.parametrize("bad", [dict(A=0.0, E=1.0, T=1.0), dict(A=1.0, E=-1.0, T=1.0), dict(A=1.0, E=1.0, T=0.0)])
def test_invalid_arrhenius(bad):
    with pytest.raises(ValueError):
        ArrheniusParams(**bad)


def test_scaled_round_trip():
    p = ArrheniusParams.from_scaled(19.65, 37.587, 352.0)
    assert p.ln_A == pytest.approx(19.65, rel=1e-14)
    assert p.E_over_RT == pytest.approx(37.587, rel=1e-14)


def test_ekenstam_initial_value_and_monotone():
    t = np.linspace(0, 40 * HOURS_PER_YEAR, 500)
    dp = ekenstam_closed_form(REFERENCE_EKENSTAM, t)
    assert dp[0] == 1100.0
    assert np.all(np.diff(dp) < 0)


def test_ekenstam_zero_rate_is_constant():
    m = EkenstamModel(ArrheniusParams(A=1e-300, E=1e5, T=300.0), 1000.0)
    assert np.allclose(ekenstam_closed_form(m, [0.0, 1e5, 1e6]), 1000.0, rtol=1e-12)


def test_ekenstam_end_of_life_years():
    k = float(decimal_rate(3.42e8, 1.1e5, 352.0))
    hours = (1 / 200 - 1 / 1100) / k
    assert ekenstam_end_of_life(REFERENCE_EKENSTAM) == pytest.approx(hours, rel=1e-12)
    assert hours == pytest.approx(2.52e5, rel=5e-3)
    assert hours / HOURS_PER_YEAR == pytest.approx(28.8, abs=0.05)


def test_ekenstam_residual_is_zero_on_closed_form():
    t = np.linspace(0, 40 * HOURS_PER_YEAR, 1000)
    dp = ekenstam_closed_form(REFERENCE_EKENSTAM, t)
    rate_term = REFERENCE_EKENSTAM.rate * dp**2
    r = ekenstam_derivative(REFERENCE_EKENSTAM, t) + rate_term
    assert np.max(np.abs(r) / rate_term) < 1e-14


def test_emsley_values_at_horizon():
    dp, k1 = emsley_closed_form(REFERENCE_EMSLEY, [0.0, 3500.0])
    assert (dp[0], k1[0]) == (1190.0, 1.6e-7)
    assert k1[1] == pytest.approx(1.6e-7 * math.exp(-1.47), rel=1e-14)
    assert k1[1] == pytest.approx(3.68e-8, rel=2e-3)
    assert dp[1] == pytest.approx(882, abs=0.5)


def test_emsley_asymptote():
    assert REFERENCE_EMSLEY.dp_asymptote == pytest.approx(819, abs=0.5)
    dp, _ = emsley_closed_form(REFERENCE_EMSLEY, np.linspace(0, 2e4, 2000))
    assert np.all(dp > REFERENCE_EMSLEY.dp_asymptote)
    assert np.all(np.diff(dp) < 0)


def test_emsley_reduces_to_ekenstam_without_decay():
    k = REFERENCE_EKENSTAM.rate
    t = np.linspace(0, 40 * HOURS_PER_YEAR, 300)
    dp_e, k1 = emsley_closed_form(EmsleyParams(dp0=1100.0, k1_0=k, k2=0.0), t)
    np.testing.assert_allclose(dp_e, ekenstam_closed_form(REFERENCE_EKENSTAM, t), rtol=1e-10)
    assert np.all(k1 == k)


def test_zero_rhs_keeps_state():
    traj = integrate(lambda t, y: np.zeros_like(y), [3.0, -1.0], (0.0, 5.0), 10)
    assert traj.states.shape == (11, 2)
    assert np.all(traj.states == [3.0, -1.0])
    assert traj.times[0] == 0.0 and traj.times[-1] == 5.0


def test_rk4_matches_ekenstam_closed_form():
    horizon = 40 * HOURS_PER_YEAR
    traj = integrate(ekenstam_rhs(REFERENCE_EKENSTAM.rate), [1100.0], (0.0, horizon), 100_000)
    exact = ekenstam_closed_form(REFERENCE_EKENSTAM, traj.times)
    assert np.max(np.abs(traj.states[:, 0] / exact - 1)) < 1e-8


def test_rk4_matches_emsley_closed_form():
    traj = integrate(emsley_rhs(REFERENCE_EMSLEY.k2), [1190.0, 1.6e-7], (0.0, 3500.0), 100_000)
    dp, k1 = emsley_closed_form(REFERENCE_EMSLEY, traj.times)
    assert np.max(np.abs(traj.states[:, 0] / dp - 1)) < 1e-8
    assert np.max(np.abs(traj.states[:, 1] / k1 - 1)) < 1e-8


def test_rk4_order_four():
    # a stiffer test problem so truncation error dominates rounding
    m = EkenstamModel(ArrheniusParams(A=1.0, E=0.0, T=1.0), dp0=1.0)
    errs = []
    for n in (8, 16, 32, 64, 128):
        traj = integrate(ekenstam_rhs(m.rate), [1.0], (0.0, 4.0), n)
        errs.append(abs(traj.states[-1, 0] - ekenstam_closed_form(m, 4.0)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(orders[1:] - 4) < 0.2)


def test_integration_divergence_reports_step():
    with pytest.raises(IntegrationError) as info:
        integrate(lambda t, y: y * y, [1.0], (0.0, 2.0), 50)
    assert info.value.step is not None and 1 <= info.value.step <= 50


def test_integrate_rejects_zero_steps():
    with pytest.raises(ValueError):
        integrate(lambda t, y: y, [1.0], (0.0, 1.0), 0)


def test_crossing_time_interpolates():
    series = TimeSeries([0.0, 100.0], [300.0, 100.0])
    assert end_of_life(series) == pytest.approx(50.0)


def test_no_crossing_returns_none():
    assert end_of_life(TimeSeries([0.0, 1.0, 2.0], [900.0, 800.0, 700.0])) is None


def test_empty_series_is_an_error():
    with pytest.raises(ValueError):
        crossing_time([], [])


def test_dataset_trajectory_end_of_life():
    t = np.linspace(0, 40 * HOURS_PER_YEAR, 24)
    series = TimeSeries(t, ekenstam_closed_form(REFERENCE_EKENSTAM, t))
    # chord interpolation of a convex curve lands slightly early
    assert end_of_life(series) / HOURS_PER_YEAR == pytest.approx(28.8, abs=0.3)


@settings(max_examples=50, deadline=None)
@given(
    lnA=st.floats(10, 30),
    eort=st.floats(20, 45),
    dp0=st.floats(500, 1500),
)
def test_ekenstam_strictly_decreasing(lnA, eort, dp0):
    m = EkenstamModel(ArrheniusParams.from_scaled(lnA, eort, 350.0), dp0)
    t = np.linspace(0, 1e6, 64)
    dp = ekenstam_closed_form(m, t)
    assert dp[0] == pytest.approx(dp0)
    assert np.all(np.diff(dp) <= 0)
