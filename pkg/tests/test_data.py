import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpdiscover.data import (
    EKENSTAM_SCALED,
    EMSLEY_SCALED,
    MEASURED,
    NOISY,
    PHYSICAL,
    CsvFormatError,
    ScalingError,
    ScalingSpec,
    TimeSeries,
    add_noise,
    load_csv,
    make_ekenstam_dataset,
    make_emsley_dataset,
    parse_csv,
    portable_rng,
    scale,
    standard_normal,
    unscale,
    write_csv,
)
from dpdiscover.kinetics import HOURS_PER_YEAR, REFERENCE_EKENSTAM, REFERENCE_EMSLEY


def test_ekenstam_dataset_layout():
    s = make_ekenstam_dataset(REFERENCE_EKENSTAM, 24, 40)
    assert len(s) == 24
    assert (s.times[0], s.dp[0]) == (0.0, 1100.0)
    assert s.times[-1] == 40 * HOURS_PER_YEAR
    k = REFERENCE_EKENSTAM.rate
    assert s.dp[-1] == pytest.approx(1 / (1 / 1100 + k * 40 * 8760), rel=1e-14)
    assert np.allclose(np.diff(s.times), 40 * HOURS_PER_YEAR / 23)


def test_two_point_dataset_is_the_endpoints():
    s = make_ekenstam_dataset(REFERENCE_EKENSTAM, 2, 40)
    assert s.times.tolist() == [0.0, 40 * HOURS_PER_YEAR]


def test_emsley_dataset_has_k1():
    s = make_emsley_dataset(REFERENCE_EMSLEY, 1000, 3500)
    assert s.k1 is not None and s.k1[0] == 1.6e-7 and len(s) == 1000


def test_series_invariants():
    with pytest.raises(ValueError):
        TimeSeries([0.0, 0.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        TimeSeries([0.0, 1.0], [1.0, -1.0])
    with pytest.raises(ValueError):
        TimeSeries([0.0, 1.0], [1.0])


def test_zero_noise_is_identity():
    s = make_ekenstam_dataset(REFERENCE_EKENSTAM)
    assert add_noise(s, 0.0, seed=3) is s


def test_noise_is_deterministic_per_seed():
    s = make_ekenstam_dataset(REFERENCE_EKENSTAM)
    a, b = add_noise(s, 0.05, seed=9), add_noise(s, 0.05, seed=9)
    assert np.array_equal(a.dp, b.dp)
    assert not np.array_equal(a.dp, add_noise(s, 0.05, seed=10).dp)
    assert a.provenance == NOISY and a.noise_pct == 0.05 and a.noise_seed == 9
    assert np.array_equal(a.times, s.times)


def test_ten_percent_noise_spread():
    s = make_ekenstam_dataset(REFERENCE_EKENSTAM, 24, 40)
    rel = add_noise(s, 0.10, seed=0).dp / s.dp - 1
    assert 0.06 <= np.std(rel, ddof=1) <= 0.14


def test_noise_is_unbiased_over_seeds():
    s = make_ekenstam_dataset(REFERENCE_EKENSTAM, 24, 40)
    pct, seeds = 0.05, 400
    ratios = np.concatenate([add_noise(s, pct, seed=k).dp / s.dp for k in range(seeds)])
    assert abs(ratios.mean() - 1) < 3 * pct / np.sqrt(24 * seeds)


def test_noise_floor_clamps_and_warns():
    s = TimeSeries(np.arange(20.0), np.ones(20))
    noisy = add_noise(s, 5.0, seed=1, floor=0.5)
    assert np.all(noisy.dp >= 0.5)
    assert noisy.warnings and "clamped" in noisy.warnings[0]


def test_noise_needs_exact_input():
    s = add_noise(make_ekenstam_dataset(REFERENCE_EKENSTAM), 0.01, seed=0)
    with pytest.raises(ValueError):
        add_noise(s, 0.01, seed=1)


def test_box_muller_moments():
    z = standard_normal(portable_rng(123), 200_001)
    assert z.size == 200_001
    assert abs(z.mean()) < 0.01 and abs(z.std() - 1) < 0.01


def test_portable_stream_is_stable():
    # Philox is counter based: the first draws for a key never change
    a = portable_rng(42).random(3)
    b = portable_rng(42).random(3)
    assert np.array_equal(a, b)


def test_ekenstam_scaling_example():
    s = TimeSeries([0.0, 10.0], [1100.0, 900.0])
    out = scale(s, ScalingSpec.ekenstam(10.0))
    assert out.dp[0] == 11.0 and out.times[-1] == 1.0 and out.units == EKENSTAM_SCALED


def test_emsley_scaling_example():
    s = make_emsley_dataset(REFERENCE_EMSLEY, 10, 3500)
    out = scale(s, ScalingSpec.emsley())
    assert out.k1[0] == pytest.approx(1.6, rel=1e-15)
    assert out.times[-1] == pytest.approx(10.0, rel=1e-15)
    assert out.units == EMSLEY_SCALED


def test_double_scaling_is_rejected():
    spec = ScalingSpec.ekenstam(10.0)
    once = scale(TimeSeries([0.0, 10.0], [1100.0, 900.0]), spec)
    with pytest.raises(ScalingError):
        scale(once, spec)
    with pytest.raises(ScalingError):
        unscale(TimeSeries([0.0, 1.0], [3.0, 2.0]), spec)
    with pytest.raises(ScalingError):
        unscale(once, ScalingSpec.emsley())


def test_k1_without_k1_scale():
    with pytest.raises(ScalingError):
        scale(make_emsley_dataset(REFERENCE_EMSLEY, 5, 3500), ScalingSpec.ekenstam(3500.0))


def test_scale_must_be_positive():
    with pytest.raises(ValueError):
        ScalingSpec(time_scale=0.0, dp_scale=1.0)


@settings(max_examples=100, deadline=None)
@given(
    n=st.integers(2, 40),
    seed=st.integers(0, 2**31),
    emsley=st.booleans(),
)
def test_scale_round_trip(n, seed, emsley):
    rng = np.random.default_rng(seed)
    times = np.cumsum(rng.uniform(0.1, 500.0, n))
    dp = rng.uniform(100.0, 1500.0, n)
    k1 = rng.uniform(1e-9, 1e-6, n) if emsley else None
    s = TimeSeries(times, dp, k1=k1)
    spec = ScalingSpec.emsley() if emsley else ScalingSpec.ekenstam(float(times[-1]))
    back = unscale(scale(s, spec), spec)
    assert back.units == PHYSICAL
    for a, b in [(back.times, times), (back.dp, dp)] + ([(back.k1, k1)] if emsley else []):
        assert np.max(np.abs(a / b - 1)) < 1e-12


def test_csv_anchor_row(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("time_years,dp\n1.0,980\n2.0,900\n")
    s = load_csv(p)
    assert len(s) == 3
    assert (s.times[0], s.dp[0]) == (0.0, 1100.0)
    assert s.provenance == MEASURED
    assert s.times[1] == pytest.approx(HOURS_PER_YEAR)


def test_csv_with_zero_row_has_no_anchor():
    s = parse_csv("time_years,dp\n0,1050\n3,800\n")
    assert s.dp.tolist() == [1050.0, 800.0]


def test_csv_unsorted_rows_warn():
    s = parse_csv("time_years,dp\n3,800\n1,950\n")
    assert s.times_years.tolist() == [0.0, 1.0, 3.0]
    assert s.dp.tolist() == [1100.0, 950.0, 800.0]
    assert any("sorted" in w for w in s.warnings)


@pytest.mark.parametrize(
    "text, line",
    [
        ("", 1),
        ("time,dp\n1,2\n", 1),
        ("time_years,dp\n1,abc\n", 2),
        ("time_years,dp\n1,900\n2\n", 3),
        ("time_years,dp\n1,-5\n", 2),
    ],
)
def test_csv_errors_carry_line_numbers(text, line):
    with pytest.raises(CsvFormatError) as info:
        parse_csv(text)
    assert info.value.line == line


def test_csv_round_trip(tmp_path):
    s = make_emsley_dataset(REFERENCE_EMSLEY, 7, 3500)
    p = tmp_path / "out" / "e.csv"
    write_csv(s, p)
    assert p.read_text().splitlines()[0] == "time_years,dp,k1"
    back = load_csv(p)
    np.testing.assert_allclose(back.times, s.times, rtol=1e-14)
    np.testing.assert_allclose(back.k1, s.k1, rtol=1e-15)


def test_dataset_csv_first_row(tmp_path):
    p = tmp_path / "d.csv"
    write_csv(make_ekenstam_dataset(REFERENCE_EKENSTAM, 24, 40), p)
    lines = p.read_text().splitlines()
    assert lines[:2] == ["time_years,dp", "0,1100"]
    assert len(lines) == 25
