"""Synthetic and measured DP datasets, noise injection and unit scaling."""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .kinetics import (
    HOURS_PER_YEAR,
    EkenstamModel,
    EmsleyParams,
    ekenstam_closed_form,
    emsley_closed_form,
)

logger = logging.getLogger(__name__)

PHYSICAL = "physical"
EKENSTAM_SCALED = "ekenstam_scaled"
EMSLEY_SCALED = "emsley_scaled"
UNITS = (PHYSICAL, EKENSTAM_SCALED, EMSLEY_SCALED)

EXACT = "exact"
NOISY = "noisy"
MEASURED = "measured"


class ScalingError(ValueError):
    """Series units are incompatible with the requested conversion."""


class CsvFormatError(ValueError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


def portable_rng(seed: int) -> np.random.Generator:
    """Counter-based Philox stream keyed by ``seed``."""
    return np.random.Generator(np.random.Philox(key=int(seed) & (2**64 - 1)))


def standard_normal(rng: np.random.Generator, n: int) -> np.ndarray:
    """Box-Muller deviates drawn from the uniform stream of ``rng``."""
    m = (n + 1) // 2
    u1 = 1.0 - rng.random(m)  # (0, 1]
    u2 = rng.random(m)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
    return z[:n]


@dataclass(frozen=True)
class TimeSeries:
    """DP samples (and optionally k1) at strictly increasing times.

    Physical units are hours, DP counts and k1 in 1/hour.
    """

    times: np.ndarray
    dp: np.ndarray
    k1: np.ndarray | None = None
    units: str = PHYSICAL
    provenance: str = EXACT
    noise_pct: float | None = None
    noise_seed: int | None = None
    warnings: tuple[str, ...] = field(default=())

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        dp = np.asarray(self.dp, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "dp", dp)
        if self.k1 is not None:
            k1 = np.asarray(self.k1, dtype=np.float64).reshape(-1)
            object.__setattr__(self, "k1", k1)
            if k1.size != times.size:
                raise ValueError("k1 and times differ in length")
        if dp.size != times.size:
            raise ValueError("dp and times differ in length")
        if self.units not in UNITS:
            raise ValueError(f"unknown units {self.units!r}")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        if self.units == PHYSICAL and np.any(dp <= 0):
            raise ValueError("physical DP values must be positive")

    def __len__(self):
        return self.times.size

    @property
    def times_years(self) -> np.ndarray:
        if self.units != PHYSICAL:
            raise ScalingError("times are not in hours")
        return self.times / HOURS_PER_YEAR

    def replace(self, **changes) -> "TimeSeries":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class ScalingSpec:
    """Divisors mapping physical units to the network's working units."""

    time_scale: float
    dp_scale: float
    k1_scale: float | None = None
    units: str = EKENSTAM_SCALED

    def __post_init__(self):
        scales = [self.time_scale, self.dp_scale]
        if self.k1_scale is not None:
            scales.append(self.k1_scale)
        if not all(s > 0 and math.isfinite(s) for s in scales):
            raise ValueError(f"scales must be positive: {self}")
        if self.units == PHYSICAL or self.units not in UNITS:
            raise ValueError(f"invalid target units {self.units!r}")

    @classmethod
    def ekenstam(cls, horizon_hours: float, dp_scale: float = 100.0) -> "ScalingSpec":
        """Time mapped onto [0, 1], DP divided by 100."""
        return cls(time_scale=float(horizon_hours), dp_scale=dp_scale, units=EKENSTAM_SCALED)

    @classmethod
    def emsley(
        cls,
        horizon_hours: float = 3500.0,
        scaled_horizon: float = 10.0,
        dp_scale: float = 1000.0,
        k1_scale: float = 1e-7,
    ) -> "ScalingSpec":
        """Time mapped onto [0, 10], DP divided by 1000, k1 by 1e-7."""
        return cls(
            time_scale=horizon_hours / scaled_horizon,
            dp_scale=dp_scale,
            k1_scale=k1_scale,
            units=EMSLEY_SCALED,
        )


def scale(series: TimeSeries, spec: ScalingSpec) -> TimeSeries:
    if series.units != PHYSICAL:
        raise ScalingError(f"cannot scale a series already in {series.units!r} units")
    k1 = None
    if series.k1 is not None:
        if spec.k1_scale is None:
            raise ScalingError("series has k1 but the scaling spec has no k1_scale")
        k1 = series.k1 / spec.k1_scale
    return series.replace(
        times=series.times / spec.time_scale, dp=series.dp / spec.dp_scale, k1=k1, units=spec.units
    )


def unscale(series: TimeSeries, spec: ScalingSpec) -> TimeSeries:
    if series.units != spec.units:
        raise ScalingError(f"series units {series.units!r} do not match spec {spec.units!r}")
    k1 = None
    if series.k1 is not None:
        if spec.k1_scale is None:
            raise ScalingError("series has k1 but the scaling spec has no k1_scale")
        k1 = series.k1 * spec.k1_scale
    return series.replace(
        times=series.times * spec.time_scale, dp=series.dp * spec.dp_scale, k1=k1, units=PHYSICAL
    )


def equispaced_hours(n_points: int, horizon_hours: float) -> np.ndarray:
    if n_points < 2:
        raise ValueError("need at least two points")
    t = np.linspace(0.0, horizon_hours, n_points)
    t[-1] = horizon_hours
    return t


def make_ekenstam_dataset(model: EkenstamModel, n_points: int = 24, horizon_years: float = 40.0) -> TimeSeries:
    """Closed-form DP at ``n_points`` equispaced times, endpoints included."""
    t = equispaced_hours(n_points, horizon_years * HOURS_PER_YEAR)
    return TimeSeries(t, ekenstam_closed_form(model, t))


def make_emsley_dataset(params: EmsleyParams, n_points: int = 1000, horizon_hours: float = 3500.0) -> TimeSeries:
    t = equispaced_hours(n_points, horizon_hours)
    dp, k1 = emsley_closed_form(params, t)
    return TimeSeries(t, dp, k1=k1)


def add_noise(series: TimeSeries, pct: float, seed: int, floor: float = 1.0) -> TimeSeries:
    """Multiplicative Gaussian noise ``dp * (1 + pct * eps)`` on every point.

    Values that would fall below ``floor`` are clamped and flagged in
    ``warnings``.
    """
    if series.provenance != EXACT:
        raise ValueError(f"noise must be added to exact data, got {series.provenance!r}")
    if pct < 0:
        raise ValueError("pct must be non-negative")
    if pct == 0:
        return series
    eps = standard_normal(portable_rng(seed), len(series))
    dp = series.dp * (1.0 + pct * eps)
    warnings = series.warnings
    low = dp < floor
    if np.any(low):
        dp = np.where(low, floor, dp)
        msg = f"{int(low.sum())} noisy DP values clamped to {floor}"
        logger.warning(msg)
        warnings = warnings + (msg,)
    return series.replace(dp=dp, provenance=NOISY, noise_pct=pct, noise_seed=seed, warnings=warnings)


def load_csv(path, anchor_dp: float = 1100.0) -> TimeSeries:
    """Read measured ``time_years,dp`` rows.

    A ``(0, anchor_dp)`` row is prepended when the file has no t=0 sample,
    treating the insulation as new at installation.
    """
    with open(path, newline="") as fh:
        text = fh.read()
    return parse_csv(text, anchor_dp=anchor_dp)


def parse_csv(text: str, anchor_dp: float = 1100.0) -> TimeSeries:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise CsvFormatError("empty file", line=1)
    header = [h.strip() for h in rows[0]]
    if header[:2] != ["time_years", "dp"]:
        raise CsvFormatError(f"expected header 'time_years,dp', got {','.join(header)!r}", line=1)
    has_k1 = len(header) > 2 and header[2] == "k1"
    years, dp, k1 = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < 2 + has_k1:
            raise CsvFormatError(f"expected {2 + has_k1} columns, got {len(row)}", line=lineno)
        try:
            years.append(float(row[0]))
            dp.append(float(row[1]))
            if has_k1:
                k1.append(float(row[2]))
        except ValueError as exc:
            raise CsvFormatError(str(exc), line=lineno) from None
        if not (math.isfinite(years[-1]) and math.isfinite(dp[-1])) or years[-1] < 0 or dp[-1] <= 0:
            raise CsvFormatError(f"invalid values {row!r}", line=lineno)
    if not years:
        raise CsvFormatError("no data rows", line=len(rows) + 1)

    warnings: tuple[str, ...] = ()
    years_a, dp_a = np.array(years), np.array(dp)
    k1_a = np.array(k1) if has_k1 else None
    order = np.argsort(years_a, kind="stable")
    if np.any(order != np.arange(order.size)):
        msg = "times were not monotone; rows sorted"
        logger.warning(msg)
        warnings += (msg,)
        years_a, dp_a = years_a[order], dp_a[order]
        if k1_a is not None:
            k1_a = k1_a[order]
    if np.any(np.diff(years_a) == 0):
        raise CsvFormatError("duplicate time values")
    if years_a[0] != 0.0:
        if k1_a is not None:
            raise CsvFormatError("a k1 column requires an explicit t=0 row")
        years_a = np.concatenate([[0.0], years_a])
        dp_a = np.concatenate([[anchor_dp], dp_a])
    return TimeSeries(
        years_a * HOURS_PER_YEAR, dp_a, k1=k1_a, provenance=MEASURED, warnings=warnings
    )


def _fmt(x: float) -> str:
    return format(float(x), ".17g") if not float(x).is_integer() else str(int(x))


def write_csv(series: TimeSeries, path) -> None:
    """Write ``time_years,dp[,k1]`` rows (physical units)."""
    if series.units != PHYSICAL:
        raise ScalingError("only physical-unit series are written")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_years", "dp"] + (["k1"] if series.k1 is not None else []))
        years = series.times_years
        for i in range(len(series)):
            row = [_fmt(years[i]), _fmt(series.dp[i])]
            if series.k1 is not None:
                row.append(format(float(series.k1[i]), ".17g"))
            w.writerow(row)
