"""Cellulose degradation models, their exact solutions and an RK4 integrator.

Time is in hours throughout. One year is exactly ``24 * 365`` hours.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

HOURS_PER_YEAR = 24.0 * 365.0
GAS_CONSTANT = 8.314


class IntegrationError(FloatingPointError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class ArrheniusParams:
    A: float
    E: float
    T: float
    R: float = GAS_CONSTANT

    def __post_init__(self):
        if not (self.A > 0 and self.T > 0 and self.R > 0 and self.E >= 0):
            raise ValueError(f"invalid Arrhenius parameters: {self}")

    @property
    def ln_A(self) -> float:
        return math.log(self.A)

    @property
    def E_over_RT(self) -> float:
        return self.E / (self.R * self.T)

    @classmethod
    def from_scaled(cls, ln_A, E_over_RT, T, R=GAS_CONSTANT) -> "ArrheniusParams":
        return cls(A=math.exp(ln_A), E=E_over_RT * R * T, T=T, R=R)


def arrhenius_rate(p: ArrheniusParams) -> float:
    """Rate constant ``A * exp(-E / (R T))`` in 1/hour."""
    return p.A * math.exp(-p.E_over_RT)


@dataclass(frozen=True)
class EkenstamModel:
    params: ArrheniusParams
    dp0: float = 1100.0

    def __post_init__(self):
        if not self.dp0 > 0:
            raise ValueError("dp0 must be positive")

    @property
    def rate(self) -> float:
        return arrhenius_rate(self.params)


@dataclass(frozen=True)
class EmsleyParams:
    dp0: float = 1190.0
    k1_0: float = 1.6e-7
    k2: float = 4.2e-4

    def __post_init__(self):
        if not (self.dp0 > 0 and self.k1_0 > 0 and self.k2 >= 0):
            raise ValueError(f"invalid Emsley parameters: {self}")

    @property
    def dp_asymptote(self) -> float:
        if self.k2 == 0:
            return 0.0
        return 1.0 / (1.0 / self.dp0 + self.k1_0 / self.k2)


# Reference parameter sets used for the synthetic experiments.
REFERENCE_ARRHENIUS = ArrheniusParams(A=3.42e8, E=1.1e5, T=352.0)
REFERENCE_EKENSTAM = EkenstamModel(REFERENCE_ARRHENIUS, dp0=1100.0)
REFERENCE_EMSLEY = EmsleyParams(dp0=1190.0, k1_0=1.6e-7, k2=4.2e-4)


def ekenstam_closed_form(m: EkenstamModel, t):
    """``DP(t) = 1 / (1/DP0 + k t)``."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0):
        raise ValueError("times must be non-negative")
    return 1.0 / (1.0 / m.dp0 + m.rate * t)


def ekenstam_derivative(m: EkenstamModel, t):
    dp = ekenstam_closed_form(m, t)
    return -m.rate * dp * dp


def emsley_closed_form(p: EmsleyParams, t):
    """Exact ``(DP(t), k1(t))`` of the Emsley system."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0):
        raise ValueError("times must be non-negative")
    k1 = p.k1_0 * np.exp(-p.k2 * t)
    if p.k2 == 0:
        integral = p.k1_0 * t
    else:
        integral = p.k1_0 * (-np.expm1(-p.k2 * t)) / p.k2
    return 1.0 / (1.0 / p.dp0 + integral), k1


def ekenstam_rhs(k: float) -> Callable:
    return lambda t, y: np.array([-k * y[0] * y[0]])


def emsley_rhs(k2: float) -> Callable:
    return lambda t, y: np.array([-y[1] * y[0] * y[0], -k2 * y[1]])


class Trajectory(NamedTuple):
    times: np.ndarray
    states: np.ndarray  # shape (n_steps + 1, dim)


def integrate(rhs: Callable, state0, t_span, n_steps: int) -> Trajectory:
    """Classic fixed-step fourth-order Runge-Kutta, both endpoints included."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    t0, t1 = map(float, t_span)
    h = (t1 - t0) / n_steps
    y = np.array(state0, dtype=np.float64).reshape(-1)
    states = np.empty((n_steps + 1, y.size))
    states[0] = y
    times = t0 + h * np.arange(n_steps + 1)
    for i in range(n_steps):
        t = times[i]
        k1 = rhs(t, y)
        k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
        k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
        k4 = rhs(t + h, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise IntegrationError(f"non-finite state at step {i + 1}", step=i + 1)
        states[i + 1] = y
    times[-1] = t1
    return Trajectory(times, states)


def end_of_life(series, threshold: float = 200.0):
    """First time a physical-unit series' DP falls below ``threshold`` (hours).

    Linearly interpolated between samples; ``None`` if it never crosses.
    """
    return crossing_time(series.times, series.dp, threshold)


def crossing_time(times, dp, threshold: float = 200.0):
    times = np.asarray(times, dtype=np.float64)
    dp = np.asarray(dp, dtype=np.float64)
    if times.size == 0:
        raise ValueError("empty series")
    below = np.flatnonzero(dp < threshold)
    if below.size == 0:
        return None
    i = int(below[0])
    if i == 0:
        return float(times[0])
    t0, t1, d0, d1 = times[i - 1], times[i], dp[i - 1], dp[i]
    return float(t0 + (d0 - threshold) * (t1 - t0) / (d0 - d1))


def ekenstam_end_of_life(m: EkenstamModel, threshold: float = 200.0) -> float:
    """Exact crossing time from inverting the closed form."""
    return (1.0 / threshold - 1.0 / m.dp0) / m.rate
