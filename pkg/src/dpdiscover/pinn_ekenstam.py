"""Arrhenius parameter discovery in the Ekenstam equation with a PINN.

A single MLP maps scaled time to scaled DP. The unknowns ``ln A`` and
``E / (R T)`` enter through a log-transformed residual of
``dDP/dt = -A exp(-E / RT) DP^2`` evaluated at the data points, and are
trained jointly with the network weights by full-batch Adam.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, asdict

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import autodiff as ad
from .autodiff import AdamState, Mlp, Tape, TrainingDivergenceError, Var
from .data import PHYSICAL, ScalingSpec, TimeSeries, portable_rng, scale
from .kinetics import GAS_CONSTANT, ArrheniusParams, EkenstamModel, ekenstam_closed_form

logger = logging.getLogger(__name__)

LOG_EXACT = "log_exact"
LOG_LITERAL = "log_literal"
POSITIVITY_GUARD = 1e-12
GUARD_WIDTH = 0.01


@dataclass
class EkenstamInverseConfig:
    hidden_layers: tuple[int, ...] = (50, 50, 50)
    activation: str = "sigmoid"
    epochs: int = 50_000
    learning_rate: float = 1e-3
    init_lnA: float = 19.0
    init_E_over_RT: float = 38.0
    residual_form: str = LOG_EXACT
    dp_scale: float = 100.0
    time_scale: float | None = None  # hours; defaults to the last sample time
    include_scale_constant: bool = True
    temperature: float = 352.0
    gas_constant: float = GAS_CONSTANT
    seed: int = 0

    def __post_init__(self):
        self.hidden_layers = tuple(int(w) for w in self.hidden_layers)
        if self.epochs <= 0:
            raise ValueError("epochs must be positive")
        if self.residual_form not in (LOG_EXACT, LOG_LITERAL):
            raise ValueError(f"unknown residual form {self.residual_form!r}")

    def layer_widths(self) -> tuple[int, ...]:
        return (1,) + self.hidden_layers + (1,)

    def scaling_for(self, series: TimeSeries) -> ScalingSpec:
        horizon = self.time_scale if self.time_scale is not None else float(series.times[-1])
        return ScalingSpec.ekenstam(horizon, dp_scale=self.dp_scale)


@dataclass
class EkenstamFit:
    lnA_hat: float
    E_over_RT_hat: float
    A_hat: float
    E_hat: float
    loss_history: np.ndarray  # (epochs, 2): mse_data, mse_ode
    param_trajectory: np.ndarray  # (epochs, 2): lnA, E/RT after each update
    dp_prediction: TimeSeries
    mlp: Mlp
    scaling: ScalingSpec
    config: EkenstamInverseConfig
    non_monotone_points: int = 0
    train_series: TimeSeries | None = field(default=None, repr=False)


def scale_constant(scaling: ScalingSpec | None) -> float:
    """Additive log term carried by the scaled equation.

    With ``DP = s_d * y`` and ``t = s_t * tau`` the ODE becomes
    ``-dy/dtau = k * s_d * s_t * y^2``.
    """
    if scaling is None:
        return 0.0
    return math.log(scaling.dp_scale * scaling.time_scale)


def residual(
    dp_hat,
    ddp_dt,
    lnA,
    E_over_RT,
    scaling=None,
    form=LOG_EXACT,
    include_scale_constant=True,
    guard_width=GUARD_WIDTH,
):
    """Log-scaled Ekenstam residual in the network's units.

    ``log_exact``: ``lnA - E/RT + 2 ln DP + C - ln(-dDP/dt)``, zero on the
    true solution. ``log_literal``: ``d ln DP / dt + lnA - E/RT + 2 ln DP + C``.

    Logarithms go through a softplus guard of ``guard_width`` so that an
    early, non-monotone network still receives a gradient; the guard is
    inactive on any curve whose values and slopes exceed ``40 * guard_width``.

    Accepts tape nodes (returns a node) or plain arrays (returns an array).
    """
    if not any(isinstance(v, Var) for v in (dp_hat, ddp_dt, lnA, E_over_RT)):
        tape = Tape()
        out = residual(
            tape.variable(dp_hat),
            tape.variable(ddp_dt),
            tape.variable(lnA),
            tape.variable(E_over_RT),
            scaling,
            form,
            include_scale_constant,
            guard_width,
        )
        return out.value
    c = scale_constant(scaling) if include_scale_constant else 0.0
    tape = ad._tape_of(dp_hat, ddp_dt, lnA, E_over_RT)
    dp_hat = tape._lift(dp_hat)
    log_dp = ad.soft_log(dp_hat, guard_width)
    rate_terms = (lnA - E_over_RT) + 2.0 * log_dp + c
    if form == LOG_EXACT:
        return rate_terms - ad.soft_log(-ddp_dt, guard_width)
    if form == LOG_LITERAL:
        return ddp_dt * ad.exp(-log_dp) + rate_terms
    raise ValueError(f"unknown residual form {form!r}")


def loss_terms(y_hat, dy_hat, y, lnA, E_over_RT, scaling=None, form=LOG_EXACT, include_scale_constant=True):
    """``(mse_data, mse_ode, total)`` from network outputs and their slopes.

    Works on tape nodes or plain arrays, like :func:`residual`.
    """
    f = residual(y_hat, dy_hat, lnA, E_over_RT, scaling, form, include_scale_constant)
    if isinstance(f, Var):
        mse_data = ad.mean(ad.square(y_hat - y))
        mse_ode = ad.mean(ad.square(f))
    else:
        mse_data = np.mean((np.asarray(y_hat) - np.asarray(y)) ** 2)
        mse_ode = np.mean(f**2)
    return mse_data, mse_ode, mse_data + mse_ode


def _loss_graph(tape, mlp, params, lnA, eort, tau, y, scaling, cfg):
    y_hat, dy_hat = ad.forward_with_tangent(mlp, tau, tape, params)
    mse_data, mse_ode, total = loss_terms(
        y_hat, dy_hat, y, lnA, eort, scaling, cfg.residual_form, cfg.include_scale_constant
    )
    n_bad = int(np.sum(dy_hat.value >= 0))
    return mse_data, mse_ode, total, n_bad


def loss(batch: TimeSeries, mlp: Mlp, lnA: float, E_over_RT: float, cfg: EkenstamInverseConfig, scaling: ScalingSpec):
    """``(mse_data, mse_ode, total)`` on an already-scaled batch.

    The residual is collocated at the data times.
    """
    if batch.units == PHYSICAL:
        raise ValueError("loss expects a scaled batch")
    tape = Tape()
    tau = batch.times[:, None]
    y = batch.dp[:, None]
    mse_data, mse_ode, total, _ = _loss_graph(
        tape, mlp, None, tape.variable(lnA), tape.variable(E_over_RT), tau, y, scaling, cfg
    )
    return float(mse_data.value), float(mse_ode.value), float(total.value)


def train(series: TimeSeries, cfg: EkenstamInverseConfig | None = None, mlp: Mlp | None = None) -> EkenstamFit:
    """Jointly fit the network and the two scaled Arrhenius parameters."""
    cfg = cfg or EkenstamInverseConfig()
    if len(series) < 2:
        raise ValueError("need at least two data points")
    if series.units != PHYSICAL:
        raise ValueError("train expects a physical-unit series")
    scaling = cfg.scaling_for(series)
    scaled = scale(series, scaling)
    tau = scaled.times[:, None]
    y = scaled.dp[:, None]

    if mlp is None:
        mlp = Mlp.glorot(cfg.layer_widths(), cfg.activation, rng=portable_rng(cfg.seed))
    params = mlp.parameters() + [np.array(cfg.init_lnA), np.array(cfg.init_E_over_RT)]
    state = AdamState.for_params(params, learning_rate=cfg.learning_rate)
    losses = np.empty((cfg.epochs, 2))
    traj = np.empty((cfg.epochs, 2))
    n_bad = 0
    for epoch in range(cfg.epochs):
        tape = Tape()
        leaves = [tape.variable(p) for p in params]
        mse_data, mse_ode, total, n_bad = _loss_graph(
            tape, mlp, leaves[:-2], leaves[-2], leaves[-1], tau, y, scaling, cfg
        )
        if not np.isfinite(total.value):
            raise TrainingDivergenceError(
                f"non-finite loss at epoch {epoch}", epoch=epoch, last_params=params
            )
        grads = ad.gradient(tape, total, leaves)
        try:
            params = ad.adam_step(state, params, grads)
        except TrainingDivergenceError as exc:
            exc.epoch, exc.last_params = epoch, params
            raise
        losses[epoch] = mse_data.value, mse_ode.value
        traj[epoch] = params[-2], params[-1]

    mlp.set_parameters(params[:-2])
    lnA, eort = float(params[-2]), float(params[-1])
    pred = mlp.predict(tau)[:, 0] * scaling.dp_scale
    arr = ArrheniusParams.from_scaled(lnA, eort, cfg.temperature, cfg.gas_constant)
    return EkenstamFit(
        lnA_hat=lnA,
        E_over_RT_hat=eort,
        A_hat=arr.A,
        E_hat=arr.E,
        loss_history=losses,
        param_trajectory=traj,
        dp_prediction=TimeSeries(series.times, np.maximum(pred, POSITIVITY_GUARD), units=PHYSICAL),
        mlp=mlp,
        scaling=scaling,
        config=cfg,
        non_monotone_points=n_bad,
        train_series=series,
    )


def fit_rate_parameters(dp_hat, ddp_hat, scaling, cfg: EkenstamInverseConfig | None = None, steps=20_000):
    """Optimise only ``(ln A, E/RT)`` against fixed network outputs.

    Returns the parameter trajectory, shape ``(steps, 2)``.
    """
    cfg = cfg or EkenstamInverseConfig()
    params = [np.array(cfg.init_lnA), np.array(cfg.init_E_over_RT)]
    state = AdamState.for_params(params, learning_rate=cfg.learning_rate)
    traj = np.empty((steps, 2))
    for i in range(steps):
        tape = Tape()
        lnA, eort = tape.variable(params[0]), tape.variable(params[1])
        f = residual(
            tape.variable(dp_hat), tape.variable(ddp_hat), lnA, eort, scaling, cfg.residual_form,
            cfg.include_scale_constant,
        )
        grads = ad.gradient(tape, ad.mean(ad.square(f)), [lnA, eort])
        params = ad.adam_step(state, params, grads)
        traj[i] = params
    return traj


def relative_l2(pred, ref) -> float:
    pred, ref = np.asarray(pred, dtype=np.float64), np.asarray(ref, dtype=np.float64)
    return float(np.linalg.norm(pred - ref) / np.linalg.norm(ref))


def percent_error(estimate, truth) -> float:
    return 100.0 * abs(estimate - truth) / abs(truth)


def metrics(fit: EkenstamFit, truth: EkenstamModel | None = None) -> dict:
    """Table-style summary of a fit.

    Without ``truth`` the DP error is measured against the training data and
    the parameter errors are ``None``.
    """
    times = fit.dp_prediction.times
    if truth is not None:
        ref = ekenstam_closed_form(truth, times)
    elif fit.train_series is not None:
        ref = fit.train_series.dp
    else:
        ref = None
    out = {
        "rel_l2_dp": relative_l2(fit.dp_prediction.dp, ref) if ref is not None else None,
        "error_lnA_pct": None,
        "error_E_over_RT_pct": None,
        "lnA": fit.lnA_hat,
        "E_over_RT": fit.E_over_RT_hat,
        "A": fit.A_hat,
        "E": fit.E_hat,
    }
    if truth is not None:
        out["error_lnA_pct"] = percent_error(fit.lnA_hat, truth.params.ln_A)
        out["error_E_over_RT_pct"] = percent_error(fit.E_over_RT_hat, truth.params.E_over_RT)
    return out


class EkenstamPINN(RegressorMixin, BaseEstimator):
    """Estimator wrapper: ``fit(t_hours, dp)`` learns DP(t), ln A and E/RT.

    Parameters mirror :class:`EkenstamInverseConfig`.
    """

    def __init__(
        self,
        hidden_layers=(50, 50, 50),
        activation="sigmoid",
        epochs=50_000,
        learning_rate=1e-3,
        init_lnA=19.0,
        init_E_over_RT=38.0,
        residual_form=LOG_EXACT,
        dp_scale=100.0,
        time_scale=None,
        include_scale_constant=True,
        temperature=352.0,
        gas_constant=GAS_CONSTANT,
        random_state=0,
    ):
        self.hidden_layers = hidden_layers
        self.activation = activation
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.init_lnA = init_lnA
        self.init_E_over_RT = init_E_over_RT
        self.residual_form = residual_form
        self.dp_scale = dp_scale
        self.time_scale = time_scale
        self.include_scale_constant = include_scale_constant
        self.temperature = temperature
        self.gas_constant = gas_constant
        self.random_state = random_state

    def _config(self) -> EkenstamInverseConfig:
        params = self.get_params()
        params["seed"] = int(params.pop("random_state") or 0)
        return EkenstamInverseConfig(**params)

    def fit(self, X, y):
        X, y = check_X_y(X, y, ensure_min_samples=2, y_numeric=True)
        if X.shape[1] != 1:
            raise ValueError("X must hold a single time column (hours)")
        order = np.argsort(X[:, 0])
        series = TimeSeries(X[order, 0], y[order])
        self.fit_ = train(series, self._config())
        self.lnA_ = self.fit_.lnA_hat
        self.E_over_RT_ = self.fit_.E_over_RT_hat
        self.A_ = self.fit_.A_hat
        self.E_ = self.fit_.E_hat
        self.loss_history_ = self.fit_.loss_history
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "fit_")
        X = check_array(X)
        if X.shape[1] != 1:
            raise ValueError("X must hold a single time column (hours)")
        tau = X / self.fit_.scaling.time_scale
        return self.fit_.mlp.predict(tau)[:, 0] * self.fit_.scaling.dp_scale

    def metrics(self, truth: EkenstamModel | None = None) -> dict:
        check_is_fitted(self, "fit_")
        return metrics(self.fit_, truth)


def config_dict(cfg: EkenstamInverseConfig) -> dict:
    d = asdict(cfg)
    d["hidden_layers"] = list(cfg.hidden_layers)
    return d
