"""Joint discovery of an unknown right-hand side and ``k2`` in the Emsley system.

A solution network maps scaled time to scaled ``(DP, k1)``. A second network
takes ``(DP, k1, t)`` and stands in for the unknown ``h`` in
``dDP/dt = h(DP, k1, t)``, while ``dk1/dt = -k2 k1`` is kept with ``k2``
trainable. In scaled units (``u = DP/1000``, ``v = k1/1e-7``,
``tau = t / 350 h``) the true system reads ``du/dtau = -0.035 v u^2`` and
``dv/dtau = -0.147 v``.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import autodiff as ad
from .autodiff import AdamState, Mlp, Tape, TrainingDivergenceError, Var
from .data import PHYSICAL, ScalingSpec, TimeSeries, equispaced_hours, portable_rng, scale
from .kinetics import REFERENCE_EMSLEY, EmsleyParams, emsley_closed_form
from .pinn_ekenstam import relative_l2, percent_error

logger = logging.getLogger(__name__)

H_SAMPLE_COLUMNS = ("dp_scaled", "k1_scaled", "t_scaled", "h_pred")


@dataclass
class EmsleyInverseConfig:
    solution_hidden: tuple[int, ...] = (35,) * 13
    function_hidden: tuple[int, ...] = (53,) * 12
    activation: str = "tanh"
    epochs: int = 2000
    learning_rate: float = 1e-3
    init_k2_scaled: float = 2.0
    n_train: int = 1000
    n_collocation: int = 10_000
    n_test: int = 100
    horizon_hours: float = 3500.0
    scaled_horizon: float = 10.0
    dp_scale: float = 1000.0
    k1_scale: float = 1e-7
    collocation: str = "random"
    collocation_batch: int | None = 1000  # None: all collocation points every step
    seed: int = 0

    def __post_init__(self):
        if self.collocation_batch is not None and self.collocation_batch < 1:
            raise ValueError("collocation_batch must be positive")
        self.solution_hidden = tuple(int(w) for w in self.solution_hidden)
        self.function_hidden = tuple(int(w) for w in self.function_hidden)
        if self.epochs <= 0:
            raise ValueError("epochs must be positive")
        if self.collocation not in ("random", "equispaced"):
            raise ValueError(f"unknown collocation scheme {self.collocation!r}")
        if min(self.n_train, self.n_collocation, self.n_test) < 1:
            raise ValueError("point counts must be positive")

    @property
    def scaling(self) -> ScalingSpec:
        return ScalingSpec.emsley(self.horizon_hours, self.scaled_horizon, self.dp_scale, self.k1_scale)


@dataclass
class EmsleyFit:
    k2_scaled_hat: float
    k2_hat: float
    test_prediction: TimeSeries  # physical dp and k1 on the test grid
    h_samples: np.ndarray  # (n_test, 4), columns H_SAMPLE_COLUMNS
    loss_history: np.ndarray  # (epochs, 3): mse_data, mse_ic, mse_ode
    k2_trajectory: np.ndarray  # scaled k2 after each update
    solution_net: Mlp
    function_net: Mlp
    scaling: ScalingSpec
    config: EmsleyInverseConfig
    params: EmsleyParams | None = field(default=None, repr=False)

    @property
    def dp_pred(self) -> np.ndarray:
        return self.test_prediction.dp

    @property
    def k1_pred(self) -> np.ndarray:
        return self.test_prediction.k1


def rhs_coefficient(scaling: ScalingSpec) -> float:
    """Coefficient ``c`` of the scaled DP equation ``du/dtau = -c v u^2``."""
    return scaling.k1_scale * scaling.dp_scale * scaling.time_scale


def true_scaled_rhs(u, v, scaling: ScalingSpec):
    return -rhs_coefficient(scaling) * np.asarray(v) * np.asarray(u) ** 2


def scaled_k2(k2: float, scaling: ScalingSpec) -> float:
    return k2 * scaling.time_scale


def residuals(du_dt, dv_dt, v, h, k2_scaled):
    """``g1 = du/dt - h`` and ``g2 = dv/dt + k2 v`` in scaled units."""
    if not any(isinstance(x, Var) for x in (du_dt, dv_dt, v, h, k2_scaled)):
        du_dt, dv_dt, v, h = (np.asarray(x, dtype=np.float64) for x in (du_dt, dv_dt, v, h))
        return du_dt - h, dv_dt + k2_scaled * v
    return du_dt - h, dv_dt + k2_scaled * v


def loss_terms(u_hat, u, u0_hat, u0, du_coll, v_coll, h_coll, k2_scaled):
    """``(mse_data, mse_ic, mse_ode, total)`` from model outputs.

    ``u_hat``/``u`` are ``(N, 2)`` stacks of scaled (DP, k1) and
    ``u0_hat``/``u0`` the initial state. At the collocation points,
    ``du_coll`` is ``(N_g, 2)`` time derivatives of the solution, ``v_coll``
    the solution's k1 and ``h_coll`` the function network output. Each MSE
    averages over the concatenated columns.

    Accepts tape nodes (returns nodes) or arrays (returns floats).
    """
    args = (u_hat, u, u0_hat, u0, du_coll, v_coll, h_coll, k2_scaled)
    if not any(isinstance(x, Var) for x in args):
        tape = Tape()
        arrays = [np.asarray(x, dtype=np.float64) for x in args]
        arrays[:7] = [np.atleast_2d(a) if a.ndim < 2 else a for a in arrays[:7]]
        arrays[5] = arrays[5].reshape(-1, 1)
        arrays[6] = arrays[6].reshape(-1, 1)
        out = loss_terms(*(tape.variable(a) for a in arrays))
        return tuple(float(o.value) for o in out)
    if np.shape(u.value if isinstance(u, Var) else u)[-1] != 2:
        raise ValueError("training targets need both DP and k1 columns")
    mse_data = ad.mean(ad.square(u_hat - u))
    mse_ic = ad.mean(ad.square(u0_hat - u0))
    g1, g2 = residuals(ad.column(du_coll, 0), ad.column(du_coll, 1), v_coll, h_coll, k2_scaled)
    mse_ode = ad.mean(ad.square(ad.concat_columns([g1, g2])))
    return mse_data, mse_ic, mse_ode, mse_data + mse_ic + mse_ode


def _loss_graph(tape, sol, fn, sol_params, fn_params, k2, tau_train, u_train, u0, tau_coll):
    u_hat = ad.forward(sol, tau_train, tape, sol_params)
    u0_hat = ad.forward(sol, np.zeros((1, 1)), tape, sol_params)
    uc, duc = ad.forward_with_tangent(sol, tau_coll, tape, sol_params)
    h = ad.forward(fn, ad.concat_columns([uc, tape.variable(tau_coll)]), tape, fn_params)
    return loss_terms(u_hat, u_train, u0_hat, u0, duc, ad.column(uc, 1), h, k2)


def loss(train_scaled: TimeSeries, collocation, sol: Mlp, fn: Mlp, k2_scaled: float):
    """Loss terms of a model state on a scaled training series."""
    if train_scaled.k1 is None:
        raise ValueError("training series has no k1 column")
    if train_scaled.units == PHYSICAL:
        raise ValueError("loss expects a scaled series")
    tape = Tape()
    u = np.column_stack([train_scaled.dp, train_scaled.k1])
    out = _loss_graph(
        tape, sol, fn, None, None, tape.variable(k2_scaled), train_scaled.times[:, None], u,
        u[:1], np.reshape(collocation, (-1, 1)),
    )
    return tuple(float(o.value) for o in out)


def collocation_points(cfg: EmsleyInverseConfig, rng=None) -> np.ndarray:
    if cfg.collocation == "equispaced":
        return np.linspace(0.0, cfg.scaled_horizon, cfg.n_collocation)
    rng = rng if rng is not None else portable_rng(cfg.seed + 1)
    return rng.uniform(0.0, cfg.scaled_horizon, cfg.n_collocation)


def fit_series(series: TimeSeries, cfg: EmsleyInverseConfig | None = None, params: EmsleyParams | None = None) -> EmsleyFit:
    """Train both networks and ``k2`` on a physical (DP, k1) series."""
    cfg = cfg or EmsleyInverseConfig()
    if series.k1 is None:
        raise ValueError("training series has no k1 column")
    if series.units != PHYSICAL:
        raise ValueError("fit_series expects a physical-unit series")
    scaling = cfg.scaling
    scaled = scale(series, scaling)
    tau_train = scaled.times[:, None]
    u_train = np.column_stack([scaled.dp, scaled.k1])
    u0 = u_train[:1]
    if scaled.times[0] != 0.0:
        raise ValueError("the training series must start at t=0 for the initial-condition loss")

    rng = portable_rng(cfg.seed)
    sol = Mlp.glorot((1,) + cfg.solution_hidden + (2,), cfg.activation, rng=rng)
    fn = Mlp.glorot((3,) + cfg.function_hidden + (1,), cfg.activation, rng=rng)
    tau_coll = collocation_points(cfg, rng)[:, None]

    n_coll = tau_coll.shape[0]
    batch = n_coll if cfg.collocation_batch is None else min(cfg.collocation_batch, n_coll)
    n_sol = len(sol.parameters())
    theta = sol.parameters() + fn.parameters() + [np.array(cfg.init_k2_scaled)]
    state = AdamState.for_params(theta, learning_rate=cfg.learning_rate)
    losses = np.zeros((cfg.epochs, 3))
    k2_traj = np.empty(cfg.epochs)
    for epoch in range(cfg.epochs):
        # one Adam step per collocation batch, full training data each step
        order = rng.permutation(n_coll) if batch < n_coll else np.arange(n_coll)
        n_steps = 0
        for start in range(0, n_coll, batch):
            idx = order[start : start + batch]
            tape = Tape()
            leaves = [tape.variable(p) for p in theta]
            mse_data, mse_ic, mse_ode, total = _loss_graph(
                tape, sol, fn, leaves[:n_sol], leaves[n_sol:-1], leaves[-1], tau_train, u_train, u0,
                tau_coll[idx],
            )
            if not np.isfinite(total.value):
                raise TrainingDivergenceError(
                    f"non-finite loss at epoch {epoch}", epoch=epoch, last_params=theta
                )
            grads = ad.gradient(tape, total, leaves)
            try:
                theta = ad.adam_step(state, theta, grads)
            except TrainingDivergenceError as exc:
                exc.epoch, exc.last_params = epoch, theta
                raise
            losses[epoch] += mse_data.value, mse_ic.value, mse_ode.value
            n_steps += 1
        losses[epoch] /= n_steps
        k2_traj[epoch] = theta[-1]
        if epoch % 50 == 0:
            logger.info("epoch %d loss %.3e k2 %.5f", epoch, losses[epoch].sum(), float(theta[-1]))

    sol.set_parameters(theta[:n_sol])
    fn.set_parameters(theta[n_sol:-1])
    k2s = float(theta[-1])

    t_test = equispaced_hours(cfg.n_test, cfg.horizon_hours)
    tau_test = (t_test / scaling.time_scale)[:, None]
    u_test = sol.predict(tau_test)
    h_test = fn.predict(np.column_stack([u_test, tau_test]))[:, 0]
    h_samples = np.column_stack([u_test, tau_test[:, 0], h_test])
    pred = TimeSeries(
        t_test,
        np.maximum(u_test[:, 0] * scaling.dp_scale, 1e-12),
        k1=u_test[:, 1] * scaling.k1_scale,
    )
    return EmsleyFit(
        k2_scaled_hat=k2s,
        k2_hat=k2s / scaling.time_scale,
        test_prediction=pred,
        h_samples=h_samples,
        loss_history=losses,
        k2_trajectory=k2_traj,
        solution_net=sol,
        function_net=fn,
        scaling=scaling,
        config=cfg,
        params=params,
    )


def training_series(cfg: EmsleyInverseConfig, params: EmsleyParams) -> TimeSeries:
    t = equispaced_hours(cfg.n_train, cfg.horizon_hours)
    dp, k1 = emsley_closed_form(params, t)
    return TimeSeries(t, dp, k1=k1)


def train(cfg: EmsleyInverseConfig | None = None, params: EmsleyParams = REFERENCE_EMSLEY) -> EmsleyFit:
    """Simulate noise-free training data from ``params`` and fit."""
    cfg = cfg or EmsleyInverseConfig()
    return fit_series(training_series(cfg, params), cfg, params)


def extract_h_samples(fit: EmsleyFit) -> np.ndarray:
    """``(dp_scaled, k1_scaled, t_scaled, h_pred)`` rows on the test grid."""
    return fit.h_samples.copy()


def exact_h_samples(params: EmsleyParams = REFERENCE_EMSLEY, cfg: EmsleyInverseConfig | None = None) -> np.ndarray:
    """Same table built from the closed-form solution and the true rhs."""
    cfg = cfg or EmsleyInverseConfig()
    scaling = cfg.scaling
    t = equispaced_hours(cfg.n_test, cfg.horizon_hours)
    dp, k1 = emsley_closed_form(params, t)
    u, v = dp / scaling.dp_scale, k1 / scaling.k1_scale
    return np.column_stack([u, v, t / scaling.time_scale, true_scaled_rhs(u, v, scaling)])


def metrics(fit: EmsleyFit, params: EmsleyParams | None = None) -> dict:
    params = params or fit.params
    out = {
        "k2_scaled": fit.k2_scaled_hat,
        "k2": fit.k2_hat,
        "error_k2_pct": None,
        "rel_l2_dp": None,
        "rel_l2_k1": None,
        "rel_l2_h": None,
    }
    if params is None:
        return out
    dp, k1 = emsley_closed_form(params, fit.test_prediction.times)
    u, v = dp / fit.scaling.dp_scale, k1 / fit.scaling.k1_scale
    out["error_k2_pct"] = percent_error(fit.k2_scaled_hat, scaled_k2(params.k2, fit.scaling))
    out["rel_l2_dp"] = relative_l2(fit.test_prediction.dp, dp)
    out["rel_l2_k1"] = relative_l2(fit.test_prediction.k1, k1)
    out["rel_l2_h"] = relative_l2(fit.h_samples[:, 3], true_scaled_rhs(u, v, fit.scaling))
    return out


class EmsleyPINN(BaseEstimator):
    """Estimator wrapper: ``fit(t_hours, [dp, k1])`` learns the solution,
    the unknown DP right-hand side and ``k2``.
    """

    def __init__(
        self,
        solution_hidden=(35,) * 13,
        function_hidden=(53,) * 12,
        activation="tanh",
        epochs=2000,
        learning_rate=1e-3,
        init_k2_scaled=2.0,
        n_collocation=10_000,
        n_test=100,
        horizon_hours=3500.0,
        scaled_horizon=10.0,
        dp_scale=1000.0,
        k1_scale=1e-7,
        collocation="random",
        collocation_batch=1000,
        random_state=0,
    ):
        self.solution_hidden = solution_hidden
        self.function_hidden = function_hidden
        self.activation = activation
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.init_k2_scaled = init_k2_scaled
        self.n_collocation = n_collocation
        self.n_test = n_test
        self.horizon_hours = horizon_hours
        self.scaled_horizon = scaled_horizon
        self.dp_scale = dp_scale
        self.k1_scale = k1_scale
        self.collocation = collocation
        self.collocation_batch = collocation_batch
        self.random_state = random_state

    def fit(self, X, Y):
        X = check_array(X)
        Y = check_array(Y)
        if X.shape[1] != 1 or Y.shape[1] != 2 or X.shape[0] != Y.shape[0]:
            raise ValueError("expected X of shape (n, 1) hours and Y of shape (n, 2) = (dp, k1)")
        order = np.argsort(X[:, 0])
        params = self.get_params()
        params["seed"] = int(params.pop("random_state") or 0)
        cfg = EmsleyInverseConfig(n_train=X.shape[0], **params)
        series = TimeSeries(X[order, 0], Y[order, 0], k1=Y[order, 1])
        self.fit_ = fit_series(series, cfg)
        self.k2_scaled_ = self.fit_.k2_scaled_hat
        self.k2_ = self.fit_.k2_hat
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        """Physical ``(dp, k1)`` at times ``X`` (hours)."""
        check_is_fitted(self, "fit_")
        X = check_array(X)
        sc = self.fit_.scaling
        u = self.fit_.solution_net.predict(X / sc.time_scale)
        return np.column_stack([u[:, 0] * sc.dp_scale, u[:, 1] * sc.k1_scale])

    def h_samples(self, X) -> np.ndarray:
        """Scaled ``(dp, k1, t, h)`` rows at times ``X`` (hours)."""
        check_is_fitted(self, "fit_")
        X = check_array(X)
        sc = self.fit_.scaling
        tau = X / sc.time_scale
        u = self.fit_.solution_net.predict(tau)
        h = self.fit_.function_net.predict(np.column_stack([u, tau]))
        return np.column_stack([u, tau[:, 0], h[:, 0]])


def config_dict(cfg: EmsleyInverseConfig) -> dict:
    d = asdict(cfg)
    d["solution_hidden"] = list(cfg.solution_hidden)
    d["function_hidden"] = list(cfg.function_hidden)
    return d
