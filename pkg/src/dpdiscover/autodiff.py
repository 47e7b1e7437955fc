"""Reverse-mode automatic differentiation on an append-only tape.

Values are numpy arrays; a scalar is a 0-d array. Every operation appends one
node holding its operand indices and a vector-Jacobian product closure, so a
node's operands always precede it and a backward sweep is a single reverse
pass over the tape.

Only first-order reverse mode is provided. Time derivatives of a network
output that must themselves be differentiated during training are built with
:func:`forward_with_tangent`, which pushes a forward tangent through the
layers as ordinary tape operations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tape",
    "Var",
    "InputDimensionError",
    "TrainingDivergenceError",
    "Mlp",
    "AdamState",
    "forward",
    "forward_with_tangent",
    "gradient",
    "adam_step",
    "sigmoid",
    "tanh",
    "log",
    "exp",
    "square",
    "clip_min",
    "soft_log",
    "mean",
    "sum",
    "column",
    "concat_columns",
    "linear",
]


class InputDimensionError(ValueError):
    """Network input does not match the first layer width."""


class TrainingDivergenceError(FloatingPointError):
    """A gradient or loss became non-finite during optimisation."""

    def __init__(self, message, index=None, epoch=None, last_params=None):
        super().__init__(message)
        self.index = index
        self.epoch = epoch
        self.last_params = last_params


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tape:
    """Append-only record of operations.

    ``nodes[i]`` is ``(kind, operand_indices, vjp)`` and ``values[i]`` the
    value computed by node ``i``. Leaves have no operands and ``vjp=None``.
    """

    def __init__(self):
        self.nodes: list[tuple[str, tuple[int, ...], Callable | None]] = []
        self.values: list[np.ndarray] = []

    def __len__(self):
        return len(self.nodes)

    def variable(self, value) -> "Var":
        return self._push("leaf", (), None, np.asarray(value, dtype=np.float64))

    def _push(self, kind, operands, vjp, value):
        self.nodes.append((kind, operands, vjp))
        self.values.append(value)
        return Var(self, len(self.nodes) - 1)

    def _lift(self, x):
        if isinstance(x, Var):
            if x.tape is not self:
                raise ValueError("operands belong to different tapes")
            return x
        return self._push("const", (), None, np.asarray(x, dtype=np.float64))


class Var:
    """Handle to a node on a :class:`Tape`."""

    __slots__ = ("tape", "index")
    __array_priority__ = 100

    def __init__(self, tape: Tape, index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.values[self.index]

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(index={self.index}, shape={self.shape})"

    def __add__(self, other):
        return _binary("add", self, other)

    def __radd__(self, other):
        return _binary("add", other, self)

    def __sub__(self, other):
        return _binary("sub", self, other)

    def __rsub__(self, other):
        return _binary("sub", other, self)

    def __mul__(self, other):
        return _binary("mul", self, other)

    def __rmul__(self, other):
        return _binary("mul", other, self)

    def __truediv__(self, other):
        return _binary("div", self, other)

    def __rtruediv__(self, other):
        return _binary("div", other, self)

    def __neg__(self):
        return _unary("neg", self, lambda x: -x, lambda g, x, y: -g)

    def __pow__(self, p):
        if isinstance(p, Var):
            raise TypeError("only constant exponents are supported")
        p = float(p)
        return _unary(
            "pow", self, lambda x: x**p, lambda g, x, y: g * p * x ** (p - 1.0)
        )


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TypeError("at least one operand must be a Var")


def _binary(kind, a, b):
    tape = _tape_of(a, b)
    a = tape._lift(a)
    b = tape._lift(b)
    x, y = a.value, b.value
    if kind == "add":
        out = x + y
        vjp = lambda g: (_unbroadcast(g, x.shape), _unbroadcast(g, y.shape))
    elif kind == "sub":
        out = x - y
        vjp = lambda g: (_unbroadcast(g, x.shape), _unbroadcast(-g, y.shape))
    elif kind == "mul":
        out = x * y
        vjp = lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape))
    elif kind == "div":
        out = x / y
        vjp = lambda g: (
            _unbroadcast(g / y, x.shape),
            _unbroadcast(-g * out / y, y.shape),
        )
    else:  # pragma: no cover
        raise ValueError(kind)
    return tape._push(kind, (a.index, b.index), vjp, out)


def _unary(kind, a, fn, dfn):
    x = a.value
    y = fn(x)
    return a.tape._push(kind, (a.index,), lambda g: (dfn(g, x, y),), y)


def sigmoid(a: Var) -> Var:
    # tanh form is overflow-free for large |x|
    return _unary(
        "sigmoid", a, lambda x: 0.5 * (1.0 + np.tanh(0.5 * x)), lambda g, x, y: g * y * (1.0 - y)
    )


def tanh(a: Var) -> Var:
    return _unary("tanh", a, np.tanh, lambda g, x, y: g * (1.0 - y * y))


def log(a: Var) -> Var:
    return _unary("log", a, np.log, lambda g, x, y: g / x)


def exp(a: Var) -> Var:
    return _unary("exp", a, np.exp, lambda g, x, y: g * y)


def square(a: Var) -> Var:
    return _unary("square", a, np.square, lambda g, x, y: 2.0 * g * x)


def clip_min(a: Var, floor: float) -> Var:
    """``max(a, floor)``; the gradient is zero where the floor is active."""
    return _unary(
        "clip_min", a, lambda x: np.maximum(x, floor), lambda g, x, y: g * (x > floor)
    )


def _log_softplus(z):
    # log(log1p(exp(z))) without overflow or log(0)
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    big = z > 30.0
    small = z < -30.0
    mid = ~(big | small)
    out[big] = np.log(z[big] + np.log1p(np.exp(-z[big])))
    out[small] = z[small]
    out[mid] = np.log(np.log1p(np.exp(z[mid])))
    return out


def _dlog_softplus(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.ones_like(z)
    big = z > 30.0
    mid = ~(big | (z < -30.0))
    out[big] = 1.0 / (z[big] + np.log1p(np.exp(-z[big])))
    zm = z[mid]
    # sigmoid / softplus; the tanh form of sigmoid loses digits for z << 0
    out[mid] = np.exp(-np.logaddexp(0.0, -zm)) / np.logaddexp(0.0, zm)
    return out


def soft_log(a: Var, width: float) -> Var:
    """``log(width * softplus(a / width))``.

    Equals ``log(a)`` to rounding once ``a > 40 * width``; stays finite with a
    slope of ``1 / width`` for non-positive ``a``.
    """
    lw = np.log(width)
    return _unary(
        "soft_log",
        a,
        lambda x: lw + _log_softplus(x / width),
        lambda g, x, y: g * _dlog_softplus(x / width) / width,
    )


def mean(a: Var) -> Var:
    n = a.value.size
    shape = a.value.shape
    return a.tape._push(
        "mean",
        (a.index,),
        lambda g: (np.broadcast_to(g / n, shape),),
        np.asarray(a.value.mean()),
    )


def sum(a: Var) -> Var:  # noqa: A001
    shape = a.value.shape
    return a.tape._push(
        "sum", (a.index,), lambda g: (np.broadcast_to(g, shape),), np.asarray(a.value.sum())
    )


def column(a: Var, j: int) -> Var:
    """Column ``j`` of a 2-d node, kept 2-d as shape ``(n, 1)``."""
    x = a.value
    out = x[:, j : j + 1]

    def vjp(g):
        full = np.zeros_like(x)
        full[:, j : j + 1] = g
        return (full,)

    return a.tape._push("column", (a.index,), vjp, out)


def concat_columns(parts: Sequence[Var]) -> Var:
    tape = _tape_of(*parts)
    parts = [tape._lift(p) for p in parts]
    widths = [p.value.shape[1] for p in parts]
    out = np.concatenate([p.value for p in parts], axis=1)
    edges = np.cumsum([0] + widths)

    def vjp(g):
        return tuple(g[:, edges[i] : edges[i + 1]] for i in range(len(parts)))

    return tape._push("concat", tuple(p.index for p in parts), vjp, out)


def linear(x: Var, w: Var, b: Var | None = None) -> Var:
    """``x @ w.T + b`` with ``w`` of shape ``(out, in)``."""
    tape = _tape_of(x, w, b) if b is not None else _tape_of(x, w)
    x = tape._lift(x)
    w = tape._lift(w)
    xv, wv = x.value, w.value
    out = xv @ wv.T
    if b is None:
        vjp = lambda g: (g @ wv, g.T @ xv)
        return tape._push("linear", (x.index, w.index), vjp, out)
    b = tape._lift(b)
    out += b.value
    vjp = lambda g: (g @ wv, g.T @ xv, g.sum(axis=0))
    return tape._push("linear", (x.index, w.index, b.index), vjp, out)


def _act_with_tangent(kind, z: Var, dz: Var):
    """Activation of ``z`` and its directional derivative ``act'(z) * dz``.

    Emitted as two fused nodes so the tangent stays differentiable with
    respect to the weights that produced ``z`` and ``dz``.
    """
    tape = z.tape
    zv, dzv = z.value, dz.value
    if kind == "tanh":
        a = np.tanh(zv)
        slope = 1.0 - a * a
    elif kind == "sigmoid":
        a = 0.5 * (1.0 + np.tanh(0.5 * zv))
        slope = a * (1.0 - a)
    else:
        raise ValueError(f"unknown activation {kind!r}")

    def tangent_vjp(g):
        gd = g * dzv
        # d slope / dz: -2 a slope (tanh), slope (1 - 2a) (sigmoid)
        gd *= -2.0 * a * slope if kind == "tanh" else slope * (1.0 - 2.0 * a)
        return gd, g * slope

    a_node = tape._push(kind, (z.index,), lambda g: (g * slope,), a)
    da_node = tape._push(kind + "_tangent", (z.index, dz.index), tangent_vjp, slope * dzv)
    return a_node, da_node


_ACTIVATIONS = {"tanh": tanh, "sigmoid": sigmoid}


@dataclass
class Mlp:
    """Dense feed-forward network.

    ``weights[l]`` has shape ``(layer_widths[l + 1], layer_widths[l])``.
    Hidden layers apply ``activation``; the output layer is linear.
    """

    layer_widths: tuple[int, ...]
    activation: str = "tanh"
    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.layer_widths = tuple(int(w) for w in self.layer_widths)
        if len(self.layer_widths) < 2 or min(self.layer_widths) < 1:
            raise ValueError(f"invalid layer widths {self.layer_widths}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {sorted(_ACTIVATIONS)}")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_widths[l + 1], self.layer_widths[l])
            if w.shape != expected or b.shape != (expected[0],):
                raise ValueError(f"layer {l}: weight {w.shape}, bias {b.shape}, expected {expected}")

    @classmethod
    def glorot(cls, layer_widths, activation="tanh", rng=None) -> "Mlp":
        """Xavier/Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(rng)
        widths = tuple(int(w) for w in layer_widths)
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(widths, activation, weights, biases)

    @property
    def n_layers(self):
        return len(self.layer_widths) - 1

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def set_parameters(self, params: Sequence[np.ndarray]):
        params = list(params)
        self.weights = [np.array(p, dtype=np.float64) for p in params[0::2]]
        self.biases = [np.array(p, dtype=np.float64) for p in params[1::2]]

    def n_parameters(self) -> int:
        return int(np.sum([p.size for p in self.parameters()]))

    def predict(self, inputs) -> np.ndarray:
        """Plain numpy evaluation, no tape."""
        x = _check_inputs(self, np.asarray(inputs, dtype=np.float64))
        act = np.tanh if self.activation == "tanh" else lambda z: 0.5 * (1 + np.tanh(0.5 * z))
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = x @ w.T + b
            if l < self.n_layers - 1:
                x = act(x)
        return x


def _check_inputs(mlp, x):
    squeeze = x.ndim == 1
    x2 = x.reshape(1, -1) if squeeze else x
    if x2.ndim != 2 or x2.shape[1] != mlp.layer_widths[0]:
        raise InputDimensionError(
            f"expected inputs with {mlp.layer_widths[0]} features, got shape {x.shape}"
        )
    return x2


def _bind(mlp, tape, params):
    if params is None:
        return [tape.variable(p) for p in mlp.parameters()]
    if len(params) != 2 * mlp.n_layers:
        raise ValueError("parameter list does not match the network")
    return list(params)


def forward(mlp: Mlp, inputs, tape: Tape, params: Sequence[Var] | None = None) -> Var:
    """Evaluate ``mlp`` on the tape.

    ``inputs`` may be a Var or an array of shape ``(in,)`` or ``(n, in)``;
    arrays are recorded as leaves so they can be differentiated against.
    ``params`` are tape leaves for the weights (created when omitted).
    """
    x = inputs if isinstance(inputs, Var) else tape.variable(inputs)
    if x.value.ndim == 1:
        _check_inputs(mlp, x.value)
        x = _reshape_row(x)
    else:
        _check_inputs(mlp, x.value)
    p = _bind(mlp, tape, params)
    act = _ACTIVATIONS[mlp.activation]
    for l in range(mlp.n_layers):
        x = linear(x, p[2 * l], p[2 * l + 1])
        if l < mlp.n_layers - 1:
            x = act(x)
    return x


def _reshape_row(x: Var) -> Var:
    shape = x.value.shape
    return x.tape._push("reshape", (x.index,), lambda g: (g.reshape(shape),), x.value.reshape(1, -1))


def forward_with_tangent(
    mlp: Mlp,
    inputs,
    tape: Tape,
    params: Sequence[Var] | None = None,
    direction: int = 0,
) -> tuple[Var, Var]:
    """Network output and its derivative along input coordinate ``direction``.

    Both returned nodes are differentiable with respect to ``params``, which
    is what a residual containing ``d output / d t`` needs during training.
    """
    x = inputs if isinstance(inputs, Var) else tape.variable(inputs)
    _check_inputs(mlp, x.value)
    if x.value.ndim == 1:
        x = _reshape_row(x)
    n = x.value.shape[0]
    seed = np.zeros((n, mlp.layer_widths[0]))
    seed[:, direction] = 1.0
    p = _bind(mlp, tape, params)
    dx = tape._push("const", (), None, seed)
    for l in range(mlp.n_layers):
        w, b = p[2 * l], p[2 * l + 1]
        z = linear(x, w, b)
        dz = linear(dx, w)
        if l < mlp.n_layers - 1:
            x, dx = _act_with_tangent(mlp.activation, z, dz)
        else:
            x, dx = z, dz
    return x, dx


def gradient(tape: Tape, output: Var | int, wrt: Sequence[Var | int]) -> list[np.ndarray]:
    """Adjoints of a scalar ``output`` with respect to the nodes in ``wrt``."""
    out = output.index if isinstance(output, Var) else int(output)
    if tape.values[out].size != 1:
        raise ValueError(
            f"gradient requires a scalar output, node {out} has shape {tape.values[out].shape}"
        )
    targets = [w.index if isinstance(w, Var) else int(w) for w in wrt]
    lowest = min(targets) if targets else out
    adj: list[np.ndarray | None] = [None] * (out + 1)
    adj[out] = np.ones_like(tape.values[out])
    for i in range(out, lowest - 1, -1):
        g = adj[i]
        if g is None:
            continue
        _, operands, vjp = tape.nodes[i]
        if vjp is None:
            continue
        for j, gj in zip(operands, vjp(g)):
            # adjoints are never updated in place, so sharing arrays is safe
            adj[j] = gj if adj[j] is None else adj[j] + gj
    result = []
    for t in targets:
        g = adj[t] if t <= out else None
        result.append(np.zeros_like(tape.values[t]) if g is None else g.reshape(tape.values[t].shape))
    return result


@dataclass
class AdamState:
    """Moment estimates for one parameter set."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: list[np.ndarray] | None = None
    second_moment: list[np.ndarray] | None = None

    @classmethod
    def for_params(cls, params, **kwargs) -> "AdamState":
        state = cls(**kwargs)
        state.first_moment = [np.zeros_like(np.asarray(p, dtype=np.float64)) for p in params]
        state.second_moment = [np.zeros_like(np.asarray(p, dtype=np.float64)) for p in params]
        return state


def adam_step(state: AdamState, params, grads) -> list[np.ndarray]:
    """One bias-corrected Adam update; returns new parameter arrays.

    ``params`` and ``grads`` are matching sequences of arrays. A bare array is
    treated as a single parameter block.
    """
    single = isinstance(params, np.ndarray) or np.isscalar(params)
    if single:
        params, grads = [params], [grads]
    params = [np.asarray(p, dtype=np.float64) for p in params]
    grads = [np.asarray(g, dtype=np.float64) for g in grads]
    if state.first_moment is None:
        state.first_moment = [np.zeros_like(p) for p in params]
        state.second_moment = [np.zeros_like(p) for p in params]
    if len(grads) != len(params) or len(params) != len(state.first_moment):
        raise ValueError("params, grads and optimizer state differ in length")
    offset = 0
    for p, g, m in zip(params, grads, state.first_moment):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, moment {m.shape}")
        bad = np.flatnonzero(~np.isfinite(g))
        if bad.size:
            raise TrainingDivergenceError(
                f"non-finite gradient at flat index {offset + int(bad[0])}",
                index=offset + int(bad[0]),
            )
        offset += g.size

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    out = []
    for k, (p, g) in enumerate(zip(params, grads)):
        m = state.first_moment[k] = b1 * state.first_moment[k] + (1.0 - b1) * g
        v = state.second_moment[k] = b2 * state.second_moment[k] + (1.0 - b2) * g * g
        out.append(p - state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon))
    return out[0] if single else out
