"""Island-model genetic programming for symbolic regression.

Expressions are trees over a small operator set. Islands evolve separately
and exchange their best individuals on a ring every few generations. A hall
of fame keeps the lowest-loss expression seen at each complexity (node
count); its lower envelope is the Pareto front, ranked with
``score = -d ln(MSE) / d complexity``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

DEFAULT_FEATURES = ("dp", "k1", "t")
BINARY_OPS = {"mul": "*", "add": "+", "sub": "-", "div": "/"}
UNARY_OPS = ("neg", "square")
PENALTY = 1e10
DIV_EPS = 1e-12
LOSS_FLOOR = 1e-30


# ---------------------------------------------------------------- expressions


class Expr:
    __slots__ = ()

    def __str__(self):
        return to_infix(self)

    # structural equality; repr is exact for constants
    def __eq__(self, other):
        return isinstance(other, Expr) and repr(self) == repr(other)

    def __hash__(self):
        return hash(repr(self))


class Constant(Expr):
    __slots__ = ("value",)

    def __init__(self, value):
        self.value = float(value)

    def __repr__(self):
        return f"Constant({self.value!r})"


class Variable(Expr):
    __slots__ = ("name", "index")

    def __init__(self, name: str, index: int):
        self.name = name
        self.index = int(index)

    def __repr__(self):
        return f"Variable({self.name!r})"


class Binary(Expr):
    __slots__ = ("op", "left", "right")

    def __init__(self, op: str, left: Expr, right: Expr):
        if op not in BINARY_OPS:
            raise ValueError(f"unknown binary operator {op!r}")
        self.op, self.left, self.right = op, left, right

    def __repr__(self):
        return f"Binary({self.op!r}, {self.left!r}, {self.right!r})"


class Unary(Expr):
    __slots__ = ("op", "child")

    def __init__(self, op: str, child: Expr):
        if op not in UNARY_OPS:
            raise ValueError(f"unknown unary operator {op!r}")
        self.op, self.child = op, child

    def __repr__(self):
        return f"Unary({self.op!r}, {self.child!r})"


def _children(e: Expr):
    if isinstance(e, Binary):
        return (e.left, e.right)
    if isinstance(e, Unary):
        return (e.child,)
    return ()


def complexity(e: Expr) -> int:
    """Node count: constants, variables and operators each count one."""
    return 1 + sum(complexity(c) for c in _children(e))


def nodes(e: Expr) -> list[Expr]:
    """Pre-order list of all nodes."""
    out = [e]
    for c in _children(e):
        out.extend(nodes(c))
    return out


def replace_at(e: Expr, index: int, new: Expr) -> Expr:
    """Copy of ``e`` with its pre-order node ``index`` replaced by ``new``."""
    if index == 0:
        return new
    index -= 1
    if isinstance(e, Binary):
        n_left = complexity(e.left)
        if index < n_left:
            return Binary(e.op, replace_at(e.left, index, new), e.right)
        return Binary(e.op, e.left, replace_at(e.right, index - n_left, new))
    if isinstance(e, Unary):
        return Unary(e.op, replace_at(e.child, index, new))
    raise IndexError("node index out of range")


def constants(e: Expr) -> list[float]:
    return [n.value for n in nodes(e) if isinstance(n, Constant)]


def with_constants(e: Expr, values: Sequence[float]) -> Expr:
    it = iter(values)

    def rebuild(n):
        if isinstance(n, Constant):
            return Constant(next(it))
        if isinstance(n, Binary):
            return Binary(n.op, rebuild(n.left), rebuild(n.right))
        if isinstance(n, Unary):
            return Unary(n.op, rebuild(n.child))
        return n

    return rebuild(e)


def _fmt_const(c: float) -> str:
    return format(c, ".6g") if c == c else "nan"


def to_infix(e: Expr) -> str:
    """Fully parenthesised infix; negative constants are wrapped."""
    if isinstance(e, Constant):
        s = _fmt_const(e.value)
        return f"({s})" if e.value < 0 else s
    if isinstance(e, Variable):
        return e.name
    if isinstance(e, Unary):
        inner = to_infix(e.child)
        return f"-({inner})" if e.op == "neg" else f"square({inner})"

    def wrap(c):
        s = to_infix(c)
        return f"({s})" if isinstance(c, (Binary,)) else s

    return f"{wrap(e.left)} {BINARY_OPS[e.op]} {wrap(e.right)}"


# ----------------------------------------------------------------- evaluation


def _pdiv(a, b):
    small = np.abs(b) < DIV_EPS
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(small, PENALTY, a / np.where(small, 1.0, b))
    return out


def _code(e: Expr, counter: list[int]) -> str:
    if isinstance(e, Constant):
        counter[0] += 1
        return f"c[{counter[0] - 1}]"
    if isinstance(e, Variable):
        return f"x{e.index}"
    if isinstance(e, Unary):
        inner = _code(e.child, counter)
        return f"(-{inner})" if e.op == "neg" else f"({inner}*{inner})"
    left = _code(e.left, counter)
    right = _code(e.right, counter)
    if e.op == "div":
        return f"_pdiv({left}, {right})"
    return f"({left}{BINARY_OPS[e.op]}{right})"


_COMPILED: dict[tuple[str, int], object] = {}


def _structure(e: Expr, n_features: int):
    key = (_code(e, [0]), n_features)
    fn = _COMPILED.get(key)
    if fn is None:
        args = ", ".join(f"x{i}" for i in range(n_features))
        src = f"lambda c, {args}: {key[0]}" if n_features else f"lambda c: {key[0]}"
        fn = eval(src, {"_pdiv": _pdiv})  # noqa: S307 -- generated from our own trees
        if len(_COMPILED) > 200_000:
            _COMPILED.clear()
        _COMPILED[key] = fn
    return fn


def evaluate_batch(e: Expr, X, consts=None) -> np.ndarray:
    """Vectorised evaluation on the rows of ``X`` (``(n, n_features)``)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    fn = _structure(e, X.shape[1])
    c = np.asarray(constants(e) if consts is None else consts, dtype=np.float64)
    cols = [X[:, i] for i in range(X.shape[1])]
    with np.errstate(all="ignore"):
        out = fn(c, *cols)
    return np.broadcast_to(np.asarray(out, dtype=np.float64), (X.shape[0],)).copy()


def evaluate(e: Expr, row) -> float:
    """Value of ``e`` at one row ``(dp, k1, t)``; a mapping by name also works."""
    if isinstance(row, dict):
        vals = {}

        def lookup(n):
            if isinstance(n, Variable):
                vals[n.index] = row[n.name]
            for c in _children(n):
                lookup(c)

        lookup(e)
        width = max(vals, default=-1) + 1
        row = [vals.get(i, 0.0) for i in range(width)]
    return float(evaluate_batch(e, np.asarray(row, dtype=np.float64)[None, :])[0])


def fitness(e: Expr, X, y) -> float:
    """Mean squared error; non-finite predictions count at the penalty value."""
    y = np.asarray(y, dtype=np.float64)
    if y.size == 0:
        raise ValueError("empty dataset")
    pred = evaluate_batch(e, X)
    bad = ~np.isfinite(pred)
    if np.any(bad):
        pred = np.where(bad, PENALTY, pred)
    with np.errstate(over="ignore"):
        mse = float(np.mean((pred - y) ** 2))
    return mse if math.isfinite(mse) else PENALTY**2


# --------------------------------------------------------- canonical algebra


def polynomial(e: Expr, n_features: int | None = None) -> dict[tuple[int, ...], float] | None:
    """Expand ``e`` into ``{exponents: coefficient}``; ``None`` if not polynomial."""
    if n_features is None:
        n_features = max((n.index for n in nodes(e) if isinstance(n, Variable)), default=-1) + 1
        n_features = max(n_features, 1)
    zero = (0,) * n_features

    def rec(n):
        if isinstance(n, Constant):
            return {zero: n.value}
        if isinstance(n, Variable):
            ex = [0] * n_features
            ex[n.index] = 1
            return {tuple(ex): 1.0}
        if isinstance(n, Unary):
            p = rec(n.child)
            if p is None:
                return None
            if n.op == "neg":
                return {k: -v for k, v in p.items()}
            return _pmul(p, p)
        if n.op == "div":
            return None
        a, b = rec(n.left), rec(n.right)
        if a is None or b is None:
            return None
        if n.op == "mul":
            return _pmul(a, b)
        sign = 1.0 if n.op == "add" else -1.0
        out = dict(a)
        for k, v in b.items():
            out[k] = out.get(k, 0.0) + sign * v
        return out

    p = rec(e)
    if p is None:
        return None
    return {k: v for k, v in p.items() if v != 0.0} or {zero: 0.0}


def _pmul(a, b):
    out = {}
    for ka, va in a.items():
        for kb, vb in b.items():
            k = tuple(x + y for x, y in zip(ka, kb))
            out[k] = out.get(k, 0.0) + va * vb
    return out


def monomial_structure(e: Expr, n_features: int | None = None):
    """``(coefficient, exponents)`` when ``e`` is a single monomial, else ``None``."""
    p = polynomial(e, n_features)
    if p is None or len(p) != 1:
        return None
    (ex, c), = p.items()
    return c, ex


def _monomial_tree(coef, ex, names):
    factors = []
    for i in sorted(range(len(ex)), key=lambda i: (ex[i], names[i])):
        factors.extend([Variable(names[i], i)] * ex[i])
    if not factors:
        return Constant(coef)
    tree = factors[-1]
    for f in reversed(factors[:-1]):
        tree = Binary("mul", f, tree)
    if coef == 1.0:
        return tree
    return Binary("mul", Constant(coef), tree)


def canonical(e: Expr, names: Sequence[str] = DEFAULT_FEATURES) -> Expr:
    """Polynomial normal form: terms by degree, right-nested factors.

    Non-polynomial expressions are returned unchanged.
    """
    p = polynomial(e, len(names))
    if p is None:
        return e
    terms = sorted(p.items(), key=lambda kv: (sum(kv[0]), tuple(-x for x in kv[0])))
    tree = None
    for ex, c in terms:
        if tree is None:
            tree = _monomial_tree(c, ex, names)
        elif c < 0:
            tree = Binary("sub", tree, _monomial_tree(-c, ex, names))
        else:
            tree = Binary("add", tree, _monomial_tree(c, ex, names))
    return tree


def canonical_string(e: Expr, names: Sequence[str] = DEFAULT_FEATURES) -> str:
    s = _flat_infix(canonical(e, names))
    return re.sub(r"^\((-[^()]+)\)", r"\1", s)


def _flat_infix(e: Expr) -> str:
    # left-associative sums print without redundant parentheses
    if isinstance(e, Binary) and e.op in ("add", "sub"):
        right = e.right
        r = to_infix(right)
        if isinstance(right, Binary) and right.op in ("add", "sub"):
            r = f"({r})"
        return f"{_flat_infix(e.left)} {BINARY_OPS[e.op]} {r}"
    return to_infix(e)


_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?)|([A-Za-z_]\w*)|(\S))")


def parse(text: str, names: Sequence[str] = DEFAULT_FEATURES) -> Expr:
    """Parse infix with ``+ - * /``, parentheses, unary minus and decimals."""
    tokens = []
    pos = 0
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ValueError(f"cannot tokenize {text[pos:]!r}")
        pos = m.end()
        num, ident, sym = m.groups()
        if num is not None:
            tokens.append(("num", float(num)))
        elif ident is not None:
            tokens.append(("id", ident))
        elif sym is not None:
            tokens.append(("sym", sym))
    index = {n: i for i, n in enumerate(names)}
    toks = tokens + [("end", None)]
    i = 0

    def peek():
        return toks[i]

    def take():
        nonlocal i
        i += 1
        return toks[i - 1]

    def expr():
        node = term()
        while peek() in (("sym", "+"), ("sym", "-")):
            op = "add" if take()[1] == "+" else "sub"
            node = Binary(op, node, term())
        return node

    def term():
        node = factor()
        while peek() in (("sym", "*"), ("sym", "/")):
            op = "mul" if take()[1] == "*" else "div"
            node = Binary(op, node, factor())
        return node

    def factor():
        kind, val = take()
        if kind == "num":
            return Constant(val)
        if kind == "id":
            if val == "square" and peek() == ("sym", "("):
                take()
                inner = expr()
                _expect(")")
                return Unary("square", inner)
            if val not in index:
                raise ValueError(f"unknown variable {val!r}")
            return Variable(val, index[val])
        if (kind, val) == ("sym", "("):
            inner = expr()
            _expect(")")
            return inner
        if (kind, val) == ("sym", "-"):
            nxt = peek()
            if nxt[0] == "num":
                take()
                return Constant(-nxt[1])
            return Unary("neg", factor())
        raise ValueError(f"unexpected token {val!r}")

    def _expect(sym):
        kind, val = take()
        if (kind, val) != ("sym", sym):
            raise ValueError(f"expected {sym!r}, got {val!r}")

    node = expr()
    if peek()[0] != "end":
        raise ValueError(f"trailing input at token {peek()[1]!r}")
    return node


# ------------------------------------------------------------ constant tuning


def _is_affine_in_constants(e: Expr) -> bool:
    return all(
        not (isinstance(n, Binary) and n.op == "div") and not (isinstance(n, Unary) and n.op == "square")
        for n in nodes(e)
    )


def optimize_constants(e: Expr, X, y, max_iter: int = 50, tol: float = 1e-12):
    """Coordinate descent over the constants of ``e``; returns ``(expr, mse)``.

    Over ``{+, -, *, neg}`` an expression is affine in each single constant,
    so every coordinate step is an exact one-dimensional least-squares
    solve. Other operator sets fall back to a shrinking pattern search.
    """
    c = np.asarray(constants(e), dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    best = _mse(evaluate_batch(e, X, c), y)
    if c.size == 0:
        return e, best
    affine = _is_affine_in_constants(e)
    step = np.maximum(np.abs(c) * 0.1, 0.1)
    for _ in range(max_iter):
        start = best
        if affine:
            c, best = _affine_iteration(e, X, y, c, best)
        else:
            for k in range(c.size):
                for delta in (step[k], -step[k]):
                    trial = c.copy()
                    trial[k] += delta
                    mse = _mse(evaluate_batch(e, X, trial), y)
                    if mse < best:
                        best, c = mse, trial
                        break
                else:
                    step[k] *= 0.5
        if start - best <= tol * max(start, LOSS_FLOOR):
            break
    return with_constants(e, c), best


def _affine_iteration(e, X, y, c, best):
    # f is affine in each constant, so f(c + e_k) - f(c) is the exact
    # partial derivative; try a Gauss-Newton step, then exact coordinate steps
    f = evaluate_batch(e, X, c)
    jac = np.empty((f.size, c.size))
    for k in range(c.size):
        trial = c.copy()
        trial[k] += 1.0
        jac[:, k] = evaluate_batch(e, X, trial) - f
    if np.all(np.isfinite(jac)) and np.all(np.isfinite(f)):
        delta = np.linalg.lstsq(jac, y - f, rcond=None)[0]
        trial = c + delta
        mse = _mse(evaluate_batch(e, X, trial), y)
        if mse < best:
            c, best = trial, mse
    for k in range(c.size):
        trial = c.copy()
        trial[k] = 0.0
        f0 = evaluate_batch(e, X, trial)
        trial[k] = 1.0
        slope = evaluate_batch(e, X, trial) - f0
        denom = float(slope @ slope)
        if not math.isfinite(denom) or denom == 0.0:
            continue
        trial[k] = float(slope @ (y - f0)) / denom
        mse = _mse(evaluate_batch(e, X, trial), y)
        if mse < best:
            best, c = mse, trial
    return c, best


def _mse(pred, y):
    if not np.all(np.isfinite(pred)):
        pred = np.where(np.isfinite(pred), pred, PENALTY)
    with np.errstate(over="ignore"):
        m = float(np.mean((pred - y) ** 2))
    return m if math.isfinite(m) else PENALTY**2


# ------------------------------------------------------------- Pareto / score


@dataclass
class ParetoEntry:
    expr: Expr
    complexity: int
    loss: float
    score: float = 0.0

    def __repr__(self):
        return f"ParetoEntry(C={self.complexity}, loss={self.loss:.4g}, score={self.score:.4g}, expr={to_infix(self.expr)})"


def pareto_front(entries: Sequence[ParetoEntry]) -> list[ParetoEntry]:
    """Lower envelope: complexity strictly increasing, loss strictly decreasing."""
    best_at: dict[int, ParetoEntry] = {}
    for e in entries:
        cur = best_at.get(e.complexity)
        if cur is None or e.loss < cur.loss:
            best_at[e.complexity] = e
    front: list[ParetoEntry] = []
    for c in sorted(best_at):
        e = best_at[c]
        if not front or e.loss < front[-1].loss:
            front.append(e)
    return score(front)


def score(front: Sequence[ParetoEntry]) -> list[ParetoEntry]:
    """Fill in ``-(ln MSE_i - ln MSE_{i-1}) / (C_i - C_{i-1})``; first entry 0.

    Entries sharing a complexity keep only the lower-loss one.
    """
    dedup: dict[int, ParetoEntry] = {}
    for e in front:
        cur = dedup.get(e.complexity)
        if cur is None or e.loss < cur.loss:
            dedup[e.complexity] = e
    ordered = [dedup[c] for c in sorted(dedup)]
    out = []
    for i, e in enumerate(ordered):
        if i == 0:
            s = 0.0
        else:
            prev = ordered[i - 1]
            s = -(math.log(max(e.loss, LOSS_FLOOR)) - math.log(max(prev.loss, LOSS_FLOOR))) / (
                e.complexity - prev.complexity
            )
        out.append(ParetoEntry(e.expr, e.complexity, e.loss, s + 0.0))
    return out


def select_best(front: Sequence[ParetoEntry], strategy: str = "score_within_2x") -> ParetoEntry:
    """``score_within_2x``: highest score among entries within twice the best loss.

    ``best_loss``: the lowest-loss entry.
    """
    if not front:
        raise ValueError("empty front")
    min_loss = min(e.loss for e in front)
    if strategy == "best_loss":
        return min(front, key=lambda e: (e.loss, e.complexity))
    if strategy != "score_within_2x":
        raise ValueError(f"unknown strategy {strategy!r}")
    eligible = [e for e in front if e.loss <= 2.0 * min_loss]
    return max(eligible, key=lambda e: (e.score, -e.complexity))


# ------------------------------------------------------------------ evolution


@dataclass
class SymregConfig:
    binary_ops: tuple[str, ...] = ("mul", "add", "sub")
    unary_ops: tuple[str, ...] = ()
    n_populations: int = 8
    population_size: int = 100
    n_generations: int = 200
    max_complexity: int = 20
    tournament_size: int = 5
    migration_interval: int = 10
    migration_fraction: float = 0.05
    parsimony: float = 1e-4
    constant_optimization: bool = True
    optimize_top: int = 5
    constant_iterations: int = 50
    normalize: str | None = None  # None | "initial" | "maxabs"
    time_feature: str = "t"
    seed: int = 0

    def __post_init__(self):
        self.binary_ops = tuple(self.binary_ops)
        self.unary_ops = tuple(self.unary_ops)
        if not self.binary_ops and not self.unary_ops:
            raise ValueError("at least one operator is required")
        for op in self.binary_ops:
            if op not in BINARY_OPS:
                raise ValueError(f"unknown binary operator {op!r}")
        for op in self.unary_ops:
            if op not in UNARY_OPS:
                raise ValueError(f"unknown unary operator {op!r}")
        if self.max_complexity < 3:
            raise ValueError("max_complexity must be >= 3")
        if self.normalize not in (None, "initial", "maxabs"):
            raise ValueError(f"unknown normalisation {self.normalize!r}")


@dataclass
class _Individual:
    expr: Expr
    loss: float
    size: int
    fit: float = field(default=math.inf)


class _Island:
    def __init__(self, cfg, names, X, y, rng, y_var):
        self.cfg, self.names, self.X, self.y, self.rng = cfg, names, X, y, rng
        self.y_var = y_var
        self.pop: list[_Individual] = []

    # variation -------------------------------------------------------------
    def random_terminal(self):
        if self.rng.random() < 0.6:
            i = int(self.rng.integers(len(self.names)))
            return Variable(self.names[i], i)
        return Constant(self.rng.uniform(-2.0, 2.0))

    def random_tree(self, max_depth):
        cfg, rng = self.cfg, self.rng
        if max_depth <= 0 or rng.random() < 0.3:
            return self.random_terminal()
        if cfg.unary_ops and (not cfg.binary_ops or rng.random() < 0.15):
            return Unary(cfg.unary_ops[int(rng.integers(len(cfg.unary_ops)))], self.random_tree(max_depth - 1))
        op = cfg.binary_ops[int(rng.integers(len(cfg.binary_ops)))]
        return Binary(op, self.random_tree(max_depth - 1), self.random_tree(max_depth - 1))

    def mutate(self, e: Expr, donor: Expr) -> Expr:
        rng = self.rng
        all_nodes = nodes(e)
        k = int(rng.integers(len(all_nodes)))
        target = all_nodes[k]
        r = rng.random()
        if r < 0.35:  # subtree crossover
            donor_nodes = nodes(donor)
            return replace_at(e, k, donor_nodes[int(rng.integers(len(donor_nodes)))])
        if r < 0.5:  # subtree mutation
            return replace_at(e, k, self.random_tree(int(rng.integers(1, 4))))
        if r < 0.65:  # point mutation
            if isinstance(target, Binary):
                op = self.cfg.binary_ops[int(rng.integers(len(self.cfg.binary_ops)))]
                return replace_at(e, k, Binary(op, target.left, target.right))
            if isinstance(target, Unary):
                return replace_at(e, k, target.child)
            return replace_at(e, k, self.random_terminal())
        if r < 0.78:  # constant jitter
            cs = constants(e)
            if not cs:
                return replace_at(e, k, self.random_terminal())
            j = int(rng.integers(len(cs)))
            cs[j] = cs[j] * (1.0 + 0.1 * rng.standard_normal()) + 0.01 * rng.standard_normal()
            return with_constants(e, cs)
        if r < 0.9 and self.cfg.binary_ops:  # insertion
            op = self.cfg.binary_ops[int(rng.integers(len(self.cfg.binary_ops)))]
            leaf = self.random_terminal()
            new = Binary(op, target, leaf) if rng.random() < 0.5 else Binary(op, leaf, target)
            return replace_at(e, k, new)
        # hoist
        return target if k else e

    # bookkeeping ---------------------------------------------------------------
    def make(self, e: Expr, sweeps: int = 1) -> _Individual:
        if self.cfg.constant_optimization and sweeps:
            e, loss = optimize_constants(e, self.X, self.y, max_iter=sweeps)
        else:
            loss = _mse(evaluate_batch(e, self.X), self.y)
        size = complexity(e)
        ind = _Individual(e, loss, size)
        ind.fit = loss / self.y_var + self.cfg.parsimony * size
        return ind

    def tournament(self) -> _Individual:
        idx = self.rng.integers(len(self.pop), size=min(self.cfg.tournament_size, len(self.pop)))
        return min((self.pop[i] for i in idx), key=lambda ind: ind.fit)


def evolve(X, y, cfg: SymregConfig | None = None, feature_names: Sequence[str] = DEFAULT_FEATURES) -> list[ParetoEntry]:
    """Search for expressions fitting ``y`` from the columns of ``X``.

    Returns the scored Pareto front in the units of ``y``.
    """
    cfg = cfg or SymregConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.ndim != 2 or X.shape[0] != y.size or y.size == 0:
        raise ValueError("X must be (n, n_features) with one target per row")
    names = tuple(feature_names)
    if len(names) != X.shape[1]:
        raise ValueError("feature_names does not match the columns of X")

    target_scale = _target_scale(X, y, cfg, names)
    yn = y / target_scale
    y_var = float(np.var(yn)) or 1.0

    seq = np.random.SeedSequence([int(cfg.seed), 0x5EED])
    islands = [
        _Island(cfg, names, X, yn, np.random.Generator(np.random.Philox(s)), y_var)
        for s in seq.spawn(cfg.n_populations)
    ]
    hall: dict[int, _Individual] = {}

    def record(ind):
        # keyed by the size of the reported (de-normalised) expression
        size = ind.size if target_scale == 1.0 else complexity(_rescale(ind.expr, target_scale))
        cur = hall.get(size)
        if cur is None or ind.loss < cur.loss:
            hall[size] = ind

    record(_Individual(Constant(float(np.mean(yn))), float(np.var(yn)), 1))
    for isl in islands:
        while len(isl.pop) < cfg.population_size:
            e = isl.random_tree(int(isl.rng.integers(1, 4)))
            if complexity(e) <= cfg.max_complexity:
                isl.pop.append(isl.make(e))
        for ind in isl.pop:
            record(ind)

    n_migrants = max(1, int(round(cfg.migration_fraction * cfg.population_size)))
    for gen in range(cfg.n_generations):
        for isl in islands:
            children = []
            for _ in range(cfg.population_size):
                parent = isl.tournament()
                donor = isl.tournament()
                e = isl.mutate(parent.expr, donor.expr)
                if complexity(e) > cfg.max_complexity:
                    continue
                child = isl.make(e)
                children.append(child)
                record(child)
            isl.pop = _truncate(isl.pop + children, cfg.population_size)
            if cfg.constant_optimization:
                for j in range(min(cfg.optimize_top, len(isl.pop))):
                    ind = isl.make(isl.pop[j].expr, sweeps=cfg.constant_iterations)
                    if ind.loss <= isl.pop[j].loss:
                        isl.pop[j] = ind
                        record(ind)
                isl.pop.sort(key=lambda ind: ind.fit)
        if (gen + 1) % cfg.migration_interval == 0:
            emigrants = [isl.pop[:n_migrants] for isl in islands]
            famous = [hall[c] for c in sorted(hall)]
            for i, isl in enumerate(islands):
                # ring neighbour plus a draw from the hall of fame, which keeps
                # low-complexity shapes alive after the islands converge
                incoming = list(emigrants[i - 1]) if cfg.n_populations > 1 else []
                picks = isl.rng.integers(len(famous), size=n_migrants)
                incoming += [famous[j] for j in picks]
                keep = isl.pop[: max(0, len(isl.pop) - len(incoming))]
                isl.pop = _truncate(keep + incoming, cfg.population_size)

    if cfg.constant_optimization:
        polisher = islands[0]
        for size in list(hall):
            record(polisher.make(hall[size].expr, sweeps=cfg.constant_iterations))

    entries = []
    for ind in hall.values():
        e = _rescale(ind.expr, target_scale)
        entries.append(ParetoEntry(e, complexity(e), ind.loss * target_scale**2))
    return pareto_front(entries)


def _truncate(pop, size):
    seen = set()
    out = []
    for ind in sorted(pop, key=lambda ind: ind.fit):
        key = (to_infix(ind.expr), round(ind.loss, 14))
        if key in seen:
            continue
        seen.add(key)
        out.append(ind)
        if len(out) == size:
            break
    return out


def _target_scale(X, y, cfg, names) -> float:
    if cfg.normalize is None:
        return 1.0
    if cfg.normalize == "maxabs":
        s = float(np.max(np.abs(y)))
    else:
        row = int(np.argmin(X[:, names.index(cfg.time_feature)])) if cfg.time_feature in names else 0
        s = abs(float(y[row]))
    return s if s > 0 and math.isfinite(s) else 1.0


def _rescale(e: Expr, s: float) -> Expr:
    """``s * e``, folded into existing constants where possible."""
    if s == 1.0:
        return e

    def fold(n):
        if isinstance(n, Constant):
            return Constant(n.value * s)
        if isinstance(n, Binary):
            if n.op == "mul":
                left = fold(n.left)
                if left is not None:
                    return Binary("mul", left, n.right)
                right = fold(n.right)
                return None if right is None else Binary("mul", n.left, right)
            if n.op == "div":
                left = fold(n.left)
                return None if left is None else Binary("div", left, n.right)
            left, right = fold(n.left), fold(n.right)
            if left is None or right is None:
                return None
            return Binary(n.op, left, right)
        if isinstance(n, Unary) and n.op == "neg":
            inner = fold(n.child)
            return None if inner is None else Unary("neg", inner)
        return None

    folded = fold(e)
    return folded if folded is not None else Binary("mul", Constant(s), e)


class SymbolicRegressor(RegressorMixin, BaseEstimator):
    """Estimator wrapper around :func:`evolve`.

    After ``fit``: ``front_`` holds the scored Pareto front, ``best_`` the
    entry chosen by ``selection`` and ``expression_`` its canonical string.
    """

    def __init__(
        self,
        binary_ops=("mul", "add", "sub"),
        unary_ops=(),
        n_populations=8,
        population_size=100,
        n_generations=200,
        max_complexity=20,
        parsimony=1e-4,
        normalize=None,
        selection="score_within_2x",
        feature_names=DEFAULT_FEATURES,
        random_state=0,
    ):
        self.binary_ops = binary_ops
        self.unary_ops = unary_ops
        self.n_populations = n_populations
        self.population_size = population_size
        self.n_generations = n_generations
        self.max_complexity = max_complexity
        self.parsimony = parsimony
        self.normalize = normalize
        self.selection = selection
        self.feature_names = feature_names
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        names = tuple(self.feature_names)
        if len(names) != X.shape[1]:
            raise ValueError(f"expected {len(names)} features {names}, got {X.shape[1]}")
        cfg = SymregConfig(
            binary_ops=tuple(self.binary_ops),
            unary_ops=tuple(self.unary_ops),
            n_populations=self.n_populations,
            population_size=self.population_size,
            n_generations=self.n_generations,
            max_complexity=self.max_complexity,
            parsimony=self.parsimony,
            normalize=self.normalize,
            seed=int(self.random_state or 0),
        )
        self.front_ = evolve(X, y, cfg, names)
        self.best_ = select_best(self.front_, self.selection)
        self.expression_ = canonical_string(self.best_.expr, names)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "best_")
        X = check_array(X)
        return evaluate_batch(self.best_.expr, X)
