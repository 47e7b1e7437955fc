"""Run-directory aggregation, Table-style error grids and static SVG plots.

Everything here is recomputed from the per-seed CSV files and ``run.json``
so a report never depends on state held by the process that trained.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from html import escape

import numpy as np

from .kinetics import HOURS_PER_YEAR, ArrheniusParams, EkenstamModel, EmsleyParams, ekenstam_closed_form, emsley_closed_form
from .pinn_ekenstam import percent_error, relative_l2

logger = logging.getLogger(__name__)

RUN_FILE = "run.json"
SUMMARY_FILE = "summary.json"


class ReportError(RuntimeError):
    pass


def describe(values) -> dict:
    """Mean, median, quartiles and IQR of the finite entries."""
    v = np.asarray([x for x in values if x is not None and math.isfinite(x)], dtype=np.float64)
    if v.size == 0:
        return {"n": 0, "mean": None, "median": None, "q1": None, "q3": None, "iqr": None, "min": None, "max": None}
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return {
        "n": int(v.size),
        "mean": float(v.mean()),
        "median": float(med),
        "q1": float(q1),
        "q3": float(q3),
        "iqr": float(q3 - q1),
        "min": float(v.min()),
        "max": float(v.max()),
    }


# ------------------------------------------------------------------ reading


def read_table(path) -> dict[str, np.ndarray | list[str]]:
    """Columns of a headed CSV; numeric columns become float arrays."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ReportError(f"{path} is empty")
    header, body = rows[0], rows[1:]
    cols: dict = {}
    for j, name in enumerate(header):
        raw = [r[j] for r in body if len(r) > j]
        try:
            cols[name] = np.array([float(x) for x in raw])
        except ValueError:
            cols[name] = raw
    return cols


def load_run(run_dir) -> dict:
    path = os.path.join(run_dir, RUN_FILE)
    if not os.path.isfile(path):
        raise ReportError(f"no {RUN_FILE} in {run_dir}")
    with open(path) as fh:
        return json.load(fh)


def seed_dirs(run_dir, seeds) -> dict[int, str]:
    return {int(s): os.path.join(run_dir, f"seed_{int(s)}") for s in seeds}


# -------------------------------------------------------------- per-seed stats


def ekenstam_seed_metrics(seed_dir, run: dict) -> dict:
    hist = read_table(os.path.join(seed_dir, "history.csv"))
    pred = read_table(os.path.join(seed_dir, "prediction.csv"))
    lnA, eort = float(hist["lnA"][-1]), float(hist["E_over_RT"][-1])
    T = run["ekenstam"]["temperature"]
    R = run["ekenstam"]["gas_constant"]
    arr = ArrheniusParams.from_scaled(lnA, eort, T, R)
    out = {"lnA": lnA, "E_over_RT": eort, "A": arr.A, "E": arr.E}
    truth = run.get("truth")
    hours = pred["time_years"] * HOURS_PER_YEAR
    if truth:
        model = EkenstamModel(ArrheniusParams(truth["A"], truth["E"], truth["T"], truth.get("R", R)), truth["dp0"])
        out["rel_l2_dp"] = relative_l2(pred["dp"], ekenstam_closed_form(model, hours))
        out["error_lnA_pct"] = percent_error(lnA, model.params.ln_A)
        out["error_E_over_RT_pct"] = percent_error(eort, model.params.E_over_RT)
    else:
        data = read_table(os.path.join(os.path.dirname(seed_dir), "data.csv"))
        if data["dp"].size != pred["dp"].size:
            raise ReportError(f"prediction in {seed_dir} does not match data.csv")
        out["rel_l2_dp"] = relative_l2(pred["dp"], data["dp"])
        out["error_lnA_pct"] = None
        out["error_E_over_RT_pct"] = None
    return out


def emsley_seed_metrics(seed_dir, run: dict) -> dict:
    hist = read_table(os.path.join(seed_dir, "history.csv"))
    pred = read_table(os.path.join(seed_dir, "prediction.csv"))
    hs = read_table(os.path.join(seed_dir, "h_samples.csv"))
    sc = run["scaling"]
    k2s = float(hist["k2_scaled"][-1])
    out = {"k2_scaled": k2s, "k2": k2s / sc["time_scale"]}
    truth = run.get("truth")
    if truth:
        p = EmsleyParams(truth["dp0"], truth["k1_0"], truth["k2"])
        dp, k1 = emsley_closed_form(p, pred["time_years"] * HOURS_PER_YEAR)
        u, v = dp / sc["dp_scale"], k1 / sc["k1_scale"]
        coef = sc["k1_scale"] * sc["dp_scale"] * sc["time_scale"]
        out["error_k2_pct"] = percent_error(k2s, p.k2 * sc["time_scale"])
        out["rel_l2_dp"] = relative_l2(pred["dp"], dp)
        out["rel_l2_k1"] = relative_l2(pred["k1"], k1)
        out["rel_l2_h"] = relative_l2(hs["h_pred"], -coef * v * u * u)
    return out


def symreg_seed_metrics(seed_dir, run: dict) -> dict:
    from . import symreg as sr

    front = read_table(os.path.join(seed_dir, "front.csv"))
    exprs = front["expression"]
    entries = [
        sr.ParetoEntry(sr.parse(e), int(c), float(l), float(s))
        for c, l, s, e in zip(front["complexity"], front["loss"], front["score"], exprs)
    ]
    best = sr.select_best(entries, run["symreg"].get("selection", "score_within_2x"))
    out = {
        "expression": sr.canonical_string(best.expr),
        "complexity": best.complexity,
        "loss": best.loss,
        "front_size": len(entries),
    }
    mono = sr.monomial_structure(best.expr, 3)
    target = run.get("target_monomial")
    if target is not None:
        out["structure_match"] = bool(mono is not None and list(mono[1]) == list(target["exponents"]))
        out["coefficient_ratio"] = mono[0] / target["coefficient"] if out["structure_match"] else None
    return out


SEED_METRICS = {
    "ekenstam_inverse": ekenstam_seed_metrics,
    "emsley_discovery": emsley_seed_metrics,
    "symreg_only": symreg_seed_metrics,
}


def aggregate(run_dir) -> dict:
    """Per-seed metrics and their summary statistics, from files only."""
    run = load_run(run_dir)
    kind = run["experiment"]
    if kind not in SEED_METRICS:
        raise ReportError(f"nothing to aggregate for experiment {kind!r}")
    per_seed, warnings = {}, []
    for seed, d in seed_dirs(run_dir, run["seeds"]).items():
        try:
            per_seed[seed] = SEED_METRICS[kind](d, run)
        except (OSError, ReportError, KeyError, ValueError) as exc:
            msg = f"seed {seed}: {exc}"
            logger.warning(msg)
            warnings.append(msg)
    if not per_seed:
        raise ReportError(f"no complete seeds in {run_dir}")
    keys = sorted({k for m in per_seed.values() for k, v in m.items() if isinstance(v, (int, float)) and not isinstance(v, bool)})
    stats = {k: describe([m.get(k) for m in per_seed.values()]) for k in keys}
    return {"experiment": kind, "label": run.get("label", os.path.basename(os.path.abspath(run_dir))), "seeds": per_seed, "stats": stats, "warnings": warnings}


# ------------------------------------------------------------------- tables

EKENSTAM_ROWS = (
    ("Error DP", "rel_l2_dp", "{:.3e}"),
    ("Error ln(A)", "error_lnA_pct", "{:.3f}%"),
    ("Error E/RT", "error_E_over_RT_pct", "{:.3f}%"),
    ("Est. ln(A)", "lnA", "{:.3f}"),
    ("Est. A", "A", "{:.3e}"),
    ("Est. E/RT", "E_over_RT", "{:.3f}"),
    ("Est. E", "E", "{:.0f}"),
)

EMSLEY_ROWS = (
    ("Est. k2 (scaled)", "k2_scaled", "{:.5f}"),
    ("Est. k2 [1/h]", "k2", "{:.4e}"),
    ("Error k2", "error_k2_pct", "{:.3f}%"),
    ("Error DP", "rel_l2_dp", "{:.3e}"),
    ("Error k1", "rel_l2_k1", "{:.3e}"),
    ("Error h", "rel_l2_h", "{:.3e}"),
)


def grid(aggregates: list[dict], statistic: str = "mean") -> list[list[str]]:
    """Rows x runs table of one statistic; ``NA`` where a value is missing."""
    kinds = {a["experiment"] for a in aggregates}
    if len(kinds) != 1:
        raise ReportError(f"cannot mix experiments in one grid: {sorted(kinds)}")
    rows = EKENSTAM_ROWS if kinds == {"ekenstam_inverse"} else EMSLEY_ROWS
    table = [[""] + [a["label"] for a in aggregates]]
    for label, key, fmt in rows:
        line = [label]
        for a in aggregates:
            val = a["stats"].get(key, {}).get(statistic)
            line.append("NA" if val is None else fmt.format(val))
        table.append(line)
    return table


def render(table: list[list[str]]) -> str:
    widths = [max(len(r[j]) for r in table) for j in range(len(table[0]))]
    lines = []
    for i, r in enumerate(table):
        lines.append("| " + " | ".join(c.ljust(w) for c, w in zip(r, widths)) + " |")
        if i == 0:
            lines.append("|" + "|".join("-" * (w + 2) for w in widths) + "|")
    return "\n".join(lines)


def symreg_text(agg: dict) -> str:
    lines = [f"{agg['label']}: selected expressions per seed"]
    for seed, m in sorted(agg["seeds"].items()):
        extra = ""
        if "structure_match" in m:
            ratio = m.get("coefficient_ratio")
            extra = f"  structure_match={m['structure_match']}" + (f" ratio={ratio:.4f}" if ratio is not None else "")
        lines.append(f"  seed {seed}: C={m['complexity']} loss={m['loss']:.3e}  {m['expression']}{extra}")
    return "\n".join(lines)


def report(run_dirs, out_dir=None, plots: bool = True) -> str:
    """Aggregate one or more run directories into a text report."""
    if isinstance(run_dirs, (str, os.PathLike)):
        run_dirs = [run_dirs]
    aggs = [aggregate(d) for d in run_dirs]
    parts = []
    pinn = [a for a in aggs if a["experiment"] != "symreg_only"]
    for kind in ("ekenstam_inverse", "emsley_discovery"):
        group = [a for a in pinn if a["experiment"] == kind]
        if group:
            for stat in ("mean", "median", "iqr"):
                parts.append(f"{kind} ({stat} over seeds)\n" + render(grid(group, stat)))
    for a in aggs:
        if a["experiment"] == "symreg_only":
            parts.append(symreg_text(a))
        for w in a["warnings"]:
            parts.append(f"warning: {w}")
    text = "\n\n".join(parts) + "\n"
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "report.md"), "w") as fh:
            fh.write(text)
        if plots:
            for d, a in zip(run_dirs, aggs):
                write_box_plots(a, out_dir)
    return text


def write_box_plots(agg: dict, out_dir) -> list[str]:
    keys = {"ekenstam_inverse": ("lnA", "E_over_RT"), "emsley_discovery": ("k2_scaled",)}.get(agg["experiment"], ())
    written = []
    for k in keys:
        vals = [m[k] for m in agg["seeds"].values() if m.get(k) is not None]
        if not vals:
            continue
        path = os.path.join(out_dir, f"box_{agg['label']}_{k}.svg")
        with open(path, "w") as fh:
            fh.write(box_plot({agg["label"]: vals}, title=f"{k} over seeds"))
        written.append(path)
    return written


# --------------------------------------------------------------------- SVG

_W, _H, _PAD = 640, 400, 56
_COLOURS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def _frame(title, xlabel, ylabel, xt, yt, fx, fy):
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" font-family="sans-serif" font-size="11">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<line x1="{_PAD}" y1="{_H - _PAD}" x2="{_W - 16}" y2="{_H - _PAD}" stroke="black"/>',
        f'<line x1="{_PAD}" y1="28" x2="{_PAD}" y2="{_H - _PAD}" stroke="black"/>',
        f'<text x="{_W / 2}" y="{_H - 14}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="14" y="{_H / 2}" text-anchor="middle" transform="rotate(-90 14 {_H / 2})">{escape(ylabel)}</text>',
    ]
    for v, label in xt:
        out.append(f'<text x="{fx(v):.1f}" y="{_H - _PAD + 16}" text-anchor="middle">{escape(label)}</text>')
    for v, label in yt:
        out.append(f'<text x="{_PAD - 6}" y="{fy(v) + 4:.1f}" text-anchor="end">{escape(label)}</text>')
    return out


def line_plot(series: dict[str, tuple], title="", xlabel="", ylabel="", log_y=False) -> str:
    """``series`` maps a label to ``(x, y)`` arrays."""
    clean = {}
    for name, (x, y) in series.items():
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        ok = np.isfinite(x) & np.isfinite(y) & ((y > 0) if log_y else True)
        if ok.any():
            clean[name] = (x[ok], np.log10(y[ok]) if log_y else y[ok])
    if not clean:
        raise ValueError("nothing to plot")
    xs = np.concatenate([x for x, _ in clean.values()])
    ys = np.concatenate([y for _, y in clean.values()])
    x0, x1 = float(xs.min()), float(xs.max()) or 1.0
    y0, y1 = float(ys.min()), float(ys.max())
    if y1 == y0:
        y0, y1 = y0 - 1, y1 + 1
    fx = lambda v: _PAD + (v - x0) / ((x1 - x0) or 1.0) * (_W - _PAD - 16)
    fy = lambda v: _H - _PAD - (v - y0) / (y1 - y0) * (_H - _PAD - 28)
    ylab = (lambda v: f"1e{v:.1f}") if log_y else (lambda v: f"{v:.4g}")
    out = _frame(title, xlabel, ylabel, [(v, f"{v:.4g}") for v in _ticks(x0, x1)], [(v, ylab(v)) for v in _ticks(y0, y1)], fx, fy)
    for i, (name, (x, y)) in enumerate(clean.items()):
        step = max(1, x.size // 800)
        pts = " ".join(f"{fx(a):.1f},{fy(b):.1f}" for a, b in zip(x[::step], y[::step]))
        colour = _COLOURS[i % len(_COLOURS)]
        out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.2" points="{pts}"/>')
        out.append(f'<text x="{_W - 20}" y="{40 + 14 * i}" text-anchor="end" fill="{colour}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def box_plot(groups: dict[str, list], title="", ylabel="", reference=None) -> str:
    """Tukey box plot: whiskers at 1.5 IQR, outliers as circles."""
    data = {k: np.asarray(v, dtype=float) for k, v in groups.items() if len(v)}
    if not data:
        raise ValueError("nothing to plot")
    allv = np.concatenate(list(data.values()) + ([np.array([reference])] if reference is not None else []))
    y0, y1 = float(allv.min()), float(allv.max())
    pad = (y1 - y0) * 0.08 or abs(y0) * 0.01 or 1.0
    y0, y1 = y0 - pad, y1 + pad
    n = len(data)
    slot = (_W - _PAD - 16) / n
    fx = lambda i: _PAD + slot * (i + 0.5)
    fy = lambda v: _H - _PAD - (v - y0) / (y1 - y0) * (_H - _PAD - 28)
    out = _frame(title, "", ylabel, [(i, k) for i, k in enumerate(data)], [(v, f"{v:.4g}") for v in _ticks(y0, y1)], fx, fy)
    half = min(40.0, slot * 0.3)
    for i, v in enumerate(data.values()):
        q1, med, q3 = np.percentile(v, [25, 50, 75])
        iqr = q3 - q1
        inside = v[(v >= q1 - 1.5 * iqr) & (v <= q3 + 1.5 * iqr)]
        lo, hi = float(inside.min()), float(inside.max())
        cx = fx(i)
        out.append(f'<line x1="{cx:.1f}" y1="{fy(lo):.1f}" x2="{cx:.1f}" y2="{fy(q1):.1f}" stroke="black"/>')
        out.append(f'<line x1="{cx:.1f}" y1="{fy(q3):.1f}" x2="{cx:.1f}" y2="{fy(hi):.1f}" stroke="black"/>')
        top, bottom = fy(q3), fy(q1)
        out.append(f'<rect x="{cx - half:.1f}" y="{top:.1f}" width="{2 * half:.1f}" height="{max(bottom - top, 0.5):.1f}" fill="#cfe2f3" stroke="black"/>')
        out.append(f'<line x1="{cx - half:.1f}" y1="{fy(med):.1f}" x2="{cx + half:.1f}" y2="{fy(med):.1f}" stroke="#d62728" stroke-width="2"/>')
        for w in v[(v < lo) | (v > hi)]:
            out.append(f'<circle cx="{cx:.1f}" cy="{fy(w):.1f}" r="3" fill="none" stroke="black"/>')
    if reference is not None:
        out.append(f'<line x1="{_PAD}" y1="{fy(reference):.1f}" x2="{_W - 16}" y2="{fy(reference):.1f}" stroke="#2ca02c" stroke-dasharray="4 3"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
