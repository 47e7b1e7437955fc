"""Command-line experiment runner.

Subcommands map onto experiments::

    simulate        write a synthetic DP dataset
    train-ekenstam  recover ln A and E/RT from DP(t), one run per seed
    train-emsley    learn the unknown DP right-hand side and k2
    symreg          symbolic regression on h-sample tables
    report          Table-style summary of one or more run directories

Every experiment reads an INI file with one section per module; see
``docs/config.md`` for the schema.
"""

from __future__ import annotations

import argparse
import concurrent.futures as cf
import configparser
import csv
import dataclasses
import json
import logging
import os
import sys
import typing

import numpy as np

from . import pinn_ekenstam, pinn_emsley, report as reporting, symreg
from .autodiff import TrainingDivergenceError
from .data import TimeSeries, add_noise, load_csv, make_ekenstam_dataset, make_emsley_dataset, write_csv
from .kinetics import HOURS_PER_YEAR, ArrheniusParams, EkenstamModel, EmsleyParams

logger = logging.getLogger("dpdiscover")

EXPERIMENTS = ("simulate", "ekenstam_inverse", "emsley_discovery", "symreg_only")
SUBCOMMANDS = {
    "simulate": "simulate",
    "train-ekenstam": "ekenstam_inverse",
    "train-emsley": "emsley_discovery",
    "symreg": "symreg_only",
}
DEFAULT_SEEDS = tuple(range(10))

DATASET_KEYS = {
    "model": "ekenstam",
    "n_points": None,
    "horizon_years": None,
    "noise_pct": 0.0,
    "noise_seed": 0,
    "csv_path": None,
    "anchor_dp": 1100.0,
    "dp0": None,
    "A": 3.42e8,
    "E": 1.1e5,
    "T": 352.0,
    "k1_0": 1.6e-7,
    "k2": 4.2e-4,
}
EXPERIMENT_KEYS = ("experiment", "seeds", "output_dir", "label", "workers", "plots")
SYMREG_EXTRA = ("selection", "target_exponents", "target_coefficient")


class ConfigError(ValueError):
    """Invalid configuration; ``keys`` lists the offending entries."""

    def __init__(self, message, keys=()):
        super().__init__(message + (f": {', '.join(keys)}" if keys else ""))
        self.keys = tuple(keys)


@dataclasses.dataclass
class ExperimentConfig:
    experiment: str
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    output_dir: str = "runs/default"
    label: str | None = None
    workers: int = 1
    plots: bool = True
    dataset: dict = dataclasses.field(default_factory=dict)
    ekenstam: pinn_ekenstam.EkenstamInverseConfig = dataclasses.field(default_factory=pinn_ekenstam.EkenstamInverseConfig)
    emsley: pinn_emsley.EmsleyInverseConfig = dataclasses.field(default_factory=pinn_emsley.EmsleyInverseConfig)
    symreg: symreg.SymregConfig = dataclasses.field(default_factory=symreg.SymregConfig)
    symreg_extra: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}", ["experiment.experiment"])
        if not self.seeds:
            raise ConfigError("seeds must be non-empty", ["experiment.seeds"])
        synthetic = [k for k in ("n_points", "horizon_years", "noise_pct") if self.dataset.get(k) not in (None, 0.0)]
        if self.dataset.get("csv_path") and synthetic:
            raise ConfigError("csv_path and a synthetic dataset spec are mutually exclusive", [f"dataset.{k}" for k in synthetic])
        if self.label is None:
            self.label = os.path.basename(os.path.normpath(self.output_dir)) or self.experiment


# ------------------------------------------------------------- config files


def _coerce(text: str, default, annotation=None):
    s = text.strip()
    if s.lower() in ("none", ""):
        return None
    if isinstance(default, bool):
        if s.lower() in ("1", "true", "yes", "on"):
            return True
        if s.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(default, tuple):
        items = [x.strip() for x in s.split(",") if x.strip()]
        if default and isinstance(default[0], int):
            return tuple(int(x) for x in items)
        return tuple(items)
    if isinstance(default, int) or annotation in ("int", "int | None"):
        return int(s)
    if isinstance(default, float) or annotation in ("float", "float | None"):
        return float(s)
    return s


def _section_to_dataclass(cls, section, name, bad):
    fields = {f.name: f for f in dataclasses.fields(cls) if f.name != "seed"}
    defaults = cls()
    kwargs = {}
    for key, text in section.items():
        if key not in fields:
            bad.append(f"{name}.{key}")
            continue
        try:
            kwargs[key] = _coerce(text, getattr(defaults, key), fields[key].type)
        except ValueError:
            bad.append(f"{name}.{key}")
    return kwargs


def parse_config(text: str, overrides: dict | None = None) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from INI text plus ``section.key`` overrides."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read_string(text)
    for dotted, value in (overrides or {}).items():
        sec, _, key = dotted.partition(".")
        if not cp.has_section(sec):
            cp.add_section(sec)
        cp.set(sec, key, str(value))
    bad: list[str] = []
    known = {"experiment", "dataset", "ekenstam", "emsley", "symreg"}
    bad += [f"[{s}]" for s in cp.sections() if s not in known]

    exp = dict(cp["experiment"]) if cp.has_section("experiment") else {}
    bad += [f"experiment.{k}" for k in exp if k not in EXPERIMENT_KEYS]
    kwargs: dict = {"experiment": exp.get("experiment", "").strip()}
    try:
        if "seeds" in exp:
            kwargs["seeds"] = tuple(int(s) for s in exp["seeds"].replace(",", " ").split())
        if "workers" in exp:
            kwargs["workers"] = int(exp["workers"])
        if "plots" in exp:
            kwargs["plots"] = _coerce(exp["plots"], True)
    except ValueError:
        bad.append("experiment.seeds/workers/plots")
    for k in ("output_dir", "label"):
        if k in exp:
            kwargs[k] = exp[k].strip()

    dataset = dict(DATASET_KEYS)
    if cp.has_section("dataset"):
        for key, text in cp["dataset"].items():
            if key not in DATASET_KEYS:
                bad.append(f"dataset.{key}")
                continue
            try:
                if key in ("model", "csv_path"):
                    dataset[key] = text.strip() or None
                elif key in ("n_points", "noise_seed"):
                    dataset[key] = int(text)
                else:
                    dataset[key] = float(text)
            except ValueError:
                bad.append(f"dataset.{key}")
    kwargs["dataset"] = dataset

    sections = {
        "ekenstam": pinn_ekenstam.EkenstamInverseConfig,
        "emsley": pinn_emsley.EmsleyInverseConfig,
        "symreg": symreg.SymregConfig,
    }
    extra = {}
    for name, cls in sections.items():
        sec = dict(cp[name]) if cp.has_section(name) else {}
        if name == "symreg":
            for k in SYMREG_EXTRA:
                if k in sec:
                    extra[k] = sec.pop(k).strip()
        sub = _section_to_dataclass(cls, sec, name, bad)
        if name == "symreg" and "normalize" not in sec:
            # h samples are O(0.01-0.1); search with an O(1) leading coefficient
            sub["normalize"] = "initial"
        try:
            kwargs[name] = cls(**sub)
        except (ValueError, TypeError) as exc:
            bad.append(f"{name} ({exc})")
    kwargs["symreg_extra"] = extra
    if bad:
        raise ConfigError("invalid configuration keys", bad)
    return ExperimentConfig(**kwargs)


def load_config(path, overrides=None) -> ExperimentConfig:
    if path is None:
        return parse_config("", overrides)
    if not os.path.isfile(path):
        raise FileNotFoundError(f"config file not found: {path}")
    with open(path) as fh:
        return parse_config(fh.read(), overrides)


# -------------------------------------------------------------- datasets


def ekenstam_truth(ds: dict) -> EkenstamModel:
    return EkenstamModel(ArrheniusParams(ds["A"], ds["E"], ds["T"]), ds["dp0"] or 1100.0)


def emsley_truth(ds: dict) -> EmsleyParams:
    return EmsleyParams(ds["dp0"] or 1190.0, ds["k1_0"], ds["k2"])


def build_dataset(cfg: ExperimentConfig) -> tuple[TimeSeries, dict | None]:
    """The training series and, for synthetic data, the generating parameters."""
    ds = cfg.dataset
    model = ds["model"] if cfg.experiment == "simulate" else (
        "emsley" if cfg.experiment == "emsley_discovery" else "ekenstam"
    )
    if ds.get("csv_path"):
        if not os.path.isfile(ds["csv_path"]):
            raise FileNotFoundError(f"dataset file not found: {ds['csv_path']}")
        return load_csv(ds["csv_path"], anchor_dp=ds["anchor_dp"]), None
    if model == "ekenstam":
        truth = ekenstam_truth(ds)
        series = make_ekenstam_dataset(truth, int(ds["n_points"] or 24), float(ds["horizon_years"] or 40.0))
        meta = {"A": truth.params.A, "E": truth.params.E, "T": truth.params.T, "R": truth.params.R, "dp0": truth.dp0}
    elif model == "emsley":
        truth = emsley_truth(ds)
        n = int(ds["n_points"] or cfg.emsley.n_train)
        horizon = float(ds["horizon_years"]) * HOURS_PER_YEAR if ds["horizon_years"] else cfg.emsley.horizon_hours
        series = make_emsley_dataset(truth, n, horizon)
        meta = {"dp0": truth.dp0, "k1_0": truth.k1_0, "k2": truth.k2}
    else:
        raise ConfigError(f"unknown dataset model {model!r}", ["dataset.model"])
    if ds["noise_pct"]:
        series = add_noise(series, ds["noise_pct"] / 100.0, ds["noise_seed"])
    return series, meta


def read_h_samples(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(h.strip() for h in rows[0]) != pinn_emsley.H_SAMPLE_COLUMNS:
        raise ValueError(f"{path}: expected header {','.join(pinn_emsley.H_SAMPLE_COLUMNS)}")
    return np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=np.float64)


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([x if isinstance(x, str) else format(float(x), ".17g") if not float(x).is_integer() else str(int(x)) for x in r])


# --------------------------------------------------------------- per seed


def _ekenstam_seed(series, cfg_dict, seed, seed_dir):
    cfg = pinn_ekenstam.EkenstamInverseConfig(**{**cfg_dict, "seed": seed})
    fit = pinn_ekenstam.train(series, cfg)
    epochs = np.arange(cfg.epochs)
    write_rows(
        os.path.join(seed_dir, "history.csv"),
        ["epoch", "mse_data", "mse_ode", "lnA", "E_over_RT"],
        np.column_stack([epochs, fit.loss_history, fit.param_trajectory]),
    )
    write_csv(fit.dp_prediction, os.path.join(seed_dir, "prediction.csv"))
    return {"non_monotone_points": fit.non_monotone_points}


def _emsley_seed(series, cfg_dict, seed, seed_dir):
    cfg = pinn_emsley.EmsleyInverseConfig(**{**cfg_dict, "seed": seed})
    fit = pinn_emsley.fit_series(series, cfg)
    write_rows(
        os.path.join(seed_dir, "history.csv"),
        ["epoch", "mse_data", "mse_ic", "mse_ode", "k2_scaled"],
        np.column_stack([np.arange(cfg.epochs), fit.loss_history, fit.k2_trajectory]),
    )
    write_rows(os.path.join(seed_dir, "h_samples.csv"), list(pinn_emsley.H_SAMPLE_COLUMNS), fit.h_samples)
    write_csv(fit.test_prediction, os.path.join(seed_dir, "prediction.csv"))
    return {}


def _symreg_seed(samples, cfg_dict, seed, seed_dir):
    fields = {f.name for f in dataclasses.fields(symreg.SymregConfig)}
    cfg = symreg.SymregConfig(**{k: v for k, v in cfg_dict.items() if k in fields}, seed=seed)
    front = symreg.evolve(samples[:, :3], samples[:, 3], cfg, symreg.DEFAULT_FEATURES)
    write_front(front, os.path.join(seed_dir, "front.csv"))
    return {}


def write_front(front, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["complexity", "loss", "score", "expression"])
        for e in front:
            w.writerow([e.complexity, format(e.loss, ".17g"), format(e.score, ".17g"), symreg.canonical_string(e.expr)])


_SEED_RUNNERS = {
    "ekenstam_inverse": _ekenstam_seed,
    "emsley_discovery": _emsley_seed,
    "symreg_only": _symreg_seed,
}


def _run_one(kind, payload, cfg_dict, seed, out_dir):
    seed_dir = os.path.join(out_dir, f"seed_{seed}")
    os.makedirs(seed_dir, exist_ok=True)
    try:
        info = _SEED_RUNNERS[kind](payload, cfg_dict, seed, seed_dir)
        status = {"seed": seed, "status": "ok", **info}
    except TrainingDivergenceError as exc:
        logger.error("seed %d diverged: %s", seed, exc)
        status = {"seed": seed, "status": "diverged", "message": str(exc), "epoch": exc.epoch}
    with open(os.path.join(seed_dir, "status.json"), "w") as fh:
        json.dump(status, fh, indent=2)
    return status


# ------------------------------------------------------------------- runs


def _module_config(cfg: ExperimentConfig) -> tuple[str, dict]:
    if cfg.experiment == "ekenstam_inverse":
        return "ekenstam", pinn_ekenstam.config_dict(cfg.ekenstam)
    if cfg.experiment == "emsley_discovery":
        return "emsley", pinn_emsley.config_dict(cfg.emsley)
    d = dataclasses.asdict(cfg.symreg)
    d["binary_ops"], d["unary_ops"] = list(cfg.symreg.binary_ops), list(cfg.symreg.unary_ops)
    return "symreg", d


def _drop_seed(d: dict) -> dict:
    return {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items() if k != "seed"}


def execute(cfg: ExperimentConfig) -> dict:
    """Run ``cfg`` for every seed, then aggregate; returns the summary."""
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    if cfg.experiment == "simulate":
        series, meta = build_dataset(cfg)
        write_csv(series, os.path.join(out, "data.csv"))
        summary = {"experiment": "simulate", "rows": len(series), "truth": meta, "warnings": list(series.warnings)}
        _dump(os.path.join(out, reporting.SUMMARY_FILE), summary)
        return summary

    section, mod_cfg = _module_config(cfg)
    run = {
        "experiment": cfg.experiment,
        "label": cfg.label,
        "seeds": list(cfg.seeds),
        section: mod_cfg,
        "dataset": cfg.dataset,
        "truth": None,
    }
    if cfg.experiment == "symreg_only":
        payload, run = _symreg_payload(cfg, run)
    else:
        payload, truth = build_dataset(cfg)
        run["truth"] = truth
        if cfg.experiment == "emsley_discovery":
            if payload.k1 is None:
                raise ConfigError("emsley_discovery needs a dataset with a k1 column", ["dataset.csv_path"])
            sc = cfg.emsley.scaling
            run["scaling"] = {"time_scale": sc.time_scale, "dp_scale": sc.dp_scale, "k1_scale": sc.k1_scale}
        write_csv(payload, os.path.join(out, "data.csv"))
    _dump(os.path.join(out, reporting.RUN_FILE), run)

    cfg_dict = _drop_seed(mod_cfg)
    workers = max(1, min(cfg.workers, len(cfg.seeds), os.cpu_count() or 1))
    if workers == 1:
        statuses = [_run_one(cfg.experiment, payload, cfg_dict, s, out) for s in cfg.seeds]
    else:
        with cf.ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(_run_one, cfg.experiment, payload, cfg_dict, s, out) for s in cfg.seeds]
            statuses = [f.result() for f in futs]

    summary = reporting.aggregate(out)
    summary["status"] = statuses
    _dump(os.path.join(out, reporting.SUMMARY_FILE), summary)
    if cfg.plots:
        write_plots(out, cfg.experiment, summary)
    return summary


def _symreg_payload(cfg, run):
    ds = cfg.dataset
    extra = cfg.symreg_extra
    run["symreg"]["selection"] = extra.get("selection", "score_within_2x")
    if ds.get("csv_path"):
        if not os.path.isfile(ds["csv_path"]):
            raise FileNotFoundError(f"h-sample file not found: {ds['csv_path']}")
        samples = read_h_samples(ds["csv_path"])
    else:
        truth = emsley_truth(ds)
        samples = pinn_emsley.exact_h_samples(truth, cfg.emsley)
        run["truth"] = {"dp0": truth.dp0, "k1_0": truth.k1_0, "k2": truth.k2}
        extra.setdefault("target_exponents", "2,1,0")
        extra.setdefault("target_coefficient", str(-pinn_emsley.rhs_coefficient(cfg.emsley.scaling)))
    if "target_exponents" in extra:
        try:
            run["target_monomial"] = {
                "exponents": [int(x) for x in extra["target_exponents"].split(",")],
                "coefficient": float(extra["target_coefficient"]),
            }
        except (KeyError, ValueError):
            raise ConfigError("target_exponents needs a matching target_coefficient", ["symreg.target_exponents"]) from None
    write_rows(os.path.join(cfg.output_dir, "h_samples.csv"), list(pinn_emsley.H_SAMPLE_COLUMNS), samples)
    return samples, run


def _dump(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, (tuple, np.ndarray)):
        return list(o)
    raise TypeError(type(o).__name__)


def write_plots(out, kind, summary) -> list[str]:
    plots = os.path.join(out, "plots")
    os.makedirs(plots, exist_ok=True)
    written = []
    if kind in ("ekenstam_inverse", "emsley_discovery"):
        loss_cols = ("mse_data", "mse_ode") if kind == "ekenstam_inverse" else ("mse_data", "mse_ic", "mse_ode")
        series = {}
        for seed in summary["seeds"]:
            hist = reporting.read_table(os.path.join(out, f"seed_{seed}", "history.csv"))
            series[f"seed {seed}"] = (hist["epoch"], sum(hist[c] for c in loss_cols))
        path = os.path.join(plots, "loss.svg")
        with open(path, "w") as fh:
            fh.write(reporting.line_plot(series, title="total loss", xlabel="epoch", ylabel="loss", log_y=True))
        written.append(path)
    written += reporting.write_box_plots(summary, plots)
    return written


def run(config_path, overrides=None) -> int:
    """Execute the experiment described by ``config_path``; returns an exit status."""
    try:
        cfg = load_config(config_path, overrides)
        execute(cfg)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        logger.error("%s", exc)
        return 2
    return 0


# -------------------------------------------------------------------- main


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dpdiscover", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config")
        sp.add_argument("--seed", type=int, action="append", help="run only this seed (repeatable)")
        sp.add_argument("--out")
        sp.add_argument("--no-plots", action="store_true")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
        if name == "symreg":
            sp.add_argument("--input", help="h-sample CSV (dp_scaled,k1_scaled,t_scaled,h_pred)")
    rp = sub.add_parser("report")
    rp.add_argument("runs", nargs="*", help="run directories (default: --out)")
    rp.add_argument("--config")
    rp.add_argument("--out")
    rp.add_argument("--no-plots", action="store_true")
    return p


def main(argv: typing.Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    if args.command == "report":
        runs = args.runs or ([args.out] if args.out else [])
        if not runs and args.config:
            runs = [load_config(args.config).output_dir]
        if not runs:
            print("report: no run directory given", file=sys.stderr)
            return 2
        try:
            text = reporting.report(runs, out_dir=args.out or runs[0], plots=not args.no_plots)
        except reporting.ReportError as exc:
            print(f"report: {exc}", file=sys.stderr)
            return 1
        print(text, end="")
        return 0

    overrides = {"experiment.experiment": SUBCOMMANDS[args.command]}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep or "." not in key:
            print(f"--set expects SECTION.KEY=VALUE, got {item!r}", file=sys.stderr)
            return 2
        overrides[key.strip()] = value
    if args.seed:
        overrides["experiment.seeds"] = ",".join(str(s) for s in args.seed)
    if args.out:
        overrides["experiment.output_dir"] = args.out
    if args.no_plots:
        overrides["experiment.plots"] = "false"
    if getattr(args, "input", None):
        overrides["dataset.csv_path"] = args.input
    try:
        cfg = load_config(args.config, overrides)
        summary = execute(cfg)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(_brief(summary), indent=2, default=_json_default))
    return 0


def _brief(summary: dict) -> dict:
    if "stats" not in summary:
        return summary
    return {
        "experiment": summary["experiment"],
        "label": summary["label"],
        "median": {k: v["median"] for k, v in summary["stats"].items()},
        "warnings": summary["warnings"],
    }


if __name__ == "__main__":
    sys.exit(main())
