"""Batch experiments, report files and cross-summary comparison."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import dispatch, gasflow, netmodel
from .conic import SolverSettings

log = logging.getLogger(__name__)

CSV_VERSION = 1
TRACE_COLUMNS = ("ell", "rho", "rho_lo", "rho_hi", "violation", "violated", "P", "wall_time")
DEVIATION_COLUMNS = ("pipe", "h", "phi", "w", "delta", "flag")
SUMMARY_COLUMNS = (
    "case",
    "seed",
    "model",
    "r",
    "status",
    "eps",
    "eps_pct",
    "mean_abs_J",
    "rho_bar",
    "n_iter",
    "violation",
    "mean_abs_deviation",
    "undefined_deviations",
    "error",
    "wall_time",
)
TIMING_COLUMNS = ("wall_time",)
DEFAULT_MODELS = ("misoc", "pwa20", "pwa45")
COMPARE_METRICS = ("eps_pct", "rho_bar", "wall_time", "mean_abs_deviation")


class ConfigError(ValueError):
    pass


def load_schema(name: str) -> dict:
    return json.loads(resources.files("iegds").joinpath(f"schemas/{name}.schema.json").read_text())


@lru_cache(maxsize=None)
def _validator(name: str):
    schema = load_schema(name)
    cls = jsonschema.validators.validator_for(schema)
    cls.check_schema(schema)
    return cls(schema)


def check(instance, name: str) -> None:
    """Raise the most relevant jsonschema.ValidationError, if any."""
    err = jsonschema.exceptions.best_match(_validator(name).iter_errors(instance))
    if err is not None:
        raise err


# --------------------------------------------------------------------------- configuration


def parse_model(label: str) -> tuple[str, int | None]:
    """``misoc`` or ``pwa<r>`` to (model, r)."""
    if label == "misoc":
        return gasflow.MISOC, None
    m = re.fullmatch(r"pwa(\d+)", label)
    if not m or int(m.group(1)) < 2:
        raise ConfigError(f"unknown model label {label!r}")
    return gasflow.PWA, int(m.group(1))


def model_label(model: str, r: int | None) -> str:
    return "misoc" if model == gasflow.MISOC else f"pwa{r}"


@dataclass
class RunConfig:
    network: str
    base_dir: Path = Path(".")
    horizon: int | None = None
    model: str = gasflow.MISOC
    r: int | None = None
    models: tuple[str, ...] = DEFAULT_MODELS
    seeds: tuple[int, ...] = ()
    knobs: dict = field(default_factory=dict)
    out: str = "out"
    jobs: int = 1
    include_strategy: bool = False
    solver: SolverSettings = field(default_factory=SolverSettings)
    algorithm: dispatch.DispatchSettings = field(default_factory=dispatch.DispatchSettings)

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path | str = ".") -> "RunConfig":
        try:
            check(data, "config")
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "config"
            raise ConfigError(f"{where}: {exc.message}") from None
        solver = SolverSettings(**data.get("solver", {}))
        alg = dict(data.get("algorithm", {}))
        if "weights" in alg:
            alg["weights"] = tuple(alg["weights"])
        algorithm = dispatch.DispatchSettings(solver=solver, **alg)
        model = data.get("model", gasflow.MISOC)
        r = data.get("r")
        if model == gasflow.PWA and r is None:
            raise ConfigError("r: required when model is pwa")
        models = tuple(data.get("models", DEFAULT_MODELS))
        for m in models:
            parse_model(m)
        netmodel.CaseKnobs.from_dict(data.get("knobs"))
        return cls(
            network=data["network"],
            base_dir=Path(base_dir),
            horizon=data.get("horizon"),
            model=model,
            r=r,
            models=models,
            seeds=tuple(data.get("seeds", ())),
            knobs=dict(data.get("knobs", {})),
            out=data.get("out", "out"),
            jobs=data.get("jobs", 1),
            include_strategy=data.get("include_strategy", False),
            solver=solver,
            algorithm=algorithm,
        )

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        text = path.read_text()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(data, path.parent)

    def load_network(self) -> netmodel.Network:
        if self.network.startswith("bundled:"):
            net = netmodel.load_bundled(self.network.split(":", 1)[1])
        else:
            p = Path(self.network)
            net = netmodel.load_network(p if p.is_absolute() else self.base_dir / p)
        if self.horizon is not None:
            net = netmodel.resample_horizon(net, self.horizon)
        return net


# --------------------------------------------------------------------------- report files


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        if math.isinf(v):
            return "inf"
        return repr(v)
    return str(v)


def _csv(rows: list[dict], columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def write_outcome(outcome: dispatch.DispatchOutcome, out_dir: Path, include_strategy: bool = False) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = outcome.to_dict(include_strategy=include_strategy)
    check(doc, "outcome")
    (out_dir / "outcome.json").write_text(json.dumps(doc, indent=1) + "\n")
    (out_dir / "trace.csv").write_text(_csv(doc["trace"], TRACE_COLUMNS))
    (out_dir / "deviations.csv").write_text(_csv(doc["deviations"], DEVIATION_COLUMNS))
    return doc


# --------------------------------------------------------------------------- batch


def _case_row(net: netmodel.Network, seed: int, label: str, cfg: RunConfig, out_dir: Path | None) -> dict:
    model, r = parse_model(label)
    row = {c: None for c in SUMMARY_COLUMNS}
    row.update(case=net.name, seed=seed, model=label, r=r or 0, n_iter=0, undefined_deviations=0, error="")
    try:
        outcome = dispatch.run_two_stage(net, model, r, cfg.algorithm)
    except (dispatch.DispatchError, ValueError, RuntimeError) as exc:
        log.error("case %s model %s failed: %s", net.name, label, exc)
        row.update(status="error", error=str(exc), wall_time=0.0)
        return row
    if out_dir is not None:
        write_outcome(outcome, out_dir / f"{net.name}-{label}")
    row.update(
        status=outcome.status,
        eps=outcome.eps,
        eps_pct=outcome.eps_pct,
        mean_abs_J=outcome.mean_abs_J,
        rho_bar=outcome.rho_bar,
        n_iter=len(outcome.trace),
        violation=outcome.violation,
        mean_abs_deviation=outcome.mean_abs_deviation,
        undefined_deviations=sum(1 for d in outcome.deviations if d.flag),
        wall_time=outcome.wall_time,
    )
    return row


def _job(args):
    template_dict, seed, label, cfg, out_dir = args
    template = netmodel.network_from_dict(template_dict)
    net = netmodel.generate_case(template, seed, netmodel.CaseKnobs.from_dict(cfg.knobs))
    return _case_row(net, seed, label, cfg, out_dir)


def five_numbers(values) -> list[float] | None:
    v = np.asarray([x for x in values if x is not None], float)
    if not v.size:
        return None
    return [float(x) for x in np.quantile(v, [0.0, 0.25, 0.5, 0.75, 1.0])]


def aggregate(rows: list[dict], models) -> dict:
    ok = [r for r in rows if r["status"] in dispatch.SUCCESS]
    per = {}
    for m in models:
        mr = [r for r in rows if r["model"] == m]
        ms = [r for r in mr if r["status"] in dispatch.SUCCESS]
        per[m] = {
            "cases": len(mr),
            "success": len(ms),
            "success_rate": len(ms) / len(mr) if mr else 0.0,
            "quantiles": {k: five_numbers(r[k] for r in ms) for k in COMPARE_METRICS},
        }
    return {"success_rate": len(ok) / len(rows) if rows else 0.0, "per_model": per}


@dataclass
class BatchSummary:
    network: str
    seeds: list
    models: list
    rows: list
    aggregate: dict

    def to_dict(self) -> dict:
        return {
            "format": "iegds-summary-v1",
            "csv_version": CSV_VERSION,
            "network": self.network,
            "seeds": list(self.seeds),
            "models": list(self.models),
            "rows": self.rows,
            "aggregate": self.aggregate,
        }

    def csv(self) -> str:
        return _csv(self.rows, SUMMARY_COLUMNS)

    @property
    def success_rate(self) -> float:
        return self.aggregate["success_rate"]


def run_batch(cfg: RunConfig, out_dir: Path | None = None, write_cases: bool = True) -> BatchSummary:
    """All seeds times all models; rows ordered by (seed, model list order)."""
    if not cfg.seeds:
        raise ConfigError("seeds: required for batch")
    template = cfg.load_network()
    tdict = netmodel.network_to_dict(template)
    case_dir = (out_dir / "cases") if (out_dir is not None and write_cases) else None
    jobs = [(tdict, s, m, cfg, case_dir) for s in cfg.seeds for m in cfg.models]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as ex:
            rows = list(ex.map(_job, jobs))
    else:
        rows = [_job(j) for j in jobs]
    summary = BatchSummary(template.name, list(cfg.seeds), list(cfg.models), rows, aggregate(rows, cfg.models))
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        doc = summary.to_dict()
        check(doc, "summary")
        (out_dir / "summary.json").write_text(json.dumps(doc, indent=1) + "\n")
        (out_dir / "summary.csv").write_text(summary.csv())
    return summary


def strip_timing(csv_text: str) -> str:
    """Drop timing columns so two summaries can be compared byte for byte."""
    rows = list(csv.reader(io.StringIO(csv_text)))
    keep = [i for i, c in enumerate(rows[0]) if c not in TIMING_COLUMNS]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in rows:
        w.writerow([row[i] for i in keep])
    return buf.getvalue()


# --------------------------------------------------------------------------- comparison


class IncompatibleSummaries(ValueError):
    pass


def _case_set(doc: dict) -> set:
    return {(r["case"], r["model"]) for r in doc["rows"]}


def compare(docs: list[tuple[str, dict]]) -> tuple[str, dict]:
    """Per-model quantile table (CSV) and five-number plot data.

    Every summary must cover the same (case, model) pairs. Delta columns are
    differences of means against the first summary.
    """
    if not docs:
        raise IncompatibleSummaries("nothing to compare")
    ref = _case_set(docs[0][1])
    for name, doc in docs[1:]:
        if _case_set(doc) != ref:
            raise IncompatibleSummaries(f"{name} covers different cases than {docs[0][0]}")
    models = list(dict.fromkeys(m for _, d in docs for m in d["models"]))
    cols = ["summary", "model", "cases", "success_rate"]
    for k in COMPARE_METRICS:
        cols += [f"{k}_{q}" for q in ("min", "q1", "median", "q3", "max")] + [f"{k}_mean", f"{k}_delta"]
    table, series = [], []

    def mean_of(doc, m, k):
        v = [r[k] for r in doc["rows"] if r["model"] == m and r["status"] in dispatch.SUCCESS and r[k] is not None]
        return float(np.mean(v)) if v else None

    for name, doc in docs:
        for m in models:
            mr = [r for r in doc["rows"] if r["model"] == m]
            ms = [r for r in mr if r["status"] in dispatch.SUCCESS]
            row = {"summary": name, "model": m, "cases": len(mr), "success_rate": len(ms) / len(mr) if mr else 0.0}
            for k in COMPARE_METRICS:
                five = five_numbers(r[k] for r in ms)
                for q, v in zip(("min", "q1", "median", "q3", "max"), five or [None] * 5):
                    row[f"{k}_{q}"] = v
                mean = mean_of(doc, m, k)
                base = mean_of(docs[0][1], m, k)
                row[f"{k}_mean"] = mean
                row[f"{k}_delta"] = None if mean is None or base is None else mean - base
                series.append(
                    {"summary": name, "model": m, "metric": k, "n": sum(r[k] is not None for r in ms), "five": five}
                )
            table.append(row)
    plot = {"format": "iegds-plot-v1", "metrics": list(COMPARE_METRICS), "series": series}
    check(plot, "plot")
    return _csv(table, cols), plot

