"""Experiment orchestration: configuration, CSV ingestion, replications and reports.

Every replication draws its own seed from ``(master seed, rep index)`` so the
rows of a report do not depend on execution order or on the number of
workers. Reports are written as CSV or JSON lines with a fixed column order,
followed by per-method aggregates and an echo of the effective config.
"""
from __future__ import annotations

import configparser
import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import dgp, learners, metrics, residvar, stabilizer
from .dataset import BINARY, MULTI, Dataset
from .errors import InvalidConfig, InvalidInput, ParseError, UndefinedValue
from .linmod import Regularization, fit_propensity

COLUMNS = ("method", "scenario", "n", "p", "rep", "seed", "ape", "misclass", "value",
           "resid_family", "lambda")
METRIC_COLUMNS = ("ape", "misclass", "value")
MISSING = "NA"
MODES = ("simulate", "fit", "evaluate", "mccv", "export-dgp")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to rerun an experiment.

    ``methods`` lists the learners to fit on each replication; a stabilized
    method reuses the fit of its base method within the same replication.
    ``propensity`` is ``"constant"`` (``pi`` or ``1/K``), ``"column"`` (read
    from ``propensity_column``) or ``"estimate"`` (logistic/multinomial fit).
    """

    mode: str = "simulate"
    scenario: int | None = None
    input: str | None = None
    methods: tuple = ("D", "SD")
    n: int | None = None
    p: int | None = None
    reps: int = 100
    n_test: int = 10_000
    folds: int = 5
    seed: int = 0
    candidates: tuple = residvar.FAMILIES
    outcome: str = "r"
    treatment: str = "a"
    covariates: tuple | None = None
    propensity: str = "constant"
    pi: float | None = None
    propensity_column: str = "pi"
    binary01: bool = False
    K: int | None = None
    output: str | None = None
    format: str = "csv"
    workers: int = 1
    model: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidConfig(f"unknown mode {self.mode!r}")
        if self.reps < 1:
            raise InvalidConfig("reps must be at least 1")
        if self.folds < 2:
            raise InvalidConfig("folds must be at least 2")
        bad = set(self.methods) - set(learners.KINDS)
        if bad or not self.methods:
            raise InvalidConfig(f"unknown methods {sorted(bad)}; choose from {learners.KINDS}")
        bad = set(self.candidates) - set(residvar.FAMILIES)
        if bad or not self.candidates:
            raise InvalidConfig(f"unknown residual families {sorted(bad)}")
        if self.propensity not in ("constant", "column", "estimate"):
            raise InvalidConfig(f"unknown propensity source {self.propensity!r}")
        if self.format not in ("csv", "jsonl"):
            raise InvalidConfig("format must be csv or jsonl")
        if self.workers < 1:
            raise InvalidConfig("workers must be at least 1")

    def residvar_config(self):
        return stabilizer.ResidVarConfig(tuple(self.candidates), self.folds)

    def regularization(self):
        return Regularization("lasso", folds=self.folds)


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(key, value):
    if key not in _TYPES:
        raise InvalidConfig(f"unknown config key {key!r}")
    if value is None or isinstance(value, (tuple, list, bool, int, float)) and not isinstance(value, str):
        return tuple(value) if isinstance(value, list) else value
    text = str(value).strip()
    kind = _TYPES[key]
    try:
        if kind == "tuple" or kind.startswith("tuple"):
            return tuple(s.strip() for s in text.split(",") if s.strip())
        if kind == "bool":
            low = text.lower()
            if low not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError(text)
            return low in ("1", "true", "yes")
        if kind.startswith("int"):
            return int(text)
        if kind.startswith("float"):
            return float(text)
    except ValueError:
        raise InvalidConfig(f"bad value {text!r} for {key}") from None
    return text


def load_config(path=None, **overrides) -> ExperimentConfig:
    """Read ``key = value`` lines (no section header needed) and apply overrides.

    Overrides set to ``None`` are ignored, so argparse namespaces can be
    passed through directly.
    """
    values = {}
    if path is not None:
        parser = configparser.ConfigParser()
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise InvalidConfig(f"cannot read config {path}: {exc}") from None
        try:
            parser.read_string("[experiment]\n" + text)
        except configparser.Error as exc:
            raise InvalidConfig(f"malformed config {path}: {exc}") from None
        values.update(parser["experiment"])
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**{k: _coerce(k, v) for k, v in values.items()})


# ---------------------------------------------------------------- CSV ingestion


def _parse_float(text, row, col):
    if text is None or text.strip() == "":
        raise ParseError(row, col, "missing value")
    try:
        v = float(text)
    except ValueError:
        raise ParseError(row, col, f"not a number: {text!r}") from None
    if not math.isfinite(v):
        raise ParseError(row, col, f"non-finite value {text!r}")
    return v


def load_csv(path, outcome="r", treatment="a", covariates: Sequence[str] | None = None,
             propensity="constant", pi=None, propensity_column="pi", binary01=False,
             K=None) -> Dataset:
    """Read a header-first CSV into a ``Dataset`` and prepend the intercept.

    Arms ``-1/+1`` give a binary dataset (``0/1`` too when ``binary01``);
    integer labels ``1..K`` give a multi-arm dataset. Row numbers in errors
    are file line numbers, the header being line 1.
    """
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InvalidInput(f"cannot open {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise InvalidInput(f"{path} has no header row")
        header = [h.strip() for h in header]
        if covariates is None:
            skip = {outcome, treatment} | ({propensity_column} if propensity == "column" else set())
            covariates = [h for h in header if h not in skip]
        needed = [outcome, treatment, *covariates]
        if propensity == "column":
            needed.append(propensity_column)
        missing = [c for c in needed if c not in header]
        if missing:
            raise InvalidConfig(f"columns {missing} not found in {path}")
        pos = {h: i for i, h in enumerate(header)}
        rows = []
        for line, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise ParseError(line, None, f"expected {len(header)} fields, found {len(rec)}")
            rows.append([_parse_float(rec[pos[c]], line, c) for c in needed])
    if not rows:
        raise InvalidInput(f"{path} has no data rows")
    M = np.array(rows)
    R, A = M[:, 0], M[:, 1]
    X = np.column_stack([np.ones(len(M)), M[:, 2: 2 + len(covariates)]])
    if np.any(A != np.round(A)):
        raise InvalidInput("arm labels must be integers")
    A = A.astype(int)
    labels = set(A.tolist())
    if binary01 and labels <= {0, 1}:
        A = np.where(A == 1, 1, -1)
        labels = set(A.tolist())
    if labels <= {-1, 1}:
        mode, K = BINARY, 2
    else:
        K = int(K or max(labels))
        if not labels <= set(range(1, K + 1)):
            raise InvalidInput(f"unknown arm labels {sorted(labels - set(range(1, K + 1)))}")
        mode = MULTI
    if propensity == "column":
        p_vec = M[:, -1]
    elif propensity == "estimate":
        p_vec = fit_propensity(X, A, K).propensity(X, A)
    else:
        p_vec = np.full(len(M), 1.0 / K if pi is None else float(pi))
    return Dataset(X, A, R, p_vec, K, mode)


def load_config_csv(config: ExperimentConfig, path=None) -> Dataset:
    return load_csv(path or config.input, config.outcome, config.treatment, config.covariates,
                    config.propensity, config.pi, config.propensity_column, config.binary01,
                    config.K)


def write_dataset_csv(data: Dataset, path, names: Sequence[str] | None = None):
    """Write ``data`` as ``x1..x{p-1}, a, r, pi`` (intercept dropped)."""
    names = list(names or [f"x{j}" for j in range(1, data.p)])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + ["a", "r", "pi"])
        for i in range(data.n):
            w.writerow([repr(float(v)) for v in data.X[i, 1:]]
                       + [int(data.A[i]), repr(float(data.R[i])), repr(float(data.pi[i]))])


# ---------------------------------------------------------------- fitting


def fit_methods(data: Dataset, methods: Sequence[str], config: ExperimentConfig, seed=0) -> dict:
    """Fit each requested method; stabilized methods reuse their base fit."""
    reg = config.regularization()
    base_of = {v: k for k, v in learners.STABILIZED.items()}
    bases = {}
    out = {}
    for m in methods:
        b = base_of.get(m, m)
        if b not in bases:
            bases[b] = learners.fit_base(data, b, reg, seed)
        if m == b:
            out[m] = bases[b]
        else:
            out[m] = stabilizer.stabilize(data, b, config.residvar_config(), reg, seed,
                                          base_model=bases[b])
    return out


def _check_pairing(spec: dgp.ScenarioSpec, methods):
    multi = {"AD", "SAD"}
    for m in methods:
        if (m in multi) != (spec.mode == MULTI):
            raise InvalidConfig(f"method {m} cannot run on {spec.mode} scenario {spec.id}")


def rep_seed(master, rep) -> int:
    """Seed of replication ``rep``; depends only on ``(master, rep)``."""
    ss = np.random.SeedSequence(int(master), spawn_key=(int(rep),))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def _resid_family(model):
    return model.variance_model.family if model.variance_model is not None else ""


def _simulate_rep(config: ExperimentConfig, spec, rep):
    seed = rep_seed(config.seed, rep)
    n = config.n or spec.n
    p = config.p or spec.p
    train = dgp.generate(spec, n, p, np.random.SeedSequence(seed, spawn_key=(0,)))
    test = dgp.generate(spec, config.n_test, p, np.random.SeedSequence(seed, spawn_key=(1,)))
    models = fit_methods(train.dataset, config.methods, config, seed % 2**32)
    rows = []
    for m in config.methods:
        ev = metrics.evaluate(models[m], test.truth_scores, test.optimal, test.dataset)
        rows.append(ReportRow(m, str(spec.id), n, p, rep, seed, ev.ape, ev.misclassification,
                              ev.value, _resid_family(models[m]), models[m].lam))
    return rows


def _run_parallel(fn, items, workers):
    if workers == 1:
        return [fn(i) for i in items]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=workers)(delayed(fn)(i) for i in items)


# ---------------------------------------------------------------- reports


@dataclass(frozen=True)
class ReportRow:
    method: str
    scenario: str
    n: int
    p: int
    rep: int
    seed: int
    ape: float
    misclass: float
    value: float
    resid_family: str
    lam: float

    def values(self):
        return (self.method, self.scenario, self.n, self.p, self.rep, self.seed, self.ape,
                self.misclass, self.value, self.resid_family, self.lam)


@dataclass
class ExperimentReport:
    rows: list
    config: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    dropped: dict = field(default_factory=dict)

    def methods(self):
        return list(dict.fromkeys(r.method for r in self.rows))

    def column(self, method, metric):
        return np.array([getattr(r, metric) for r in self.rows if r.method == method], dtype=float)

    def aggregates(self) -> dict:
        """``{method: {metric: (mean, sem)}}``; SEM is NaN with a single row.

        Metrics missing on every row (APE and misclassification in MCCV) are
        left out.
        """
        agg = {}
        for m in self.methods():
            agg[m] = {}
            for metric in METRIC_COLUMNS:
                v = self.column(m, metric)
                if np.all(np.isnan(v)):
                    continue
                if v.size == 1:
                    agg[m][metric] = (float(v[0]), float("nan"))
                else:
                    agg[m][metric] = metrics.mean_sem(v)
        return agg


def run_simulation(config: ExperimentConfig) -> ExperimentReport:
    """Replicate the configured scenario ``reps`` times for every method."""
    if config.scenario is None:
        raise InvalidConfig("simulation needs a scenario")
    spec = dgp.scenario(config.scenario)
    _check_pairing(spec, config.methods)
    if (config.p or spec.p) < spec.min_p:
        raise InvalidConfig(f"scenario {spec.id} needs p >= {spec.min_p}")
    t0 = time.perf_counter()
    chunks = _run_parallel(lambda rep: _simulate_rep(config, spec, rep), range(config.reps),
                           config.workers)
    rows = [r for chunk in chunks for r in chunk]
    return ExperimentReport(rows, _echo(config), time.perf_counter() - t0)


def _mccv_iter(config: ExperimentConfig, data: Dataset, n, it):
    seed = rep_seed(config.seed, it)
    perm = np.random.Generator(np.random.Philox(seed)).permutation(data.n)
    train, test = data.subset(np.sort(perm[:n])), data.subset(np.sort(perm[n:]))
    models = fit_methods(train, config.methods, config, seed % 2**32)
    rows, dropped = [], []
    for m in config.methods:
        try:
            v = metrics.empirical_value(models[m], test)
        except UndefinedValue:
            dropped.append(m)
            continue
        rows.append(ReportRow(m, "mccv", n, data.p, it, seed, float("nan"), float("nan"), v,
                              _resid_family(models[m]), models[m].lam))
    return rows, dropped


def run_mccv(config: ExperimentConfig, data: Dataset) -> ExperimentReport:
    """Monte Carlo cross-validation: ``reps`` random splits into ``n`` training rows and the rest.

    Iterations whose test set contains no row matching a method's rule are
    dropped for that method and counted in ``report.dropped``.
    """
    n = config.n if config.n is not None else data.n // 2
    if not 1 <= n < data.n:
        raise InvalidConfig(f"training size must be in [1, {data.n - 1}], got {n}")
    multi = {"AD", "SAD"}
    for m in config.methods:
        if (m in multi) != (data.mode == MULTI):
            raise InvalidConfig(f"method {m} cannot run on {data.mode} data")
    t0 = time.perf_counter()
    results = _run_parallel(lambda it: _mccv_iter(config, data, n, it), range(config.reps),
                            config.workers)
    rows = [r for chunk, _ in results for r in chunk]
    dropped = {m: sum(m in d for _, d in results) for m in config.methods}
    return ExperimentReport(rows, _echo(config), time.perf_counter() - t0, dropped)


def _echo(config):
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(config).items()}


def _fmt(v):
    if isinstance(v, float):
        return MISSING if math.isnan(v) else repr(v)
    return str(v)


def _parse_cell(text):
    return float("nan") if text == MISSING else float(text)


def _json_num(v):
    return None if isinstance(v, float) and math.isnan(v) else v


def write_report(report: ExperimentReport, path, format="csv"):
    """Write rows, then aggregates and the config echo.

    CSV puts the aggregate block and config after the rows on lines starting
    with ``#``. JSON lines tags every object with ``"type"``. An empty report
    is a header-only CSV or an empty JSON-lines file. Floats are written with
    ``repr`` so re-reading is exact.
    """
    path = Path(path)
    if format == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(COLUMNS)
            for r in report.rows:
                w.writerow([_fmt(v) for v in r.values()])
            if report.rows:
                fh.write("#aggregate,method,metric,mean,sem\n")
                for m, agg in report.aggregates().items():
                    for metric, (mean, sem) in agg.items():
                        fh.write(f"#aggregate,{m},{metric},{_fmt(mean)},{_fmt(sem)}\n")
                fh.write("#dropped," + json.dumps(report.dropped, sort_keys=True) + "\n")
                fh.write(f"#wall_clock,{report.wall_clock!r}\n")
                fh.write("#config," + json.dumps(report.config, sort_keys=True) + "\n")
    elif format == "jsonl":
        with open(path, "w") as fh:
            for r in report.rows:
                obj = {"type": "row", **{c: _json_num(v) for c, v in zip(COLUMNS, r.values())}}
                fh.write(json.dumps(obj) + "\n")
            if report.rows:
                for m, agg in report.aggregates().items():
                    for metric, (mean, sem) in agg.items():
                        fh.write(json.dumps({"type": "aggregate", "method": m, "metric": metric,
                                             "mean": _json_num(mean), "sem": _json_num(sem)}) + "\n")
                fh.write(json.dumps({"type": "meta", "dropped": report.dropped,
                                     "wall_clock": report.wall_clock,
                                     "config": report.config}, sort_keys=True) + "\n")
    else:
        raise InvalidConfig("format must be csv or jsonl")


def _row_from(values):
    m, sc, n, p, rep, seed, a, mc, v, fam, lam = values
    return ReportRow(m, sc, int(n), int(p), int(rep), int(seed), a, mc, v, fam or "", lam)


def read_report(path, format=None):
    """Parse a report file; returns ``(report, stored_aggregates)``."""
    path = Path(path)
    format = format or ("jsonl" if path.suffix in (".jsonl", ".json") else "csv")
    rows, stored, report = [], {}, ExperimentReport([])
    if format == "jsonl":
        for line in path.read_text().splitlines():
            obj = json.loads(line)
            if obj["type"] == "row":
                vals = [obj[c] for c in COLUMNS]
                vals[6:9] = [float("nan") if x is None else x for x in vals[6:9]]
                rows.append(_row_from(vals))
            elif obj["type"] == "aggregate":
                sem = float("nan") if obj["sem"] is None else obj["sem"]
                stored.setdefault(obj["method"], {})[obj["metric"]] = (obj["mean"], sem)
            else:
                report.dropped = obj["dropped"]
                report.wall_clock = obj["wall_clock"]
                report.config = obj["config"]
    else:
        with open(path, newline="") as fh:
            lines = fh.read().splitlines()
        for rec in csv.reader([ln for ln in lines[1:] if not ln.startswith("#")]):
            vals = list(rec)
            vals[6:9] = [_parse_cell(x) for x in vals[6:9]]
            vals[10] = float(vals[10])
            rows.append(_row_from(vals))
        for ln in lines:
            if ln.startswith("#aggregate,") and not ln.startswith("#aggregate,method"):
                _, m, metric, mean, sem = ln.split(",")
                stored.setdefault(m, {})[metric] = (_parse_cell(mean), _parse_cell(sem))
            elif ln.startswith("#dropped,"):
                report.dropped = json.loads(ln[len("#dropped,"):])
            elif ln.startswith("#wall_clock,"):
                report.wall_clock = float(ln.split(",", 1)[1])
            elif ln.startswith("#config,"):
                report.config = json.loads(ln[len("#config,"):])
    report.rows = rows
    return report, stored


# ---------------------------------------------------------------- saved models


def model_to_dict(model: learners.ITRModel, covariates=None) -> dict:
    coef = model.B if model.multi else model.beta
    return {"kind": model.kind, "K": model.K, "coefficients": np.asarray(coef).tolist(),
            "lambda": model.lam, "resid_family": _resid_family(model),
            "covariates": list(covariates) if covariates is not None else None}


@dataclass(frozen=True)
class SavedRule:
    """Coefficients of a saved model, enough to recommend arms."""

    kind: str
    K: int
    coefficients: np.ndarray
    covariates: tuple | None = None

    @classmethod
    def from_dict(cls, d):
        cov = tuple(d["covariates"]) if d.get("covariates") is not None else None
        return cls(d["kind"], int(d["K"]), np.asarray(d["coefficients"], dtype=float), cov)

    def predict(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.coefficients.shape[0]:
            raise InvalidInput(f"rows have {X.shape[1]} columns, model expects "
                               f"{self.coefficients.shape[0]}")
        if self.coefficients.ndim == 2:
            from . import encoding

            return encoding.argmax_arm(encoding.rank_scores(X @ self.coefficients, self.K))
        return np.where(X @ self.coefficients >= 0, 1, -1)


def with_overrides(config: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(config, **kw)
