"""Repeated self-training experiments, their aggregate report and audit trail."""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .criteria import PPP_FINE, PPP_U
from .data import Dataset, SimSpec, SplitSpec, load_csv, simulate, split
from .errors import BPLSError, ConfigError
from .prior import Gaussian
from .selftrain import SUPERVISED, SelfTrainConfig, SelfTrainTrace, run_self_training

log = logging.getLogger(__name__)

ABORT_SHARE = 0.2


class BenchAborted(BPLSError, RuntimeError):
    """More than the tolerated share of repetitions failed for some method."""


@dataclass(frozen=True)
class DataSource:
    """Either a CSV file with a target column or a simulation template."""

    csv: str | None = None
    target: str | None = None
    positive: str = "1"
    sim: SimSpec | None = None

    def __post_init__(self):
        if (self.csv is None) == (self.sim is None):
            raise ConfigError("data source needs exactly one of 'csv' or 'simulate'")
        if self.csv is not None and not self.target:
            raise ConfigError("a csv source needs a 'target' column")

    def to_dict(self) -> dict:
        if self.sim is not None:
            s = self.sim
            return {"simulate": {"n": s.n, "q": s.q, "mu": s.mu, "sigma": s.sigma,
                                 "coefficients": None if s.coefficients is None else list(s.coefficients)}}
        return {"csv": self.csv, "target": self.target, "positive": self.positive}

    @classmethod
    def from_dict(cls, d: dict) -> "DataSource":
        if "simulate" in d:
            s = dict(d["simulate"])
            unknown = set(s) - {"n", "q", "mu", "sigma", "coefficients"}
            if unknown:
                raise ConfigError(f"unknown simulate keys: {sorted(unknown)}")
            try:
                return cls(sim=SimSpec(int(s["n"]), int(s["q"]), float(s.get("mu", 0.0)),
                                       float(s.get("sigma", 1.0)), s.get("coefficients")))
            except KeyError as exc:
                raise ConfigError(f"simulate needs {exc.args[0]!r}") from None
        return cls(csv=d.get("csv"), target=d.get("target"), positive=str(d.get("positive", "1")))

    def dataset(self, seed: int, cache: dict | None = None) -> Dataset:
        if self.sim is not None:
            return simulate(replace(self.sim, seed=int(seed)))
        if cache is not None and "csv" in cache:
            return cache["csv"]
        ds = load_csv(self.csv, self.target, self.positive)
        if cache is not None:
            cache["csv"] = ds
        return ds


def _resolve_prior(d: dict | None, source: DataSource) -> dict | None:
    # "mean": "truth" places the prior at the simulation coefficients (intercept 0)
    if not d or d.get("mean") != "truth":
        return d
    if source.sim is None:
        raise ConfigError("prior mean 'truth' needs a simulated data source")
    return {**d, "mean": [0.0, *source.sim.beta.tolist()]}


@dataclass(frozen=True)
class ExperimentConfig:
    source: DataSource
    split: SplitSpec = field(default_factory=SplitSpec)
    methods: tuple[SelfTrainConfig, ...] = ()
    repetitions: int = 1
    seed: int = 0
    out: str | None = None
    name: str = "experiment"

    def __post_init__(self):
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        labels = [m.label for m in self.methods]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"method tags must be unique: {labels}")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "data": self.source.to_dict(),
            "split": {"test_share": self.split.test_share, "unlabeled_share": self.split.unlabeled_share,
                      "standardize": self.split.standardize},
            "methods": [m.to_dict() for m in self.methods],
            "repetitions": self.repetitions,
            "seed": int(self.seed),
            "out": self.out,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {"name", "data", "split", "methods", "repetitions", "seed", "out"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        if "data" not in d:
            raise ConfigError("config needs a 'data' section")
        source = DataSource.from_dict(d["data"])
        sp = dict(d.get("split") or {})
        try:
            split_spec = SplitSpec(float(sp.get("test_share", 0.5)), float(sp.get("unlabeled_share", 0.8)),
                                   0, bool(sp.get("standardize", False)))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        methods = []
        for m in d.get("methods") or []:
            m = dict(m)
            m["prior"] = _resolve_prior(m.get("prior"), source)
            if m.get("prior_set"):
                m["prior_set"] = [_resolve_prior(p, source) for p in m["prior_set"]]
            methods.append(SelfTrainConfig.from_dict(m))
        return cls(source, split_spec, tuple(methods), int(d.get("repetitions", 1)),
                   int(d.get("seed", 0)), d.get("out"), d.get("name", "experiment"))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class CurvePoint:
    iter: int
    mean: float
    se: float


@dataclass(frozen=True)
class MethodSummary:
    tag: str
    curve: tuple[CurvePoint, ...]
    oracle: float
    final: float
    failures: int
    oracle_se: float = 0.0
    final_se: float = 0.0
    runtime_s: float = 0.0

    def to_dict(self) -> dict:
        return {"tag": self.tag, "curve": [vars(c) for c in self.curve], "oracle": self.oracle,
                "final": self.final, "failures": self.failures, "oracle_se": self.oracle_se,
                "final_se": self.final_se, "runtime_s": self.runtime_s}

    @classmethod
    def from_dict(cls, d: dict) -> "MethodSummary":
        return cls(d["tag"], tuple(CurvePoint(**c) for c in d["curve"]), d["oracle"], d["final"],
                   d["failures"], d.get("oracle_se", 0.0), d.get("final_se", 0.0), d.get("runtime_s", 0.0))


@dataclass
class RepResult:
    rep: int
    seeds: dict
    traces: dict          # method tag -> SelfTrainTrace or None on failure
    errors: dict          # method tag -> message
    baseline: float | None
    runtime_s: dict


@dataclass
class ExperimentReport:
    config: dict
    methods: list[MethodSummary]
    baseline: float | None
    runtime_s: float
    baseline_se: float = 0.0
    reps: list[RepResult] = field(default_factory=list, compare=False, repr=False)

    def method(self, tag: str) -> MethodSummary:
        for m in self.methods:
            if m.tag == tag:
                return m
        raise KeyError(tag)

    def traces(self, tag: str) -> list[SelfTrainTrace | None]:
        return [r.traces.get(tag) for r in self.reps]

    def to_dict(self) -> dict:
        return {"config": self.config, "methods": [m.to_dict() for m in self.methods],
                "baseline": self.baseline, "baseline_se": self.baseline_se, "runtime_s": self.runtime_s}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        return cls(d["config"], [MethodSummary.from_dict(m) for m in d["methods"]], d["baseline"],
                   d["runtime_s"], d.get("baseline_se", 0.0))


# -- running -----------------------------------------------------------------


def rep_seeds(master: int, repetitions: int) -> list[dict]:
    """Independent data, split and method seeds for every repetition."""
    out = []
    for child in np.random.SeedSequence(int(master)).spawn(repetitions):
        data, sp, method = (int(v) for v in child.generate_state(3))
        out.append({"data": data, "split": sp, "method": method})
    return out


def _mean_se(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return float("nan"), float("nan")
    se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


def run_repetition(cfg: ExperimentConfig, rep: int, seeds: dict, cache: dict | None = None) -> RepResult:
    """One repetition: one dataset and split shared by every method."""
    ds = cfg.source.dataset(seeds["data"], cache)
    traces, errors, runtime = {}, {}, {}
    try:
        parts = split(ds, replace(cfg.split, seed=seeds["split"]))
    except BPLSError as exc:
        for m in cfg.methods:
            traces[m.label], errors[m.label] = None, f"{type(exc).__name__}: {exc}"
        return RepResult(rep, seeds, traces, errors, None, runtime)

    baseline = None
    sup = next((m for m in cfg.methods if m.criterion == SUPERVISED), SelfTrainConfig(SUPERVISED))
    try:
        baseline = run_self_training(sup, parts.labeled, parts.pool, parts.test).initial_accuracy
    except BPLSError as exc:
        errors[sup.label] = f"{type(exc).__name__}: {exc}"
    for m in cfg.methods:
        if m.criterion == SUPERVISED:
            continue
        t0 = time.perf_counter()
        try:
            traces[m.label] = run_self_training(replace(m, seed=seeds["method"]), parts.labeled,
                                                parts.pool, parts.test)
        except BPLSError as exc:
            traces[m.label], errors[m.label] = None, f"{type(exc).__name__}: {exc}"
            log.warning("rep %d, %s failed: %s", rep, m.label, exc)
        runtime[m.label] = time.perf_counter() - t0
    return RepResult(rep, seeds, traces, errors, baseline, runtime)


def summarize(tag: str, traces: Sequence[SelfTrainTrace | None], runtime_s: float = 0.0) -> MethodSummary:
    ok = [t for t in traces if t is not None]
    curves = [t.accuracies for t in ok]
    length = max((c.size for c in curves), default=0)
    points = []
    for i in range(length):
        mean, se = _mean_se([c[i] for c in curves if c.size > i])
        points.append(CurvePoint(i, mean, se))
    oracle, oracle_se = _mean_se([c.max() for c in curves])
    final, final_se = _mean_se([c[-1] for c in curves])
    return MethodSummary(tag, tuple(points), oracle, final, len(traces) - len(ok), oracle_se, final_se, runtime_s)


def aggregate(cfg: ExperimentConfig, reps: list[RepResult], runtime_s: float) -> ExperimentReport:
    summaries = []
    for m in cfg.methods:
        if m.criterion == SUPERVISED:
            continue
        traces = [r.traces.get(m.label) for r in reps]
        s = summarize(m.label, traces, sum(r.runtime_s.get(m.label, 0.0) for r in reps))
        if s.failures > ABORT_SHARE * cfg.repetitions:
            raise BenchAborted(f"{m.label}: {s.failures} of {cfg.repetitions} repetitions failed")
        summaries.append(s)
    base = [r.baseline for r in reps if r.baseline is not None]
    baseline, baseline_se = _mean_se(base) if base else (None, 0.0)
    return ExperimentReport(cfg.to_dict(), summaries, baseline, runtime_s, baseline_se, reps)


def _run_rep_job(args):
    cfg_dict, rep, seeds = args
    return run_repetition(ExperimentConfig.from_dict(cfg_dict), rep, seeds)


def run_experiment(cfg: ExperimentConfig, *, threads: int = 1,
                   progress: Callable[[int, int], None] | None = None) -> ExperimentReport:
    """All repetitions of ``cfg``; deterministic for a given master seed.

    Raises
    ------
    BenchAborted
        If more than 20% of repetitions failed for any method.
    """
    t0 = time.perf_counter()
    seeds = rep_seeds(cfg.seed, cfg.repetitions)
    reps: list[RepResult] = []
    if threads > 1 and cfg.repetitions > 1:
        jobs = [(cfg.to_dict(), r, s) for r, s in enumerate(seeds)]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for res in pool.map(_run_rep_job, jobs):
                reps.append(res)
                if progress:
                    progress(len(reps), cfg.repetitions)
    else:
        cache: dict = {}
        for r, s in enumerate(seeds):
            reps.append(run_repetition(cfg, r, s, cache))
            if progress:
                progress(r + 1, cfg.repetitions)
    return aggregate(cfg, reps, time.perf_counter() - t0)


# -- persistence -------------------------------------------------------------


def write_report(report: ExperimentReport, path, fmt: str = "json") -> Path:
    """Write the nested JSON report or the long-format CSV of accuracy curves."""
    path = Path(path)
    if fmt == "json":
        path.write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    elif fmt == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "iteration", "mean_acc", "se_acc"])
            for m in report.methods:
                for c in m.curve:
                    w.writerow([m.tag, c.iter, repr(c.mean), repr(c.se)])
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return path


def read_report(path) -> ExperimentReport:
    with open(path, encoding="utf-8") as fh:
        return ExperimentReport.from_dict(json.load(fh))


def write_audit(report: ExperimentReport, path) -> Path:
    """One JSON line per (repetition, method) with the full trace."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for r in report.reps:
            for tag in sorted(set(r.traces) | set(r.errors)):
                t = r.traces.get(tag)
                rec = {"rep": r.rep, "method": tag, "seeds": r.seeds, "baseline": r.baseline,
                       "error": r.errors.get(tag), "trace": None if t is None else t.to_dict()}
                fh.write(json.dumps(rec) + "\n")
    return path


def read_audit(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def report_from_audit(path, config: dict | None = None) -> ExperimentReport:
    """Re-aggregate a report from a persisted audit file."""
    records = read_audit(path)
    by_method: dict[str, dict[int, SelfTrainTrace | None]] = {}
    baselines: dict[int, float] = {}
    for rec in records:
        t = rec["trace"]
        by_method.setdefault(rec["method"], {})[rec["rep"]] = None if t is None else SelfTrainTrace.from_dict(t)
        if rec.get("baseline") is not None:
            baselines[rec["rep"]] = rec["baseline"]
    methods = [summarize(tag, [tr[k] for k in sorted(tr)]) for tag, tr in by_method.items()
               if tag != SUPERVISED]
    baseline, baseline_se = _mean_se(list(baselines.values())) if baselines else (None, 0.0)
    return ExperimentReport(config or {}, methods, baseline, 0.0, baseline_se)


# -- approximation agreement -------------------------------------------------


@dataclass(frozen=True)
class ApproxConfig:
    """Grid of sample sizes on which two criteria are compared on shared splits."""

    source: DataSource
    n_grid: tuple[int, ...] = (120, 400)
    split: SplitSpec = field(default_factory=SplitSpec)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    criteria: tuple[str, str] = (PPP_FINE, PPP_U)
    max_iterations: int | None = None

    def __post_init__(self):
        if self.source.sim is None:
            raise ConfigError("approximation comparison needs a simulated source")
        if len(self.criteria) != 2:
            raise ConfigError("exactly two criteria are compared")

    @classmethod
    def from_dict(cls, d: dict) -> "ApproxConfig":
        known = {"data", "n_grid", "split", "seeds", "criteria", "max_iterations"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        sp = dict(d.get("split") or {})
        return cls(DataSource.from_dict(d["data"]), tuple(int(n) for n in d.get("n_grid", (120, 400))),
                   SplitSpec(float(sp.get("test_share", 0.5)), float(sp.get("unlabeled_share", 0.8))),
                   tuple(int(s) for s in d.get("seeds", range(5))),
                   tuple(d.get("criteria", (PPP_FINE, PPP_U))), d.get("max_iterations"))

    def to_dict(self) -> dict:
        return {"data": self.source.to_dict(), "n_grid": list(self.n_grid),
                "split": {"test_share": self.split.test_share, "unlabeled_share": self.split.unlabeled_share},
                "seeds": list(self.seeds), "criteria": list(self.criteria), "max_iterations": self.max_iterations}


@dataclass(frozen=True)
class AgreementStat:
    n: int
    seed: int
    agreement: float
    iterations: int
    final_gap: float


def compare_approximations(cfg: ApproxConfig, *, progress: Callable[[str], None] | None = None) -> list[AgreementStat]:
    """Per (n, seed): argmax agreement along one trajectory and final-accuracy gap.

    The trajectory is driven by the second criterion; at every iteration the
    first criterion is evaluated on the same state.  The gap is the final
    accuracy of a full run under the first criterion minus that under the
    second.
    """
    first, second = (SelfTrainConfig(c, max_iterations=cfg.max_iterations) for c in cfg.criteria)
    out = []
    for n in cfg.n_grid:
        for seed in cfg.seeds:
            seeds = rep_seeds(seed, 1)[0]
            ds = simulate(replace(cfg.source.sim, n=int(n), seed=seeds["data"]))
            parts = split(ds, replace(cfg.split, seed=seeds["split"]))
            driven = run_self_training(second, parts.labeled, parts.pool, parts.test, shadow=first)
            if first.criterion == second.criterion:
                other = driven
            else:
                other = run_self_training(first, parts.labeled, parts.pool, parts.test)
            recs = driven.records
            agree = float(np.mean([r.candidate_id == r.shadow_id for r in recs])) if recs else 1.0
            gap = float(other.accuracies[-1] - driven.accuracies[-1])
            out.append(AgreementStat(int(n), int(seed), agree, len(recs), gap))
            if progress:
                progress(f"n={n} seed={seed} agreement={agree:.3f}")
    return out
