"""End-to-end runs: plan on the model field, drift on the "true" field, reconstruct, score.

A run covers every (map, seed, strategy) cell of an :class:`ExperimentConfig`.
All randomness comes from seeds derived from ``(base_seed, map index, seed)``,
so a cell's results do not depend on which other cells run or in what order.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import __version__
from .deployment import STRATEGIES, plan as make_plan
from .drift_sim import SimConfig, observations, simulate_plan
from .flowfield import NoiseSpec, VelocityField, corrupt, load_field, make_patchwork, make_synthetic
from .reconstruction import (
    DEFAULT_C_GRID, DEFAULT_EPS_GRID, DEFAULT_GAMMA_GRID, error_report, reconstruct, write_cdf,
)
from .segmentation import HomogeneityParams, segment_field, segments_to_json
from .sets_clustering import cluster_map, clustering_to_json

log = logging.getLogger(__name__)

RESULTS_HEADER = ["map_id", "strategy", "seed", "K", "mu", "eps_beta", "eta", "sigma_pct",
                  "mean_rho", "median_rho", "objective", "seconds"]
SWEEP_AXES = ("K", "sigma_pct", "eta", "eps_beta", "mu")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    # field source: a file, or synthetic maps generated from ``map_seeds``
    field_path: str | None = None
    synthetic_kind: str = "patchwork"
    rows: int = 40
    cols: int = 40
    regions: int | None = None
    map_seeds: tuple = (0,)
    # planning
    K: int = 4
    strategies: tuple = STRATEGIES
    mu: int = 1500
    eps_beta: float = 0.05
    coreset_eps: float = 0.2
    max_angle_deg: float = 20.0
    max_speed_ratio: float = 1.5
    eps_grid: int = 4
    kmeans_restarts: int = 5
    kmeans_iters: int = 100
    # noise on the simulated field; None disables the noisy-map mode
    eta: float | None = None
    sigma_pct: float = 0.0
    noise_seed: int = 0
    # drift
    dt: float | None = None
    n_steps: int | None = None
    interp: str = "bilinear"
    boundary: str = "stop"
    # reconstruction
    C_grid: tuple = DEFAULT_C_GRID
    svr_eps_grid: tuple = DEFAULT_EPS_GRID
    gamma_grid: tuple = DEFAULT_GAMMA_GRID
    folds: int = 5
    normalize: str = "map"
    # repetitions and output
    seeds: tuple = (0,)
    base_seed: int = 0
    out: str | None = None
    workers: int = 1
    write_artifacts: bool = True
    timing_in_results: bool = False

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        bad = [s for s in self.strategies if s not in STRATEGIES]
        if bad or not self.strategies:
            raise ConfigError(f"unknown strategies {bad}")
        if self.field_path is None and self.synthetic_kind not in ("patchwork", "double_gyre", "shear"):
            raise ConfigError(f"unknown synthetic kind {self.synthetic_kind!r}")
        if self.eta is not None and not 0 < self.eta <= 1:
            raise ConfigError("eta must lie in (0, 1]")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if self.normalize not in ("map", "observations"):
            raise ConfigError(f"unknown normalize mode {self.normalize!r}")

    @property
    def homogeneity(self) -> HomogeneityParams:
        return HomogeneityParams(math.radians(self.max_angle_deg), self.max_speed_ratio,
                                 self.eps_grid, self.eps_beta)

    @property
    def sim(self) -> SimConfig:
        return SimConfig(self.dt, self.n_steps, self.interp, self.boundary)

    @property
    def noisy(self) -> bool:
        return self.eta is not None

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    def map_ids(self) -> list[str]:
        if self.field_path is not None:
            return [os.path.splitext(os.path.basename(self.field_path))[0]]
        return [f"{self.synthetic_kind}{ms}" for ms in self.map_seeds]

    def echo(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in dataclasses.asdict(self).items()}


# ---------------------------------------------------------------------------
# config files

_TUPLE_FIELDS = {"map_seeds": int, "strategies": str, "C_grid": float, "svr_eps_grid": float,
                 "gamma_grid": float, "seeds": int}


def _convert(name, raw, ftype):
    raw = raw.strip()
    if name in _TUPLE_FIELDS:
        conv = _TUPLE_FIELDS[name]
        return tuple(conv(x.strip()) for x in raw.split(",") if x.strip())
    if raw.lower() in ("none", "null", ""):
        return None
    if "bool" in ftype:
        if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
        return raw.lower() in ("true", "1", "yes")
    if "int" in ftype:
        return int(raw)
    if "float" in ftype:
        return float(raw)
    return raw


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse flat ``key = value`` lines (``#`` comments, comma-separated lists)."""
    types = {f.name: str(f.type) for f in dataclasses.fields(ExperimentConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _convert(key, raw, types[key])
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from exc
    base = base or ExperimentConfig()
    try:
        return base.replace(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            cfg = parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if cfg.field_path is not None and not os.path.exists(cfg.field_path):
        raise ConfigError(f"field file {cfg.field_path} does not exist")
    return cfg


def format_config(cfg: ExperimentConfig) -> str:
    lines = []
    for k, v in cfg.echo().items():
        if isinstance(v, list):
            v = ",".join(str(x) for x in v)
        lines.append(f"{k} = {'none' if v is None else v}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# records

@dataclass
class CellRecord:
    map_id: str
    strategy: str
    seed: int
    K: int
    mu: int
    eps_beta: float
    eta: float | None
    sigma_pct: float
    mean_rho: float = math.nan
    median_rho: float = math.nan
    objective: float = math.nan
    seconds: float = math.nan
    stage_seconds: dict = dc_field(default_factory=dict)
    status: str = "ok"
    error: str = ""
    positions: list = dc_field(default_factory=list)
    rho_values: np.ndarray | None = None
    plan_field_hash: str = ""
    sim_field_hash: str = ""
    truth_field_hash: str = ""

    def csv_row(self, with_seconds: bool) -> list:
        def f(x):
            if x is None:
                return ""
            if isinstance(x, float):
                return "" if math.isnan(x) else repr(x)
            return str(x)
        return [self.map_id, self.strategy, self.seed, self.K, self.mu, f(self.eps_beta),
                f(self.eta), f(float(self.sigma_pct)), f(self.mean_rho), f(self.median_rho),
                f(self.objective), f(self.seconds) if with_seconds else ""]


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list

    @property
    def failures(self) -> list:
        return [r for r in self.records if r.status != "ok"]

    def by_strategy(self) -> dict:
        out: dict = {}
        for r in self.records:
            out.setdefault(r.strategy, []).append(r)
        return out

    def aggregate(self) -> dict:
        """Per strategy: count, mean and median of mean_rho, 95% CI half-width, mean objective."""
        agg = {}
        for s, recs in self.by_strategy().items():
            ok = np.array([r.mean_rho for r in recs if r.status == "ok"])
            obj = np.array([r.objective for r in recs if r.status == "ok"])
            agg[s] = {
                "n": int(ok.size),
                "failed": len(recs) - int(ok.size),
                "mean_rho": float(ok.mean()) if ok.size else None,
                "median_rho": float(np.median(ok)) if ok.size else None,
                "ci95": ci95(ok) if ok.size else None,
                "objective": float(obj.mean()) if obj.size else None,
            }
        return agg


def ci95(values) -> float:
    """Normal-approximation 95% confidence half-width of the mean."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return 0.0
    return float(1.96 * v.std(ddof=1) / math.sqrt(v.size))


def field_hash(field: VelocityField) -> str:
    h = hashlib.sha1()
    for a in (field.u, field.v, field.mask):
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()[:16]


# ---------------------------------------------------------------------------
# pipeline

def load_map(cfg: ExperimentConfig, map_index: int) -> VelocityField:
    if cfg.field_path is not None:
        return load_field(cfg.field_path)
    ms = cfg.map_seeds[map_index]
    if cfg.synthetic_kind == "patchwork":
        return make_patchwork(cfg.rows, cfg.cols, cfg.regions, seed=ms)[0]
    return make_synthetic(cfg.synthetic_kind, cfg.rows, cfg.cols, seed=ms)


def _cell_seeds(cfg, map_index, seed):
    ss = np.random.default_rng([cfg.base_seed, map_index, seed]).integers(0, 2**31, size=5)
    return dict(zip(("segment", "cluster", "plan", "noise", "cv"), (int(s) for s in ss)))


def run_map_seed(cfg: ExperimentConfig, map_index: int, seed: int, clean: VelocityField | None = None) -> list:
    """All strategies for one (map, seed) pair; segmentation and clustering are shared."""
    map_id = cfg.map_ids()[map_index]
    seeds = _cell_seeds(cfg, map_index, seed)
    base = dict(map_id=map_id, seed=seed, K=cfg.K, mu=cfg.mu, eps_beta=cfg.eps_beta,
                eta=cfg.eta, sigma_pct=cfg.sigma_pct)
    records = {s: CellRecord(strategy=s, **base) for s in cfg.strategies}
    outdir = None
    if cfg.out and cfg.write_artifacts:
        outdir = os.path.join(cfg.out, "cells", f"{map_id}_s{seed}")
        os.makedirs(outdir, exist_ok=True)

    def fail(strategies, exc):
        for s in strategies:
            records[s].status = "failed"
            records[s].error = f"{type(exc).__name__}: {exc}"
        log.warning("map %s seed %s: %s failed: %s", map_id, seed, list(strategies), exc)
        log.debug("%s", traceback.format_exc())

    shared = {}
    try:
        t0 = time.perf_counter()
        if clean is None:
            clean = load_map(cfg, map_index)
        truth = clean
        if cfg.noisy:
            truth = corrupt(clean, NoiseSpec(cfg.eta, cfg.sigma_pct, seeds["noise"] + cfg.noise_seed))
        shared["load"] = time.perf_counter() - t0
    except Exception as exc:  # noqa: BLE001 - a failed cell must not abort the run
        fail(cfg.strategies, exc)
        return list(records.values())

    planned = [s for s in cfg.strategies if s != "uniform"]
    clusters = None
    if planned:
        try:
            t0 = time.perf_counter()
            segments = segment_field(clean, cfg.homogeneity, seeds["segment"])
            shared["segment"] = time.perf_counter() - t0
            t0 = time.perf_counter()
            clusters = cluster_map(clean, segments, cfg.K, cfg.mu, cfg.coreset_eps, seeds["cluster"],
                                   max_iters=cfg.kmeans_iters, restarts=cfg.kmeans_restarts)
            shared["cluster"] = time.perf_counter() - t0
            if outdir:
                with open(os.path.join(outdir, "segments.json"), "w") as fh:
                    fh.write(segments_to_json(segments))
                with open(os.path.join(outdir, "clustering.json"), "w") as fh:
                    fh.write(clustering_to_json(clusters, clean.shape))
        except Exception as exc:  # noqa: BLE001
            fail(planned, exc)

    for s in cfg.strategies:
        rec = records[s]
        if rec.status != "ok":
            continue
        stages = dict(shared) if s != "uniform" else {"load": shared["load"]}
        try:
            t0 = time.perf_counter()
            # planning only ever sees the clean model field
            p = make_plan(s, clean, clusters, cfg.K, seed=seeds["plan"])
            rec.plan_field_hash = field_hash(clean)
            stages["plan"] = time.perf_counter() - t0
            t0 = time.perf_counter()
            trajs = simulate_plan(truth, p, cfg.sim)
            rec.sim_field_hash = field_hash(truth)
            obs = observations(trajs)
            stages["simulate"] = time.perf_counter() - t0
            t0 = time.perf_counter()
            predicted, models, params = reconstruct(obs, truth, cfg.C_grid, cfg.svr_eps_grid,
                                                    cfg.gamma_grid, cfg.folds, seeds["cv"],
                                                    cfg.normalize)
            report = error_report(truth, predicted)
            rec.truth_field_hash = field_hash(truth)
            stages["reconstruct"] = time.perf_counter() - t0
            rec.mean_rho, rec.median_rho = report.mean, report.median
            rec.objective = p.objective
            rec.positions = [tuple(map(int, q)) for q in p.positions]
            rec.rho_values = report.cdf_values
            rec.stage_seconds = stages
            rec.seconds = float(sum(stages.values()))
            if outdir:
                with open(os.path.join(outdir, f"plan_{s}.json"), "w") as fh:
                    fh.write(p.to_json())
                obs.to_csv(os.path.join(outdir, f"observations_{s}.csv"))
                report.to_csv(os.path.join(outdir, f"errors_{s}.csv"))
                with open(os.path.join(outdir, f"models_{s}.json"), "w") as fh:
                    json.dump({"params": list(params),
                               "models": [json.loads(m.to_json()) for m in models]}, fh)
        except Exception as exc:  # noqa: BLE001
            fail([s], exc)
    return list(records.values())


def _run_cell(args):
    cfg, mi, seed = args
    return run_map_seed(cfg, mi, seed)


def run_pipeline(cfg: ExperimentConfig) -> ExperimentResult:
    """Run every (map, seed, strategy) cell; failures are recorded, not raised."""
    if cfg.out:
        os.makedirs(cfg.out, exist_ok=True)
    jobs = [(cfg, mi, seed) for mi in range(len(cfg.map_ids())) for seed in cfg.seeds]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            chunks = list(ex.map(_run_cell, jobs))
    else:
        chunks = [_run_cell(j) for j in jobs]
    records = [r for chunk in chunks for r in chunk]
    return ExperimentResult(cfg, records)


# ---------------------------------------------------------------------------
# sweeps and reports

@dataclass
class SweepResult:
    axis: str
    values: list
    results: list
    table: list          # rows: value, strategy, n, mean_rho, ci95
    trends: dict         # strategy -> least-squares slope of mean_rho vs value

    def __iter__(self):
        return iter(self.results)

    def __len__(self):
        return len(self.results)


def sweep(cfg: ExperimentConfig, axis: str, values) -> SweepResult:
    """Run the pipeline once per value of ``axis`` and tabulate means with 95% CIs."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"cannot sweep over {axis!r}; choose from {SWEEP_AXES}")
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    results, table = [], []
    for val in values:
        kw = {axis: val}
        if axis in ("sigma_pct",) and cfg.eta is None:
            kw["eta"] = 1.0
        sub = cfg.replace(**kw)
        if cfg.out:
            sub = sub.replace(out=os.path.join(cfg.out, f"{axis}_{val}"))
        res = run_pipeline(sub)
        results.append(res)
        for s, a in res.aggregate().items():
            table.append({"value": val, "strategy": s, "n": a["n"],
                          "mean_rho": a["mean_rho"], "ci95": a["ci95"]})
    trends = {}
    for s in cfg.strategies:
        pts = [(r["value"], r["mean_rho"]) for r in table
               if r["strategy"] == s and r["mean_rho"] is not None]
        if len(pts) >= 2 and len({p[0] for p in pts}) >= 2:
            x, y = np.array(pts, dtype=float).T
            trends[s] = float(np.polyfit(x, y, 1)[0])
    return SweepResult(axis, values, results, table, trends)


def emit_reports(result: ExperimentResult, outdir) -> list[str]:
    """Write results.csv, cdf_<strategy>.csv, summary.json and timings.csv into ``outdir``."""
    if not result.records:
        raise ValueError("no records to report")
    os.makedirs(outdir, exist_ok=True)
    cfg = result.config
    written = []
    path = os.path.join(outdir, "results.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESULTS_HEADER)
        for r in result.records:
            w.writerow(r.csv_row(cfg.timing_in_results))
    written.append(path)
    for s, recs in result.by_strategy().items():
        vals = [r.rho_values for r in recs if r.rho_values is not None]
        if not vals:
            continue
        pooled = np.sort(np.concatenate(vals))
        path = os.path.join(outdir, f"cdf_{s}.csv")
        write_cdf(path, pooled, np.arange(1, pooled.size + 1) / pooled.size)
        written.append(path)
    summary = {
        "aggregates": result.aggregate(),
        "config": cfg.echo(),
        "seeds": list(cfg.seeds),
        "map_ids": cfg.map_ids(),
        "failures": [
            {"map_id": r.map_id, "strategy": r.strategy, "seed": r.seed, "error": r.error}
            for r in result.failures
        ],
        "versions": {"driftplan": __version__, "numpy": np.__version__},
    }
    path = os.path.join(outdir, "summary.json")
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    written.append(path)
    path = os.path.join(outdir, "timings.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        stages = ["load", "segment", "cluster", "plan", "simulate", "reconstruct"]
        w.writerow(["map_id", "strategy", "seed"] + stages)
        for r in result.records:
            w.writerow([r.map_id, r.strategy, r.seed] +
                       [f"{r.stage_seconds[k]:.6f}" if k in r.stage_seconds else "" for k in stages])
    written.append(path)
    return written


def emit_sweep(sw: SweepResult, outdir) -> str:
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, f"sweep_{sw.axis}.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["axis", "value", "strategy", "n", "mean_rho", "ci95"])
        for row in sw.table:
            w.writerow([sw.axis, row["value"], row["strategy"], row["n"],
                        "" if row["mean_rho"] is None else repr(row["mean_rho"]),
                        "" if row["ci95"] is None else repr(row["ci95"])])
    with open(os.path.join(outdir, f"trend_{sw.axis}.json"), "w") as fh:
        json.dump({"axis": sw.axis, "slopes": sw.trends}, fh, indent=2, sort_keys=True)
    return path
