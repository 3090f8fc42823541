"""Command line entry point: ``driftplan <subcommand> [options]``.

Every subcommand reads the same flat ``key = value`` config file (``--config``)
and writes into ``--out``. Single-stage subcommands exchange files, so the
pipeline can also be run one step at a time:

    driftplan gen --out w
    driftplan segment --field w/field.csv --out w
    driftplan cluster --field w/field.csv --segments w/segments.json --out w
    driftplan plan --field w/field.csv --clustering w/clustering.json --strategy graph --out w
    driftplan simulate --field w/field.csv --plan w/plan_graph.json --out w
    driftplan reconstruct --field w/field.csv --observations w/observations.csv --out w

Exit codes: 0 success, 1 configuration or input error, 2 some cells failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .deployment import STRATEGIES, DeploymentPlan, plan as make_plan
from .drift_sim import Observations, observations, simulate_plan
from .experiments import (
    SWEEP_AXES, ConfigError, ExperimentConfig, emit_reports, emit_sweep, load_config, load_map,
    run_pipeline, sweep,
)
from .flowfield import NoiseSpec, corrupt, load_field, save_field
from .reconstruction import error_report, reconstruct
from .segmentation import segment_field, segments_from_json, segments_to_json
from .sets_clustering import cluster_map, clustering_from_json, clustering_to_json

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2

log = logging.getLogger("driftplan")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    kw = {}
    if args.seed is not None:
        kw["seeds"] = (args.seed,)
        kw["base_seed"] = args.seed
    if args.out is not None:
        kw["out"] = args.out
    return cfg.replace(**kw) if kw else cfg


def _outdir(cfg) -> str:
    out = cfg.out or "."
    os.makedirs(out, exist_ok=True)
    return out


def _seed(cfg) -> int:
    return cfg.seeds[0]


def _read(path) -> str:
    with open(path) as fh:
        return fh.read()


def _write(path, text) -> None:
    with open(path, "w") as fh:
        fh.write(text)
    print(path)


def cmd_gen(args, cfg):
    out = _outdir(cfg)
    field = load_map(cfg, args.map_index)
    path = os.path.join(out, args.name)
    save_field(field, path)
    print(path)
    if cfg.noisy:
        noisy = corrupt(field, NoiseSpec(cfg.eta, cfg.sigma_pct, cfg.noise_seed))
        root, ext = os.path.splitext(path)
        save_field(noisy, root + "_noisy" + ext)
        print(root + "_noisy" + ext)
    return EXIT_OK


def cmd_segment(args, cfg):
    field = load_field(args.field)
    segs = segment_field(field, cfg.homogeneity, seed=_seed(cfg))
    _write(os.path.join(_outdir(cfg), "segments.json"), segments_to_json(segs))
    return EXIT_OK


def cmd_cluster(args, cfg):
    field = load_field(args.field)
    segs = segments_from_json(_read(args.segments))
    K = args.K or cfg.K
    clusters = cluster_map(field, segs, K, cfg.mu, cfg.coreset_eps, seed=_seed(cfg),
                           max_iters=cfg.kmeans_iters, restarts=cfg.kmeans_restarts)
    _write(os.path.join(_outdir(cfg), "clustering.json"), clustering_to_json(clusters, field.shape))
    return EXIT_OK


def cmd_plan(args, cfg):
    field = load_field(args.field)
    clusters = None
    if args.strategy != "uniform":
        if not args.clustering:
            raise ConfigError(f"strategy {args.strategy!r} needs --clustering")
        clusters = clustering_from_json(field, _read(args.clustering))
    p = make_plan(args.strategy, field, clusters, args.K or cfg.K, seed=_seed(cfg))
    _write(os.path.join(_outdir(cfg), f"plan_{args.strategy}.json"), p.to_json())
    return EXIT_OK


def cmd_simulate(args, cfg):
    field = load_field(args.field)
    p = DeploymentPlan.from_json(_read(args.plan))
    obs = observations(simulate_plan(field, p, cfg.sim))
    path = os.path.join(_outdir(cfg), args.name)
    obs.to_csv(path)
    print(path)
    return EXIT_OK


def cmd_reconstruct(args, cfg):
    field = load_field(args.field)
    obs = Observations.from_csv(args.observations)
    predicted, models, params = reconstruct(obs, field, cfg.C_grid, cfg.svr_eps_grid,
                                            cfg.gamma_grid, cfg.folds, _seed(cfg), cfg.normalize)
    out = _outdir(cfg)
    save_field(predicted, os.path.join(out, "predicted.csv"))
    _write(os.path.join(out, "models.json"), json.dumps(
        {"params": list(params), "models": [json.loads(m.to_json()) for m in models]}))
    report = error_report(field, predicted)
    report.to_csv(os.path.join(out, "errors.csv"))
    report.cdf_to_csv(os.path.join(out, "cdf.csv"))
    print(f"mean_rho={report.mean:.6g} median_rho={report.median:.6g} "
          f"C={params[0]:g} epsilon={params[1]:g} gamma={params[2]:g}")
    return EXIT_OK


def _report_failures(result) -> int:
    for r in result.failures:
        log.error("cell %s/%s/seed %s failed: %s", r.map_id, r.strategy, r.seed,
                  (r.error or "").strip().splitlines()[-1:] or "")
    return EXIT_PARTIAL if result.failures else EXIT_OK


def cmd_run(args, cfg):
    out = _outdir(cfg)
    result = run_pipeline(cfg.replace(out=out))
    for path in emit_reports(result, out):
        print(path)
    for s, a in result.aggregate().items():
        print(f"{s:12s} n={a['n']:3d} mean_rho={a['mean_rho']} ci95={a['ci95']}")
    return _report_failures(result)


def _parse_values(axis, raw):
    conv = int if axis in ("K", "mu") else float
    try:
        return [conv(x) for x in raw.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad sweep values {raw!r}: {exc}") from exc


def cmd_sweep(args, cfg):
    out = _outdir(cfg)
    sw = sweep(cfg.replace(out=out), args.axis, _parse_values(args.axis, args.values))
    print(emit_sweep(sw, out))
    status = EXIT_OK
    for val, res in zip(sw.values, sw.results):
        emit_reports(res, os.path.join(out, f"{sw.axis}_{val}"))
        status = max(status, _report_failures(res))
    for s, slope in sorted(sw.trends.items()):
        print(f"{s:12s} slope={slope:.6g}")
    return status


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int, help="override seeds and base_seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="driftplan", parents=[common],
                                 description="Floater deployment planning and flow reconstruction.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate or load a field and save it")
    p.add_argument("--map-index", type=int, default=0)
    p.add_argument("--name", default="field.csv", help="file name (.csv or .json)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("segment", parents=[common], help="segment a field into patches")
    p.add_argument("--field", required=True)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("cluster", parents=[common], help="cluster segments into K groups")
    p.add_argument("--field", required=True)
    p.add_argument("--segments", required=True)
    p.add_argument("--K", type=int)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("plan", parents=[common], help="choose deployment positions")
    p.add_argument("--field", required=True)
    p.add_argument("--clustering")
    p.add_argument("--strategy", choices=STRATEGIES, required=True)
    p.add_argument("--K", type=int)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", parents=[common], help="drift the planned floaters")
    p.add_argument("--field", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--name", default="observations.csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reconstruct", parents=[common], help="fit the SVR and score it")
    p.add_argument("--field", required=True, help="true field (geometry and scoring)")
    p.add_argument("--observations", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("run", parents=[common], help="full pipeline over maps and seeds")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", parents=[common], help="repeat the pipeline along one axis")
    p.add_argument("--axis", choices=SWEEP_AXES, required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
