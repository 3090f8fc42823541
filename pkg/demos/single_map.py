"""Walk one patchwork map through the whole pipeline and compare strategies.

    python demos/single_map.py [map_seed]

Segments the map, clusters it into K groups, plans floater starts with each
strategy, drifts them, fits the SVR and prints the per-strategy error.
"""

import sys
import time

import numpy as np

from driftplan.deployment import STRATEGIES, plan
from driftplan.drift_sim import SimConfig, observations, simulate_plan
from driftplan.flowfield import make_patchwork
from driftplan.reconstruction import error_report, reconstruct
from driftplan.segmentation import HomogeneityParams, segment_field
from driftplan.sets_clustering import cluster_map

K = 4
GRID = dict(C_grid=(1.0, 10.0, 100.0), eps_grid=(0.01,), gamma_grid=(10.0, 100.0, 1000.0))


def main(map_seed=0):
    field, regions = make_patchwork(40, 40, seed=map_seed)
    print(f"map {map_seed}: {field.shape[0]}x{field.shape[1]} cells, "
          f"{regions.max() + 1} generating regions, top speed {field.speed.max():.2f} m/s")

    segs = segment_field(field, HomogeneityParams(), seed=1)
    sizes = sorted((len(s.cells) for s in segs), reverse=True)
    print(f"{len(segs)} segments, largest {sizes[:5]}")

    clusters = cluster_map(field, segs, K, seed=2)
    print("cluster sizes:", [len(c.cells) for c in clusters])

    sim = SimConfig()
    for s in STRATEGIES:
        t0 = time.perf_counter()
        p = plan(s, field, clusters, K, seed=3)
        obs = observations(simulate_plan(field, p, sim))
        predicted, _, params = reconstruct(obs, field, GRID["C_grid"], GRID["eps_grid"],
                                           GRID["gamma_grid"], folds=5, seed=4)
        rep = error_report(field, predicted)
        print(f"{s:12s} starts={[tuple(map(int, q)) for q in p.positions]} "
              f"objective={p.objective:.3f} mean_rho={rep.mean:.3f} median_rho={rep.median:.3f} "
              f"(C={params[0]:g}, gamma={params[2]:g}; {time.perf_counter() - t0:.1f} s)")

    # uniform is random, so look at its spread as well
    errs = []
    for seed in range(10):
        p = plan("uniform", field, None, K, seed=seed)
        obs = observations(simulate_plan(field, p, sim))
        predicted, _, _ = reconstruct(obs, field, GRID["C_grid"], GRID["eps_grid"], GRID["gamma_grid"],
                                      folds=5, seed=seed)
        errs.append(error_report(field, predicted).mean)
    print(f"uniform over 10 draws: mean {np.mean(errs):.3f}, min {np.min(errs):.3f}, max {np.max(errs):.3f}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 0)
