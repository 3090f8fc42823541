"""Deployment planning for Lagrangian floaters on gridded water-current maps."""

__version__ = "0.1.0"

from .flowfield import (  # noqa: E402
    GridPos, NoiseSpec, VelocityField, corrupt, load_field, make_patchwork, make_synthetic,
    save_field, velocity_at,
)
from .segmentation import HomogeneityParams, Segment, mvee, segment_field  # noqa: E402
from .sets_clustering import cluster_map  # noqa: E402
from .deployment import (  # noqa: E402
    DeploymentPlan, StateSpace, evaluate_coverage_objective, plan_graph, plan_heuristic,
    plan_inter_graph, plan_uniform,
)
from .drift_sim import SimConfig, advect, observations, simulate_plan  # noqa: E402
from .reconstruction import error_report, grid_search_cv, predict_field, reconstruct, train_svr  # noqa: E402
from .experiments import ExperimentConfig, emit_reports, run_pipeline, sweep  # noqa: E402
