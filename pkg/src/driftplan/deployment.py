"""Choosing floater start cells from a clustered map.

Strategies
----------
heuristic
    per cluster, the member farthest upstream of the cluster's dominating
    direction.
graph
    per cluster, the head of the longest BFS shortest path in the cluster's
    flow graph.
inter_graph
    greedy vertex-disjoint longest shortest paths in the flow graph of the
    whole clustered map.
uniform
    distinct water cells drawn uniformly at random (baseline).
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field as dc_field

import numpy as np

from .flowfield import GridPos, VelocityField

STRATEGIES = ("heuristic", "graph", "inter_graph", "uniform")


def _round_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def unit_step(field: VelocityField, pos) -> GridPos | None:
    """Cell reached by one unit-length step along the cell's velocity, or None at zero speed."""
    i, j = pos
    u, v = float(field.u[i, j]), float(field.v[i, j])
    s = math.hypot(u, v)
    if s == 0.0:
        return None
    return GridPos(i + _round_away(v / s), j + _round_away(u / s))


# ---------------------------------------------------------------------------
# state space and the coverage objective

class StateSpace:
    """Water cells of a field with the transition map ``phi`` and four quadrants."""

    def __init__(self, field: VelocityField):
        self.field = field
        self.split = (field.rows // 2, field.cols // 2)
        self._phi: dict = {}

    def phi(self, pos) -> GridPos:
        pos = GridPos(*pos)
        nxt = self._phi.get(pos)
        if nxt is None:
            q = unit_step(self.field, pos)
            nxt = q if q is not None and self.field.is_water(q) else pos
            self._phi[pos] = nxt
        return nxt

    def quadrant(self, pos) -> int:
        i, j = pos
        return 2 * int(i >= self.split[0]) + int(j >= self.split[1])

    def path(self, start, horizon: int) -> list[GridPos]:
        """States visited from ``start`` until a revisit or ``horizon`` states."""
        start = GridPos(*start)
        seen = {start}
        out = [start]
        cur = start
        while len(out) < horizon:
            cur = self.phi(cur)
            if cur in seen:
                break
            seen.add(cur)
            out.append(cur)
        return out


@dataclass
class CoverageResult:
    value: float
    counts: tuple
    uncovered: tuple
    total_length: int


def coverage_details(space: StateSpace, positions, horizon: int) -> CoverageResult:
    if not positions:
        raise ValueError("no positions to evaluate")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    union = set()
    total = 0
    for p in positions:
        path = space.path(p, horizon)
        total += len(path)
        union.update(path)
    counts = [0, 0, 0, 0]
    for s in union:
        counts[space.quadrant(s)] += 1
    value = sum(math.log(c) for c in counts if c > 0) / total
    return CoverageResult(value, tuple(counts), tuple(c == 0 for c in counts), total)


def evaluate_coverage_objective(space: StateSpace, positions, horizon: int) -> float:
    """Sum over quadrants of log(#distinct visited states), divided by total path length.

    An unvisited quadrant contributes 0; see :func:`coverage_details` for the flags.
    """
    return coverage_details(space, positions, horizon).value


# ---------------------------------------------------------------------------
# plans

@dataclass
class DeploymentPlan:
    strategy: str
    positions: list
    predicted_paths: list
    objective: float
    seed: int | None = None
    diagnostics: dict = dc_field(default_factory=dict)

    @property
    def K(self) -> int:
        return len(self.positions)

    def to_json(self) -> str:
        return json.dumps({
            "strategy": self.strategy,
            "K": self.K,
            "positions": [list(map(int, p)) for p in self.positions],
            "objective": self.objective,
            "paths": [[list(map(int, p)) for p in path] for path in self.predicted_paths],
            "seed": self.seed,
        })

    @classmethod
    def from_json(cls, text: str) -> "DeploymentPlan":
        d = json.loads(text)
        return cls(
            d["strategy"],
            [GridPos(*p) for p in d["positions"]],
            [[GridPos(*p) for p in path] for path in d["paths"]],
            d["objective"],
            d.get("seed"),
        )


def default_horizon(field: VelocityField) -> int:
    return field.rows * field.cols


def _finish(strategy, field, positions, paths, horizon, seed=None, **diag):
    space = StateSpace(field)
    horizon = horizon or default_horizon(field)
    objective = evaluate_coverage_objective(space, positions, horizon)
    return DeploymentPlan(strategy, list(positions), paths, objective, seed, diag)


def _fill_uniform(field, chosen, paths, K, seed, horizon):
    """Top up ``chosen`` to K positions with uniform draws from unused water cells."""
    missing = K - len(chosen)
    if missing <= 0:
        return 0
    used = set(chosen)
    free = [c for c in field.water_cells() if c not in used]
    if len(free) < missing:
        raise ValueError(f"only {len(free) + len(chosen)} water cells for K={K}")
    rng = np.random.default_rng(seed)
    space = StateSpace(field)
    for idx in sorted(rng.choice(len(free), size=missing, replace=False)):
        chosen.append(free[idx])
        paths.append(space.path(free[idx], horizon or default_horizon(field)))
    return missing


def plan_uniform(field: VelocityField, K: int, seed: int = 0, horizon: int | None = None) -> DeploymentPlan:
    """K distinct water cells, uniformly without replacement."""
    water = field.water_cells()
    if K < 1 or K > len(water):
        raise ValueError(f"cannot place K={K} floaters on {len(water)} water cells")
    rng = np.random.default_rng(seed)
    picks = [water[i] for i in rng.choice(len(water), size=K, replace=False)]
    space = StateSpace(field)
    h = horizon or default_horizon(field)
    return _finish("uniform", field, picks, [space.path(p, h) for p in picks], horizon, seed)


def dominating_direction(cluster, n_sectors: int = 16) -> np.ndarray:
    """Unit vector of the heading shared by most of the cluster's velocities.

    Headings are binned into ``n_sectors`` sectors. The most populated sector
    wins, with ties going to the smaller angle. The result is the normalised
    mean of the vectors whose cosine similarity to that sector's bisector is
    at least ``cos(sector width)``.
    """
    vel = np.asarray(getattr(cluster, "velocities", cluster), dtype=float).reshape(-1, 2)
    speed = np.hypot(vel[:, 0], vel[:, 1])
    nz = speed > 0
    if not nz.any():
        raise ValueError("cluster has no nonzero velocity")
    vel, speed = vel[nz], speed[nz]
    width = 2 * math.pi / n_sectors
    heading = np.mod(np.arctan2(vel[:, 1], vel[:, 0]), 2 * math.pi)
    sector = np.minimum((heading // width).astype(int), n_sectors - 1)
    best = int(np.argmax(np.bincount(sector, minlength=n_sectors)))
    bis = (best + 0.5) * width
    axis = np.array([math.cos(bis), math.sin(bis)])
    cos_sim = (vel @ axis) / speed
    near = cos_sim >= math.cos(width) - 1e-12
    mean = vel[near].mean(axis=0)
    norm = np.hypot(*mean)
    return mean / norm if norm > 0 else axis


def heuristic_start(cluster) -> GridPos:
    """Member cell with the largest projection onto minus the dominating direction."""
    if len(cluster.cells) == 0:
        raise ValueError("empty cluster")
    d = dominating_direction(cluster)
    cells = np.asarray(cluster.cells)
    # x east = j, y north = i
    proj = -(d[0] * cells[:, 1] + d[1] * cells[:, 0])
    best = proj.max()
    cand = [tuple(c) for c, p in zip(cells.tolist(), proj) if p >= best - 1e-9 * max(1.0, abs(best))]
    return GridPos(*min(cand))


def _nonempty_moving(cluster, field):
    return len(cluster.cells) > 0 and np.any(np.hypot(cluster.velocities[:, 0], cluster.velocities[:, 1]) > 0)


def plan_heuristic(field: VelocityField, clusters, K: int, horizon: int | None = None,
                   seed: int = 0) -> DeploymentPlan:
    """One floater per cluster at its upstream extreme.

    Clusters that are empty or entirely still are skipped, and the spare
    floaters go to uniform draws from the remaining water cells.
    """
    h = horizon or default_horizon(field)
    space = StateSpace(field)
    positions, paths = [], []
    for c in clusters[:K]:
        if not _nonempty_moving(c, field):
            continue
        p = heuristic_start(c)
        positions.append(p)
        paths.append(space.path(p, h))
    filled = _fill_uniform(field, positions, paths, K, seed, horizon)
    return _finish("heuristic", field, positions, paths, horizon, seed, uniform_fill=filled)


# ---------------------------------------------------------------------------
# flow graphs

@dataclass
class FlowGraph:
    vertices: list
    edges: list
    cluster_id: int = -1

    def adjacency(self) -> dict:
        adj = {v: [] for v in self.vertices}
        for a, b in self.edges:
            adj[a].append(b)
        return adj


def edge_target(field: VelocityField, p) -> GridPos | None:
    """Target of the flow edge leaving ``p``: the rounded unit step, if it is p or a 4-neighbour."""
    q = unit_step(field, p)
    if q is None:
        return None
    if (q[0] - p[0]) ** 2 + (q[1] - p[1]) ** 2 > 1:
        return None
    return q


def build_cluster_graph(field: VelocityField, cluster) -> FlowGraph:
    """Directed graph over the cluster's cells with at most one out-edge per cell."""
    cells = [GridPos(*c) for c in cluster.cells]
    members = set(cells)
    edges = []
    for p in cells:
        q = edge_target(field, p)
        if q is not None and q in members:
            edges.append((p, q))
    return FlowGraph(cells, edges, getattr(cluster, "label", -1))


def bfs_tree(adj: dict, source) -> tuple[dict, dict]:
    """Hop distances and BFS parents from ``source``; neighbours visited in sorted order."""
    dist = {source: 0}
    parent = {source: None}
    queue = deque([source])
    while queue:
        a = queue.popleft()
        for b in sorted(adj.get(a, ())):
            if b not in dist:
                dist[b] = dist[a] + 1
                parent[b] = a
                queue.append(b)
    return dist, parent


def tree_path(parent: dict, target) -> list:
    out = []
    while target is not None:
        out.append(target)
        target = parent[target]
    return out[::-1]


def longest_shortest_path(graph: FlowGraph) -> tuple[GridPos, GridPos, int, list]:
    """Pair (s, t) with the largest finite BFS distance; ties prefer smaller s, then smaller t."""
    if not graph.vertices:
        raise ValueError("empty graph")
    adj = graph.adjacency()
    best = None
    for s in sorted(graph.vertices):
        dist, parent = bfs_tree(adj, s)
        far = max(dist.values())
        t = min(v for v, dv in dist.items() if dv == far)
        if best is None or far > best[2]:
            best = (s, t, far, parent)
    s, t, length, parent = best
    return s, t, length, tree_path(parent, t)


def plan_graph(field: VelocityField, clusters, K: int, horizon: int | None = None,
               seed: int = 0) -> DeploymentPlan:
    """Start each cluster's floater at the head of its flow graph's longest shortest path."""
    positions, paths, lengths = [], [], []
    for c in clusters[:K]:
        if len(c.cells) == 0:
            continue
        g = build_cluster_graph(field, c)
        s, _, length, path = longest_shortest_path(g)
        positions.append(s)
        paths.append(path)
        lengths.append(length)
    filled = _fill_uniform(field, positions, paths, K, seed, horizon)
    return _finish("graph", field, positions, paths, horizon, seed,
                   path_lengths=lengths, uniform_fill=filled)


def build_global_graph(field: VelocityField, clusters) -> FlowGraph:
    """Union of the cluster graphs plus cross edges from leaves into other clusters.

    A cross edge uses the same one-step predicate as the in-cluster edges,
    evaluated on the whole field. Because each cell has at most one flow
    target, a cell whose target lies in another cluster is a leaf of its own
    graph and the target's graph gains the matching incoming edge.
    """
    owner = {}
    for c in clusters:
        for p in c.cells:
            owner[GridPos(*p)] = c.label
    vertices = sorted(owner)
    edges = []
    for p in vertices:
        q = edge_target(field, p)
        if q is not None and q in owner:
            edges.append((p, q))
    return FlowGraph(vertices, edges, -1)


def disjoint_longest_paths(graph: FlowGraph, K: int) -> list[list]:
    """Greedy pick of up to K pairwise vertex-disjoint BFS shortest paths, longest first.

    Candidates are the BFS-tree paths for every ordered pair (s, t) with t
    reachable from s. They are scanned in order of decreasing length, then
    by s, then by t. A candidate is kept if it shares no vertex with the
    paths already kept.
    """
    adj = graph.adjacency()
    trees = {s: bfs_tree(adj, s) for s in graph.vertices}
    used: set = set()
    chosen = []
    while len(chosen) < K:
        best = None
        for s in sorted(graph.vertices):
            if s in used:
                continue
            dist, parent = trees[s]
            # depth of each vertex whose tree path from s avoids used vertices
            ok = {s}
            far, t_best = 0, s
            for v in sorted(dist, key=lambda v: (dist[v], v)):
                if v == s:
                    continue
                if v not in used and parent[v] in ok:
                    ok.add(v)
                    if dist[v] > far or (dist[v] == far and v < t_best):
                        far, t_best = dist[v], v
            if best is None or far > best[0]:
                best = (far, s, t_best)
        if best is None:
            break
        _, s, t = best
        path = tree_path(trees[s][1], t)
        chosen.append(path)
        used.update(path)
    return chosen


def plan_inter_graph(field: VelocityField, clusters, K: int, horizon: int | None = None,
                     seed: int = 0) -> DeploymentPlan:
    """Start floaters at the heads of K disjoint long paths through the joined cluster graphs."""
    g = build_global_graph(field, clusters)
    paths = disjoint_longest_paths(g, K)
    positions = [p[0] for p in paths]
    paths = [list(p) for p in paths]
    lengths = [len(p) - 1 for p in paths]
    filled = _fill_uniform(field, positions, paths, K, seed, horizon)
    return _finish("inter_graph", field, positions, paths, horizon, seed,
                   path_lengths=lengths, uniform_fill=filled)


def plan(strategy: str, field: VelocityField, clusters, K: int, seed: int = 0,
         horizon: int | None = None) -> DeploymentPlan:
    if strategy == "heuristic":
        return plan_heuristic(field, clusters, K, horizon, seed)
    if strategy == "graph":
        return plan_graph(field, clusters, K, horizon, seed)
    if strategy == "inter_graph":
        return plan_inter_graph(field, clusters, K, horizon, seed)
    if strategy == "uniform":
        return plan_uniform(field, K, seed, horizon)
    raise ValueError(f"unknown strategy {strategy!r}")
