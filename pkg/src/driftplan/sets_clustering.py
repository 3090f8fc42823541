"""Clustering of point triplets with a sensitivity-sampled coreset.

Every representative cell of a segment becomes a triplet together with its
two nearest representative neighbours. Each triplet member is embedded in
4-space as ``(x, y, u', v')``, where ``(u', v')`` is the cell velocity
rescaled to the norm of ``(x, y)``. Triplets are clustered under the
set-to-centres distance ``D(P, C) = min_{p in P, c in C} ||p - c||^2``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .flowfield import GridPos, VelocityField

PAD_JITTER = 1e-6
EXHAUSTIVE_SEEDS = 500


@dataclass(frozen=True)
class FeaturePoint:
    coords: np.ndarray
    vel_feature: np.ndarray

    @property
    def combined(self) -> np.ndarray:
        return np.concatenate([self.coords, self.vel_feature])


def feature_point(field: VelocityField, pos, offset=(0.0, 0.0)) -> FeaturePoint:
    """Feature of cell ``pos``; coordinates are the cell centre ``(j + 0.5, i + 0.5)``."""
    i, j = pos
    coords = np.array([j + 0.5 + offset[0], i + 0.5 + offset[1]])
    vel = np.array([field.u[i, j], field.v[i, j]], dtype=float)
    speed = np.hypot(*vel)
    if speed == 0.0:
        return FeaturePoint(coords, np.zeros(2))
    return FeaturePoint(coords, vel * (np.hypot(*coords) / speed))


@dataclass(frozen=True)
class TripletSet:
    points: np.ndarray          # (3, 4) combined features
    source_segment: int
    origin_cells: tuple         # 3 GridPos; the first one spawned the set

    def __post_init__(self):
        if self.points.shape != (3, 4):
            raise ValueError(f"triplet needs a (3, 4) point array, got {self.points.shape}")


@dataclass
class WeightedFamily:
    sets: list
    weights: np.ndarray
    eps: float = 0.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.sets) != self.weights.size:
            raise ValueError("one weight per set required")
        if np.any(self.weights <= 0):
            raise ValueError("weights must be positive")

    @property
    def points(self) -> np.ndarray:
        return stack_points(self.sets)

    def __len__(self):
        return len(self.sets)


def stack_points(sets) -> np.ndarray:
    """``(n, 3, 4)`` array of the member features of ``sets``."""
    if isinstance(sets, np.ndarray):
        return sets
    return np.stack([s.points for s in sets]) if len(sets) else np.zeros((0, 3, 4))


# ---------------------------------------------------------------------------
# triplets

def _nearest_two(xy: np.ndarray) -> np.ndarray:
    d2 = ((xy[:, None, :] - xy[None, :, :]) ** 2).sum(-1)
    np.fill_diagonal(d2, np.inf)
    return np.argsort(d2, axis=1, kind="stable")[:, :2]


def build_triplets(field: VelocityField, segments) -> list[TripletSet]:
    """One triplet per representative: itself plus its two nearest representatives."""
    if not segments:
        raise ValueError("no segments to build triplets from")
    out = []
    for seg in segments:
        reps = [GridPos(*r) for r in seg.representatives]
        feats = [feature_point(field, r) for r in reps]
        cells = list(reps)
        n_real = len(reps)
        k = 0
        while len(feats) < 3:
            src = reps[k % n_real]
            k += 1
            offset = (PAD_JITTER * k, PAD_JITTER * k)
            feats.append(feature_point(field, src, offset))
            cells.append(src)
        xy = np.array([f.coords for f in feats])
        combined = np.array([f.combined for f in feats])
        nn = _nearest_two(xy)
        for a in range(n_real):
            idx = [a, int(nn[a, 0]), int(nn[a, 1])]
            out.append(TripletSet(combined[idx], seg.id, tuple(cells[t] for t in idx)))
    return out


# ---------------------------------------------------------------------------
# distances and costs

def pair_sqdist(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Squared distances of shape ``(n, 3, k)`` between set members and centres."""
    diff = points[:, :, None, :] - centers[None, None, :, :]
    return np.einsum("nmkd,nmkd->nmk", diff, diff)


def set_distances(sets, centers) -> np.ndarray:
    points = stack_points(sets)
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    return pair_sqdist(points, centers).min(axis=(1, 2))


def set_distance(P, C) -> float:
    """``D(P, C)``: smallest squared distance between a member of ``P`` and a centre."""
    pts = P.points if isinstance(P, TripletSet) else np.asarray(P, dtype=float)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    diff = pts[:, None, :] - C[None, :, :]
    return float(np.einsum("mkd,mkd->mk", diff, diff).min())


def clustering_cost(sets, centers, weights=None) -> float:
    d = set_distances(sets, centers)
    return float(d.sum() if weights is None else np.dot(weights, d))


# ---------------------------------------------------------------------------
# coreset

def _kmeanspp_points(X: np.ndarray, k: int, rng, weights=None) -> np.ndarray:
    n = X.shape[0]
    w = np.ones(n) if weights is None else np.asarray(weights, float)
    first = rng.choice(n, p=w / w.sum())
    centers = [X[first]]
    d2 = ((X - centers[0]) ** 2).sum(1)
    for _ in range(1, k):
        prob = w * d2
        total = prob.sum()
        idx = rng.choice(n, p=prob / total) if total > 0 else rng.choice(n, p=w / w.sum())
        centers.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(1))
    return np.array(centers)


def build_coreset(family, mu: int, k: int, eps: float = 0.2, seed: int = 0) -> WeightedFamily:
    """Importance-sample ``mu`` sets with probability proportional to their sensitivity bound.

    The reference solution is a k-means++ seeding over the set centroids. A
    set's sensitivity bound is ``D(P, B) / sum_Q D(Q, B) + 1 / n``. Each
    sampled set is weighted by ``1 / (mu * prob)``. Sets drawn more than once
    are merged and their weights summed.
    """
    n = len(family)
    if mu > n:
        raise ValueError(f"coreset size {mu} exceeds family size {n}")
    if mu < 1 or k < 1:
        raise ValueError("mu and k must be positive")
    rng = np.random.default_rng(seed)
    points = stack_points(family)
    B = _kmeanspp_points(points.mean(axis=1), k, rng)
    d = set_distances(points, B)
    total = d.sum()
    s = (d / total if total > 0 else np.zeros(n)) + 1.0 / n
    prob = s / s.sum()
    drawn = rng.choice(n, size=mu, replace=True, p=prob)
    idx, counts = np.unique(drawn, return_counts=True)
    weights = counts / (mu * prob[idx])
    sets = [family[i] for i in idx] if not isinstance(family, np.ndarray) else family[idx]
    return WeightedFamily(list(sets), weights, eps)


# ---------------------------------------------------------------------------
# k-means over sets

@dataclass
class SetsKMeansResult:
    centers: np.ndarray
    assignment: np.ndarray
    member: np.ndarray
    cost: float
    history: list
    n_iter: int


def _assign(points, centers):
    d = pair_sqdist(points, centers)
    n, m, k = d.shape
    flat = d.reshape(n, m * k)
    best = flat.argmin(axis=1)
    return best % k, best // k, flat[np.arange(n), best]


def _seed_sets(points, weights, k, rng):
    """k-means++ over member points: each member carries its set's weight."""
    n, m, _ = points.shape
    flat = points.reshape(n * m, -1)
    w = np.repeat(weights, m) / m
    first = rng.choice(n * m, p=w / w.sum())
    centers = [flat[first]]
    d2 = ((flat - centers[0]) ** 2).sum(1)
    for _ in range(1, k):
        prob = w * d2
        if prob.sum() <= 0:
            break
        pick = rng.choice(n * m, p=prob / prob.sum())
        centers.append(flat[pick])
        d2 = np.minimum(d2, ((flat - flat[pick]) ** 2).sum(1))
    while len(centers) < k:
        centers.append(centers[-1])
    return np.array(centers)


def _lloyd(points, weights, centers, max_iters):
    k = centers.shape[0]
    history = []
    it = 0
    for it in range(1, max_iters + 1):
        assign, member, dist = _assign(points, centers)
        history.append(float(np.dot(weights, dist)))
        pstar = points[np.arange(points.shape[0]), member]
        new = centers.copy()
        for c in range(k):
            sel = assign == c
            if sel.any():
                w = weights[sel]
                new[c] = (w[:, None] * pstar[sel]).sum(0) / w.sum()
            else:
                far = int(np.argmax(weights * dist))
                new[c] = pstar[far]
                dist[far] = 0.0
        shift = np.abs(new - centers).max()
        centers = new
        if shift < 1e-9:
            break
    assign, member, dist = _assign(points, centers)
    cost = float(np.dot(weights, dist))
    history.append(cost)
    return centers, assign, member, cost, history, it


def kmeans_sets(family, k: int, max_iters: int = 100, restarts: int = 5, seed: int = 0,
                weights=None) -> SetsKMeansResult:
    """Lloyd iterations for sets clustering, best of ``restarts`` k-means++ seedings.

    Assignment picks the centre achieving ``D(P, C)`` and remembers the member
    point ``p*`` achieving it. The update moves each centre to the weighted
    mean of its sets' ``p*``. Empty clusters are re-seeded at the ``p*`` of
    the worst-served set. Ties between restarts go to the earlier restart.

    When the family has at most ``EXHAUSTIVE_SEEDS`` k-subsets of member
    points, every subset is used as a start instead of random restarts.
    """
    if isinstance(family, WeightedFamily):
        points, weights = family.points, family.weights
    else:
        points = stack_points(family)
        weights = np.ones(points.shape[0]) if weights is None else np.asarray(weights, float)
    distinct = np.unique(points.reshape(points.shape[0], -1), axis=0).shape[0]
    if k < 1 or k > distinct:
        raise ValueError(f"k={k} must lie in [1, {distinct}] (number of distinct sets)")
    best = None
    for init in _initial_centers(points, weights, k, restarts, seed):
        res = SetsKMeansResult(*_lloyd(points, weights, init, max_iters))
        if best is None or res.cost < best.cost:
            best = res
    return best


def _initial_centers(points, weights, k, restarts, seed):
    # tiny families: start from every k-subset of distinct member points
    flat = np.unique(points.reshape(-1, points.shape[-1]), axis=0)
    if math.comb(flat.shape[0], k) <= EXHAUSTIVE_SEEDS:
        for combo in itertools.combinations(range(flat.shape[0]), k):
            yield flat[list(combo)].copy()
        return
    for r in range(max(1, restarts)):
        yield _seed_sets(points, weights, k, np.random.default_rng([seed, r]))


# ---------------------------------------------------------------------------
# map clustering

@dataclass
class Cluster:
    label: int
    cells: tuple
    velocities: np.ndarray
    center: np.ndarray

    def __len__(self):
        return len(self.cells)


def cluster_map(field: VelocityField, segments, k: int, mu: int = 1500, eps: float = 0.2,
                seed: int = 0, max_iters: int = 100, restarts: int = 5) -> list[Cluster]:
    """Cluster the map's cells into ``k`` groups via triplets, a coreset and sets k-means.

    When the family is no larger than ``mu`` the full family (unit weights)
    is clustered directly. Cells that spawned no triplet take the label of
    the nearest labelled cell. Some of the ``k`` clusters may come back empty.
    """
    triplets = build_triplets(field, segments)
    rng = np.random.default_rng(seed)
    if len(triplets) > mu:
        fam = build_coreset(triplets, mu, k, eps, seed=int(rng.integers(2**31)))
    else:
        fam = WeightedFamily(triplets, np.ones(len(triplets)), eps)
    res = kmeans_sets(fam, k, max_iters=max_iters, restarts=restarts,
                      seed=int(rng.integers(2**31)))
    assign, _, _ = _assign(stack_points(triplets), res.centers)
    labels = np.full(field.shape, -1, dtype=int)
    for t, a in zip(triplets, assign):
        i, j = t.origin_cells[0]
        labels[i, j] = int(a)
    labels = fill_nearest_labels(labels, field.mask)
    return clusters_from_labels(field, labels, res.centers)


def fill_nearest_labels(labels: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Give unlabelled water cells the label of the nearest labelled cell."""
    known = labels >= 0
    if not known.any():
        raise ValueError("no labelled cells to propagate from")
    _, (ii, jj) = ndimage.distance_transform_edt(~known, return_indices=True)
    filled = labels[ii, jj]
    return np.where(mask, filled, -1)


def clusters_from_labels(field: VelocityField, labels: np.ndarray, centers) -> list[Cluster]:
    out = []
    for c in range(len(centers)):
        ii, jj = np.nonzero(labels == c)
        cells = tuple(GridPos(int(i), int(j)) for i, j in zip(ii, jj))
        vel = np.column_stack([field.u[ii, jj], field.v[ii, jj]]) if cells else np.zeros((0, 2))
        out.append(Cluster(c, cells, vel, np.asarray(centers[c], dtype=float)))
    return out


def labels_grid(clusters, shape) -> np.ndarray:
    labels = np.full(shape, -1, dtype=int)
    for c in clusters:
        for i, j in c.cells:
            labels[i, j] = c.label
    return labels


def clustering_to_json(clusters, shape) -> str:
    return json.dumps({
        "k": len(clusters),
        "centers": [c.center.tolist() for c in clusters],
        "labels": labels_grid(clusters, shape).tolist(),
    })


def clustering_from_json(field: VelocityField, text: str) -> list[Cluster]:
    doc = json.loads(text)
    return clusters_from_labels(field, np.array(doc["labels"], dtype=int), np.array(doc["centers"]))
