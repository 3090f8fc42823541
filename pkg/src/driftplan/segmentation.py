"""Split a velocity field into homogeneous current patches.

A coarse grid of sample cells is walked in order; every sample not yet
covered seeds a flood fill that only accepts cells the homogeneity oracle
groups with the seed. Each patch is enclosed by its minimum-volume ellipse
and thinned to a set of representative cells whose hull approximates the
patch's hull.
"""

from __future__ import annotations

import json
import math
import warnings
from collections import deque
from dataclasses import dataclass, field as dc_field

import numpy as np

from .flowfield import GridPos, VelocityField

DEGENERATE_RADIUS = 0.25


@dataclass(frozen=True)
class HomogeneityParams:
    max_angle: float = math.radians(20.0)
    max_speed_ratio: float = 1.5
    eps_grid: int = 4
    eps_beta: float = 0.05

    def __post_init__(self):
        if not 0 < self.max_angle <= math.pi:
            raise ValueError("max_angle must lie in (0, pi]")
        if self.max_speed_ratio < 1:
            raise ValueError("max_speed_ratio must be >= 1")
        if self.eps_grid < 1:
            raise ValueError("eps_grid must be >= 1")
        if not 0 < self.eps_beta < 1:
            raise ValueError("eps_beta must lie in (0, 1)")


@dataclass(frozen=True)
class Ellipsoid:
    """Ellipse ``{x : (x - center)^T shape (x - center) <= 1}`` in grid units."""

    center: np.ndarray
    shape: np.ndarray
    converged: bool = True

    def membership(self, points) -> np.ndarray:
        d = np.atleast_2d(np.asarray(points, dtype=float)) - self.center
        return np.einsum("ni,ij,nj->n", d, self.shape, d)

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        return self.membership(points) <= 1.0 + tol

    @property
    def volume(self) -> float:
        """Area for d = 2 (general: unit-ball volume / sqrt(det G))."""
        d = self.shape.shape[0]
        unit = math.pi ** (d / 2) / math.gamma(d / 2 + 1)
        return unit / math.sqrt(np.linalg.det(self.shape))


@dataclass
class Segment:
    id: int
    cells: tuple
    representatives: tuple
    ellipsoid: Ellipsoid
    mean_heading: float
    mean_speed: float
    _cellset: frozenset = dc_field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.cells:
            raise ValueError("segment must contain at least one cell")
        self._cellset = frozenset(self.cells)

    def __contains__(self, pos) -> bool:
        return tuple(pos) in self._cellset

    def __len__(self) -> int:
        return len(self.cells)


# ---------------------------------------------------------------------------
# minimum-volume enclosing ellipsoid

def _degenerate_ellipsoid(pts: np.ndarray) -> Ellipsoid | None:
    """Point-disc or hairline ellipse for inputs without full affine rank, else None."""
    d = pts.shape[1]
    c = pts.mean(axis=0)
    centered = pts - c
    scale = np.abs(centered).max() if centered.size else 0.0
    if scale == 0.0:
        return Ellipsoid(c, np.eye(d) / DEGENERATE_RADIUS**2)
    _, s, vt = np.linalg.svd(centered, full_matrices=True)
    if d == 2 and s[-1] <= 1e-9 * s[0]:
        axis = vt[0]
        proj = centered @ axis
        lo, hi = proj.min(), proj.max()
        c = c + axis * (lo + hi) / 2
        half = (hi - lo) / 2
        minor = vt[1]
        G = np.outer(axis, axis) / half**2 + np.outer(minor, minor) / DEGENERATE_RADIUS**2
        return Ellipsoid(c, G)
    return None


def _hull_vertices(pts: np.ndarray) -> np.ndarray:
    if pts.shape[0] <= 8 or pts.shape[1] != 2:
        return pts
    from scipy.spatial import ConvexHull

    return pts[ConvexHull(pts).vertices]


def mvee(points, eps: float = 1e-3, max_iter: int = 10_000) -> Ellipsoid:
    """Minimum-volume enclosing ellipsoid by Khachiyan's method with away steps.

    The iteration stops once the largest lifted leverage ``max_i M_i`` falls
    within ``(1 + eps)(d + 1)``. The resulting ellipse is then rescaled so
    every input point lies inside it.

    Inputs lacking full affine rank get the disc/hairline fallback of radius
    ``DEGENERATE_RADIUS``. If ``max_iter`` is hit, the best ellipse so far is
    returned with ``converged=False`` and a warning is emitted.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise ValueError("mvee needs at least one point")
    if not np.all(np.isfinite(pts)):
        raise ValueError("mvee points must be finite")
    pts = np.unique(pts, axis=0)
    degenerate = _degenerate_ellipsoid(pts)
    if degenerate is not None:
        return degenerate
    pts = _hull_vertices(pts)
    n, d = pts.shape
    Q = np.vstack([pts.T, np.ones(n)])
    u = np.full(n, 1.0 / n)
    converged = False
    for _ in range(max_iter):
        X = (Q * u) @ Q.T
        M = np.einsum("ij,ji->i", Q.T, np.linalg.solve(X, Q))
        j = int(np.argmax(M))
        if M[j] <= (1 + eps) * (d + 1):
            converged = True
            break
        # away step on the active point with the smallest leverage
        active = u > 0
        k = int(np.flatnonzero(active)[np.argmin(M[active])])
        if (d + 1) - M[k] > M[j] - (d + 1) and u[k] < 1:
            floor = -u[k] / (1 - u[k])
            step = (M[k] - d - 1) / ((d + 1) * (M[k] - 1)) if M[k] > 1 + 1e-12 else floor
            step = max(step, floor)
            u *= 1 - step
            u[k] += step
        else:
            step = (M[j] - d - 1) / ((d + 1) * (M[j] - 1))
            u *= 1 - step
            u[j] += step
        u = np.clip(u, 0.0, None)
        u /= u.sum()
    if not converged:
        warnings.warn(f"mvee did not converge within {max_iter} iterations", RuntimeWarning)
    c = pts.T @ u
    cov = (pts.T * u) @ pts - np.outer(c, c)
    G = np.linalg.inv(cov) / d
    G = (G + G.T) / 2
    diff = pts - c
    worst = float(np.einsum("ni,ij,nj->n", diff, G, diff).max())
    G = G / worst
    return Ellipsoid(c, G, converged)


# ---------------------------------------------------------------------------
# sampling and the homogeneity oracle

def cell_xy(cells) -> np.ndarray:
    """Cell-centre coordinates in grid units, ``x`` east and ``y`` north."""
    arr = np.asarray([tuple(c) for c in cells], dtype=float).reshape(-1, 2)
    return np.column_stack([arr[:, 1] + 0.5, arr[:, 0] + 0.5])


def grid_sample(field: VelocityField, eps_grid: int, seed: int = 0) -> list[GridPos]:
    """One uniformly drawn water cell per ``eps_grid`` x ``eps_grid`` block, row-major block order."""
    eps_grid = int(eps_grid)
    if eps_grid < 1 or eps_grid > min(field.rows, field.cols):
        raise ValueError(f"eps_grid must lie in [1, min(M, N)], got {eps_grid}")
    rng = np.random.default_rng(seed)
    out = []
    for bi in range(0, field.rows, eps_grid):
        for bj in range(0, field.cols, eps_grid):
            block = field.mask[bi:bi + eps_grid, bj:bj + eps_grid]
            ii, jj = np.nonzero(block)
            if ii.size == 0:
                continue
            k = int(rng.integers(ii.size))
            out.append(GridPos(bi + int(ii[k]), bj + int(jj[k])))
    return out


def oracle_same_patch(field: VelocityField, anchor, query, params: HomogeneityParams) -> bool:
    """Whether ``query`` belongs to the same current patch as ``anchor``."""
    for p in (anchor, query):
        if not field.is_water(p):
            raise ValueError(f"oracle queried on non-water cell {tuple(p)}")
    ua, va = field.u[anchor], field.v[anchor]
    uq, vq = field.u[query], field.v[query]
    sa, sq = math.hypot(ua, va), math.hypot(uq, vq)
    if sa == 0.0 or sq == 0.0:
        return sa == sq
    angle = abs(math.atan2(ua * vq - va * uq, ua * uq + va * vq))
    if angle > params.max_angle:
        return False
    eps = np.finfo(float).eps
    return max(sa, sq) / max(min(sa, sq), eps) <= params.max_speed_ratio


def sample_representatives(cells, eps_beta: float, seed: int = 0) -> tuple:
    """Thin a patch to one random member per bin of its bounding box.

    The bounding box is split into ``ceil(1/eps_beta)`` bins per axis (never
    finer than one cell). Every bin that holds a member contributes one
    uniformly drawn member.
    """
    if not 0 < eps_beta < 1:
        raise ValueError("eps_beta must lie in (0, 1)")
    cells = sorted(tuple(c) for c in cells)
    if not cells:
        raise ValueError("cannot sample an empty segment")
    arr = np.asarray(cells)
    lo = arr.min(axis=0)
    extent = arr.max(axis=0) - lo + 1
    per_axis = math.ceil(1.0 / eps_beta - 1e-12)
    nbins = np.minimum(extent, per_axis)
    bin_idx = ((arr - lo) * nbins) // extent
    keys = bin_idx[:, 0] * nbins[1] + bin_idx[:, 1]
    rng = np.random.default_rng(seed)
    reps = []
    for key in np.unique(keys):
        members = np.flatnonzero(keys == key)
        reps.append(cells[int(members[rng.integers(members.size)])])
    return tuple(GridPos(*r) for r in sorted(reps))


def _segment_from_cells(field, seg_id, cells, params, seed) -> Segment:
    cells = tuple(GridPos(*c) for c in sorted(cells))
    ell = mvee(cell_xy(cells))
    idx = tuple(np.asarray(cells).T)
    u, v = field.u[idx], field.v[idx]
    reps = sample_representatives(cells, params.eps_beta, seed)
    return Segment(
        id=seg_id,
        cells=cells,
        representatives=reps,
        ellipsoid=ell,
        mean_heading=float(math.atan2(v.mean(), u.mean())),
        mean_speed=float(np.hypot(u, v).mean()),
    )


def grow_patch(field: VelocityField, seed_pos, params: HomogeneityParams, visited=frozenset(),
               seg_id: int = 0, seed: int = 0) -> Segment:
    """Flood-fill the patch around ``seed_pos`` over 4-neighbours accepted by the oracle."""
    seed_pos = GridPos(*seed_pos)
    if seed_pos in visited:
        raise ValueError(f"seed {tuple(seed_pos)} is already covered")
    if not field.is_water(seed_pos):
        raise ValueError(f"seed {tuple(seed_pos)} is not a water cell")
    members = {seed_pos}
    queue = deque([seed_pos])
    while queue:
        i, j = queue.popleft()
        for q in ((i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)):
            q = GridPos(*q)
            if q in members or q in visited or not field.is_water(q):
                continue
            if oracle_same_patch(field, seed_pos, q, params):
                members.add(q)
                queue.append(q)
    return _segment_from_cells(field, seg_id, members, params, seed)


def segment_field(field: VelocityField, params: HomogeneityParams = HomogeneityParams(),
                  seed: int = 0) -> list[Segment]:
    """Cover every grid sample with disjoint homogeneous segments."""
    if field.n_water == 0:
        raise ValueError("field has no water cells")
    rng = np.random.default_rng(seed)
    samples = grid_sample(field, min(params.eps_grid, field.rows, field.cols), int(rng.integers(2**31)))
    covered: set = set()
    segments = []
    for s in samples:
        if s in covered:
            continue
        seg = grow_patch(field, s, params, covered, seg_id=len(segments),
                         seed=int(rng.integers(2**31)))
        covered.update(seg.cells)
        segments.append(seg)
    return segments


# ---------------------------------------------------------------------------
# serialization

def segments_to_json(segments) -> str:
    return json.dumps([
        {
            "id": s.id,
            "cells": [list(map(int, c)) for c in s.cells],
            "representatives": [list(map(int, c)) for c in s.representatives],
            "center": s.ellipsoid.center.tolist(),
            "shape": s.ellipsoid.shape.tolist(),
            "mean_heading": s.mean_heading,
            "mean_speed": s.mean_speed,
        }
        for s in segments
    ])


def segments_from_json(text: str) -> list[Segment]:
    return [
        Segment(
            id=d["id"],
            cells=tuple(GridPos(*c) for c in d["cells"]),
            representatives=tuple(GridPos(*c) for c in d["representatives"]),
            ellipsoid=Ellipsoid(np.array(d["center"]), np.array(d["shape"])),
            mean_heading=d["mean_heading"],
            mean_speed=d["mean_speed"],
        )
        for d in json.loads(text)
    ]
