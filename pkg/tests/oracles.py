"""Independent reference implementations used by the tests.

Each oracle is written from the problem definition, without sharing code
paths with the package.
"""

from __future__ import annotations

import itertools
import math
from collections import deque

import numpy as np
from scipy.optimize import minimize_scalar


# ---------------------------------------------------------------------------
# minimum-area enclosing ellipse by support enumeration

def _conic_ellipse(coef):
    """(center, G, area) for a*x^2 + b*xy + c*y^2 + d*x + e*y + f = 0, or None."""
    a, b, c, d, e, f = coef
    A = np.array([[a, b / 2], [b / 2, c]])
    if np.linalg.det(A) <= 0:
        return None
    if a < 0:
        A, d, e, f = -A, -d, -e, -f
    bvec = np.array([d / 2, e / 2])
    x0 = -np.linalg.solve(A, bvec)
    k = bvec @ np.linalg.solve(A, bvec) - f
    if k <= 0:
        return None
    G = A / k
    return x0, G, math.pi / math.sqrt(np.linalg.det(G))


def _conic_rows(pts):
    x, y = pts[:, 0], pts[:, 1]
    return np.column_stack([x * x, x * y, y * y, x, y, np.ones_like(x)])


def _steiner(tri):
    c = tri.mean(axis=0)
    d = tri - c
    S = (2.0 / 3.0) * d.T @ d
    if abs(np.linalg.det(S)) < 1e-14:
        return None
    G = np.linalg.inv(S)
    return c, G, math.pi / math.sqrt(np.linalg.det(G))


def _through_five(pts):
    vt = np.linalg.svd(_conic_rows(pts))[2]
    return _conic_ellipse(vt[-1])


def _pencil_areas(coefs):
    """Vectorised ellipse area for rows of conic coefficients; inf where not an ellipse."""
    a, b, c, d, e, f = coefs.T
    det = a * c - b * b / 4
    sgn = np.sign(a)
    a, b, c, d, e, f = (sgn * t for t in (a, b, c, d, e, f))
    # k = b^T A^{-1} b - f with A = [[a, b/2], [b/2, c]], bvec = (d/2, e/2)
    with np.errstate(divide="ignore", invalid="ignore"):
        k = (c * d * d / 4 - b * d * e / 4 + a * e * e / 4) / det - f
        area = np.pi * k / np.sqrt(det)
    return np.where((det > 0) & (k > 0), area, np.inf)


def _through_four(pts):
    # pencil of conics through four points, parametrised by an angle
    vt = np.linalg.svd(_conic_rows(pts))[2]
    C1, C2 = vt[-1], vt[-2]

    def coefs(th):
        th = np.atleast_1d(th)
        return np.cos(th)[:, None] * C1 + np.sin(th)[:, None] * C2

    grid = np.linspace(0, math.pi, 2001)
    vals = _pencil_areas(coefs(grid))
    if not np.isfinite(vals).any():
        return None
    k = int(np.argmin(vals))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    res = minimize_scalar(lambda t: float(_pencil_areas(coefs(t))[0]), bounds=(lo, hi),
                          method="bounded", options={"xatol": 1e-12})
    th = res.x if res.fun <= vals[k] else grid[k]
    return _conic_ellipse(coefs(th)[0])


def mvee_bruteforce(points, tol=1e-7):
    """Minimum-area ellipse enclosing ``points`` (2D, full rank), as (center, G, area).

    The optimum is determined by at most five boundary points, so enumerate
    every support of size 3, 4 and 5 and keep the smallest ellipse that
    encloses the whole set.
    """
    P = np.asarray(points, dtype=float)
    best = None
    for r, make in ((3, _steiner), (4, _through_four), (5, _through_five)):
        for idx in itertools.combinations(range(len(P)), r):
            e = make(P[list(idx)])
            if e is None:
                continue
            c, G, a = e
            d = P - c
            if np.einsum("ni,ij,nj->n", d, G, d).max() <= 1 + tol and (best is None or a < best[2]):
                best = e
    return best


# ---------------------------------------------------------------------------
# graphs

def floyd_warshall(n, edges):
    """All-pairs hop distances; ``inf`` where unreachable."""
    D = np.full((n, n), np.inf)
    np.fill_diagonal(D, 0)
    for a, b in edges:
        if a != b:
            D[a, b] = 1
    for k in range(n):
        D = np.minimum(D, D[:, [k]] + D[[k], :])
    return D


# ---------------------------------------------------------------------------
# coverage objective

def grid_successor(u, v, mask):
    """phi as a dict over water cells: unit step along the velocity, half away from zero."""
    rows, cols = mask.shape
    succ = {}
    for i in range(rows):
        for j in range(cols):
            if not mask[i, j]:
                continue
            s = math.hypot(u[i, j], v[i, j])
            if s == 0:
                succ[(i, j)] = (i, j)
                continue
            di = int(np.sign(v[i, j]) * np.floor(abs(v[i, j] / s) + 0.5))
            dj = int(np.sign(u[i, j]) * np.floor(abs(u[i, j] / s) + 0.5))
            q = (i + di, j + dj)
            ok = 0 <= q[0] < rows and 0 <= q[1] < cols and mask[q]
            succ[(i, j)] = q if ok else (i, j)
    return succ


def coverage_bruteforce(u, v, mask, starts, horizon):
    """Sum over quadrants of log(#distinct visited states) / total path length.

    Each path follows phi from its start and stops before the first repeated
    state or once it holds ``horizon`` states. log(0) counts as 0.
    """
    succ = grid_successor(u, v, mask)
    rows, cols = mask.shape
    visited = set()
    total = 0
    for s0 in starts:
        path = [tuple(s0)]
        while len(path) < horizon and succ[path[-1]] not in path:
            path.append(succ[path[-1]])
        total += len(path)
        visited.update(path)
    counts = [0, 0, 0, 0]
    for i, j in visited:
        counts[2 * (i >= rows // 2) + (j >= cols // 2)] += 1
    return sum(math.log(c) for c in counts if c) / total


def greedy_disjoint_paths(succ, vertices, K):
    """Greedy longest-first vertex-disjoint paths in a graph with out-degree <= 1."""
    vertices = sorted(vertices)
    vset = set(vertices)
    cands = []
    for s in vertices:
        path = [s]
        while True:
            q = succ.get(path[-1])
            if q is None or q not in vset or q in path:
                break
            path.append(q)
        for t in range(len(path)):
            cands.append((-(t), s, path[t], path[:t + 1]))
    cands.sort(key=lambda c: c[:3])
    used, out = set(), []
    for _, _, _, p in cands:
        if len(out) == K:
            break
        if not used & set(p):
            out.append(p)
            used |= set(p)
    return out


# ---------------------------------------------------------------------------
# sets clustering

def sets_cost(sets, centers, weights=None):
    sets = np.asarray(sets, float)
    centers = np.asarray(centers, float)
    d = ((sets[:, :, None, :] - centers[None, None, :, :]) ** 2).sum(-1)
    per = d.min(axis=(1, 2))
    w = np.ones(len(sets)) if weights is None else np.asarray(weights, float)
    return float(w @ per)


def _group_optimum(sets, w, idx):
    """Best (cost, centre) for one group: enumerate the member chosen from each set."""
    m = sets.shape[1]
    choices = np.array(list(itertools.product(range(m), repeat=len(idx))))
    pts = sets[np.array(idx)[None, :], choices]                  # (m^s, s, d)
    ww = w[list(idx)]
    centres = np.einsum("s,csd->cd", ww, pts) / ww.sum()
    costs = np.einsum("s,cs->c", ww, ((pts - centres[:, None, :]) ** 2).sum(-1))
    best = int(np.argmin(costs))
    return float(costs[best]), centres[best]


def optimal_sets_clustering(sets, k, weights=None):
    """Exhaustive optimum of the weighted sets-clustering cost, as (cost, centres).

    For a fixed partition and a fixed member per set, the best centre of a
    group is the weighted mean of the chosen members; enumerate every group
    (subset of sets) with every member choice, then every partition into at
    most ``k`` groups by dynamic programming over subsets.
    """
    sets = np.asarray(sets, float)
    n = sets.shape[0]
    w = np.ones(n) if weights is None else np.asarray(weights, float)
    full = (1 << n) - 1
    group = {0: (0.0, None)}
    for mask in range(1, full + 1):
        idx = [i for i in range(n) if mask >> i & 1]
        group[mask] = _group_optimum(sets, w, idx)
    # f[j][mask]: best cost covering ``mask`` with j groups
    f = {mask: (group[mask][0], [mask]) for mask in range(full + 1)}
    for _ in range(1, k):
        g = dict(f)
        for mask in range(1, full + 1):
            low = mask & -mask
            sub = mask
            while sub:
                if sub & low:
                    rest = mask ^ sub
                    cand = group[sub][0] + f[rest][0]
                    if cand < g[mask][0]:
                        g[mask] = (cand, [sub] + f[rest][1])
                sub = (sub - 1) & mask
        f = g
    parts = [p for p in f[full][1] if p]
    centres = np.array([group[p][1] for p in parts])
    while len(centres) < k:
        centres = np.vstack([centres, centres[-1]])
    # the assignment step can only lower the cost of these centres
    return sets_cost(sets, centres, w), centres


# ---------------------------------------------------------------------------
# SVR dual as a QP

def svr_dual_cvxpy(K, z, C, eps):
    """max -1/2 b^T K b + z^T b - eps |b|_1, sum b = 0, |b| <= C; returns (b, objective)."""
    import cvxpy as cp

    n = len(z)
    L = np.linalg.cholesky(K + 1e-10 * np.eye(n))
    a = cp.Variable(n)
    s = cp.Variable(n)
    b = a - s
    obj = cp.Maximize(-0.5 * cp.sum_squares(L.T @ b) + z @ b - eps * cp.sum(a + s))
    cons = [cp.sum(b) == 0, a >= 0, s >= 0, a <= C, s <= C]
    prob = cp.Problem(obj, cons)
    prob.solve(solver=cp.CLARABEL)
    bv = a.value - s.value
    return bv, -0.5 * bv @ K @ bv + z @ bv - eps * np.abs(bv).sum()


def bfs_dist(adj, s):
    dist = {s: 0}
    q = deque([s])
    while q:
        u = q.popleft()
        for v in adj.get(u, ()):
            if v not in dist:
                dist[v] = dist[u] + 1
                q.append(v)
    return dist
