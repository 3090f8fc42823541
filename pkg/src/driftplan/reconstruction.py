"""Field reconstruction from floater observations and the prediction-error metric.

Each velocity component gets its own epsilon-SVR with an RBF kernel over
observation coordinates normalised to the unit square. The dual is solved
with a second-order working-set SMO loop compiled by numba.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass

import numba
import numpy as np

from .drift_sim import Observations
from .flowfield import VelocityField

KKT_TOL = 1e-4
DEFAULT_C_GRID = (0.1, 1.0, 10.0, 100.0)
DEFAULT_EPS_GRID = (0.001, 0.01, 0.05)
DEFAULT_GAMMA_GRID = (0.01, 0.1, 1.0, 10.0, 100.0, 1000.0)


# ---------------------------------------------------------------------------
# SMO solver

@numba.njit(cache=True)
def _smo(K, z, C, eps, tol, max_iter):
    n = z.size
    m = 2 * n
    a = np.zeros(m)
    y = np.ones(m)
    p = np.empty(m)
    for t in range(n):
        y[n + t] = -1.0
        p[t] = eps - z[t]
        p[n + t] = eps + z[t]
    G = p.copy()
    it = 0
    gap = np.inf
    while it < max_iter:
        # first index: maximal violation
        gmax = -np.inf
        i = -1
        for t in range(m):
            if y[t] > 0:
                if a[t] < C and -G[t] >= gmax:
                    gmax = -G[t]
                    i = t
            else:
                if a[t] > 0 and G[t] >= gmax:
                    gmax = G[t]
                    i = t
        # second index: largest second-order decrease
        gmax2 = -np.inf
        j = -1
        obj_min = np.inf
        ii = i % n if i >= 0 else 0
        Kii = K[ii, ii]
        for t in range(m):
            tt = t % n
            if y[t] > 0:
                if a[t] > 0:
                    diff = gmax + G[t]
                    if G[t] >= gmax2:
                        gmax2 = G[t]
                    if diff > 0 and i >= 0:
                        quad = Kii + K[tt, tt] - 2.0 * K[ii, tt]
                        if quad <= 0:
                            quad = 1e-12
                        val = -diff * diff / quad
                        if val <= obj_min:
                            obj_min = val
                            j = t
            else:
                if a[t] < C:
                    diff = gmax - G[t]
                    if -G[t] >= gmax2:
                        gmax2 = -G[t]
                    if diff > 0 and i >= 0:
                        quad = Kii + K[tt, tt] - 2.0 * K[ii, tt]
                        if quad <= 0:
                            quad = 1e-12
                        val = -diff * diff / quad
                        if val <= obj_min:
                            obj_min = val
                            j = t
        gap = gmax + gmax2
        if gap < tol or i < 0 or j < 0:
            break
        it += 1
        jj = j % n
        Qij = y[i] * y[j] * K[ii, jj]
        Qii = Kii
        Qjj = K[jj, jj]
        ai_old = a[i]
        aj_old = a[j]
        if y[i] != y[j]:
            quad = Qii + Qjj + 2.0 * Qij
            if quad <= 0:
                quad = 1e-12
            delta = (-G[i] - G[j]) / quad
            diff = a[i] - a[j]
            a[i] += delta
            a[j] += delta
            if diff > 0:
                if a[j] < 0:
                    a[j] = 0.0
                    a[i] = diff
            else:
                if a[i] < 0:
                    a[i] = 0.0
                    a[j] = -diff
            if diff > 0:
                if a[i] > C:
                    a[i] = C
                    a[j] = C - diff
            else:
                if a[j] > C:
                    a[j] = C
                    a[i] = C + diff
        else:
            quad = Qii + Qjj - 2.0 * Qij
            if quad <= 0:
                quad = 1e-12
            delta = (G[i] - G[j]) / quad
            s = a[i] + a[j]
            a[i] -= delta
            a[j] += delta
            if s > C:
                if a[i] > C:
                    a[i] = C
                    a[j] = s - C
            else:
                if a[j] < 0:
                    a[j] = 0.0
                    a[i] = s
            if s > C:
                if a[j] > C:
                    a[j] = C
                    a[i] = s - C
            else:
                if a[i] < 0:
                    a[i] = 0.0
                    a[j] = s
        dai = a[i] - ai_old
        daj = a[j] - aj_old
        for t in range(m):
            tt = t % n
            G[t] += y[t] * (y[i] * K[tt, ii] * dai + y[j] * K[tt, jj] * daj)
    # offset
    ub = np.inf
    lb = -np.inf
    nfree = 0
    sfree = 0.0
    for t in range(m):
        yg = y[t] * G[t]
        if a[t] >= C:
            if y[t] < 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        elif a[t] <= 0:
            if y[t] > 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        else:
            nfree += 1
            sfree += yg
    rho = sfree / nfree if nfree > 0 else (ub + lb) / 2.0
    beta = a[:n] - a[n:]
    return beta, -rho, it, gap


def rbf_kernel(A, B, gamma: float) -> np.ndarray:
    d2 = ((A[:, None, :] - B[None, :, :]) ** 2).sum(-1)
    return np.exp(-gamma * d2)


def svr_dual_objective(K, z, beta, eps) -> float:
    """Dual objective in minimisation form: 1/2 b'Kb + eps |b|_1 - z'b."""
    return float(0.5 * beta @ K @ beta + eps * np.abs(beta).sum() - z @ beta)


def solve_svr_dual(K, z, C, epsilon, tol=KKT_TOL, max_iter=None):
    """Solve the epsilon-SVR dual for a precomputed kernel matrix.

    Returns ``(beta, bias, n_iter, gap)`` with predictions ``K @ beta + bias``.
    """
    K = np.ascontiguousarray(K, dtype=np.float64)
    z = np.ascontiguousarray(z, dtype=np.float64)
    if max_iter is None:
        max_iter = max(10_000_000, 100 * z.size)
    return _smo(K, z, float(C), float(epsilon), float(tol), int(max_iter))


# ---------------------------------------------------------------------------
# models

@dataclass
class Normalizer:
    offset: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, xy: np.ndarray, domain=None) -> "Normalizer":
        """Scale to the bounding box of ``xy``, or to ``domain = (xmin, xmax, ymin, ymax)``."""
        if domain is not None:
            xmin, xmax, ymin, ymax = domain
            lo = np.array([xmin, ymin], dtype=float)
            span = np.array([xmax - xmin, ymax - ymin], dtype=float)
        else:
            lo = xy.min(axis=0)
            span = xy.max(axis=0) - lo
        return cls(lo, np.where(span > 0, span, 1.0))

    def __call__(self, xy) -> np.ndarray:
        return (np.asarray(xy, dtype=float) - self.offset) / self.scale


@dataclass
class SvrModel:
    component: str
    support_vectors: np.ndarray     # raw coordinates (metres)
    dual_coeffs: np.ndarray
    bias: float
    gamma: float
    C: float
    epsilon: float
    norm: Normalizer

    def predict(self, xy) -> np.ndarray:
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        if self.dual_coeffs.size == 0:
            return np.full(xy.shape[0], self.bias)
        Kq = rbf_kernel(self.norm(xy), self.norm(self.support_vectors), self.gamma)
        return Kq @ self.dual_coeffs + self.bias

    def to_json(self) -> str:
        return json.dumps({
            "component": self.component,
            "gamma": self.gamma,
            "bias": self.bias,
            "C": self.C,
            "epsilon": self.epsilon,
            "offset": self.norm.offset.tolist(),
            "scale": self.norm.scale.tolist(),
            "svs": [[float(x), float(y), float(a)]
                    for (x, y), a in zip(self.support_vectors, self.dual_coeffs)],
        })

    @classmethod
    def from_json(cls, text: str) -> "SvrModel":
        d = json.loads(text)
        svs = np.array(d["svs"], dtype=float).reshape(-1, 3)
        return cls(d["component"], svs[:, :2], svs[:, 2], d["bias"], d["gamma"],
                   d.get("C", math.inf), d.get("epsilon", 0.0),
                   Normalizer(np.array(d["offset"]), np.array(d["scale"])))


def _fit_component(component, xy, z, norm, K, C, epsilon, gamma):
    beta, bias, _, _ = solve_svr_dual(K, z, C, epsilon)
    sv = np.abs(beta) > 0
    return SvrModel(component, xy[sv], beta[sv], float(bias), float(gamma), float(C),
                    float(epsilon), norm)


def _check_obs(obs: Observations):
    if len(obs) < 2:
        raise ValueError("need at least two observations")
    xy = obs.xy
    if np.all(xy == xy[0]):
        raise ValueError("all observation positions are identical")


def unique_observations(obs: Observations) -> Observations:
    """Drop repeated (x, y, u, v) rows, e.g. the samples of a floater stopped at the boundary."""
    rows = np.column_stack([obs.x, obs.y, obs.u, obs.v])
    _, first = np.unique(rows, axis=0, return_index=True)
    return obs.subset(np.sort(first))


def train_svr(obs: Observations, C: float = 10.0, epsilon: float = 0.01,
              gamma: float = 1.0, domain=None) -> tuple[SvrModel, SvrModel]:
    """Fit one RBF epsilon-SVR per velocity component on (x, y) -> u and (x, y) -> v.

    Coordinates are scaled to the unit square: by default over the
    observations' bounding box, or over ``domain`` when it is given.
    """
    _check_obs(obs)
    if not (C > 0 and gamma > 0 and epsilon >= 0):
        raise ValueError("need C > 0, gamma > 0, epsilon >= 0")
    xy = obs.xy
    norm = Normalizer.fit(xy, domain)
    K = rbf_kernel(norm(xy), norm(xy), gamma)
    return (
        _fit_component("u", xy, obs.u, norm, K, C, epsilon, gamma),
        _fit_component("v", xy, obs.v, norm, K, C, epsilon, gamma),
    )


@dataclass
class LinearModel:
    component: str
    coef: np.ndarray    # (intercept, slope_x, slope_y) in normalised coordinates
    norm: Normalizer

    def predict(self, xy) -> np.ndarray:
        q = self.norm(np.atleast_2d(xy))
        return self.coef[0] + q @ self.coef[1:]


def train_linear(obs: Observations, weights=None) -> tuple[LinearModel, LinearModel]:
    """Weighted least squares on features (1, x, y), one model per component."""
    _check_obs(obs)
    xy = obs.xy
    norm = Normalizer.fit(xy)
    A = np.column_stack([np.ones(len(obs)), norm(xy)])
    w = np.ones(len(obs)) if weights is None else np.asarray(weights, dtype=float)
    sw = np.sqrt(w)[:, None]
    out = []
    for comp, z in (("u", obs.u), ("v", obs.v)):
        coef, *_ = np.linalg.lstsq(A * sw, z * sw[:, 0], rcond=None)
        out.append(LinearModel(comp, coef, norm))
    return tuple(out)


# ---------------------------------------------------------------------------
# model selection

def _canonical_order(obs: Observations) -> np.ndarray:
    return np.lexsort((obs.v, obs.u, obs.y, obs.x, obs.t))


def fold_ids(obs: Observations, folds: int, seed: int = 0) -> np.ndarray:
    """Fold index per observation; independent of the row order of ``obs``."""
    order = _canonical_order(obs)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(obs))
    ids = np.empty(len(obs), dtype=int)
    ids[order[perm]] = np.arange(len(obs)) % folds
    return ids


def cv_scores(obs: Observations, C_grid, eps_grid, gamma_grid, folds: int = 5,
              seed: int = 0, domain=None) -> dict:
    """Mean held-out speed error for every (C, epsilon, gamma) on the grid."""
    if folds < 2:
        raise ValueError("need at least two folds")
    if len(obs) < folds:
        raise ValueError(f"{len(obs)} observations cannot fill {folds} folds")
    if not (C_grid and eps_grid and gamma_grid):
        raise ValueError("parameter grids must be nonempty")
    ids = fold_ids(obs, folds, seed)
    xy = obs.xy
    sums = {key: 0.0 for key in itertools.product(C_grid, eps_grid, gamma_grid)}
    for f in range(folds):
        tr, te = ids != f, ids == f
        xtr = xy[tr]
        if np.all(xtr == xtr[0]):
            raise ValueError("degenerate training fold: all positions identical")
        norm = Normalizer.fit(xtr, domain)
        ntr, nte = norm(xtr), norm(xy[te])
        d_tr = ((ntr[:, None] - ntr[None]) ** 2).sum(-1)
        d_te = ((nte[:, None] - ntr[None]) ** 2).sum(-1)
        for gamma in gamma_grid:
            K = np.exp(-gamma * d_tr)
            Kte = np.exp(-gamma * d_te)
            for C in C_grid:
                for eps in eps_grid:
                    bu, cu, _, _ = solve_svr_dual(K, obs.u[tr], C, eps)
                    bv, cv, _, _ = solve_svr_dual(K, obs.v[tr], C, eps)
                    du = Kte @ bu + cu - obs.u[te]
                    dv = Kte @ bv + cv - obs.v[te]
                    sums[(C, eps, gamma)] += float(np.hypot(du, dv).sum())
    return {key: s / len(obs) for key, s in sums.items()}


def grid_search_cv(obs: Observations, C_grid=DEFAULT_C_GRID, eps_grid=DEFAULT_EPS_GRID,
                   gamma_grid=DEFAULT_GAMMA_GRID, folds: int = 5, seed: int = 0,
                   return_scores: bool = False, domain=None):
    """Exhaustive k-fold search; ties go to the lexicographically smallest (C, epsilon, gamma)."""
    _check_obs(obs)
    scores = cv_scores(obs, C_grid, eps_grid, gamma_grid, folds, seed, domain)
    best = min(sorted(scores), key=lambda k: scores[k])
    return (best, scores) if return_scores else best


def predict_field(models, geometry: VelocityField) -> VelocityField:
    """Evaluate the (u, v) models at every water-cell centre; land stays zero."""
    mu_, mv_ = models
    ii, jj = np.nonzero(geometry.mask)
    x0, y0 = geometry.origin
    xy = np.column_stack([x0 + (jj + 0.5) * geometry.cell_size, y0 + (ii + 0.5) * geometry.cell_size])
    u = np.zeros(geometry.shape)
    v = np.zeros(geometry.shape)
    if ii.size:
        u[ii, jj] = mu_.predict(xy)
        v[ii, jj] = mv_.predict(xy)
    return geometry.replace(u=u, v=v)


def reconstruct(obs: Observations, geometry: VelocityField, C_grid=DEFAULT_C_GRID,
                eps_grid=DEFAULT_EPS_GRID, gamma_grid=DEFAULT_GAMMA_GRID, folds: int = 5,
                seed: int = 0, normalize: str = "map"):
    """Grid search, refit on all observations, predict the field. Returns (field, models, params).

    Exact duplicate observations are dropped first. ``normalize="map"`` scales
    coordinates over the grid extent so gamma means the same for every plan;
    ``"observations"`` scales over the observations' own bounding box.
    """
    obs = unique_observations(obs)
    domain = geometry.bounds if normalize == "map" else None
    params = grid_search_cv(obs, C_grid, eps_grid, gamma_grid, min(folds, len(obs)), seed,
                            domain=domain)
    models = train_svr(obs, *params, domain=domain)
    return predict_field(models, geometry), models, params


# ---------------------------------------------------------------------------
# error metric

@dataclass
class ErrorReport:
    rho: np.ndarray          # (M, N); NaN on land
    mean: float
    median: float
    cdf_values: np.ndarray
    cdf_fractions: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "rho"])
            for i, j in zip(*np.nonzero(~np.isnan(self.rho))):
                w.writerow([int(i), int(j), repr(float(self.rho[i, j]))])

    def cdf_to_csv(self, path) -> None:
        write_cdf(path, self.cdf_values, self.cdf_fractions)


def write_cdf(path, values, fractions) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["value", "fraction"])
        for a, b in zip(values, fractions):
            w.writerow([repr(float(a)), repr(float(b))])


def empirical_cdf(values) -> tuple[np.ndarray, np.ndarray]:
    vals = np.sort(np.asarray(values, dtype=float))
    return vals, np.arange(1, vals.size + 1) / vals.size


def error_report(truth: VelocityField, predicted: VelocityField) -> ErrorReport:
    """Per-cell speed error ``sqrt((u - u')^2 + (v - v')^2)`` over water cells."""
    if truth.shape != predicted.shape or not np.array_equal(truth.mask, predicted.mask):
        raise ValueError("truth and prediction must share grid geometry")
    if truth.cell_size != predicted.cell_size or truth.origin != predicted.origin:
        raise ValueError("truth and prediction must share grid geometry")
    rho = np.hypot(truth.u - predicted.u, truth.v - predicted.v)
    rho = np.where(truth.mask, rho, np.nan)
    water = rho[truth.mask]
    vals, frac = empirical_cdf(water)
    return ErrorReport(rho, float(water.mean()), float(np.median(water)), vals, frac)


@dataclass
class StrategyComparison:
    rows: list              # dicts: strategy, mean, median, ratio
    ratio_matrix: dict      # (a, b) -> mean(a) / mean(b)
    cdfs: dict              # strategy -> (values, fractions)


def compare_strategies(field, reports: dict, baseline: str = "uniform") -> StrategyComparison:
    """Mean/median per strategy and the ratio ``mean(baseline) / mean(strategy)``."""
    if len(reports) < 2:
        raise ValueError("need at least two strategies to compare")
    names = list(reports)
    base = reports.get(baseline, reports[names[0]])

    def ratio(a, b):
        return a / b if b > 0 else (1.0 if a == b else math.inf)

    rows = [
        {"strategy": s, "mean": r.mean, "median": r.median, "ratio": ratio(base.mean, r.mean)}
        for s, r in reports.items()
    ]
    matrix = {(a, b): ratio(reports[a].mean, reports[b].mean) for a in names for b in names}
    cdfs = {s: (r.cdf_values, r.cdf_fractions) for s, r in reports.items()}
    return StrategyComparison(rows, matrix, cdfs)
