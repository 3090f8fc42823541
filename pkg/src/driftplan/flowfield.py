"""Gridded 2D water-current fields: data model, file I/O, synthetic maps and noise.

Grid convention: row ``i`` grows northward and column ``j`` grows eastward.
The centre of cell ``(i, j)`` sits at
``(x0 + (j + 0.5) * cell_size, y0 + (i + 0.5) * cell_size)`` in metres.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class GridPos(NamedTuple):
    i: int
    j: int


@dataclass(frozen=True)
class NoiseSpec:
    eta: float
    sigma_pct: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.eta <= 1.0:
            raise ValueError(f"eta must lie in (0, 1], got {self.eta}")
        if self.sigma_pct < 0:
            raise ValueError(f"sigma_pct must be >= 0, got {self.sigma_pct}")


class VelocityField:
    """Immutable M x N grid of (u, v) velocities with a water mask.

    Parameters
    ----------
    u, v : array_like, shape (M, N)
        East and north velocity components in m/s.
    mask : array_like of bool, shape (M, N), optional
        True for water. Defaults to all water.
    cell_size : float
        Edge length of one cell in metres.
    origin : (float, float)
        South-west corner of the grid in metres.
    """

    __slots__ = ("u", "v", "mask", "cell_size", "origin")

    def __init__(self, u, v, mask=None, cell_size=1.0, origin=(0.0, 0.0)):
        u = np.array(u, dtype=np.float64)
        v = np.array(v, dtype=np.float64)
        if mask is None:
            mask = np.ones(u.shape, dtype=bool)
        mask = np.array(mask, dtype=bool)
        if u.ndim != 2 or u.shape != v.shape or u.shape != mask.shape:
            raise ValueError(
                f"u, v and mask must share one 2D shape, got {u.shape}, {v.shape}, {mask.shape}"
            )
        if u.shape[0] < 2 or u.shape[1] < 2:
            raise ValueError(f"field must be at least 2x2, got {u.shape}")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise ValueError("velocity components must be finite")
        if np.any(u[~mask] != 0) or np.any(v[~mask] != 0):
            raise ValueError("masked (land) cells must have zero velocity")
        cell_size = float(cell_size)
        if not cell_size > 0:
            raise ValueError(f"cell_size must be positive, got {cell_size}")
        for arr in (u, v, mask):
            arr.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "cell_size", cell_size)
        object.__setattr__(self, "origin", (float(origin[0]), float(origin[1])))

    def __setattr__(self, name, value):
        raise AttributeError("VelocityField is immutable")

    def __repr__(self):
        return (
            f"VelocityField(rows={self.rows}, cols={self.cols}, cell_size={self.cell_size}, "
            f"origin={self.origin}, water={self.n_water})"
        )

    def __eq__(self, other):
        if not isinstance(other, VelocityField):
            return NotImplemented
        return (
            self.shape == other.shape
            and self.cell_size == other.cell_size
            and self.origin == other.origin
            and np.array_equal(self.u, other.u)
            and np.array_equal(self.v, other.v)
            and np.array_equal(self.mask, other.mask)
        )

    __hash__ = None

    @property
    def rows(self) -> int:
        return self.u.shape[0]

    @property
    def cols(self) -> int:
        return self.u.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape

    @property
    def n_water(self) -> int:
        return int(self.mask.sum())

    @property
    def speed(self) -> np.ndarray:
        return np.hypot(self.u, self.v)

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """(xmin, xmax, ymin, ymax) of the grid extent in metres."""
        x0, y0 = self.origin
        return (x0, x0 + self.cols * self.cell_size, y0, y0 + self.rows * self.cell_size)

    def water_cells(self) -> list[GridPos]:
        ii, jj = np.nonzero(self.mask)
        return [GridPos(int(i), int(j)) for i, j in zip(ii, jj)]

    def is_water(self, pos) -> bool:
        i, j = pos
        return 0 <= i < self.rows and 0 <= j < self.cols and bool(self.mask[i, j])

    def cell_center(self, pos) -> tuple[float, float]:
        i, j = pos
        x0, y0 = self.origin
        return (x0 + (j + 0.5) * self.cell_size, y0 + (i + 0.5) * self.cell_size)

    def cell_of(self, x: float, y: float) -> GridPos:
        """Cell containing the point; points on the far edges map to the last cell."""
        _check_inside(self, x, y)
        x0, y0 = self.origin
        j = min(int(math.floor((x - x0) / self.cell_size)), self.cols - 1)
        i = min(int(math.floor((y - y0) / self.cell_size)), self.rows - 1)
        return GridPos(i, j)

    def replace(self, u=None, v=None, mask=None) -> "VelocityField":
        return VelocityField(
            self.u if u is None else u,
            self.v if v is None else v,
            self.mask if mask is None else mask,
            cell_size=self.cell_size,
            origin=self.origin,
        )


def _check_inside(field: VelocityField, x: float, y: float) -> None:
    xmin, xmax, ymin, ymax = field.bounds
    if not (xmin <= x <= xmax and ymin <= y <= ymax) or not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError(f"position ({x}, {y}) outside grid bounds {field.bounds}")


# ---------------------------------------------------------------------------
# file I/O

CSV_HEADER = ["i", "j", "x", "y", "u", "v", "mask"]


def _infer_format(path, fmt):
    if fmt is not None:
        fmt = fmt.lower()
    else:
        ext = os.path.splitext(str(path))[1].lower()
        fmt = {".csv": "csv", ".json": "json"}.get(ext)
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown field format {fmt!r} for {path}")
    return fmt


def save_field(field: VelocityField, path, format: str | None = None) -> None:
    """Write ``field`` as CSV or JSON. Floats are written with ``repr`` so they re-parse exactly."""
    if os.path.isdir(path):
        raise IsADirectoryError(f"cannot write field to directory {path}")
    fmt = _infer_format(path, format)
    if fmt == "json":
        doc = {
            "rows": field.rows,
            "cols": field.cols,
            "cell_size": field.cell_size,
            "origin": list(field.origin),
            "u": field.u.tolist(),
            "v": field.v.tolist(),
            "mask": field.mask.astype(int).tolist(),
        }
        with open(path, "w") as fh:
            json.dump(doc, fh)
        return
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for i in range(field.rows):
            for j in range(field.cols):
                x, y = field.cell_center((i, j))
                w.writerow([
                    i, j, repr(x), repr(y),
                    repr(float(field.u[i, j])), repr(float(field.v[i, j])),
                    int(field.mask[i, j]),
                ])


def load_field(path, format: str | None = None) -> VelocityField:
    """Read a field written by :func:`save_field` (or any file following the same schema)."""
    fmt = _infer_format(path, format)
    if fmt == "json":
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValueError(f"malformed JSON field file {path}: {exc}") from exc
        try:
            rows, cols = int(doc["rows"]), int(doc["cols"])
            u = np.array(doc["u"], dtype=np.float64)
            v = np.array(doc["v"], dtype=np.float64)
            mask = np.array(doc["mask"], dtype=np.int64)
            cell_size = float(doc["cell_size"])
            origin = tuple(float(o) for o in doc["origin"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed JSON field file {path}: {exc}") from exc
        if u.shape != (rows, cols) or v.shape != (rows, cols) or mask.shape != (rows, cols):
            raise ValueError(f"shape mismatch in {path}: expected {(rows, cols)}")
        if not np.isin(mask, (0, 1)).all():
            raise ValueError(f"mask values must be 0 or 1 in {path}")
        return VelocityField(u, v, mask.astype(bool), cell_size=cell_size, origin=origin)

    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != CSV_HEADER:
            raise ValueError(f"bad CSV header in {path}: {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise ValueError(f"{path}:{lineno}: expected {len(CSV_HEADER)} columns, got {len(row)}")
            try:
                i, j = int(row[0]), int(row[1])
                x, y, uu, vv = (float(c) for c in row[2:6])
                m = int(row[6])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
            if m not in (0, 1):
                raise ValueError(f"{path}:{lineno}: mask must be 0 or 1")
            records.append((i, j, x, y, uu, vv, m))
    if not records:
        raise ValueError(f"no cells in {path}")
    ii = np.array([r[0] for r in records])
    jj = np.array([r[1] for r in records])
    if ii.min() < 0 or jj.min() < 0:
        raise ValueError(f"negative cell index in {path}")
    rows, cols = int(ii.max()) + 1, int(jj.max()) + 1
    if len(records) != rows * cols or len(set(zip(ii.tolist(), jj.tolist()))) != rows * cols:
        raise ValueError(f"{path}: expected {rows * cols} distinct cells, found {len(records)} rows")
    u = np.zeros((rows, cols))
    v = np.zeros((rows, cols))
    mask = np.zeros((rows, cols), dtype=bool)
    xs = np.zeros((rows, cols))
    ys = np.zeros((rows, cols))
    for i, j, x, y, uu, vv, m in records:
        u[i, j], v[i, j], mask[i, j] = uu, vv, bool(m)
        xs[i, j], ys[i, j] = x, y
    if cols > 1:
        cell_size = float(np.mean(np.diff(xs, axis=1)))
    else:
        cell_size = float(np.mean(np.diff(ys, axis=0)))
    x0 = float(np.mean(xs - (np.arange(cols) + 0.5) * cell_size))
    y0 = float(np.mean(ys - (np.arange(rows)[:, None] + 0.5) * cell_size))
    return VelocityField(u, v, mask, cell_size=cell_size, origin=(x0, y0))


# ---------------------------------------------------------------------------
# noise

def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def corrupt(field: VelocityField, spec: NoiseSpec) -> VelocityField:
    """Add zero-mean Gaussian noise to a random fraction ``spec.eta`` of the water cells.

    Each component gets noise with std ``sigma_pct / 100`` times that component's
    std over the water cells. Land cells are never touched.
    """
    water_idx = np.flatnonzero(field.mask)
    n_pick = _round_half_up(spec.eta * water_idx.size)
    if spec.sigma_pct == 0 or n_pick == 0:
        return field
    rng = np.random.default_rng(spec.seed)
    picked = rng.choice(water_idx, size=n_pick, replace=False)
    scale = spec.sigma_pct / 100.0
    std_u = float(field.u[field.mask].std())
    std_v = float(field.v[field.mask].std())
    u = field.u.copy().ravel()
    v = field.v.copy().ravel()
    noise = rng.standard_normal((2, n_pick))
    u[picked] += noise[0] * scale * std_u
    v[picked] += noise[1] * scale * std_v
    return field.replace(u=u.reshape(field.shape), v=v.reshape(field.shape))


# ---------------------------------------------------------------------------
# synthetic fields

def make_patchwork(rows, cols, regions=None, seed=0, speed_range=(0.1, 1.0), cell_size=1000.0):
    """Voronoi patchwork of convex regions, each with one constant velocity.

    Returns ``(field, labels)`` where ``labels[i, j]`` is the region index.
    When ``regions`` is None it is drawn from 2..8.
    """
    if rows < 4 or cols < 4:
        raise ValueError("synthetic fields need rows, cols >= 4")
    rng = np.random.default_rng(seed)
    if regions is None:
        regions = int(rng.integers(2, 9))
    if regions < 1:
        raise ValueError("need at least one region")
    sites = rng.uniform((0, 0), (rows, cols), size=(regions, 2))
    speeds = rng.uniform(*speed_range, size=regions)
    headings = rng.uniform(0, 2 * np.pi, size=regions)
    ii, jj = np.mgrid[0:rows, 0:cols]
    centers = np.stack([ii + 0.5, jj + 0.5], axis=-1)
    d2 = ((centers[:, :, None, :] - sites[None, None, :, :]) ** 2).sum(-1)
    labels = np.argmin(d2, axis=-1)
    u = (speeds * np.cos(headings))[labels]
    v = (speeds * np.sin(headings))[labels]
    return VelocityField(u, v, cell_size=cell_size), labels


def _double_gyre(rows, cols, amplitude, cell_size):
    # domain [0, 2] x [0, 1]; velocities from central differences of the stream
    # function so the discrete central-difference divergence vanishes identically
    hx, hy = 2.0 / cols, 1.0 / rows
    x = (np.arange(cols) + 0.5) * hx
    y = (np.arange(rows) + 0.5) * hy
    X, Y = np.meshgrid(x, y)

    def psi(a, b):
        return np.sin(np.pi * a) * np.sin(np.pi * b)

    u = -(psi(X, Y + hy) - psi(X, Y - hy)) / (2 * hy)
    v = (psi(X + hx, Y) - psi(X - hx, Y)) / (2 * hx)
    smax = np.hypot(u, v).max()
    return VelocityField(u * amplitude / smax, v * amplitude / smax, cell_size=cell_size)


def _shear(rows, cols, amplitude, cell_size, rng):
    heading = rng.uniform(0, 2 * np.pi)
    profile = amplitude * (0.1 + 0.9 * np.arange(rows) / (rows - 1))
    s = np.repeat(profile[:, None], cols, axis=1)
    return VelocityField(s * np.cos(heading), s * np.sin(heading), cell_size=cell_size)


def make_synthetic(kind, rows, cols, params=None, seed=0) -> VelocityField:
    """Generate a synthetic field of ``kind`` in {"patchwork", "double_gyre", "shear"}.

    ``params`` keys: ``regions`` and ``speed_range`` (patchwork), ``amplitude``
    (double_gyre, shear), ``cell_size`` (all).
    """
    params = dict(params or {})
    if rows < 4 or cols < 4:
        raise ValueError("synthetic fields need rows, cols >= 4")
    cell_size = float(params.pop("cell_size", 1000.0))
    if kind == "patchwork":
        field, _ = make_patchwork(
            rows, cols,
            regions=params.get("regions"),
            seed=seed,
            speed_range=tuple(params.get("speed_range", (0.1, 1.0))),
            cell_size=cell_size,
        )
        return field
    if kind == "double_gyre":
        return _double_gyre(rows, cols, float(params.get("amplitude", 0.5)), cell_size)
    if kind == "shear":
        return _shear(rows, cols, float(params.get("amplitude", 0.5)), cell_size,
                      np.random.default_rng(seed))
    raise ValueError(f"unknown synthetic field kind {kind!r}")


# ---------------------------------------------------------------------------
# interpolation

def velocity_at(field: VelocityField, x: float, y: float, interp: str = "bilinear") -> tuple[float, float]:
    """Velocity at a point in metres.

    ``bilinear`` blends the four surrounding cell centres; land neighbours carry
    zero weight. Outside the ring of outer cell centres the value is clamped to
    the nearest centre row/column.
    """
    _check_inside(field, x, y)
    if interp == "nearest":
        i, j = field.cell_of(x, y)
        return float(field.u[i, j]), float(field.v[i, j])
    if interp != "bilinear":
        raise ValueError(f"unknown interpolation {interp!r}")
    x0, y0 = field.origin
    fx = min(max((x - x0) / field.cell_size - 0.5, 0.0), field.cols - 1.0)
    fy = min(max((y - y0) / field.cell_size - 0.5, 0.0), field.rows - 1.0)
    j0 = min(int(fx), field.cols - 2)
    i0 = min(int(fy), field.rows - 2)
    tx, ty = fx - j0, fy - i0
    w = np.array([(1 - ty) * (1 - tx), (1 - ty) * tx, ty * (1 - tx), ty * tx])
    idx_i = (i0, i0, i0 + 1, i0 + 1)
    idx_j = (j0, j0 + 1, j0, j0 + 1)
    m = field.mask[idx_i, idx_j]
    w = np.where(m, w, 0.0)
    total = w.sum()
    if total <= 0:
        return 0.0, 0.0
    u = float(np.dot(w, field.u[idx_i, idx_j]) / total)
    v = float(np.dot(w, field.v[idx_i, idx_j]) / total)
    return u, v
