"""Lagrangian drift of passive floaters through a velocity field (explicit Euler)."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .flowfield import VelocityField, velocity_at


@dataclass(frozen=True)
class SimConfig:
    """Integration settings.

    ``dt=None`` means half a cell per step at the field's top speed.
    ``n_steps=None`` means ``2 * max(M, N)`` steps.
    """

    dt: float | None = None
    n_steps: int | None = None
    interp: str = "bilinear"
    boundary: str = "stop"

    def __post_init__(self):
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.n_steps is not None and self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.interp not in ("nearest", "bilinear"):
            raise ValueError(f"unknown interpolation {self.interp!r}")
        if self.boundary not in ("stop", "clamp"):
            raise ValueError(f"unknown boundary rule {self.boundary!r}")

    def resolve(self, field: VelocityField) -> "SimConfig":
        dt, n = self.dt, self.n_steps
        if dt is None:
            vmax = float(field.speed.max())
            dt = field.cell_size / (2 * vmax) if vmax > 0 else 1.0
        if n is None:
            n = 2 * max(field.rows, field.cols)
        return replace(self, dt=dt, n_steps=n)


@dataclass
class Trajectory:
    floater_id: int
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    u: np.ndarray
    v: np.ndarray

    def __len__(self):
        return self.t.size

    @property
    def samples(self):
        return list(zip(self.t.tolist(), self.x.tolist(), self.y.tolist(), self.u.tolist(), self.v.tolist()))


def _inside(field, x, y):
    xmin, xmax, ymin, ymax = field.bounds
    return xmin <= x <= xmax and ymin <= y <= ymax


def advect(field: VelocityField, start, config: SimConfig = SimConfig(), floater_id: int = 0,
           t0: float = 0.0) -> Trajectory:
    """Drift from the centre of cell ``start`` for ``n_steps`` Euler steps.

    The velocity is sampled at the current position, recorded, and then
    applied for one step. With ``boundary="stop"`` a step that would leave
    the grid freezes the floater where it is. With ``"clamp"`` the new
    position is projected back onto the grid edge.
    """
    if not field.is_water(start):
        raise ValueError(f"start cell {tuple(start)} is not water")
    cfg = config.resolve(field)
    n, dt = cfg.n_steps, cfg.dt
    xmin, xmax, ymin, ymax = field.bounds
    out = np.empty((n + 1, 4))
    x, y = field.cell_center(start)
    stopped = False
    for k in range(n + 1):
        u, v = velocity_at(field, x, y, cfg.interp)
        out[k] = (x, y, u, v)
        if k == n or stopped:
            continue
        nx, ny = x + u * dt, y + v * dt
        if not _inside(field, nx, ny):
            if cfg.boundary == "stop":
                stopped = True
                continue
            nx = min(max(nx, xmin), xmax)
            ny = min(max(ny, ymin), ymax)
        x, y = nx, ny
    t = t0 + dt * np.arange(n + 1)
    return Trajectory(floater_id, t, out[:, 0], out[:, 1], out[:, 2], out[:, 3])


def simulate_plan(field: VelocityField, plan, config: SimConfig = SimConfig()) -> list[Trajectory]:
    """Advect every planned floater; floater ``x`` samples at times offset by ``x * dt / K``."""
    positions = plan.positions if hasattr(plan, "positions") else list(plan)
    cfg = config.resolve(field)
    K = len(positions)
    return [
        advect(field, p, cfg, floater_id=x, t0=x * cfg.dt / K)
        for x, p in enumerate(positions)
    ]


@dataclass
class Observations:
    floater: np.ndarray
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    u: np.ndarray
    v: np.ndarray

    def __len__(self):
        return self.t.size

    @property
    def xy(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])

    def subset(self, idx) -> "Observations":
        return Observations(*(a[idx] for a in (self.floater, self.t, self.x, self.y, self.u, self.v)))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["floater", "t", "x", "y", "u", "v"])
            for row in zip(self.floater.tolist(), self.t.tolist(), self.x.tolist(),
                           self.y.tolist(), self.u.tolist(), self.v.tolist()):
                w.writerow([row[0]] + [repr(float(c)) for c in row[1:]])

    @classmethod
    def from_csv(cls, path) -> "Observations":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["floater", "t", "x", "y", "u", "v"]:
                raise ValueError(f"bad observation header in {path}: {header}")
            rows = [r for r in reader if r]
        if not rows:
            raise ValueError(f"no observations in {path}")
        floater = np.array([int(r[0]) for r in rows])
        vals = np.array([[float(c) for c in r[1:]] for r in rows])
        return cls(floater, *vals.T)


def observations(trajectories) -> Observations:
    """Stack all trajectory samples into one table sorted by time."""
    if not trajectories:
        raise ValueError("no trajectories")
    floater = np.concatenate([np.full(len(tr), tr.floater_id) for tr in trajectories])
    cols = [np.concatenate([getattr(tr, a) for tr in trajectories]) for a in ("t", "x", "y", "u", "v")]
    order = np.lexsort((floater, cols[0]))
    return Observations(floater[order], *(c[order] for c in cols))
