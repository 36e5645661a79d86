"""Workspace geometry, sensing footprint and discretized coverage bookkeeping.

The square workspace [-y_max, y_max]^2 is covered by a regular lattice of
cells with spacing d_g. A cell counts as covered only once it lies entirely
inside the sensor disc of some visited robot position, which for an
axis-aligned square cell reduces to a center-distance test against
r - d_g/sqrt(2) (the cell's corner radius). Obstacle cells discovered by the
sensor are recorded separately and excluded from exploration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SQRT2 = np.sqrt(2.0)


class WorldError(ValueError):
    """Invalid environment or grid construction."""


@dataclass(frozen=True)
class Rectangle:
    """Axis-aligned box given by center and half-extents (meters)."""

    center: np.ndarray
    half_extents: np.ndarray

    def contains(self, p) -> bool:
        d = np.abs(np.asarray(p, dtype=float) - self.center)
        return bool(np.all(d <= self.half_extents + 1e-12))

    def contains_many(self, pts: np.ndarray) -> np.ndarray:
        d = np.abs(pts - self.center[None, :])
        return np.all(d <= self.half_extents[None, :] + 1e-12, axis=1)


@dataclass(frozen=True)
class Environment:
    y_max: float
    sensor_radius: float
    grid_spacing: float
    obstacles: tuple[Rectangle, ...] = ()
    depot: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        if self.grid_spacing <= 0:
            raise WorldError("grid spacing must be positive")
        if self.grid_spacing > self.sensor_radius * SQRT2 + 1e-12:
            raise WorldError(
                f"grid spacing {self.grid_spacing} exceeds r*sqrt(2)="
                f"{self.sensor_radius * SQRT2:.6g}; cells could never be fully observed"
            )
        if not self.sensor_radius < self.y_max:
            raise WorldError("sensor radius must be smaller than the workspace half-width")
        for obs in self.obstacles:
            if obs.contains(self.depot):
                raise WorldError("depot lies inside an obstacle")

    def in_workspace(self, p, tol: float = 1e-9) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(np.abs(p) <= self.y_max + tol))

    def in_obstacle(self, p) -> bool:
        return any(obs.contains(p) for obs in self.obstacles)


@dataclass(frozen=True)
class ObjectSpec:
    id: int
    position: np.ndarray
    mass: float

    def __post_init__(self):
        if self.mass < 0:
            raise WorldError(f"object {self.id} has negative mass")


def validate_objects(env: Environment, objects) -> None:
    seen = set()
    for o in objects:
        if o.id in seen:
            raise WorldError(f"duplicate object id {o.id}")
        seen.add(o.id)
        if not env.in_workspace(o.position):
            raise WorldError(f"object {o.id} outside the workspace")
        if env.in_obstacle(o.position):
            raise WorldError(f"object {o.id} inside an obstacle")


@dataclass
class CoverageGrid:
    points: np.ndarray          # (K, 2) cell centers
    covered: np.ndarray         # (K,) bool
    obstacle_known: np.ndarray  # (K,) bool
    spacing: float
    cover_threshold: float      # r - d_g/sqrt(2)
    sensor_radius: float

    @property
    def cell_area(self) -> float:
        return self.spacing ** 2

    def copy(self) -> "CoverageGrid":
        return CoverageGrid(
            self.points, self.covered.copy(), self.obstacle_known.copy(),
            self.spacing, self.cover_threshold, self.sensor_radius,
        )


def build_grid(env: Environment) -> CoverageGrid:
    """Regular lattice of cell centers over the workspace, all uncovered."""
    n = int(round(2.0 * env.y_max / env.grid_spacing))
    if abs(n * env.grid_spacing - 2.0 * env.y_max) > 1e-9:
        # non-integral ratio: clip the lattice to the workspace
        coords = np.arange(-env.y_max, env.y_max + 1e-9, env.grid_spacing)
    else:
        coords = -env.y_max + env.grid_spacing * np.arange(n + 1)
    xx, yy = np.meshgrid(coords, coords, indexing="ij")
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    k = pts.shape[0]
    return CoverageGrid(
        points=pts,
        covered=np.zeros(k, dtype=bool),
        obstacle_known=np.zeros(k, dtype=bool),
        spacing=env.grid_spacing,
        cover_threshold=env.sensor_radius - env.grid_spacing / SQRT2,
        sensor_radius=env.sensor_radius,
    )


def update_coverage(grid: CoverageGrid, y) -> np.ndarray:
    """Mark cells fully inside the footprint at y; returns newly covered indices."""
    y = np.asarray(y, dtype=float)
    d2 = np.sum((grid.points - y[None, :]) ** 2, axis=1)
    hit = d2 <= grid.cover_threshold ** 2 + 1e-15
    new = np.flatnonzero(hit & ~grid.covered)
    grid.covered[new] = True
    return new


def unexplored_region(grid: CoverageGrid) -> tuple[np.ndarray, float]:
    """Indices of uncovered non-obstacle cells and their total area kappa."""
    idx = np.flatnonzero(~grid.covered & ~grid.obstacle_known)
    return idx, grid.cell_area * idx.size


def register_obstacle_cells(grid: CoverageGrid, env: Environment, y) -> np.ndarray:
    """Record obstacle cells whose centers the sensor can currently see.

    Known obstacle cells are also marked covered: they need no exploration.
    Returns newly known indices.
    """
    if not env.obstacles:
        return np.empty(0, dtype=np.intp)
    y = np.asarray(y, dtype=float)
    d2 = np.sum((grid.points - y[None, :]) ** 2, axis=1)
    in_range = d2 <= grid.sensor_radius ** 2 + 1e-15
    cand = np.flatnonzero(in_range & ~grid.obstacle_known)
    if cand.size == 0:
        return cand
    inside = np.zeros(cand.size, dtype=bool)
    for obs in env.obstacles:
        inside |= obs.contains_many(grid.points[cand])
    new = cand[inside]
    grid.obstacle_known[new] = True
    grid.covered[new] = True
    return new


def obstacle_cells(grid: CoverageGrid) -> np.ndarray:
    """Centers of all currently known obstacle cells."""
    return grid.points[grid.obstacle_known]


def cell_of(grid: CoverageGrid, y) -> int:
    """Index of the lattice cell containing y (nearest center), -1 outside."""
    y = np.asarray(y, dtype=float)
    d = np.abs(grid.points - y[None, :]).max(axis=1)
    k = int(np.argmin(d))
    if d[k] > grid.spacing / 2.0 + 1e-9:
        return -1
    return k


def in_known_obstacle(grid: CoverageGrid, y) -> bool:
    """Whether y falls inside a cell already identified as obstacle."""
    k = cell_of(grid, y)
    return bool(k >= 0 and grid.obstacle_known[k])
