"""The generalized weighted Voronoi diagram induced by dual weights.

Facility indices are 0-based in the Python API. Files written here number
facilities from 1 (matching row order in the facility CSV) and use ``-1`` for
cells where the population density vanishes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DimensionMismatch, ParseError, ZeroDensity
from .solver import effective_scores

__all__ = [
    "PartitionHandle",
    "AssignmentTable",
    "Raster",
    "assign",
    "assign_batch",
    "assign_all_sites",
    "closed_facilities",
    "rasterize",
    "read_raster",
    "read_assignment_table",
]

CLOSED_THRESHOLD = 1e-4


@dataclass(frozen=True, eq=False)
class PartitionHandle:
    weights: object
    population: object
    cost: object

    def __post_init__(self):
        if self.weights.K != self.cost.K:
            raise DimensionMismatch(f"weights have K={self.weights.K}, cost model K={self.cost.K}")
        if self.weights.M != self.population.group_count:
            raise DimensionMismatch(
                f"weights have M={self.weights.M}, population M={self.population.group_count}")
        self.cost.check_population(self.population)


def assign_batch(handle, xs):
    """Facility per query; ``-1`` where the total density is zero."""
    pop = handle.population
    post, valid = pop.posterior_batch(xs)
    out = np.full(valid.size, -1, dtype=np.int64)
    if np.any(valid):
        xs_valid = np.asarray(xs)[valid]
        scores = effective_scores(handle.weights.w, post[valid], handle.cost.costs(pop, xs_valid))
        out[valid] = np.argmin(scores, axis=1)
    return out


def assign(handle, x):
    """Facility serving location ``x``. The result never depends on a group label."""
    pop = handle.population
    xs = np.array([int(x)]) if pop.is_discrete else np.asarray(x, dtype=float).reshape(1, -1)
    k = int(assign_batch(handle, xs)[0])
    if k < 0:
        raise ZeroDensity(f"total population density is zero at {x!r}")
    return k


@dataclass
class AssignmentTable:
    """One row per populated site: assigned facility, its cost, local counts."""

    site_ids: list
    facility: np.ndarray
    cost: np.ndarray
    counts: np.ndarray

    def masses(self, K):
        tot = self.counts.sum(axis=1)
        return np.bincount(self.facility, weights=tot, minlength=K) / tot.sum()

    def conditional_shares(self, K):
        """``P(Y = k | Z = z)``, shape (K, M)."""
        M = self.counts.shape[1]
        out = np.zeros((K, M))
        np.add.at(out, self.facility, self.counts)
        return out / self.counts.sum(axis=0)

    def max_deviation(self, K):
        return float(np.max(np.abs(self.conditional_shares(K) - self.masses(K)[:, None])))

    def to_csv(self, path):
        M = self.counts.shape[1]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["site_id", "facility", "cost"] + [f"count_{z}" for z in range(1, M + 1)])
            for sid, k, c, cnt in zip(self.site_ids, self.facility, self.cost, self.counts):
                w.writerow([sid, int(k) + 1, repr(float(c))] + [repr(float(v)) for v in cnt])


def read_assignment_table(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:3] != ["site_id", "facility", "cost"]:
            raise ParseError(f"{path}: bad header {header!r}")
        rows = [r for r in reader if r]
    try:
        return AssignmentTable(
            [r[0] for r in rows],
            np.array([int(r[1]) - 1 for r in rows], dtype=np.int64),
            np.array([float(r[2]) for r in rows]),
            np.array([[float(v) for v in r[3:]] for r in rows]).reshape(len(rows), len(header) - 3),
        )
    except (ValueError, IndexError) as exc:
        raise ParseError(f"{path}: {exc}") from exc


def assign_all_sites(handle, pop=None):
    """Assignment table for every populated site of a discrete population.

    ``cost`` is reported with the raw (unsquared) cost model.
    """
    pop = handle.population if pop is None else pop
    if not pop.is_discrete:
        raise ConfigError("assign_all_sites needs a discrete population")
    idx = np.flatnonzero(pop.counts.sum(axis=1) > 0)
    ks = assign_batch(handle, idx)
    raw = handle.cost.raw().site_costs(pop)[idx, ks]
    return AssignmentTable([pop.site_ids[i] for i in idx], ks, raw, pop.counts[idx].copy())


def closed_facilities(masses, threshold=CLOSED_THRESHOLD):
    """Facilities whose region mass is below ``threshold``."""
    m = np.asarray(masses, dtype=float)
    return {int(k) for k in np.flatnonzero(m < threshold)}


@dataclass
class Raster:
    """Row-major facility grid; row ``j`` is the ``j``-th cell band from ``ymin``."""

    grid: np.ndarray
    bounds: np.ndarray

    @property
    def nx(self):
        return self.grid.shape[1]

    @property
    def ny(self):
        return self.grid.shape[0]

    def area_shares(self, K):
        """Fraction of supported cells assigned to each facility."""
        g = self.grid[self.grid >= 0]
        return np.bincount(g, minlength=K) / max(g.size, 1)

    def components(self, K):
        """Number of 4-connected pieces of each facility's region."""
        out = np.zeros(K, dtype=np.int64)
        for k in range(K):
            _, n = ndimage.label(self.grid == k)
            out[k] = n
        return out

    def to_csv(self, path):
        (xmin, xmax), (ymin, ymax) = self.bounds
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["nx", "ny", "xmin", "ymin", "xmax", "ymax"])
            w.writerow([self.nx, self.ny, repr(float(xmin)), repr(float(ymin)),
                        repr(float(xmax)), repr(float(ymax))])
            for row in self.grid:
                w.writerow([int(v) + 1 if v >= 0 else -1 for v in row])


def read_raster(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if len(rows) < 2 or rows[0] != ["nx", "ny", "xmin", "ymin", "xmax", "ymax"]:
        raise ParseError(f"{path}: bad raster header")
    nx, ny = int(rows[1][0]), int(rows[1][1])
    xmin, ymin, xmax, ymax = (float(v) for v in rows[1][2:6])
    vals = np.array([[int(v) for v in r] for r in rows[2:]], dtype=np.int64)
    if vals.shape != (ny, nx):
        raise ParseError(f"{path}: grid shape {vals.shape} != ({ny}, {nx})")
    grid = np.where(vals > 0, vals - 1, -1)
    return Raster(grid, np.array([[xmin, xmax], [ymin, ymax]]))


def rasterize(handle, resolution):
    """Assign every cell centre of a regular grid over the population box.

    ``resolution`` is ``n`` or ``(nx, ny)``, each at least 2. Cells with zero
    density hold ``-1``.
    """
    pop = handle.population
    if pop.is_discrete or pop.dim != 2:
        raise ConfigError("rasterize needs a continuous 2-D population")
    nx, ny = (resolution, resolution) if np.isscalar(resolution) else resolution
    nx, ny = int(nx), int(ny)
    if nx < 2 or ny < 2:
        raise ConfigError(f"resolution must be at least 2 per axis (got {nx}x{ny})")
    b = pop.bounds
    xs = b[0, 0] + (np.arange(nx) + 0.5) * (b[0, 1] - b[0, 0]) / nx
    ys = b[1, 0] + (np.arange(ny) + 0.5) * (b[1, 1] - b[1, 0]) / ny
    X, Y = np.meshgrid(xs, ys)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    out = np.empty(pts.shape[0], dtype=np.int64)
    step = 1 << 16
    for i in range(0, pts.shape[0], step):
        out[i : i + step] = assign_batch(handle, pts[i : i + step])
    return Raster(out.reshape(ny, nx), b.copy())
