"""Heterogeneous population models.

Two flavours are supported:

* :class:`GroupMixture` -- a continuous population on an axis-aligned box,
  one density per demographic group (truncated Gaussian mixtures or uniform).
* :class:`DiscretePopulation` -- person counts per group at a finite list of
  sites (census-tract style tables).

Both expose the same sampling/posterior surface used by the solver:
``sample(rng, size) -> (xs, zs)`` and ``posterior_batch(xs) -> (post, valid)``.
For continuous populations ``xs`` is an ``(n, d)`` array of points; for
discrete populations it is an ``(n,)`` array of site indices.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from .errors import EmptyGroup, ParseError, ZeroDensity

__all__ = [
    "UniformBox",
    "TruncatedGaussianMixture",
    "GroupMixture",
    "DiscretePopulation",
    "posterior",
    "posterior_from_densities",
    "sample_joint",
    "load_population",
    "save_population",
    "pooled",
]

PRIOR_TOL = 1e-12


def _as_bounds(bounds):
    b = np.asarray(bounds, dtype=float)
    if b.ndim != 2 or b.shape[1] != 2 or np.any(b[:, 0] >= b[:, 1]):
        raise ValueError("bounds must be a (d, 2) array of [low, high] with low < high")
    return b


def _inside(points, bounds):
    return np.all((points >= bounds[:, 0]) & (points <= bounds[:, 1]), axis=1)


class UniformBox:
    """Uniform density on the bounding box."""

    def __init__(self, bounds):
        self.bounds = _as_bounds(bounds)
        self._log_vol = float(np.sum(np.log(self.bounds[:, 1] - self.bounds[:, 0])))

    @property
    def dim(self):
        return self.bounds.shape[0]

    def logpdf(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.full(points.shape[0], -self._log_vol)
        out[~_inside(points, self.bounds)] = -np.inf
        return out

    def evaluate(self, points):
        return np.exp(self.logpdf(points))

    def sample(self, rng, size):
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        return lo + (hi - lo) * rng.random((size, self.dim))


class TruncatedGaussianMixture:
    """Gaussian mixture restricted to a box and renormalized to unit mass.

    Sampling draws (component, point) pairs and rejects points outside the
    box, which yields exactly the truncated, renormalized density returned by
    :meth:`evaluate`.

    Parameters
    ----------
    weights : array_like, shape (J,)
        Component weights; normalized internally.
    means : array_like, shape (J, d)
    covs : array_like, shape (J, d, d)
    bounds : array_like, shape (d, 2)
    """

    def __init__(self, weights, means, covs, bounds):
        self.bounds = _as_bounds(bounds)
        w = np.asarray(weights, dtype=float)
        if w.ndim != 1 or np.any(w < 0) or w.sum() <= 0:
            raise ValueError("component weights must be nonnegative with positive sum")
        self.weights = w / w.sum()
        self.means = np.atleast_2d(np.asarray(means, dtype=float))
        d = self.bounds.shape[0]
        covs = np.asarray(covs, dtype=float)
        if covs.ndim == 1:
            covs = covs[:, None, None] * np.eye(d)
        self.covs = covs.reshape(len(self.weights), d, d)
        if self.means.shape != (len(self.weights), d):
            raise ValueError("means must have shape (J, d)")
        self._chol = np.linalg.cholesky(self.covs)
        self._log_norm = np.array(
            [
                -0.5 * d * math.log(2 * math.pi) - np.sum(np.log(np.diag(L)))
                for L in self._chol
            ]
        )
        self._comp_mass = np.array(
            [self._box_mass(m, c) for m, c in zip(self.means, self.covs)]
        )
        self.mass = float(self.weights @ self._comp_mass)
        if self.mass <= 0:
            raise ValueError("mixture has no mass inside the bounds")

    @property
    def dim(self):
        return self.bounds.shape[0]

    def _box_mass(self, mean, cov):
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        if self.dim == 1:
            sd = math.sqrt(cov[0, 0])
            return float(stats.norm.cdf(hi[0], mean[0], sd) - stats.norm.cdf(lo[0], mean[0], sd))
        return float(stats.multivariate_normal.cdf(
            hi, mean=mean, cov=cov, lower_limit=lo, abseps=1e-9, releps=1e-9, maxpts=2_000_000))

    def logpdf(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        comp = np.empty((points.shape[0], len(self.weights)))
        for j, (m, L) in enumerate(zip(self.means, self._chol)):
            sol = np.linalg.solve(L, (points - m).T)
            comp[:, j] = self._log_norm[j] - 0.5 * np.sum(sol * sol, axis=0)
        with np.errstate(divide="ignore"):
            out = logsumexp(comp, axis=1, b=self.weights) - math.log(self.mass)
        out[~_inside(points, self.bounds)] = -np.inf
        return out

    def evaluate(self, points):
        return np.exp(self.logpdf(points))

    def sample(self, rng, size):
        out = np.empty((size, self.dim))
        filled = 0
        while filled < size:
            need = size - filled
            batch = int(need / self.mass * 1.1) + 16
            comp = rng.choice(len(self.weights), size=batch, p=self.weights)
            z = rng.standard_normal((batch, self.dim))
            pts = self.means[comp] + np.einsum("nij,nj->ni", self._chol[comp], z)
            pts = pts[_inside(pts, self.bounds)][:need]
            out[filled : filled + len(pts)] = pts
            filled += len(pts)
        return out


def _check_priors(q):
    q = np.asarray(q, dtype=float)
    if q.ndim != 1 or q.size == 0:
        raise ValueError("priors must be a non-empty vector")
    if np.any(q <= 0):
        raise ValueError("every prior q_z must be positive")
    if abs(q.sum() - 1.0) > PRIOR_TOL:
        raise ValueError(f"priors must sum to 1 (got {q.sum()!r})")
    return q


def posterior_from_densities(q, dens):
    """Posterior group probabilities from group priors and density values.

    ``dens`` has shape ``(M,)`` or ``(n, M)``. Raises :class:`ZeroDensity` when
    the mixture density ``sum_z q_z f_z(x)`` is zero at any row.
    """
    q = np.asarray(q, dtype=float)
    joint = np.asarray(dens, dtype=float) * q
    total = joint.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise ZeroDensity("total population density is zero at the queried location")
    return joint / total


@dataclass(frozen=True, eq=False)
class GroupMixture:
    """Continuous heterogeneous population.

    Attributes
    ----------
    priors : ndarray, shape (M,)
        Group probabilities ``q``.
    densities : list
        One density per group; each provides ``logpdf``, ``evaluate`` and
        ``sample(rng, size)``.
    bounds : ndarray, shape (d, 2)
    """

    priors: np.ndarray
    densities: list
    bounds: np.ndarray
    is_discrete: bool = field(default=False, init=False)

    def __post_init__(self):
        q = _check_priors(self.priors)
        if len(self.densities) != q.size:
            raise ValueError("need one density per group")
        object.__setattr__(self, "priors", q)
        object.__setattr__(self, "bounds", _as_bounds(self.bounds))
        object.__setattr__(self, "densities", list(self.densities))

    @property
    def group_count(self):
        return self.priors.size

    @property
    def dim(self):
        return self.bounds.shape[0]

    def log_joint(self, points):
        """``log(q_z f_z(x))`` for every point and group, shape ``(n, M)``."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty((points.shape[0], self.group_count))
        with np.errstate(divide="ignore"):
            logq = np.log(self.priors)
        for z, dens in enumerate(self.densities):
            out[:, z] = logq[z] + dens.logpdf(points)
        return out

    def posterior_batch(self, xs):
        """Posterior rows and a mask of points with positive total density."""
        lj = self.log_joint(xs)
        with np.errstate(invalid="ignore"):
            norm = logsumexp(lj, axis=1, keepdims=True)
        valid = np.isfinite(norm[:, 0])
        post = np.zeros_like(lj)
        with np.errstate(invalid="ignore"):
            post[valid] = np.exp(lj[valid] - norm[valid])
        return post, valid

    def coordinates(self, xs):
        return np.atleast_2d(np.asarray(xs, dtype=float))

    def sample(self, rng, size):
        zs = rng.choice(self.group_count, size=size, p=self.priors)
        xs = np.empty((size, self.dim))
        for z, dens in enumerate(self.densities):
            idx = np.flatnonzero(zs == z)
            if idx.size:
                xs[idx] = dens.sample(rng, idx.size)
        return xs, zs

    def check_normalization(self, rng, n_samples=1_000_000):
        """Monte Carlo integral of each group density over the bounding box."""
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        pts = lo + (hi - lo) * rng.random((n_samples, self.dim))
        vol = float(np.prod(hi - lo))
        return np.array([vol * d.evaluate(pts).mean() for d in self.densities])


@dataclass(frozen=True, eq=False)
class DiscretePopulation:
    """Population given as per-group person counts at a finite set of sites.

    ``priors`` and ``pmf`` (per-group distribution over sites, shape (S, M))
    are derived from ``counts``.
    """

    site_ids: list
    coords: np.ndarray
    counts: np.ndarray
    is_discrete: bool = field(default=True, init=False)

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=float)
        coords = np.asarray(self.coords, dtype=float)
        if counts.ndim != 2:
            raise ValueError("counts must have shape (S, M)")
        if coords.ndim == 1:
            coords = coords[:, None]
        if coords.shape[0] != counts.shape[0] or len(self.site_ids) != counts.shape[0]:
            raise ValueError("site_ids, coords and counts must have the same number of rows")
        if np.any(counts < 0) or not np.all(np.isfinite(counts)):
            raise ParseError("counts must be finite and nonnegative")
        if len(set(self.site_ids)) != len(self.site_ids):
            raise ParseError("duplicate site ids")
        totals = counts.sum(axis=0)
        if counts.sum() <= 0:
            raise EmptyGroup("population has no people")
        empty = np.flatnonzero(totals <= 0)
        if empty.size:
            raise EmptyGroup(f"group(s) {[int(z) + 1 for z in empty]} have zero total count")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "site_ids", [str(s) for s in self.site_ids])

    @property
    def group_count(self):
        return self.counts.shape[1]

    @property
    def site_count(self):
        return self.counts.shape[0]

    @property
    def dim(self):
        return self.coords.shape[1]

    @property
    def total(self):
        return float(self.counts.sum())

    @property
    def priors(self):
        return self.counts.sum(axis=0) / self.total

    @property
    def pmf(self):
        """``f_z(site)``, shape (S, M); every column sums to one."""
        return self.counts / self.counts.sum(axis=0)

    @property
    def site_weights(self):
        """Marginal site probabilities ``P(X = site)``."""
        return self.counts.sum(axis=1) / self.total

    def site_index(self, site_id):
        try:
            return self.site_ids.index(str(site_id))
        except ValueError:
            raise KeyError(site_id) from None

    def posterior_table(self):
        """Posterior rows for every site and a mask of populated sites."""
        tot = self.counts.sum(axis=1)
        valid = tot > 0
        post = np.zeros_like(self.counts)
        post[valid] = self.counts[valid] / tot[valid, None]
        return post, valid

    def posterior_batch(self, xs):
        post, valid = self.posterior_table()
        xs = np.asarray(xs, dtype=np.int64)
        return post[xs], valid[xs]

    def coordinates(self, xs):
        return self.coords[np.asarray(xs, dtype=np.int64)]

    def sample(self, rng, size):
        zs = rng.choice(self.group_count, size=size, p=self.priors)
        xs = np.empty(size, dtype=np.int64)
        pmf = self.pmf
        for z in range(self.group_count):
            idx = np.flatnonzero(zs == z)
            if idx.size:
                xs[idx] = rng.choice(self.site_count, size=idx.size, p=pmf[:, z])
        return xs, zs

    def merged(self):
        """The same population with all groups collapsed into one."""
        return DiscretePopulation(self.site_ids, self.coords, self.counts.sum(axis=1, keepdims=True))


def posterior(pop, x):
    """``P(Z = z | X = x)`` for a single point (continuous) or site index (discrete).

    Raises
    ------
    ZeroDensity
        If the total population density at ``x`` is zero.
    """
    if pop.is_discrete:
        xs = np.array([int(x)])
    else:
        xs = np.asarray(x, dtype=float).reshape(1, -1)
    post, valid = pop.posterior_batch(xs)
    if not valid[0]:
        raise ZeroDensity(f"total population density is zero at {x!r}")
    return post[0]


def sample_joint(pop, rng, size=None):
    """Draw ``Z ~ q`` then ``X ~ f_Z``.

    With ``size=None`` returns a single ``(x, z)`` pair, otherwise arrays.
    """
    xs, zs = pop.sample(rng, 1 if size is None else size)
    if size is None:
        return xs[0], int(zs[0])
    return xs, zs


def _parse_float(text, row_no, what):
    try:
        val = float(text)
    except ValueError:
        raise ParseError(f"row {row_no}: cannot parse {what} {text!r}") from None
    if not math.isfinite(val):
        raise ParseError(f"row {row_no}: {what} is not finite")
    return val


def load_population(path, group_count=None):
    """Read a population CSV with header ``site_id,x,y,count_1,...,count_M``.

    Parameters
    ----------
    path : str or Path
    group_count : int, optional
        Expected ``M``; a mismatch raises :class:`ParseError`.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        m = len(header) - 3
        expected = ["site_id", "x", "y"] + [f"count_{z}" for z in range(1, m + 1)]
        if m < 1 or header != expected:
            raise ParseError(f"{path}: bad header {header!r}")
        if group_count is not None and m != group_count:
            raise ParseError(f"{path}: expected {group_count} groups, found {m}")
        ids, coords, counts = [], [], []
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}: row {row_no} has {len(row)} fields, expected {len(header)}")
            ids.append(row[0].strip())
            coords.append([_parse_float(row[1], row_no, "x"), _parse_float(row[2], row_no, "y")])
            cnt = [_parse_float(c, row_no, "count") for c in row[3:]]
            if any(c < 0 for c in cnt):
                raise ParseError(f"{path}: row {row_no} has a negative count")
            counts.append(cnt)
    if not ids:
        raise ParseError(f"{path}: no data rows")
    return DiscretePopulation(ids, np.array(coords), np.array(counts))


def save_population(pop, path):
    m = pop.group_count
    coords = pop.coords if pop.dim == 2 else np.column_stack([pop.coords[:, 0], np.zeros(pop.site_count)])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["site_id", "x", "y"] + [f"count_{z}" for z in range(1, m + 1)])
        for sid, xy, cnt in zip(pop.site_ids, coords, pop.counts):
            w.writerow([sid, repr(float(xy[0])), repr(float(xy[1]))] + [repr(float(c)) for c in cnt])


class PooledView:
    """A population seen as a single group (all demographic labels merged)."""

    def __init__(self, pop):
        self.base = pop
        self.is_discrete = pop.is_discrete
        self.priors = np.ones(1)

    group_count = 1

    @property
    def dim(self):
        return self.base.dim

    @property
    def bounds(self):
        return self.base.bounds

    def __getattr__(self, name):
        return getattr(self.base, name)

    def posterior_batch(self, xs):
        _, valid = self.base.posterior_batch(xs)
        return np.ones((valid.size, 1)), valid

    def coordinates(self, xs):
        return self.base.coordinates(xs)

    def sample(self, rng, size):
        xs, _ = self.base.sample(rng, size)
        return xs, np.zeros(size, dtype=np.int64)


def pooled(pop):
    """View of ``pop`` with a single group (``M = 1``)."""
    if pop.group_count == 1:
        return pop
    return PooledView(pop)
