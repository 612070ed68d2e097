"""Synthetic instances used by the demos, the CLI bundles and the test-suite."""

from __future__ import annotations

import numpy as np

from .costmodel import CostModel, FacilitySet
from .population import DiscretePopulation, GroupMixture, TruncatedGaussianMixture, UniformBox

__all__ = [
    "UNIT_SQUARE",
    "segregated_mixture",
    "segregated_instance",
    "identical_groups_instance",
    "square_corners_facilities",
    "uniform_square_instance",
    "segregated_two_site",
    "closure_instance",
    "random_discrete_instance",
    "discretize",
]

UNIT_SQUARE = np.array([[0.0, 1.0], [0.0, 1.0]])


def _iso(s):
    return np.eye(2) * s**2


def segregated_mixture(bounds=UNIT_SQUARE):
    """Three segregated groups on the unit square.

    Group 1 lives mostly in the bottom-right with a pocket near the left edge,
    group 2 along the bottom edge with some presence in the middle, group 3 in
    the top-right corner. Every group has a thin, broad background component.
    """
    bg = ([0.5, 0.5], _iso(0.35))
    red = TruncatedGaussianMixture(
        [0.6, 0.25, 0.15],
        [[0.78, 0.22], [0.08, 0.55], bg[0]],
        [_iso(0.09), np.diag([0.04**2, 0.12**2]), bg[1]],
        bounds,
    )
    green = TruncatedGaussianMixture(
        [0.35, 0.35, 0.15, 0.15],
        [[0.3, 0.08], [0.65, 0.08], [0.5, 0.5], bg[0]],
        [np.diag([0.12**2, 0.04**2]), np.diag([0.12**2, 0.04**2]), _iso(0.08), bg[1]],
        bounds,
    )
    blue = TruncatedGaussianMixture(
        [0.85, 0.15],
        [[0.82, 0.82], bg[0]],
        [_iso(0.1), bg[1]],
        bounds,
    )
    return GroupMixture(np.array([0.4, 0.3, 0.3]), [red, green, blue], bounds)


def square_corners_facilities():
    return FacilitySet(np.array([[0.25, 0.75], [0.75, 0.75], [0.25, 0.25], [0.75, 0.25]]))


def segregated_instance(kind="euclidean"):
    """``(population, cost)`` for the three-group, four-facility illustration."""
    pop = segregated_mixture()
    fac = FacilitySet(np.array([[0.3, 0.7], [0.72, 0.68], [0.3, 0.3], [0.7, 0.3]]))
    return pop, CostModel(kind, fac)


def identical_groups_instance(M=3, kind="euclidean"):
    """``M`` groups sharing one Gaussian-mixture density; four facilities."""
    dens = TruncatedGaussianMixture(
        [0.5, 0.3, 0.2],
        [[0.3, 0.3], [0.7, 0.6], [0.4, 0.8]],
        [_iso(0.15), _iso(0.12), _iso(0.2)],
        UNIT_SQUARE,
    )
    q = np.arange(1, M + 1, dtype=float)
    q /= q.sum()
    pop = GroupMixture(q, [dens] * M, UNIT_SQUARE)
    return pop, CostModel(kind, square_corners_facilities())


def uniform_square_instance(M=1, kind="euclidean"):
    q = np.full(M, 1.0 / M)
    pop = GroupMixture(q, [UniformBox(UNIT_SQUARE)] * M, UNIT_SQUARE)
    return pop, CostModel(kind, square_corners_facilities())


def segregated_two_site():
    """Two fully segregated sites with mirrored 0/1 costs.

    Site ``s1`` holds only group 1 and sits at facility 1; site ``s2`` holds
    only group 2 and sits at facility 2. The fair optimum is 0.5 and the
    unconstrained optimum is 0.
    """
    pop = DiscretePopulation(["s1", "s2"], np.array([[0.0, 0.0], [1.0, 0.0]]),
                             np.array([[10.0, 0.0], [0.0, 10.0]]))
    fac = FacilitySet(np.array([[0.0, 0.0], [1.0, 0.0]]))
    cost = CostModel("matrix", fac, np.array([[0.0, 1.0], [1.0, 0.0]]), ["s1", "s2"])
    return pop, cost


def closure_instance():
    """1-D instance whose fair optimum closes facility 2.

    Facilities sit at 0 and 10. Group 1 (30%) is split between both ends,
    group 2 (70%) lives only near 0. Opening facility 2 at size ``p`` saves
    ``10 * 0.3 * p`` for group 1 but costs ``10 * 0.7 * p`` for group 2.
    """
    xs = np.array([0.0, 0.5, 1.0, 9.0, 9.5, 10.0])
    g1 = np.array([1.0, 1.0, 1.0, 1.0, 1.0, 1.0]) * 5.0
    g2 = np.array([25.0, 25.0, 20.0, 0.0, 0.0, 0.0])
    g2 *= 0.7 / 0.3 * g1.sum() / g2.sum()
    pop = DiscretePopulation([f"s{i + 1}" for i in range(xs.size)],
                             np.column_stack([xs, np.zeros_like(xs)]),
                             np.column_stack([g1, g2]))
    fac = FacilitySet(np.array([[0.0, 0.0], [10.0, 0.0]]))
    return pop, CostModel("euclidean", fac)


def random_discrete_instance(rng, sites=20, K=3, M=2, segregation=2.0):
    """Random capped instance: sites in the unit square, group counts tilted
    by location so that groups are unevenly spread."""
    coords = rng.random((sites, 2))
    centers = rng.random((M, 2))
    d = np.linalg.norm(coords[:, None, :] - centers[None], axis=2)
    counts = np.round(rng.gamma(2.0, 10.0, (sites, M)) * np.exp(-segregation * d) * 10) + 1.0
    pop = DiscretePopulation([f"s{i + 1}" for i in range(sites)], coords, counts)
    fac = FacilitySet(rng.random((K, 2)))
    return pop, CostModel("euclidean", fac)


def discretize(mixture, cells_per_axis):
    """Grid surrogate of a 2-D :class:`GroupMixture`.

    Each cell centre becomes a site whose group counts are proportional to
    ``q_z f_z(centre)``.
    """
    lo, hi = mixture.bounds[:, 0], mixture.bounds[:, 1]
    n = int(cells_per_axis)
    gx = lo[0] + (np.arange(n) + 0.5) * (hi[0] - lo[0]) / n
    gy = lo[1] + (np.arange(n) + 0.5) * (hi[1] - lo[1]) / n
    X, Y = np.meshgrid(gx, gy)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    joint = np.exp(mixture.log_joint(pts))
    counts = joint / joint.sum() * 1e6
    ids = [f"c{i}" for i in range(pts.shape[0])]
    return DiscretePopulation(ids, pts, counts)
