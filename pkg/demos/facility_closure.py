"""When fairness closes a facility.

A line with facilities at 0 and 10. Group 1 (30%) lives at both ends, group 2
(70%) only near 0. Serving any share p from facility 2 fairly means sending
70% of that share, all from group 2, across the line, which costs more than
the savings for group 1. The fair optimum therefore shuts facility 2.

    python demos/facility_closure.py
"""

import numpy as np

from fairpart import datasets
from fairpart.oracle import DiscreteInstance, lp_primal
from fairpart.partition import PartitionHandle, assign_all_sites, closed_facilities
from fairpart.solver import SolverConfig, WeightMatrix, run

pop, cost = datasets.closure_instance()
print("sites:", pop.site_ids)
print("counts (group 1, group 2):\n", np.round(pop.counts, 2))

lp = lp_primal(DiscreteInstance(pop, cost))
print("\nLP region sizes:", np.round(lp.p, 6) + 0.0, " objective", round(lp.objective, 4))

res = run(SolverConfig(iterations=100_000, seed=0), pop, cost)
print("SA region masses:", res.region_masses)
print("closed facilities (1-based):", sorted(k + 1 for k in closed_facilities(res.region_masses)))

for name, w in (("nearest", WeightMatrix.zeros(2, pop.priors)), ("fair", res.weights)):
    t = assign_all_sites(PartitionHandle(w, pop, cost))
    print(f"{name:>8}: facility per site {(t.facility + 1).tolist()}, "
          f"mean distance {np.average(t.cost, weights=t.counts.sum(axis=1)):.3f}")
