"""Checking the solver against exact answers on tiny instances.

Small discrete populations admit an exact linear program for the relaxed
fair assignment and an exact (sampling-free) dual ascent. Both must agree,
and the stochastic solver must approach the same value.

    python demos/oracle_walkthrough.py
"""

import numpy as np

from fairpart import datasets
from fairpart.oracle import (
    DiscreteInstance,
    duality_gap,
    exact_ascent,
    exact_dual,
    exact_gradient,
    lp_primal,
    sampled_directions,
)
from fairpart.solver import SolverConfig, run

# Two sites, each home to one group and sitting on "its" facility.
pop, cost = datasets.segregated_two_site()
inst = DiscreteInstance(pop, cost)
print("two segregated sites")
print("  fair LP optimum         ", lp_primal(inst).objective)
print("  unconstrained optimum   ", lp_primal(DiscreteInstance(pop.merged(), cost)).objective)
# fairness forces each facility to take both sites in equal measure

# A random capped instance: LP versus exact ascent versus SA.
rng = np.random.default_rng(3)
inst = DiscreteInstance(*datasets.random_discrete_instance(rng, sites=25, K=3, M=2))
lp = lp_primal(inst)
asc = exact_ascent(inst)
print("\nrandom 25-site instance")
print("  LP optimum              ", round(lp.objective, 8))
print("  exact ascent dual value ", round(asc.dual_value, 8))
print("  LP region sizes         ", np.round(lp.p, 4))

for n in (1_000, 10_000, 100_000):
    res = run(SolverConfig(iterations=n, seed=1, eval_samples=10), inst.population, inst.cost)
    print(f"  SA with N={n:>6}: exact gap {duality_gap(inst, res.weights):.2e}")

# The sampled update directions average to the exact gradient.
v = rng.normal(size=(inst.K, inst.M)) * 0.2
mean, se = sampled_directions(v, inst, 100_000, 0)
z = np.abs(mean - exact_gradient(v, inst)) / np.where(se > 0, se, 1.0)
print("\nsampled vs exact gradient, |z| per entry:\n", np.round(z, 2))
print("dual at the starting point:", round(exact_dual(np.zeros((inst.K, inst.M)), inst), 6))
