"""Fair school zones for a segregated toy city.

Three groups live in different corners of the unit square and four schools
sit roughly at the quadrant centres. We compare the nearest-school zoning
with the fair partition (every school serves each group in the same
proportion) under plain and squared distance, and save the region rasters.

    python demos/segregated_city.py [output_dir]
"""

import sys
from pathlib import Path

import numpy as np

from fairpart import datasets
from fairpart.partition import PartitionHandle, rasterize
from fairpart.report import compare, evaluate
from fairpart.solver import SolverConfig, WeightMatrix, run

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output/segregated_city")
out.mkdir(parents=True, exist_ok=True)

pop, cost = datasets.segregated_instance()
_, sq_cost = datasets.segregated_instance("squared_euclidean")
print(f"groups: q = {pop.priors}, schools at\n{cost.facilities.locations}")

# Nearest-school zoning is the w = 0 diagram.
voronoi = WeightMatrix.zeros(cost.K, pop.priors)
reports = {"u": evaluate(voronoi, pop, cost, 200_000, [0, 2])}
print("\nnearest-school zoning")
print("  region masses       ", np.round(reports["u"].masses, 3))
print("  P(school | group):\n", np.round(reports["u"].conditional_shares, 3))

weights = {}
for name, model in (("c", cost), ("c-sq", sq_cost)):
    res = run(SolverConfig(iterations=300_000, seed=0), pop, model)
    weights[name] = (res.weights, model)
    reports[name] = evaluate(res.weights, pop, model, 200_000, [0, 2])
    print(f"\nfair zoning ({model.kind})")
    print("  dual value estimate ", round(res.dual_value_estimate, 4), "+/-", round(res.dual_stderr, 4))
    print("  region masses       ", np.round(reports[name].masses, 3))
    print("  max |P(school|group) - P(school)| =", round(reports[name].max_deviation, 4))

# Travel statistics are always in plain distance, also for the squared run.
table = compare(reports)
table.to_csv(out / "comparison.csv")
print("\nmean distance: " + ", ".join(f"{m} {table.value('all', 'mean', m):.4f}" for m in table.models))
print(f"price of fairness: {table.price_of_fairness('c'):+.4f} (plain), "
      f"{table.price_of_fairness('c-sq'):+.4f} (squared)")
print("p90 distance:  " + ", ".join(f"{m} {table.value('all', 'p90', m):.4f}" for m in table.models))

# Fair regions need not be connected; the component count shows it.
for name, (w, model) in weights.items():
    r = rasterize(PartitionHandle(w, pop, model), 200)
    r.to_csv(out / f"raster_{name}.csv")
    print(f"{name}: pieces per region {r.components(model.K).tolist()}")
print(f"\nwrote {out}/")
