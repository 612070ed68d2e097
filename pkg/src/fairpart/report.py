"""Fairness and travel-cost reports, model comparisons and CDF export.

Percentiles use the nearest-rank rule: the ``p``-th percentile of ``n`` sorted
values is element ``ceil(p/100 * n)`` (1-based), so the median of an even
sample is the lower middle element. Weighted samples use the smallest value
whose cumulative weight reaches ``p/100`` of the total.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, ParseError
from .solver import sample_assignments

__all__ = [
    "FairnessReport",
    "CostCDF",
    "Comparison",
    "nearest_rank",
    "evaluate",
    "evaluate_plan",
    "compare",
    "export_cdf",
    "read_cdf",
]

STATS = ("median", "mean", "p90")


def nearest_rank(values, pct, weights=None):
    """Nearest-rank percentile of ``values`` (optionally weighted)."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return float("nan")
    if weights is None:
        s = np.sort(v)
        r = max(1, math.ceil(pct / 100.0 * s.size))
        return float(s[r - 1])
    w = np.asarray(weights, dtype=float)
    order = np.argsort(v, kind="stable")
    cw = np.cumsum(w[order])
    target = pct / 100.0 * cw[-1]
    i = int(np.searchsorted(cw, target - 1e-12 * cw[-1], side="left"))
    return float(v[order][min(i, v.size - 1)])


def _group_stats(values, weights=None):
    if weights is None:
        mean = float(np.mean(values)) if len(values) else float("nan")
        n = int(len(values))
    else:
        tot = float(np.sum(weights))
        mean = float(np.dot(values, weights) / tot) if tot > 0 else float("nan")
        n = tot
    return {
        "median": nearest_rank(values, 50, weights),
        "mean": mean,
        "p90": nearest_rank(values, 90, weights),
        "n": n,
    }


@dataclass
class FairnessReport:
    """Region masses, conditional shares and per-group cost statistics.

    ``group_stats[z]`` maps ``median``/``mean``/``p90``/``n`` to values;
    ``overall`` holds the same statistics for the whole population. Costs are
    raw (unsquared) distances when the partition was built on squared ones.
    """

    masses: np.ndarray
    conditional_shares: np.ndarray
    max_deviation: float
    group_stats: list
    overall: dict
    sample_size: float
    seed: object = None
    discarded: int = 0
    samples: list | None = field(default=None, repr=False)
    sample_weights: list | None = field(default=None, repr=False)

    @property
    def K(self):
        return self.masses.size

    @property
    def M(self):
        return len(self.group_stats)

    def closed(self, threshold=1e-4):
        return sorted(int(k) for k in np.flatnonzero(self.masses < threshold))

    def to_dict(self):
        return {
            "K": self.K,
            "M": self.M,
            "masses": [float(x) for x in self.masses],
            "conditional_shares": [[float(x) for x in row] for row in self.conditional_shares],
            "max_deviation": float(self.max_deviation),
            "group_stats": [{k: float(v) for k, v in g.items()} for g in self.group_stats],
            "overall": {k: float(v) for k, v in self.overall.items()},
            "sample_size": float(self.sample_size),
            "seed": self.seed,
            "discarded": int(self.discarded),
            "closed_facilities": [k + 1 for k in self.closed()],
        }

    @classmethod
    def from_dict(cls, doc):
        try:
            return cls(
                masses=np.array(doc["masses"], dtype=float),
                conditional_shares=np.array(doc["conditional_shares"], dtype=float),
                max_deviation=float(doc["max_deviation"]),
                group_stats=[dict(g) for g in doc["group_stats"]],
                overall=dict(doc["overall"]),
                sample_size=doc["sample_size"],
                seed=doc.get("seed"),
                discarded=int(doc.get("discarded", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed report ({exc})") from exc

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _json_seed(seed):
    if isinstance(seed, (list, tuple)):
        return [int(s) for s in seed]
    return None if seed is None else int(seed)


def evaluate(weights, pop, cost, n_samples, seed):
    """Monte Carlo fairness report from one common sample stream."""
    s = sample_assignments(weights, pop, cost, n_samples, seed, report_cost=cost.raw())
    K, M = weights.K, pop.group_count
    ks, zs, c = s["k"], s["z"], s["cost"]
    counts = np.zeros((K, M))
    np.add.at(counts, (ks, zs), 1.0)
    nz = counts.sum(axis=0)
    shares = counts / np.where(nz > 0, nz, 1.0)
    masses = counts.sum(axis=1) / ks.size
    per_group = [np.sort(c[zs == z]) for z in range(M)]
    return FairnessReport(
        masses=masses,
        conditional_shares=shares,
        max_deviation=float(np.max(np.abs(shares - masses[:, None]))),
        group_stats=[_group_stats(v) for v in per_group],
        overall=_group_stats(c),
        sample_size=int(ks.size),
        seed=_json_seed(seed),
        discarded=s["discarded"],
        samples=per_group,
    )


def evaluate_plan(plan, pop, cost):
    """Exact report for a (possibly fractional) site-to-facility plan.

    ``plan[s, k]`` is the probability that site ``s`` is served by ``k``; a
    1-D integer array is read as a deterministic assignment.
    """
    counts = pop.counts
    S, M = counts.shape
    K = cost.K
    plan = np.asarray(plan)
    if plan.ndim == 1:
        g = np.zeros((S, K))
        g[np.arange(S), plan.astype(np.int64)] = 1.0
    else:
        g = plan.astype(float)
    if g.shape != (S, K):
        raise DimensionMismatch(f"plan shape {g.shape} != ({S}, {K})")
    raw = cost.raw().site_costs(pop)
    joint = np.einsum("sk,sz->kz", g, counts)
    shares = joint / counts.sum(axis=0)
    masses = joint.sum(axis=1) / counts.sum()
    vals = np.repeat(raw.ravel()[None, :], 1, axis=0)[0]
    samples, weights, stats = [], [], []
    for z in range(M):
        wz = (g * counts[:, z : z + 1]).ravel()
        keep = wz > 0
        samples.append(vals[keep])
        weights.append(wz[keep])
        stats.append(_group_stats(vals[keep], wz[keep]))
    wall = (g * counts.sum(axis=1, keepdims=True)).ravel()
    keep = wall > 0
    return FairnessReport(
        masses=masses,
        conditional_shares=shares,
        max_deviation=float(np.max(np.abs(shares - masses[:, None]))),
        group_stats=stats,
        overall=_group_stats(vals[keep], wall[keep]),
        sample_size=float(counts.sum()),
        samples=samples,
        sample_weights=weights,
    )


@dataclass
class Comparison:
    """Statistics per group and model plus percent changes against the first model."""

    models: list
    rows: list

    def value(self, group, stat, model):
        for r in self.rows:
            if r["group"] == group and r["stat"] == stat:
                return r["values"][self.models.index(model)]
        raise KeyError((group, stat))

    def price_of_fairness(self, model, stat="mean"):
        """Absolute change of the population-wide statistic versus the baseline."""
        return self.value("all", stat, model) - self.value("all", stat, self.models[0])

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["group", "stat"] + list(self.models)
                       + [f"pct_change_{m}" for m in self.models[1:]])
            for r in self.rows:
                w.writerow([r["group"], r["stat"]] + [repr(float(v)) for v in r["values"]]
                           + [repr(float(v)) for v in r["pct_change"]])


def compare(reports):
    """Compare named reports; the first one is the baseline.

    ``reports`` is a mapping or a sequence of ``(name, report)`` pairs over the
    same population. Groups are numbered from 1; ``all`` is the whole population.
    """
    items = list(reports.items()) if isinstance(reports, dict) else list(reports)
    if len(items) < 2:
        raise ValueError("need at least two reports to compare")
    M = items[0][1].M
    if any(r.M != M for _, r in items):
        raise DimensionMismatch("reports cover different group sets")
    names = [n for n, _ in items]
    rows = []
    groups = [(str(z + 1), lambda r, z=z: r.group_stats[z]) for z in range(M)]
    groups.append(("all", lambda r: r.overall))
    for label, get in groups:
        for stat in STATS:
            vals = [float(get(r)[stat]) for _, r in items]
            base = vals[0]
            pct = [100.0 * (v - base) / base if base != 0 else (0.0 if v == base else float("nan"))
                   for v in vals[1:]]
            rows.append({"group": label, "stat": stat, "values": vals, "pct_change": pct})
    return Comparison(names, rows)


@dataclass
class CostCDF:
    """Empirical CDF: distinct sorted costs and cumulative fractions ending at 1."""

    values: np.ndarray
    fractions: np.ndarray

    @classmethod
    def from_samples(cls, values, weights=None):
        v = np.asarray(values, dtype=float)
        w = np.ones_like(v) if weights is None else np.asarray(weights, dtype=float)
        order = np.argsort(v, kind="stable")
        v, w = v[order], w[order]
        uniq, start = np.unique(v, return_index=True)
        cum = np.cumsum(w)
        ends = np.append(start[1:], v.size) - 1
        frac = cum[ends] / cum[-1]
        frac[-1] = 1.0
        return cls(uniq, frac)

    def pairs(self):
        return list(zip(self.values.tolist(), self.fractions.tolist()))

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["cost", "cum_fraction"])
            for v, f in zip(self.values, self.fractions):
                w.writerow([repr(float(v)), repr(float(f))])


def read_cdf(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader) != ["cost", "cum_fraction"]:
            raise ParseError(f"{path}: bad CDF header")
        rows = [r for r in reader if r]
    return CostCDF(np.array([float(r[0]) for r in rows]), np.array([float(r[1]) for r in rows]))


def export_cdf(report, directory=None, prefix="cdf_group"):
    """Per-group CDFs of the report's cost samples.

    Writes ``{prefix}_{z}.csv`` (``z`` from 1) when ``directory`` is given.
    Returns the list of :class:`CostCDF`.
    """
    if report.samples is None:
        raise ValueError("report carries no cost samples")
    weights = report.sample_weights or [None] * len(report.samples)
    cdfs = [CostCDF.from_samples(s, w) for s, w in zip(report.samples, weights)]
    if directory is not None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for z, cdf in enumerate(cdfs, start=1):
            cdf.to_csv(d / f"{prefix}_{z}.csv")
    return cdfs
