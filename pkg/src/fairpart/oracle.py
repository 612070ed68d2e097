"""Exact reference computations on small discrete instances.

Everything here works by finite sums over sites and groups (no sampling), or
by solving the relaxed assignment LP with HiGHS. These routines are the
independent side of the solver checks.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import coo_matrix

from .costmodel import CostModel, load_cost_matrix, load_facilities, save_cost_matrix, save_facilities
from .errors import ConfigError, Infeasible, NonFinite
from .population import DiscretePopulation, load_population, save_population
from . import _kernels
from .solver import WeightMatrix, ascent_directions, project_v_to_w

__all__ = [
    "DiscreteInstance",
    "LPSolution",
    "AscentResult",
    "exact_assignment",
    "exact_dual",
    "exact_gradient",
    "exact_gradient_enumerated",
    "exact_ascent",
    "lp_primal",
    "duality_gap",
    "sampled_directions",
    "load_instance",
    "save_instance",
]

MAX_SITES, MAX_K, MAX_M = 40, 4, 3


@dataclass(frozen=True, eq=False)
class DiscreteInstance:
    """A discrete population together with a cost model.

    Sizes are only checked by :meth:`check_caps`; the exact routines accept
    larger grids (e.g. discretized surrogates of continuous instances).
    """

    population: DiscretePopulation
    cost: CostModel

    def __post_init__(self):
        if not self.population.is_discrete:
            raise ConfigError("oracle instances need a discrete population")
        self.cost.check_population(self.population)

    @property
    def K(self):
        return self.cost.K

    @property
    def M(self):
        return self.population.group_count

    @property
    def priors(self):
        return self.population.priors

    @property
    def costs(self):
        return self.cost.site_costs(self.population)

    @property
    def site_weights(self):
        return self.population.site_weights

    @property
    def posteriors(self):
        return self.population.posterior_table()[0]

    def check_caps(self):
        S = self.population.site_count
        if S > MAX_SITES or self.K > MAX_K or self.M > MAX_M:
            raise ConfigError(
                f"instance too large for the oracle: {S} sites, K={self.K}, M={self.M} "
                f"(caps {MAX_SITES}, {MAX_K}, {MAX_M})")


@dataclass
class LPSolution:
    g: np.ndarray
    p: np.ndarray
    objective: float
    marginal_residuals: np.ndarray
    row_residuals: np.ndarray

    @property
    def max_residual(self):
        return float(max(np.max(np.abs(self.marginal_residuals)), np.max(np.abs(self.row_residuals))))


@dataclass
class AscentResult:
    weights: WeightMatrix
    dual_value: float
    history: list = field(default_factory=list)
    iterations: int = 0
    step_scale: float = 0.0


def _wmat(weights):
    return weights.w if isinstance(weights, WeightMatrix) else np.asarray(weights, dtype=float)


def exact_assignment(weights, inst):
    """Facility index per site (lowest index among ties)."""
    w = _wmat(weights)
    scores = inst.costs - inst.posteriors @ w.T
    return np.argmin(scores, axis=1)


def exact_dual(weights, inst, p=None):
    """Dual objective by exact summation over sites.

    ``sum_s P(s) min_k [c(s,k) - sum_z P(z|s) w[k,z]]``, plus
    ``sum_k p_k sum_z q_z w[k,z]`` when ``p`` is given (or carried by a
    fixed-p :class:`WeightMatrix`).
    """
    w = _wmat(weights)
    if p is None and isinstance(weights, WeightMatrix) and weights.mode == "fixed_p":
        p = weights.p
    scores = inst.costs - inst.posteriors @ w.T
    val = float(inst.site_weights @ scores.min(axis=1))
    if p is not None:
        val += float(np.asarray(p) @ w @ inst.priors)
    return val


def exact_gradient(weights, inst, mode="optimal_p", p=None):
    """Exact ascent direction of the dual, shape (K, M).

    ``optimal_p``: gradient with respect to the unconstrained matrix ``v`` at
    ``w = proj(v)``, i.e. ``-E[1{k = Y}(1{Z=z} - q_Z q_z / q'q)]``; ``weights``
    may be a raw ``v`` array or a projected :class:`WeightMatrix`.
    ``fixed_p``: ``p_k q_z - E[1{Z=z} 1{k = Y}]``.

    Computed through posterior weighting ``E[1{Z=z} | X]``.
    """
    q = inst.priors
    w = _wmat(weights)
    if mode == "optimal_p" and not isinstance(weights, WeightMatrix):
        w = project_v_to_w(w, q).w
    ks = exact_assignment(w, inst)
    post = inst.posteriors
    pis = inst.site_weights
    onehot = np.zeros((ks.size, inst.K))
    onehot[np.arange(ks.size), ks] = 1.0
    if mode == "optimal_p":
        eq = post @ q
        rows = post - np.outer(eq, q) / (q @ q)
        return -(onehot * pis[:, None]).T @ rows
    if mode == "fixed_p":
        if p is None:
            raise ValueError("fixed_p gradient needs p")
        return np.outer(p, q) - (onehot * pis[:, None]).T @ post
    raise ValueError(f"unknown mode {mode!r}")


def exact_gradient_enumerated(weights, inst, mode="optimal_p", p=None):
    """Same quantity as :func:`exact_gradient` by enumerating every (site, group)
    pair with its joint probability; no posterior weighting involved."""
    q = inst.priors
    w = _wmat(weights)
    if mode == "optimal_p" and not isinstance(weights, WeightMatrix):
        w = project_v_to_w(w, q).w
    ks = exact_assignment(w, inst)
    counts = inst.population.counts
    total = inst.population.total
    K, M = inst.K, inst.M
    g = np.zeros((K, M))
    qq = float(q @ q)
    for s in range(counts.shape[0]):
        for zs in range(M):
            prob = counts[s, zs] / total
            if prob == 0:
                continue
            k = ks[s]
            for z in range(M):
                ind = 1.0 if z == zs else 0.0
                if mode == "optimal_p":
                    g[k, z] -= prob * (ind - q[zs] * q[z] / qq)
                else:
                    g[k, z] -= prob * ind
    if mode == "fixed_p":
        g += np.outer(p, q)
    return g


def sampled_directions(v, inst, n_samples, seed):
    """Mean and standard error of ``n_samples`` stochastic SA directions.

    Draws ``(site, group)`` pairs, picks the winning facility under
    ``w = proj(v)`` and records the per-draw update direction.
    """
    q = inst.priors
    w = project_v_to_w(v, q).w
    rng = np.random.default_rng(seed)
    xs, zs = inst.population.sample(rng, n_samples)
    ks = exact_assignment(w, inst)[xs]
    dirs = ascent_directions(q)
    K, M = inst.K, inst.M
    # per-draw direction is nonzero only in row ks[i]: dirs[zs[i]]
    flat = np.zeros((n_samples, K * M))
    cols = ks[:, None] * M + np.arange(M)[None, :]
    flat[np.arange(n_samples)[:, None], cols] = dirs[zs]
    mean = flat.mean(axis=0).reshape(K, M)
    se = (flat.std(axis=0, ddof=1) / math.sqrt(n_samples)).reshape(K, M)
    return mean, se


def exact_ascent(inst, mode="optimal_p", p=None, iterations=200_000, step_scale=None,
                 scale_multipliers=(1.0, 4.0, 16.0, 64.0), checkpoints=50):
    """Deterministic supergradient ascent with Polyak averaging.

    Runs exact-gradient ascent with stepsizes ``alpha / sqrt(n + 1)`` from
    ``w = 0`` for every ``alpha = step_scale * m`` with ``m`` in
    ``scale_multipliers`` and keeps the run whose averaged iterate has the
    largest exact dual value (each run yields a valid lower bound).
    ``step_scale`` defaults to half the median facility-to-facility cost.

    ``history`` holds ``(n, exact dual at the running average)`` for the kept
    run at geometrically spaced checkpoints.

    Raises
    ------
    NonFinite
        If the averaged iterate diverges.
    """
    q = inst.priors
    K, M = inst.K, inst.M
    fixed = mode == "fixed_p"
    if mode not in ("optimal_p", "fixed_p"):
        raise ValueError(f"unknown mode {mode!r}")
    if fixed:
        p = np.asarray(p, dtype=float)
        pq = np.outer(p, q)
    else:
        pq = np.zeros((K, M))
    if step_scale is None:
        step_scale = 0.5 * inst.cost.median_pairwise()
    iterations = int(iterations)
    cps = np.unique(np.geomspace(1, max(iterations, 1), checkpoints).astype(np.int64))
    if iterations == 0:
        cps = np.zeros(0, dtype=np.int64)
    C = np.ascontiguousarray(inst.costs)
    post = np.ascontiguousarray(inst.posteriors)
    pis = np.ascontiguousarray(inst.site_weights)

    def wrap(mat):
        if fixed:
            return WeightMatrix(mat, q, "fixed_p", p)
        return project_v_to_w(mat, q)

    best = None
    for mult in scale_multipliers:
        vbar, hist = _kernels.exact_ascent(C, post, pis, q, pq, fixed, step_scale * mult,
                                           iterations, cps)
        if not np.all(np.isfinite(vbar)):
            raise NonFinite(f"exact ascent diverged (step scale {step_scale * mult!r})")
        weights = wrap(vbar)
        val = exact_dual(weights, inst)
        if best is None or val > best.dual_value:
            history = [(int(n), float(h)) for n, h in zip(cps, hist)]
            best = AscentResult(weights, val, history, iterations, step_scale * mult)
    return best


def lp_primal(inst, p=None):
    """Solve the relaxed fair assignment LP exactly (HiGHS simplex).

    Variables ``g[s, k] >= 0`` (probability that site ``s`` goes to ``k``);
    rows ``sum_k g[s,k] = 1`` for populated sites and
    ``sum_s g[s,k] f_z(s) = p_k`` for every ``(k, z)``. With ``p=None`` the
    region sizes are additional variables with ``sum_k p_k = 1``.

    Raises
    ------
    Infeasible
        If HiGHS does not return an optimum.
    """
    pop = inst.population
    tot = pop.counts.sum(axis=1)
    sites = np.flatnonzero(tot > 0)
    S, K, M = sites.size, inst.K, inst.M
    C = inst.costs[sites]
    pis = inst.site_weights[sites]
    f = pop.pmf[sites]
    free = p is None
    nvar = S * K + (K if free else 0)
    obj = np.zeros(nvar)
    obj[: S * K] = (C * pis[:, None]).ravel()

    rows, cols, vals = [], [], []
    b = []
    r = 0
    for s in range(S):
        for k in range(K):
            rows.append(r)
            cols.append(s * K + k)
            vals.append(1.0)
        b.append(1.0)
        r += 1
    for k in range(K):
        for z in range(M):
            for s in range(S):
                if f[s, z] != 0:
                    rows.append(r)
                    cols.append(s * K + k)
                    vals.append(f[s, z])
            if free:
                rows.append(r)
                cols.append(S * K + k)
                vals.append(-1.0)
                b.append(0.0)
            else:
                b.append(float(p[k]))
            r += 1
    if free:
        for k in range(K):
            rows.append(r)
            cols.append(S * K + k)
            vals.append(1.0)
        b.append(1.0)
        r += 1
    A = coo_matrix((vals, (rows, cols)), shape=(r, nvar)).tocsr()
    res = linprog(obj, A_eq=A, b_eq=np.array(b), bounds=(0, None), method="highs-ds",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise Infeasible(f"LP not solved: {res.message}")
    g_sites = res.x[: S * K].reshape(S, K)
    p_out = res.x[S * K:] if free else np.asarray(p, dtype=float)
    g = np.zeros((pop.site_count, K))
    g[sites] = g_sites
    marg = g_sites.T @ f - p_out[:, None]
    rowres = g_sites.sum(axis=1) - 1.0
    return LPSolution(g, p_out, float(res.fun), marg, rowres)


def duality_gap(inst, weights, p_hat=None):
    """LP optimum minus the exact dual objective at ``weights``.

    ``p_hat=None`` compares against the free-region-size LP; otherwise the LP
    and the dual both use the fixed sizes ``p_hat``.
    """
    primal = lp_primal(inst, p_hat).objective
    return primal - exact_dual(weights, inst, p_hat)


def save_instance(directory, inst, weights=None):
    """Write an instance bundle: population.csv, facilities.csv, optional
    costs.csv and a manifest.json listing q, M, K and the cost kind."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_population(inst.population, d / "population.csv")
    save_facilities(inst.cost.facilities, d / "facilities.csv")
    manifest = {
        "q": [float(x) for x in inst.priors],
        "M": inst.M,
        "K": inst.K,
        "cost": inst.cost.kind,
    }
    if inst.cost.kind == "matrix":
        save_cost_matrix(inst.cost, d / "costs.csv")
        manifest["cost_matrix"] = "costs.csv"
    if weights is not None:
        from .solver import save_weights

        save_weights(d / "weights.json", weights)
        manifest["weights"] = "weights.json"
    with open(d / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def load_instance(directory):
    """Read an instance bundle; returns ``(instance, manifest)``."""
    d = Path(directory)
    with open(d / "manifest.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    pop = load_population(d / "population.csv", manifest.get("M"))
    fac = load_facilities(d / "facilities.csv")
    kind = manifest.get("cost", "euclidean")
    if kind == "matrix":
        cost = load_cost_matrix(d / manifest.get("cost_matrix", "costs.csv"), fac)
    else:
        cost = CostModel(kind, fac)
    if "K" in manifest and int(manifest["K"]) != fac.K:
        raise ConfigError(f"manifest K={manifest['K']} but {fac.K} facilities")
    if "q" in manifest and not np.allclose(manifest["q"], pop.priors, atol=1e-9):
        raise ConfigError("manifest q disagrees with population counts")
    return DiscreteInstance(pop, cost), manifest
