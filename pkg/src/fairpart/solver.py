"""Dual weights for fair partitions via stochastic approximation.

Facility ``k`` serves location ``x`` when it minimizes the effective score
``c(x, k) - sum_z P(Z=z | X=x) w[k, z]``. Two problems are solved:

``optimal_p``
    Region sizes are free. Weights are kept in the subspace
    ``sum_z q_z w[k, z] = 0`` by projecting an unconstrained matrix ``v``.
``fixed_p``
    Region sizes are prescribed by ``p``; weights live in plain ``w``-space.

Both use the stepsize ``alpha / sqrt(n + 1)`` and return Polyak averages of
the iterates.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigError, DataError, DimensionMismatch, NonFinite
from .population import pooled, posterior

__all__ = [
    "WeightMatrix",
    "SolverConfig",
    "SolverState",
    "SolverResult",
    "TracePoint",
    "effective_score",
    "effective_scores",
    "argmin_facility",
    "project_v_to_w",
    "ascent_directions",
    "sa_step_optimal_p",
    "sa_step_fixed_p",
    "polyak_average",
    "sample_assignments",
    "dual_objective_estimate",
    "region_masses",
    "classical_ot_solve",
    "default_step_scale",
    "run",
    "save_weights",
    "load_weights",
    "write_trace",
    "read_trace",
]

log = logging.getLogger(__name__)

DEFAULT_STEP_FACTOR = 0.5
MAX_DISCARD_FRACTION = 1e-3
CHUNK = 1 << 16


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    """K x M dual weights ``w[k, z]``.

    The group-level dual of the fairness constraint for group ``z`` at facility
    ``k`` is ``q_z * w[k, z]`` (see :meth:`psi`). In ``optimal_p`` mode every
    row satisfies ``sum_z q_z w[k, z] = 0``.
    """

    w: np.ndarray
    priors: np.ndarray
    mode: str = "optimal_p"
    p: np.ndarray | None = None

    def __post_init__(self):
        w = np.array(self.w, dtype=float, ndmin=2)
        q = np.asarray(self.priors, dtype=float)
        if w.shape[1] != q.size:
            raise DimensionMismatch(f"weights have {w.shape[1]} columns but {q.size} priors")
        if self.mode not in ("optimal_p", "fixed_p"):
            raise ValueError(f"unknown mode {self.mode!r}")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "priors", q)
        if self.p is not None:
            object.__setattr__(self, "p", np.asarray(self.p, dtype=float))

    @property
    def K(self):
        return self.w.shape[0]

    @property
    def M(self):
        return self.w.shape[1]

    @classmethod
    def zeros(cls, K, priors, mode="optimal_p", p=None):
        return cls(np.zeros((K, len(priors))), priors, mode, p)

    def psi(self):
        return self.w * self.priors

    def constraint_residual(self):
        """Largest ``|sum_z q_z w[k, z]|`` over facilities."""
        return float(np.max(np.abs(self.w @ self.priors)))

    def satisfies_constraint(self, rtol=1e-9):
        return self.constraint_residual() <= rtol * (np.max(np.abs(self.w)) + 1.0)


@dataclass
class SolverConfig:
    """Options for :func:`run`.

    ``step_scale=None`` picks ``0.5 *`` the median facility-to-facility cost.
    ``tail_fraction=None`` averages all iterates; otherwise only the last
    ``ceil(tail_fraction * iterations)`` are averaged.
    """

    mode: str = "optimal_p"
    p: np.ndarray | None = None
    iterations: int = 100_000
    step_scale: float | None = None
    seed: int = 0
    eval_samples: int = 100_000
    tail_fraction: float | None = None
    trace_samples: int = 20_000
    trace_every: int | None = None

    def validate(self, K=None):
        if self.mode not in ("optimal_p", "fixed_p"):
            raise ConfigError(f"mode: unknown value {self.mode!r}")
        if not isinstance(self.iterations, (int, np.integer)) or self.iterations < 0:
            raise ConfigError("iterations: must be a nonnegative integer")
        if self.step_scale is not None and not 0 < self.step_scale < math.inf:
            raise ConfigError("step_scale: must be positive and finite")
        if self.tail_fraction is not None and not 0 < self.tail_fraction <= 1:
            raise ConfigError("tail_fraction: must lie in (0, 1]")
        if self.eval_samples < 1 or self.trace_samples < 1:
            raise ConfigError("eval_samples/trace_samples: must be positive")
        if self.mode == "fixed_p":
            if self.p is None:
                raise ConfigError("p: required in fixed_p mode")
            p = np.asarray(self.p, dtype=float)
            if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
                raise ConfigError(f"p: must be a probability vector (sum={float(p.sum())!r})")
            if K is not None and p.size != K:
                raise ConfigError(f"p: has {p.size} entries, expected K={K}")


@dataclass
class SolverState:
    """Mutable SA state.

    ``v`` is the raw iterate (``w``-space in fixed-p mode), ``w`` its projection,
    ``vbar`` the running Polyak average of iterates ``n >= avg_start``.
    """

    v: np.ndarray
    w: np.ndarray
    vbar: np.ndarray
    priors: np.ndarray
    alpha: float
    n: int = 0
    n_avg: int = 0
    avg_start: int = 1
    mode: str = "optimal_p"
    p: np.ndarray | None = None
    seed: int = 0
    discarded: int = 0

    @classmethod
    def initial(cls, K, priors, alpha, mode="optimal_p", p=None, seed=0, avg_start=1, v0=None):
        q = np.asarray(priors, dtype=float)
        v = np.zeros((K, q.size)) if v0 is None else np.array(v0, dtype=float)
        w = project_v_to_w(v, q).w if mode == "optimal_p" else v.copy()
        return cls(v=v, w=w, vbar=v.copy(), priors=q, alpha=float(alpha), avg_start=avg_start,
                   mode=mode, p=None if p is None else np.asarray(p, dtype=float), seed=seed)


@dataclass
class TracePoint:
    n: int
    dual_estimate: float
    stderr: float
    max_fairness_dev: float


@dataclass
class SolverResult:
    weights: WeightMatrix
    raw_final: np.ndarray
    dual_value_estimate: float
    dual_stderr: float
    region_masses: np.ndarray
    trace: list = field(default_factory=list)
    alpha: float = 0.0
    discarded: int = 0
    config: SolverConfig | None = None


def effective_scores(w, post, costs):
    """Scores ``c(x, k) - sum_z post[z] w[k, z]`` for batches, shape (n, K)."""
    return np.asarray(costs) - np.asarray(post) @ np.asarray(w).T


def _query_rows(weights, pop, cost, x):
    post = posterior(pop, x)
    xs = np.array([int(x)]) if pop.is_discrete else np.asarray(x, dtype=float).reshape(1, -1)
    return post, cost.costs(pop, xs)[0]


def effective_score(weights, pop, cost, x, k):
    """Effective score of facility ``k`` at ``x``; raises ZeroDensity off support."""
    post, c = _query_rows(weights, pop, cost, x)
    return float(c[k] - post @ weights.w[k])


def argmin_facility(weights, pop, cost, x):
    """Facility serving ``x`` (lowest index among tied minimizers)."""
    post, c = _query_rows(weights, pop, cost, x)
    return int(np.argmin(c - weights.w @ post))


def project_v_to_w(v, q):
    """Project each row of ``v`` onto the orthogonal complement of ``q``."""
    v = np.array(v, dtype=float, ndmin=2)
    q = np.asarray(q, dtype=float)
    w = v - np.outer(v @ q / (q @ q), q)
    return WeightMatrix(w, q, "optimal_p")


def ascent_directions(q):
    """Row ``z``: SA increment direction for a draw from group ``z``.

    Equals ``-(e_z - q_z q / q'q)``, the stochastic supergradient of the
    constrained dual with respect to the winning facility's row.
    """
    q = np.asarray(q, dtype=float)
    return -(np.eye(q.size) - np.outer(q, q) / (q @ q))


def _draw_rows(pop, cost, xs):
    post, valid = pop.posterior_batch(xs)
    return cost.costs(pop, xs), post, valid


def sa_step_optimal_p(state, sample, pop, cost):
    """One step of the region-size-free SA, in place. Returns ``state``.

    A draw with zero total density is discarded and counted; ``n`` is unchanged.
    """
    x, z = sample
    xs = np.array([int(x)]) if pop.is_discrete else np.asarray(x, dtype=float).reshape(1, -1)
    costs, post, valid = _draw_rows(pop, cost, xs)
    if not valid[0]:
        state.discarded += 1
        log.debug("discarded zero-density sample %r", x)
        return state
    zs = np.array([int(z)], dtype=np.int64)
    state.n, state.n_avg = _kernels.sa_optimal_p(
        state.v, state.w, state.vbar, state.n, state.n_avg, state.avg_start,
        state.alpha, costs, post, zs, ascent_directions(state.priors))
    return state


def sa_step_fixed_p(state, sample, p, pop, cost):
    """One step of the fixed-region-size SA, in place. Returns ``state``."""
    x, z = sample
    xs = np.array([int(x)]) if pop.is_discrete else np.asarray(x, dtype=float).reshape(1, -1)
    costs, post, valid = _draw_rows(pop, cost, xs)
    if not valid[0]:
        state.discarded += 1
        return state
    pq = np.outer(np.asarray(p, dtype=float), state.priors)
    zs = np.array([int(z)], dtype=np.int64)
    state.n, state.n_avg = _kernels.sa_fixed_p(
        state.v, state.vbar, state.n, state.n_avg, state.avg_start,
        state.alpha, costs, post, zs, pq)
    state.w = state.v
    return state


def polyak_average(state):
    """Running average of the iterates (the raw iterate before any are averaged)."""
    if state.n_avg == 0:
        return state.v.copy()
    return state.vbar.copy()


def _weights_from(state, mat):
    if state.mode == "optimal_p":
        return project_v_to_w(mat, state.priors)
    return WeightMatrix(mat.copy(), state.priors, "fixed_p", state.p)


def _p_term(weights):
    if weights.mode == "fixed_p" and weights.p is not None:
        return float(weights.p @ weights.w @ weights.priors)
    return 0.0


def sample_assignments(weights, pop, cost, n_samples, seed, report_cost=None):
    """Draw ``n_samples`` individuals and assign them under ``weights``.

    Returns a dict of arrays: ``z`` (group), ``k`` (facility), ``score`` (minimal
    effective score) and ``cost`` (assigned cost under ``report_cost``, which
    defaults to ``cost``). Zero-density draws are dropped and counted in
    ``discarded``.
    """
    rng = np.random.default_rng(seed)
    report_cost = cost if report_cost is None else report_cost
    zs_all, ks_all, sc_all, c_all = [], [], [], []
    discarded = 0
    left = int(n_samples)
    while left > 0:
        m = min(CHUNK * 4, left)
        xs, zs = pop.sample(rng, m)
        costs, post, valid = _draw_rows(pop, cost, xs)
        discarded += int(np.count_nonzero(~valid))
        scores = effective_scores(weights.w, post[valid], costs[valid])
        ks = np.argmin(scores, axis=1)
        rows = np.arange(ks.size)
        zs_all.append(zs[valid])
        ks_all.append(ks)
        sc_all.append(scores[rows, ks])
        if report_cost is cost:
            c_all.append(costs[valid][rows, ks])
        else:
            c_all.append(report_cost.costs(pop, xs[valid])[rows, ks])
        left -= m
    return {
        "z": np.concatenate(zs_all),
        "k": np.concatenate(ks_all),
        "score": np.concatenate(sc_all),
        "cost": np.concatenate(c_all),
        "discarded": discarded,
    }


def dual_objective_estimate(weights, pop, cost, n_samples, seed):
    """Monte Carlo estimate of the dual objective at ``weights``.

    Returns ``(value, stderr)`` for ``E min_k [c(X,k) - E(w[k,Z] | X)]``, plus
    ``sum_k p_k sum_z q_z w[k,z]`` when ``weights`` carry fixed region sizes.
    """
    s = sample_assignments(weights, pop, cost, n_samples, seed)
    vals = s["score"]
    se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
    return float(vals.mean()) + _p_term(weights), se


def region_masses(weights, pop, cost, n_samples, seed):
    """Monte Carlo estimate of ``P(Y = k)`` for every facility."""
    s = sample_assignments(weights, pop, cost, n_samples, seed)
    return np.bincount(s["k"], minlength=weights.K) / s["k"].size


def default_step_scale(cost):
    return DEFAULT_STEP_FACTOR * cost.median_pairwise()


def _fairness_dev(ks, zs, K, M):
    counts = np.zeros((K, M))
    np.add.at(counts, (ks, zs), 1.0)
    nz = counts.sum(axis=0)
    shares = counts / np.where(nz > 0, nz, 1.0)
    masses = counts.sum(axis=1) / max(ks.size, 1)
    return float(np.max(np.abs(shares - masses[:, None])))


class _TraceSet:
    def __init__(self, pop, cost, n, seed, p_term):
        rng = np.random.default_rng(seed)
        xs, zs = pop.sample(rng, n)
        costs, post, valid = _draw_rows(pop, cost, xs)
        self.costs, self.post, self.z = costs[valid], post[valid], zs[valid]
        self.p_term = p_term

    def point(self, n, weights):
        scores = effective_scores(weights.w, self.post, self.costs)
        ks = np.argmin(scores, axis=1)
        vals = scores[np.arange(ks.size), ks]
        se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
        dev = _fairness_dev(ks, self.z, weights.K, weights.M)
        return TracePoint(int(n), float(vals.mean()) + self.p_term(weights), se, dev)


def run(config, pop, cost):
    """Run the SA solver for ``config.iterations`` steps.

    Samples are drawn in chunks from ``default_rng([seed, 1])``; the trace uses a
    fixed evaluation set from ``[seed, 3]`` and final estimates use ``[seed, 2]``.

    Raises
    ------
    ConfigError
        For invalid settings or incompatible population/cost kinds.
    DataError
        If more than 0.1% of draws have zero total density.
    NonFinite
        If the iterate diverges.
    """
    K = cost.K
    config.validate(K)
    cost.check_population(pop)
    q = pop.priors
    N = int(config.iterations)
    alpha = config.step_scale if config.step_scale is not None else default_step_scale(cost)
    avg_start = 1
    if config.tail_fraction is not None and N > 0:
        avg_start = N - math.ceil(config.tail_fraction * N) + 1
    p = None if config.p is None else np.asarray(config.p, dtype=float)
    state = SolverState.initial(K, q, alpha, config.mode, p if config.mode == "fixed_p" else None,
                                config.seed, avg_start)
    dirs = ascent_directions(q)
    pq = np.outer(p, q) if config.mode == "fixed_p" else None

    every = config.trace_every or max(1, N // 100)
    tracer = _TraceSet(pop, cost, config.trace_samples, [config.seed, 3], _p_term)
    trace = []
    rng = np.random.default_rng([config.seed, 1])
    drawn = 0
    while state.n < N:
        m = min(CHUNK, N - state.n)
        xs, zs = pop.sample(rng, m)
        drawn += m
        costs, post, valid = _draw_rows(pop, cost, xs)
        bad = int(np.count_nonzero(~valid))
        if bad:
            state.discarded += bad
            log.info("discarded %d zero-density samples", bad)
            if state.discarded > MAX_DISCARD_FRACTION * drawn:
                raise DataError(
                    f"{state.discarded} of {drawn} samples had zero density; population is mis-specified")
            costs, post, zs = costs[valid], post[valid], zs[valid]
        zs = zs.astype(np.int64)
        start = 0
        while start < zs.size:
            next_cp = (state.n // every + 1) * every
            stop = min(zs.size, start + next_cp - state.n)
            sl = slice(start, stop)
            if config.mode == "optimal_p":
                state.n, state.n_avg = _kernels.sa_optimal_p(
                    state.v, state.w, state.vbar, state.n, state.n_avg, avg_start,
                    alpha, costs[sl], post[sl], zs[sl], dirs)
            else:
                state.n, state.n_avg = _kernels.sa_fixed_p(
                    state.v, state.vbar, state.n, state.n_avg, avg_start,
                    alpha, costs[sl], post[sl], zs[sl], pq)
            start = stop
            if state.n % every == 0 or state.n == N:
                if not np.all(np.isfinite(state.v)):
                    raise NonFinite(f"iterate became non-finite at n={state.n}")
                trace.append(tracer.point(state.n, _weights_from(state, polyak_average(state))))
    if config.mode == "fixed_p":
        state.w = state.v

    weights = _weights_from(state, polyak_average(state))
    if not np.all(np.isfinite(weights.w)):
        raise NonFinite("averaged weights are non-finite")
    s = sample_assignments(weights, pop, cost, config.eval_samples, [config.seed, 2])
    vals = s["score"]
    se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
    masses = np.bincount(s["k"], minlength=K) / s["k"].size
    return SolverResult(
        weights=weights,
        raw_final=state.v.copy(),
        dual_value_estimate=float(vals.mean()) + _p_term(weights),
        dual_stderr=se,
        region_masses=masses,
        trace=trace,
        alpha=float(alpha),
        discarded=state.discarded,
        config=config,
    )


def classical_ot_solve(pop, cost, p, config=None):
    """Classical semidiscrete OT weights (one scalar per facility).

    The population is pooled into a single group and the fixed-p solver is run
    with region sizes ``p``. Returns ``(weights, result)`` where ``weights`` has
    shape ``(K,)``.
    """
    cfg = SolverConfig() if config is None else SolverConfig(**vars(config))
    cfg.mode = "fixed_p"
    cfg.p = np.asarray(p, dtype=float)
    res = run(cfg, pooled(pop), cost)
    return res.weights.w[:, 0].copy(), res


def save_weights(path, weights, seed=None, iterations=None, alpha=None):
    """Write weights as JSON (floats round-trip exactly)."""
    doc = {
        "K": weights.K,
        "M": weights.M,
        "q": [float(x) for x in weights.priors],
        "mode": weights.mode,
        "w": [float(x) for x in weights.w.ravel()],
        "seed": seed,
        "iterations": iterations,
        "alpha": None if alpha is None else float(alpha),
    }
    if weights.p is not None:
        doc["p"] = [float(x) for x in weights.p]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_weights(path):
    """Read a weights file; returns ``(WeightMatrix, metadata dict)``."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        K, M = int(doc["K"]), int(doc["M"])
        w = np.array(doc["w"], dtype=float)
        if w.size != K * M:
            raise DimensionMismatch(f"{path}: w has {w.size} entries, expected {K * M}")
        weights = WeightMatrix(w.reshape(K, M), doc["q"], doc.get("mode", "optimal_p"), doc.get("p"))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed weights file ({exc})") from exc
    meta = {k: doc.get(k) for k in ("seed", "iterations", "alpha")}
    return weights, meta


def write_trace(path, trace):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "dual_estimate", "stderr", "max_fairness_dev"])
        for t in trace:
            w.writerow([t.n, repr(t.dual_estimate), repr(t.stderr), repr(t.max_fairness_dev)])


def read_trace(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [TracePoint(int(r["n"]), float(r["dual_estimate"]), float(r["stderr"]),
                       float(r["max_fairness_dev"])) for r in rows]

