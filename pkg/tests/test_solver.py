import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairpart import datasets
from fairpart.costmodel import CostModel, FacilitySet
from fairpart.errors import ConfigError, DataError, NonFinite, ZeroDensity
from fairpart.oracle import DiscreteInstance, exact_gradient
from fairpart.population import DiscretePopulation, GroupMixture, UniformBox
from fairpart.solver import (
    SolverConfig,
    SolverState,
    WeightMatrix,
    argmin_facility,
    ascent_directions,
    classical_ot_solve,
    dual_objective_estimate,
    effective_score,
    load_weights,
    polyak_average,
    project_v_to_w,
    read_trace,
    region_masses,
    run,
    sa_step_fixed_p,
    sa_step_optimal_p,
    sample_assignments,
    save_weights,
    write_trace,
)

LINE = np.array([[-1.0, 2.0], [-1.0, 1.0]])


def line_instance(w2=0.0):
    pop = GroupMixture(np.array([1.0]), [UniformBox(LINE)], LINE)
    cost = CostModel("euclidean", FacilitySet(np.array([[0.0, 0.0], [1.0, 0.0]])))
    return pop, cost, WeightMatrix(np.array([[0.0], [w2]]), pop.priors)


def two_group_sites():
    # site 0: posterior (0.5, 0.5); site 1: posterior (1, 0)
    pop = DiscretePopulation(["a", "b"], np.zeros((2, 2)), np.array([[1.0, 1.0], [1.0, 0.0]]))
    cost = CostModel("matrix", FacilitySet(np.array([[0.0, 0.0], [1.0, 0.0]])),
                     np.array([[2.0, 5.0], [2.0, 5.0]]), ["a", "b"])
    return pop, cost


def test_effective_score_zero_weights():
    pop, cost = two_group_sites()
    assert effective_score(WeightMatrix.zeros(2, pop.priors), pop, cost, 0, 0) == 2.0


def test_effective_score_mixture_cancels():
    pop, cost = two_group_sites()
    w = WeightMatrix(np.array([[1.0, -1.0], [0.0, 0.0]]), pop.priors)
    assert effective_score(w, pop, cost, 0, 0) == 2.0
    assert effective_score(w, pop, cost, 1, 0) == 1.0


def test_effective_score_zero_density():
    pop, cost, w = line_instance()
    with pytest.raises(ZeroDensity):
        effective_score(w, pop, cost, [5.0, 5.0], 0)


def test_argmin_nearest():
    pop, cost, w = line_instance()
    assert argmin_facility(w, pop, cost, [0.2, 0.0]) == 0


def test_argmin_with_bonus():
    pop, cost, w = line_instance(0.7)
    assert argmin_facility(w, pop, cost, [0.2, 0.0]) == 1


def test_argmin_tie_lowest_index():
    pop, cost, w = line_instance()
    assert argmin_facility(w, pop, cost, [0.5, 0.0]) == 0


@pytest.mark.parametrize("row,expected", [([1.0, 0.0], [0.5, -0.5]), ([1.0, -1.0], [1.0, -1.0])])
def test_projection_examples(row, expected):
    assert np.allclose(project_v_to_w(np.array([row]), [0.5, 0.5]).w, [expected], atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_projection_properties(K, M, seed):
    rng = np.random.default_rng(seed)
    q = rng.dirichlet(np.ones(M)) * 0.98 + 0.02 / M
    q /= q.sum()
    v = rng.normal(size=(K, M)) * 10
    w = project_v_to_w(v, q)
    assert w.satisfies_constraint()
    assert np.allclose(project_v_to_w(w.w, q).w, w.w, atol=1e-12)
    c = rng.normal(size=K)
    assert np.allclose(project_v_to_w(np.outer(c, q), q).w, 0.0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_argmin_invariant_to_common_shift(seed):
    rng = np.random.default_rng(seed)
    pop = datasets.segregated_mixture()
    _, cost = datasets.segregated_instance()
    w = rng.normal(size=(4, 3)) * 0.3
    delta = rng.normal(size=3)
    xs = rng.random((50, 2))
    a = [argmin_facility(WeightMatrix(w, pop.priors), pop, cost, x) for x in xs]
    b = [argmin_facility(WeightMatrix(w + delta, pop.priors), pop, cost, x) for x in xs]
    assert a == b


def near_first_facility():
    pop = DiscretePopulation(["a", "b"], np.array([[0.0, 0.0], [1.0, 0.0]]),
                             np.array([[1.0, 1.0], [1.0, 1.0]]))
    cost = CostModel("euclidean", FacilitySet(np.array([[0.0, 0.0], [1.0, 0.0]])))
    return pop, cost


def test_sa_step_optimal_p_arithmetic():
    pop, cost = near_first_facility()
    state = SolverState.initial(2, pop.priors, 0.1)
    sa_step_optimal_p(state, (0, 0), pop, cost)
    # ascent direction for the winner row is -(e_z - q_z q / q'q)
    assert np.allclose(state.v, [[-0.05, 0.05], [0.0, 0.0]], atol=1e-15)
    assert state.n == 1 and state.w.tolist() == state.v.tolist()


def test_sa_step_only_touches_winner_row(rng):
    pop, cost = datasets.segregated_instance()
    state = SolverState.initial(4, pop.priors, 0.2)
    for _ in range(50):
        before = state.v.copy()
        x, z = pop.sample(rng, 1)
        k = argmin_facility(WeightMatrix(state.w, pop.priors), pop, cost, x[0])
        sa_step_optimal_p(state, (x[0], z[0]), pop, cost)
        changed = np.flatnonzero(np.any(state.v != before, axis=1))
        assert set(changed) <= {k}


def test_sa_step_single_group_stays_zero(rng):
    pop, cost = datasets.uniform_square_instance(M=1)
    state = SolverState.initial(4, pop.priors, 1.0)
    for _ in range(100):
        x, z = pop.sample(rng, 1)
        sa_step_optimal_p(state, (x[0], z[0]), pop, cost)
    assert np.all(state.v == 0.0)


def test_sa_step_discards_zero_density():
    pop, cost, _ = line_instance()
    state = SolverState.initial(2, pop.priors, 1.0)
    sa_step_optimal_p(state, (np.array([9.0, 9.0]), 0), pop, cost)
    assert state.n == 0 and state.discarded == 1


def test_sa_step_fixed_p_arithmetic():
    pop, cost = near_first_facility()
    p = np.array([0.5, 0.5])
    state = SolverState.initial(2, pop.priors, 0.1, mode="fixed_p", p=p)
    sa_step_fixed_p(state, (0, 0), p, pop, cost)
    assert np.allclose(state.w, [[-0.075, 0.025], [0.025, 0.025]], atol=1e-15)


def test_fixed_p_expected_update_zero_when_one_facility_wins():
    pop = DiscretePopulation(["a"], np.zeros((1, 2)), np.array([[1.0, 3.0]]))
    cost = CostModel("euclidean", FacilitySet(np.array([[0.0, 0.0], [5.0, 0.0]])))
    g = exact_gradient(np.zeros((2, 2)), DiscreteInstance(pop, cost), "fixed_p", np.array([1.0, 0.0]))
    assert np.allclose(g, 0.0, atol=1e-15)


def test_polyak_scalar():
    state = SolverState.initial(1, [1.0], 1.0)
    for val in (2.0, 4.0):
        state.v[:] = val
        state.n += 1
        state.n_avg += 1
        state.vbar += (state.v - state.vbar) / state.n_avg
    assert polyak_average(state)[0, 0] == 3.0


def test_polyak_matches_offline_mean(rng):
    pop, cost = datasets.segregated_instance()
    state = SolverState.initial(4, pop.priors, 0.3)
    iterates = []
    xs, zs = pop.sample(rng, 100)
    for x, z in zip(xs, zs):
        sa_step_optimal_p(state, (x, z), pop, cost)
        iterates.append(state.v.copy())
    assert np.allclose(polyak_average(state), np.mean(iterates, axis=0), atol=1e-12, rtol=0)


def test_tail_average(rng):
    pop, cost = datasets.segregated_instance()
    state = SolverState.initial(4, pop.priors, 0.3, avg_start=71)
    iterates = []
    xs, zs = pop.sample(rng, 100)
    for x, z in zip(xs, zs):
        sa_step_optimal_p(state, (x, z), pop, cost)
        iterates.append(state.v.copy())
    assert state.n_avg == 30
    assert np.allclose(polyak_average(state), np.mean(iterates[70:], axis=0), atol=1e-12, rtol=0)


def test_compiled_loop_matches_single_steps():
    pop, cost = datasets.segregated_instance()
    cfg = SolverConfig(iterations=500, seed=4, step_scale=0.2, eval_samples=10, trace_samples=10)
    res = run(cfg, pop, cost)
    state = SolverState.initial(4, pop.priors, 0.2)
    xs, zs = pop.sample(np.random.default_rng([4, 1]), 500)
    for x, z in zip(xs, zs):
        sa_step_optimal_p(state, (x, z), pop, cost)
    assert np.allclose(res.raw_final, state.v, atol=1e-13)
    assert np.allclose(res.weights.w, project_v_to_w(state.vbar, pop.priors).w, atol=1e-13)


def test_ascent_directions_orthogonal_to_q():
    q = np.array([0.2, 0.3, 0.5])
    assert np.allclose(ascent_directions(q) @ q, 0.0, atol=1e-15)


def test_dual_estimate_at_zero_is_voronoi_cost():
    pop, cost = datasets.segregated_instance()
    w = WeightMatrix.zeros(4, pop.priors)
    val, se = dual_objective_estimate(w, pop, cost, 20_000, 5)
    xs, _ = pop.sample(np.random.default_rng(5), 20_000)
    assert val == pytest.approx(cost.costs(pop, xs).min(axis=1).mean(), abs=1e-12)
    assert se > 0


def test_dual_estimate_common_shift(rng):
    pop, cost = datasets.segregated_instance()
    w = rng.normal(size=(4, 3)) * 0.1
    delta = np.array([0.3, -0.2, 0.5])
    a, _ = dual_objective_estimate(WeightMatrix(w, pop.priors), pop, cost, 50_000, 9)
    b, _ = dual_objective_estimate(WeightMatrix(w + delta, pop.priors), pop, cost, 50_000, 9)
    xs, _ = pop.sample(np.random.default_rng(9), 50_000)
    post, _ = pop.posterior_batch(xs)
    assert b - a == pytest.approx(-(post @ delta).mean(), abs=1e-12)
    assert b - a == pytest.approx(-(pop.priors @ delta), abs=0.01)


def test_region_masses_symmetric():
    pop, cost = datasets.uniform_square_instance()
    n = 200_000
    m = region_masses(WeightMatrix.zeros(4, pop.priors), pop, cost, n, 1)
    assert np.all(np.abs(m - 0.25) <= 4 * np.sqrt(0.25 * 0.75 / n))


def test_region_masses_single_facility():
    pop, _ = datasets.uniform_square_instance()
    cost = CostModel("euclidean", FacilitySet(np.array([[0.5, 0.5]])))
    assert region_masses(WeightMatrix.zeros(1, pop.priors), pop, cost, 1000, 0).tolist() == [1.0]


def test_region_masses_dominated_facility():
    pop, _ = datasets.uniform_square_instance()
    cost = CostModel("euclidean", FacilitySet(np.array([[0.5, 0.5], [10.0, 10.0]])))
    assert region_masses(WeightMatrix.zeros(2, pop.priors), pop, cost, 1000, 0)[1] == 0.0


def test_run_zero_iterations():
    pop, cost = datasets.segregated_instance()
    res = run(SolverConfig(iterations=0, eval_samples=100, trace_samples=10), pop, cost)
    assert np.all(res.weights.w == 0.0) and res.trace == []


def test_run_deterministic():
    pop, cost = datasets.segregated_instance()
    cfg = SolverConfig(iterations=3000, seed=11, eval_samples=2000, trace_samples=500)
    a, b = run(cfg, pop, cost), run(cfg, pop, cost)
    assert np.array_equal(a.weights.w, b.weights.w)
    assert np.array_equal(a.raw_final, b.raw_final)
    assert a.dual_value_estimate == b.dual_value_estimate
    assert [vars(t) for t in a.trace] == [vars(t) for t in b.trace]


def test_run_single_group_weights_zero():
    pop, cost = datasets.uniform_square_instance(M=1)
    res = run(SolverConfig(iterations=5000, eval_samples=1000, trace_samples=100), pop, cost)
    assert np.all(res.weights.w == 0.0)


def test_run_preserves_constraint_and_trace_cadence():
    pop, cost = datasets.segregated_instance()
    res = run(SolverConfig(iterations=10_000, eval_samples=5000, trace_samples=2000), pop, cost)
    assert res.weights.satisfies_constraint()
    assert [t.n for t in res.trace] == list(range(100, 10_001, 100))
    assert res.region_masses.sum() == pytest.approx(1.0)


def test_trace_dual_nondecreasing():
    pop, cost = datasets.segregated_instance()
    res = run(SolverConfig(iterations=100_000, seed=2, eval_samples=1000, trace_samples=20_000),
              pop, cost)
    pts = res.trace[9::10]
    for a, b in zip(pts, pts[1:]):
        assert b.dual_estimate >= a.dual_estimate - 3 * b.stderr


def test_fixed_p_config_validation():
    with pytest.raises(ConfigError, match="^p:"):
        SolverConfig(mode="fixed_p", p=np.array([0.6, 0.6])).validate(2)
    with pytest.raises(ConfigError, match="^p:"):
        SolverConfig(mode="fixed_p").validate(2)
    with pytest.raises(ConfigError, match="K=3"):
        SolverConfig(mode="fixed_p", p=np.array([0.5, 0.5])).validate(3)
    with pytest.raises(ConfigError, match="mode"):
        SolverConfig(mode="other").validate()


def test_run_diverges_to_nonfinite():
    # costs near the float limit: the first few increments overflow
    b = np.array([[0.0, 1e307], [0.0, 1e307]])
    pop = GroupMixture(np.array([0.5, 0.5]), [UniformBox(b), UniformBox(b)], b)
    cost = CostModel("euclidean", FacilitySet(np.array([[0.0, 0.0], [1e307, 0.0], [0.0, 1e307]])))
    with pytest.raises(NonFinite):
        run(SolverConfig(iterations=2000, eval_samples=10, trace_samples=10), pop, cost)


class LeakyPopulation:
    """Uniform square whose posterior is undefined on one percent of draws."""

    is_discrete = False
    group_count = 1
    dim = 2
    priors = np.ones(1)
    bounds = datasets.UNIT_SQUARE

    def sample(self, rng, size):
        return rng.random((size, 2)), np.zeros(size, dtype=np.int64)

    def posterior_batch(self, xs):
        valid = xs[:, 0] > 0.01
        return np.ones((xs.shape[0], 1)), valid


def test_run_aborts_on_many_zero_density_draws():
    _, cost = datasets.uniform_square_instance()
    with pytest.raises(DataError):
        run(SolverConfig(iterations=5000, eval_samples=10, trace_samples=10), LeakyPopulation(), cost)


def test_classical_ot_boundary():
    bounds = np.array([[0.0, 1.0]])
    pop = GroupMixture(np.array([1.0]), [UniformBox(bounds)], bounds)
    cost = CostModel("euclidean", FacilitySet(np.array([[0.0], [1.0]])))
    w, res = classical_ot_solve(pop, cost, [0.75, 0.25],
                                SolverConfig(iterations=200_000, eval_samples=100_000))
    boundary = (1.0 + w[0] - w[1]) / 2

    # independent root: region 1 of the uniform density is [0, b], so solve
    # mass(b) = 0.75 by bisection
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = (lo + hi) / 2
        lo, hi = (mid, hi) if mid < 0.75 else (lo, mid)
    assert boundary == pytest.approx(lo, abs=0.01)
    assert res.region_masses[0] == pytest.approx(0.75, abs=0.01)


def test_classical_ot_voronoi_masses_is_root():
    pop, cost = datasets.uniform_square_instance(M=2)
    w, _ = classical_ot_solve(pop, cost, np.full(4, 0.25),
                              SolverConfig(iterations=50_000, eval_samples=1000))
    assert np.max(np.abs(w - w.mean())) < 0.02


def test_sample_assignments_reports_raw_cost():
    pop, _ = datasets.segregated_instance()
    _, sq = datasets.segregated_instance("squared_euclidean")
    s = sample_assignments(WeightMatrix.zeros(4, pop.priors), pop, sq, 1000, 0, report_cost=sq.raw())
    assert np.allclose(s["cost"] ** 2, s["score"], atol=1e-12)


def test_weights_roundtrip(tmp_path, rng):
    w = WeightMatrix(rng.normal(size=(3, 2)) / 3, np.array([0.3, 0.7]), "fixed_p",
                     np.array([0.2, 0.3, 0.5]))
    save_weights(tmp_path / "w.json", w, seed=4, iterations=10, alpha=0.1)
    back, meta = load_weights(tmp_path / "w.json")
    assert np.array_equal(back.w, w.w) and np.array_equal(back.priors, w.priors)
    assert np.array_equal(back.p, w.p) and back.mode == "fixed_p"
    assert meta == {"seed": 4, "iterations": 10, "alpha": 0.1}


def test_trace_roundtrip(tmp_path):
    pop, cost = datasets.segregated_instance()
    res = run(SolverConfig(iterations=1000, eval_samples=100, trace_samples=100), pop, cost)
    write_trace(tmp_path / "t.csv", res.trace)
    assert [vars(t) for t in read_trace(tmp_path / "t.csv")] == [vars(t) for t in res.trace]
    header = (tmp_path / "t.csv").read_text().splitlines()[0]
    assert header == "n,dual_estimate,stderr,max_fairness_dev"
