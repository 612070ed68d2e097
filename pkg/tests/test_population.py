import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairpart import datasets
from fairpart.errors import EmptyGroup, ParseError, ZeroDensity
from fairpart.population import (
    DiscretePopulation,
    GroupMixture,
    TruncatedGaussianMixture,
    UniformBox,
    load_population,
    posterior,
    posterior_from_densities,
    pooled,
    sample_joint,
    save_population,
)

from conftest import write

BOX = np.array([[0.0, 1.0], [0.0, 1.0]])


def test_posterior_identical_densities():
    assert np.allclose(posterior_from_densities([0.5, 0.5], [1.0, 1.0]), [0.5, 0.5])


def test_posterior_ratio():
    post = posterior_from_densities([0.3, 0.7], [2.0, 1.0])
    assert np.allclose(post, [6 / 13, 7 / 13], rtol=0, atol=1e-15)


def test_posterior_degenerate_support():
    assert np.array_equal(posterior_from_densities([0.3, 0.7], [0.0, 4.0]), [0.0, 1.0])


def test_posterior_zero_density_raises():
    with pytest.raises(ZeroDensity):
        posterior_from_densities([0.3, 0.7], [0.0, 0.0])


def test_posterior_outside_support_raises():
    pop = GroupMixture(np.array([0.5, 0.5]), [UniformBox(BOX)] * 2, BOX)
    with pytest.raises(ZeroDensity):
        posterior(pop, [2.0, 2.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 10.0), min_size=2, max_size=4), st.floats(1e-3, 1e3))
def test_posterior_scale_invariance(dens, scale):
    q = np.full(len(dens), 1.0 / len(dens))
    a = posterior_from_densities(q, np.array(dens))
    b = posterior_from_densities(q, np.array(dens) * scale)
    assert np.allclose(a, b, rtol=1e-12, atol=0)


def test_posterior_scale_invariance_across_mixtures():
    # Two mixtures whose group densities differ by a common factor at x:
    # uniform boxes of different sizes that both contain x.
    small = np.array([[0.0, 1.0], [0.0, 1.0]])
    big = np.array([[0.0, 2.0], [0.0, 2.0]])
    g = TruncatedGaussianMixture([1.0], [[0.5, 0.5]], [np.eye(2) * 0.04], small)
    a = GroupMixture(np.array([0.4, 0.6]), [UniformBox(small), UniformBox(small)], small)
    b = GroupMixture(np.array([0.4, 0.6]), [UniformBox(big), UniformBox(big)], big)
    assert np.allclose(posterior(a, [0.3, 0.3]), posterior(b, [0.3, 0.3]))
    c = GroupMixture(np.array([0.4, 0.6]), [g, UniformBox(small)], small)
    assert np.isclose(posterior(c, [0.5, 0.5]).sum(), 1.0)


def test_single_group_posterior_is_one():
    pop, _ = datasets.uniform_square_instance(M=1)
    assert np.array_equal(posterior(pop, [0.2, 0.9]), [1.0])


def test_prior_validation():
    with pytest.raises(ValueError):
        GroupMixture(np.array([0.5, 0.6]), [UniformBox(BOX)] * 2, BOX)
    with pytest.raises(ValueError):
        GroupMixture(np.array([1.0, 0.0]), [UniformBox(BOX)] * 2, BOX)


def test_sample_single_group_is_always_group_zero(rng):
    pop, _ = datasets.uniform_square_instance(M=1)
    _, zs = sample_joint(pop, rng, 1000)
    assert np.all(zs == 0)


def test_sample_group_share():
    # binomial sd at 1e6 draws is about 4.6e-4; 0.002 is a 4 sigma band
    pop = GroupMixture(np.array([0.3, 0.7]), [UniformBox(BOX)] * 2, BOX)
    _, zs = sample_joint(pop, np.random.default_rng(1), 1_000_000)
    assert abs(np.mean(zs == 0) - 0.3) <= 0.002


def test_single_site_population_always_returns_site(rng):
    pop = DiscretePopulation(["a"], np.array([[1.0, 2.0]]), np.array([[3.0, 4.0]]))
    xs, _ = sample_joint(pop, rng, 500)
    assert np.all(xs == 0)


def test_sample_is_deterministic():
    pop = datasets.segregated_mixture()
    a = sample_joint(pop, np.random.default_rng(7), 2000)
    b = sample_joint(pop, np.random.default_rng(7), 2000)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_single_draw_shape(rng):
    pop, _ = datasets.segregated_two_site()
    x, z = sample_joint(pop, rng)
    assert isinstance(z, int) and 0 <= x < 2


def test_truncated_samples_stay_in_bounds(rng):
    g = TruncatedGaussianMixture([1.0], [[0.95, 0.95]], [np.eye(2) * 0.04], BOX)
    pts = g.sample(rng, 5000)
    assert np.all((pts >= 0) & (pts <= 1))


def test_mixture_normalization_diagnostic():
    pop = datasets.segregated_mixture()
    integrals = pop.check_normalization(np.random.default_rng(3), 1_000_000)
    assert np.all(np.abs(integrals - 1.0) < 0.02)


def test_densities_nonnegative_finite(rng):
    pop = datasets.segregated_mixture()
    pts = rng.random((1000, 2))
    for d in pop.densities:
        v = d.evaluate(pts)
        assert np.all(np.isfinite(v)) and np.all(v >= 0)


def test_discrete_priors_and_pmf():
    pop = DiscretePopulation(["a", "b"], np.zeros((2, 2)), np.array([[3.0, 1.0], [1.0, 3.0]]))
    assert np.allclose(pop.priors, [0.5, 0.5])
    assert np.allclose(pop.pmf[:, 0], [0.75, 0.25])
    assert np.allclose(pop.pmf.sum(axis=0), 1.0, atol=1e-12)


def test_discrete_empty_group_rejected():
    with pytest.raises(EmptyGroup):
        DiscretePopulation(["a", "b"], np.zeros((2, 2)), np.array([[3.0, 0.0], [1.0, 0.0]]))


def test_discrete_unpopulated_site_raises():
    pop = DiscretePopulation(["a", "b"], np.zeros((2, 2)), np.array([[3.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(ZeroDensity):
        posterior(pop, 1)


def test_load_population(tmp_path):
    p = write(tmp_path / "p.csv", "site_id,x,y,count_1,count_2\ns1,0,0,10,0\ns2,1,0,0,10\n")
    pop = load_population(p)
    assert np.allclose(pop.priors, [0.5, 0.5])
    assert pop.site_ids == ["s1", "s2"]


def test_load_population_negative_count(tmp_path):
    p = write(tmp_path / "p.csv", "site_id,x,y,count_1\ns1,0,0,-1\ns2,1,0,3\n")
    with pytest.raises(ParseError):
        load_population(p)


@pytest.mark.parametrize("text", [
    "site,x,y,count_1\ns1,0,0,1\n",
    "site_id,x,y,count_1\ns1,0,zero,1\n",
    "site_id,x,y,count_1\ns1,0,0\n",
    "site_id,x,y,count_1\n",
    "",
])
def test_load_population_malformed(tmp_path, text):
    with pytest.raises(ParseError):
        load_population(write(tmp_path / "p.csv", text))


def test_load_population_empty_group(tmp_path):
    with pytest.raises(EmptyGroup):
        load_population(write(tmp_path / "p.csv", "site_id,x,y,count_1,count_2\ns1,0,0,1,0\n"))


def test_population_roundtrip(tmp_path):
    pop = DiscretePopulation(["a", "b"], np.array([[0.1, 0.2], [0.3, 0.4]]),
                             np.array([[1.5, 2.0], [0.0, 7.0]]))
    save_population(pop, tmp_path / "p.csv")
    back = load_population(tmp_path / "p.csv")
    assert back.site_ids == pop.site_ids
    assert np.array_equal(back.counts, pop.counts) and np.array_equal(back.coords, pop.coords)


def test_pooled_view(rng):
    pop = datasets.segregated_mixture()
    view = pooled(pop)
    xs, zs = view.sample(rng, 100)
    post, valid = view.posterior_batch(xs)
    assert np.all(zs == 0) and np.all(post == 1.0) and np.all(valid)
