import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bcdeval.errors import DuplicateSamples, TooFewSamples
from bcdeval.exact_posterior import PosteriorSampleSet, exact_graph_posterior, sample_exact
from bcdeval.entropy import (
    KlEntropySpec,
    kl_entropy,
    likelihood_embedding,
    log_unit_ball_volume,
    loglik_matrix,
    posterior_entropy,
)
from bcdeval.graphs import GraphFamilySpec, random_graph
from bcdeval.scm import Dataset, ScmPriorSpec, draw_scm, sample


def normal_entropy(p):
    return 0.5 * p * np.log(2 * np.pi * np.e)


def test_unit_ball_volume():
    assert np.exp(log_unit_ball_volume(1)) == pytest.approx(2.0)
    assert np.exp(log_unit_ball_volume(2)) == pytest.approx(np.pi)
    assert np.exp(log_unit_ball_volume(3)) == pytest.approx(4 / 3 * np.pi)


@pytest.mark.parametrize("p", [1, 2, 3])
def test_standard_normal(p):
    x = np.random.default_rng(p).normal(size=(20_000, p))
    assert kl_entropy(x) == pytest.approx(normal_entropy(p), abs=0.05 * p)


def test_uniform_unit_interval():
    x = np.random.default_rng(0).uniform(size=20_000)
    assert kl_entropy(x) == pytest.approx(0.0, abs=0.02)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 3), st.floats(0.1, 10))
def test_scaling_shifts_by_log_factor(seed, p, c):
    x = np.random.default_rng(seed).normal(size=(200, p))
    assert kl_entropy(c * x) == pytest.approx(kl_entropy(x) + p * np.log(c), abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(150, 2))
    assert kl_entropy(x[rng.permutation(150)]) == pytest.approx(kl_entropy(x), abs=1e-12)


def test_too_few_and_duplicates():
    with pytest.raises(TooFewSamples):
        kl_entropy(np.arange(3.0), KlEntropySpec(3))
    with pytest.raises(DuplicateSamples):
        kl_entropy(np.zeros(10))
    with pytest.raises(ValueError):
        kl_entropy(np.zeros((10, 2)), KlEntropySpec(dim=3))
    with pytest.raises(ValueError):
        KlEntropySpec(0)


def test_error_shrinks_with_n():
    errs = []
    for n in (100, 1000, 10_000):
        vals = [kl_entropy(np.random.default_rng(s).normal(size=n)) for s in range(20)]
        errs.append(np.sqrt(np.mean((np.array(vals) - normal_entropy(1)) ** 2)))
    assert errs[0] > errs[1] > errs[2]


@pytest.fixture(scope="module")
def setting():
    g = random_graph(GraphFamilySpec("ER", 4, 1, seed=1))
    scm = draw_scm(g, ScmPriorSpec(), 2)
    post = exact_graph_posterior(sample(scm, 20, seed=3))
    return scm, post, sample(scm, 50, seed=4)


def test_point_mass_is_very_negative(setting):
    scm, _, heldout = setting
    q = PosteriorSampleSet.point_mass(scm, m=200)
    assert posterior_entropy(q, heldout, seed=0) <= -15


def test_embedding_of_identical_samples_is_one(setting):
    scm, _, heldout = setting
    ell = loglik_matrix(PosteriorSampleSet.point_mass(scm, m=5), heldout)
    assert ell.shape == (50, 5)
    assert np.allclose(likelihood_embedding(ell, 1.0), 1.0)


def test_entropy_is_deterministic_and_finite(setting):
    _, post, heldout = setting
    q = sample_exact(post, 300, 1)
    a = posterior_entropy(q, heldout, seed=7)
    assert np.isfinite(a) and a == posterior_entropy(q, heldout, seed=7)


def test_relabel_invariance(setting):
    scm, post, heldout = setting
    q = sample_exact(post, 200, 1)
    perm = np.array([2, 0, 3, 1])
    qp = PosteriorSampleSet(q.adjacency[:, perm][:, :, perm], q.weights[:, perm][:, :, perm],
                            q.noise_vars[:, perm])
    hp = Dataset(heldout.samples[:, perm])
    assert posterior_entropy(qp, hp, seed=3) == pytest.approx(posterior_entropy(q, heldout, seed=3), abs=1e-9)


def test_concentrated_posterior_has_lower_entropy():
    g = random_graph(GraphFamilySpec("ER", 3, 1, seed=0))
    scm = draw_scm(g, ScmPriorSpec(), 0)
    big = sample(scm, 1000, seed=1)
    heldout = sample(scm, 50, seed=2)
    vals = []
    for n in (5, 1000):
        post = exact_graph_posterior(Dataset(big.samples[:n]))
        vals.append(posterior_entropy(sample_exact(post, 300, 3), heldout, seed=4))
    assert vals[1] < vals[0]
