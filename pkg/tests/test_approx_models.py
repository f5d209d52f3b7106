import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bcdeval.approx_models import (
    ModelKind,
    _single_edge_moves,
    ModelSpec,
    bootstrap_posterior,
    corrupted_samples,
    hill_climb,
    realize_model,
    tempered_posterior,
    topk_posterior,
)
from bcdeval.exact_posterior import exact_graph_posterior, local_table, sample_exact
from bcdeval.graphs import (
    Dag,
    GraphFamilySpec,
    is_acyclic,
    parent_masks_to_adjacency,
    random_graph,
    same_mec,
    validate_dag,
)
from bcdeval.metrics import graph_mmd
from bcdeval.scm import ScmPriorSpec, draw_scm, sample


@pytest.fixture(scope="module")
def post5():
    g = random_graph(GraphFamilySpec("ER", 5, 1, seed=0))
    x = sample(draw_scm(g, ScmPriorSpec(), 0), 20, seed=1)
    return exact_graph_posterior(x)


def test_model_spec_validation():
    with pytest.raises(ValueError):
        ModelSpec("tempered", 0.0)
    with pytest.raises(ValueError):
        ModelSpec("topk", 1.5)
    with pytest.raises(ValueError):
        ModelSpec("edge_noise", 1.2)
    with pytest.raises(ValueError):
        ModelSpec("bootstrap", 0)
    assert ModelSpec("tempered", 4).label == "tempered[4]"
    assert ModelSpec("edge_noise", 0.1).kind is ModelKind.EDGE_NOISE


def test_tempering_limits(post5):
    assert np.allclose(tempered_posterior(post5, 1.0).weights, post5.weights, atol=1e-12)
    assert tempered_posterior(post5, 1e-6).weights.max() > 1 - 1e-6
    assert abs(tempered_posterior(post5, 1e6).weights.max() - 1 / len(post5)) < 1e-4


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-3, 1e3))
def test_tempering_preserves_mode(tau):
    x = np.random.default_rng(0).normal(size=(15, 3))
    post = exact_graph_posterior(x)
    assert tempered_posterior(post, tau).mode_index == post.mode_index


def test_topk(post5):
    one = corrupted_samples(post5, ModelSpec("topk", 1), 200, 0)
    mode = post5.adjacency[post5.mode_index]
    assert all(np.array_equal(a, mode) for a in one.adjacency)
    ten = topk_posterior(post5, 10)
    assert np.count_nonzero(ten.weights) == 10 and abs(ten.weights.sum() - 1) < 1e-12


def test_edge_noise_zero_is_exact(post5):
    a = corrupted_samples(post5, ModelSpec("edge_noise", 0.0), 300, 3)
    ref = sample_exact(post5, 300, np.random.default_rng(3))
    assert np.array_equal(a.adjacency, ref.adjacency)


def test_edge_noise_hamming_increases_with_rho(post5):
    means = []
    for rho in (0.0, 0.1, 0.3, 0.5):
        base = sample_exact(post5, 2000, np.random.default_rng(7))
        noisy = corrupted_samples(post5, ModelSpec("edge_noise", rho), 2000, 7)
        means.append(np.mean(np.sum(base.adjacency != noisy.adjacency, axis=(1, 2))))
    assert all(a < b for a, b in zip(means, means[1:]))


def test_edge_noise_keeps_dags_and_zeroes_missing_weights(post5):
    q = corrupted_samples(post5, ModelSpec("edge_noise", 0.5), 500, 1)
    assert np.all(q.weights[~q.adjacency] == 0)


def test_hill_climb_finds_mec_of_truth():
    g = Dag.from_edges(3, [(0, 1), (1, 2)])
    x = sample(draw_scm(g, ScmPriorSpec(), 2), 2000, seed=3).samples
    found = hill_climb(local_table(x).dag_log_evidence, 3)
    assert same_mec(validate_dag(parent_masks_to_adjacency(found[None], 3)[0]), g)


def test_hill_climb_reaches_local_optimum():
    x = np.random.default_rng(0).normal(size=(30, 4)) @ np.triu(np.ones((4, 4)))
    table = local_table(x)
    found = hill_climb(table.dag_log_evidence, 4)
    best = table.dag_log_evidence(found[None])[0]
    for cand in _single_edge_moves(found, 4):
        if is_acyclic(parent_masks_to_adjacency(cand[None], 4)[0]):
            assert table.dag_log_evidence(cand[None])[0] <= best + 1e-9


def test_bootstrap_strong_data():
    g = Dag.from_edges(2, [(0, 1)])
    x = sample(draw_scm(g, ScmPriorSpec(), 0), 500, seed=1)
    q = bootstrap_posterior(x, 100, seed=2)
    assert len(q) == 100 and q.sample_weights is not None
    assert abs(q.sample_weights.sum() - 1) < 1e-12
    assert not np.any(q.adjacency.sum(axis=(1, 2)) == 0)
    counts = {}
    for a, p in zip(q.adjacency, q.probs):
        counts[a.tobytes()] = counts.get(a.tobytes(), 0) + p
    modal = np.frombuffer(max(counts, key=counts.get), dtype=bool).reshape(2, 2)
    assert modal[0, 1] != modal[1, 0]


def test_bootstrap_single_and_deterministic():
    x = np.random.default_rng(0).normal(size=(20, 3))
    assert len(bootstrap_posterior(x, 1, seed=0)) == 1
    a, b = bootstrap_posterior(x, 5, seed=4), bootstrap_posterior(x, 5, seed=4)
    assert np.array_equal(a.adjacency, b.adjacency) and np.array_equal(a.weights, b.weights)


def test_realize_model_dispatch(post5):
    x = np.random.default_rng(0).normal(size=(20, 5))
    for spec in (ModelSpec("exact"), ModelSpec("tempered", 4), ModelSpec("topk", 3),
                 ModelSpec("edge_noise", 0.1), ModelSpec("bootstrap", 3)):
        q = realize_model(spec, post5, x, 50, seed=1)
        assert q.source == spec.label


@pytest.mark.slow
def test_quality_ordering_in_graph_mmd():
    by_tau, by_rho = {1: [], 4: [], 16: []}, {0.0: [], 0.1: [], 0.3: [], 0.5: []}
    for seed in range(10):
        g = random_graph(GraphFamilySpec("ER", 4, 1, seed=seed))
        post = exact_graph_posterior(sample(draw_scm(g, ScmPriorSpec(), seed), 50, seed=seed + 100))
        for tau in by_tau:
            q = sample_exact(tempered_posterior(post, tau), 500, seed)
            by_tau[tau].append(graph_mmd(q, post, 500, seed + 1))
        for rho in by_rho:
            q = corrupted_samples(post, ModelSpec("edge_noise", rho), 500, seed)
            by_rho[rho].append(graph_mmd(q, post, 500, seed + 1))
    tau_med = [np.median(v) for v in by_tau.values()]
    rho_med = [np.median(v) for v in by_rho.values()]
    assert tau_med == sorted(tau_med) and rho_med == sorted(rho_med)
