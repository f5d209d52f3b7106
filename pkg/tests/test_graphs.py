import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bcdeval.errors import CyclicGraph, DimensionMismatch, DimensionTooLarge, NonBinaryMatrix, NonSquareMatrix
from bcdeval.graphs import (
    Dag,
    GraphFamilySpec,
    cpdag_of,
    cpdag_shd,
    enumerate_adjacency,
    enumerate_dags,
    random_graph,
    same_mec,
    shd,
    validate_dag,
)
from oracles import brute_force_dags, mec_cpdag, robinson_count


def test_validate_empty_and_chain():
    g = validate_dag(np.zeros((3, 3), dtype=int))
    assert g.n_edges == 0 and sorted(g.order) == [0, 1, 2]
    chain = validate_dag(np.array([[0, 1, 0], [0, 0, 1], [0, 0, 0]]))
    assert chain.order == (0, 1, 2)


@pytest.mark.parametrize("bad, err", [
    (np.array([[0, 1], [1, 0]]), CyclicGraph),
    (np.array([[1, 0], [0, 0]]), CyclicGraph),
    (np.array([[0, 2], [0, 0]]), NonBinaryMatrix),
    (np.zeros((2, 3)), NonSquareMatrix),
    (np.zeros((17, 17)), DimensionTooLarge),
])
def test_validate_rejects(bad, err):
    with pytest.raises(err):
        validate_dag(bad)


def test_enumeration_d2_by_hand():
    got = {tuple(map(tuple, g.edges.astype(int))) for g in enumerate_dags(2)}
    assert got == {((0, 0), (0, 0)), ((0, 1), (0, 0)), ((0, 0), (1, 0))}


@pytest.mark.parametrize("d", [1, 2, 3, 4])
def test_enumeration_matches_brute_force(d):
    ours = {a.astype(int).tobytes() for a in enumerate_adjacency(d)}
    oracle = {a.astype(int).tobytes() for a in brute_force_dags(d)}
    assert len(enumerate_adjacency(d)) == len(ours)
    assert ours == oracle


@pytest.mark.parametrize("d", [1, 2, 3, 4, 5])
def test_enumeration_matches_robinson(d):
    assert len(enumerate_adjacency(d)) == robinson_count(d)


def test_enumeration_order_is_lexicographic():
    codes = [g.code for g in enumerate_dags(3)]
    assert codes == sorted(codes)
    assert [g.code for g in enumerate_dags(3)] == codes


def test_enumeration_guard():
    with pytest.raises(DimensionTooLarge):
        enumerate_dags(7)


@pytest.mark.slow
def test_enumeration_d6():
    assert len(enumerate_adjacency(6)) == robinson_count(6) == 3781503


def test_shd_examples():
    g = Dag.from_edges(3, [(0, 1), (1, 2)])
    assert shd(g, g) == 0
    assert shd(Dag.from_edges(2, [(0, 1)]), Dag.from_edges(2, [(1, 0)])) == 1
    assert shd(g, Dag.empty(3)) == 2
    with pytest.raises(DimensionMismatch):
        shd(g, Dag.empty(2))


dag4 = st.integers(0, 542)


@settings(max_examples=200, deadline=None)
@given(dag4, dag4, dag4)
def test_shd_is_a_metric(i, j, k):
    dags = enumerate_dags(4)
    a, b, c = dags[i], dags[j], dags[k]
    assert shd(a, b) == shd(b, a)
    assert (shd(a, b) == 0) == (a == b)
    assert shd(a, c) <= shd(a, b) + shd(b, c)
    assert 0 <= shd(a, b) <= 6


def test_cpdag_examples():
    chain = cpdag_of(Dag.from_edges(3, [(0, 1), (1, 2)]))
    assert not chain.directed.any()
    assert chain.undirected[0, 1] and chain.undirected[1, 2] and not chain.undirected[0, 2]
    collider = cpdag_of(Dag.from_edges(3, [(0, 2), (1, 2)]))
    assert collider.directed[0, 2] and collider.directed[1, 2] and not collider.undirected.any()
    empty = cpdag_of(Dag.empty(3))
    assert not empty.directed.any() and not empty.undirected.any()


def test_cpdag_shd_examples():
    a, b = cpdag_of(Dag.from_edges(2, [(0, 1)])), cpdag_of(Dag.from_edges(2, [(1, 0)]))
    assert cpdag_shd(a, a) == 0
    assert cpdag_shd(a, b) == 0
    assert cpdag_shd(a, cpdag_of(Dag.empty(2))) == 1


def test_same_mec_examples():
    assert same_mec(Dag.from_edges(2, [(0, 1)]), Dag.from_edges(2, [(1, 0)]))
    collider = Dag.from_edges(3, [(0, 2), (1, 2)])
    assert not same_mec(collider, Dag.from_edges(3, [(0, 2), (2, 1)]))
    assert same_mec(collider, collider)


@pytest.mark.parametrize("d", [3, 4])
def test_cpdag_matches_mec_oracle_exhaustively(d):
    all_adj = brute_force_dags(d)
    dags = enumerate_dags(d)
    classes = {}
    for g in dags:
        c = cpdag_of(g)
        directed, undirected = mec_cpdag(g.edges.astype(int), all_adj)
        assert np.array_equal(c.directed, directed), g
        assert np.array_equal(c.undirected, undirected), g
        classes.setdefault(c, []).append(g)
    # known MEC counts: 11 classes at d=3, 185 at d=4
    assert len(classes) == {3: 11, 4: 185}[d]
    for members in classes.values():
        assert all(same_mec(members[0], h) for h in members)
    reps = [m[0] for m in classes.values()]
    for i, a in enumerate(reps):
        for b in reps[i + 1:]:
            assert not same_mec(a, b)


def test_cpdag_invariants():
    for g in enumerate_dags(4):
        c = cpdag_of(g)
        assert not (c.directed & (c.undirected | c.undirected.T)).any()
        assert np.array_equal(c.undirected, c.undirected.T)
        assert not np.diag(c.directed).any()


def test_er_mean_edge_count():
    rng = np.random.default_rng(0)
    spec = GraphFamilySpec("ER", 5, 1)
    counts = np.array([random_graph(spec, rng).n_edges for _ in range(10_000)])
    # Binomial(10, 0.5): mean 5, sd sqrt(2.5)
    assert abs(counts.mean() - 5.0) < 3 * np.sqrt(2.5 / len(counts))


def test_er_orientation_not_index_biased():
    rng = np.random.default_rng(1)
    spec = GraphFamilySpec("ER", 4, 1)
    lower = upper = 0
    for _ in range(2000):
        e = random_graph(spec, rng).edges
        upper += int(np.triu(e, 1).sum())
        lower += int(np.tril(e, -1).sum())
    assert abs(upper - lower) / (upper + lower) < 0.05


@pytest.mark.parametrize("k", [1, 2])
def test_sf_edge_count_and_connectivity(k):
    for seed in range(30):
        g = random_graph(GraphFamilySpec("SF", 5, k, seed=seed))
        assert g.n_edges == sum(min(k, t) for t in range(1, 5))
        sk = g.edges | g.edges.T
        seen, frontier = {0}, [0]
        while frontier:
            v = frontier.pop()
            for w in np.flatnonzero(sk[v]):
                if int(w) not in seen:
                    seen.add(int(w))
                    frontier.append(int(w))
        assert len(seen) == 5


@pytest.mark.parametrize("family", ["ER", "SF"])
def test_generators_are_reproducible(family):
    spec = GraphFamilySpec(family, 6, 2, seed=11)
    assert random_graph(spec) == random_graph(spec)


def test_spec_validation():
    with pytest.raises(ValueError):
        GraphFamilySpec("ER", 0)
    with pytest.raises(ValueError):
        GraphFamilySpec("ER", 3, 0)
