"""DAG representation, exhaustive enumeration, Markov equivalence and graph distances.

Adjacency convention: ``edges[i, j] == 1`` means an edge ``i -> j``.
"""

from __future__ import annotations

import enum
import functools
import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CyclicGraph,
    DimensionMismatch,
    DimensionTooLarge,
    NonBinaryMatrix,
    NonSquareMatrix,
)

MAX_DAG_DIM = 16
MAX_ENUM_DIM = 6


def _topological_order(adj: np.ndarray) -> tuple[int, ...] | None:
    """Kahn's algorithm, always popping the smallest available vertex."""
    d = adj.shape[0]
    indeg = adj.sum(axis=0).astype(int)
    ready = [v for v in range(d) if indeg[v] == 0]
    order = []
    while ready:
        v = min(ready)
        ready.remove(v)
        order.append(v)
        for c in np.flatnonzero(adj[v]):
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(int(c))
    if len(order) < d:
        return None
    return tuple(order)


@dataclass(frozen=True, eq=False)
class Dag:
    """Immutable DAG over vertices ``0..d-1``.

    Build through :func:`validate_dag` (or :meth:`from_edges`); the constructor
    itself trusts its arguments.
    """

    edges: np.ndarray
    order: tuple[int, ...]

    @property
    def d(self) -> int:
        return self.edges.shape[0]

    @property
    def n_edges(self) -> int:
        return int(self.edges.sum())

    @property
    def code(self) -> int:
        """Integer whose bits are the flattened adjacency, first entry most significant."""
        return int("".join("1" if b else "0" for b in self.edges.ravel()), 2)

    def parents(self, j: int) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.edges[:, j]))

    def children(self, i: int) -> tuple[int, ...]:
        return tuple(int(j) for j in np.flatnonzero(self.edges[i]))

    def edge_list(self) -> list[tuple[int, int]]:
        return [(int(i), int(j)) for i, j in zip(*np.nonzero(self.edges))]

    @classmethod
    def from_edges(cls, d: int, edges) -> "Dag":
        adj = np.zeros((d, d), dtype=np.int8)
        for i, j in edges:
            adj[i, j] = 1
        return validate_dag(adj)

    @classmethod
    def empty(cls, d: int) -> "Dag":
        return validate_dag(np.zeros((d, d), dtype=np.int8))

    def __eq__(self, other):
        if not isinstance(other, Dag):
            return NotImplemented
        return self.edges.shape == other.edges.shape and bool(np.array_equal(self.edges, other.edges))

    def __hash__(self):
        return hash((self.d, self.edges.tobytes()))

    def __repr__(self):
        arcs = ", ".join(f"{i}->{j}" for i, j in self.edge_list())
        return f"Dag(d={self.d}, {{{arcs}}})"


def validate_dag(edges) -> Dag:
    """Check a square 0/1 matrix for acyclicity and wrap it as a :class:`Dag`.

    Raises
    ------
    NonSquareMatrix, NonBinaryMatrix, CyclicGraph, DimensionTooLarge
    """
    a = np.asarray(edges)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NonSquareMatrix(f"expected a square matrix, got shape {a.shape}")
    if a.shape[0] > MAX_DAG_DIM:
        raise DimensionTooLarge(f"d={a.shape[0]} exceeds {MAX_DAG_DIM}")
    if a.size and not np.all((a == 0) | (a == 1)):
        raise NonBinaryMatrix("adjacency entries must be 0 or 1")
    adj = a.astype(bool)
    if np.any(np.diag(adj)):
        raise CyclicGraph("self-loop on the diagonal")
    order = _topological_order(adj)
    if order is None:
        raise CyclicGraph("no topological order exists")
    adj = adj.copy()
    adj.flags.writeable = False
    return Dag(adj, order)


def is_acyclic(edges: np.ndarray) -> bool:
    adj = np.asarray(edges, dtype=bool)
    return not np.any(np.diag(adj)) and _topological_order(adj) is not None


# ---------------------------------------------------------------------------
# enumeration


def _ordered_partitions(items: tuple[int, ...]):
    """Yield every ordered set partition of ``items`` as a tuple of tuples."""
    if not items:
        yield ()
        return
    n = len(items)
    for r in range(1, n + 1):
        for first in itertools.combinations(items, r):
            rest = tuple(v for v in items if v not in first)
            for tail in _ordered_partitions(rest):
                yield (first,) + tail


def _subset_masks(nodes, nonempty: bool) -> np.ndarray:
    masks = [0] if not nonempty else []
    for r in range(1, len(nodes) + 1):
        for comb in itertools.combinations(nodes, r):
            masks.append(sum(1 << v for v in comb))
    return np.array(masks, dtype=np.int64)


@functools.lru_cache(maxsize=None)
def _enumerate_parent_masks(d: int) -> np.ndarray:
    """Parent bitmasks (one row per DAG, one column per node) in lexicographic order.

    Each DAG has a unique layering into successive source sets; nodes in a layer
    take a nonempty parent subset of the previous layer plus any subset of the
    earlier layers.
    """
    blocks = []
    for layers in _ordered_partitions(tuple(range(d))):
        options = {}
        earlier: tuple[int, ...] = ()
        prev: tuple[int, ...] = ()
        for k, layer in enumerate(layers):
            for v in layer:
                if k == 0:
                    options[v] = np.zeros(1, dtype=np.int64)
                else:
                    a = _subset_masks(prev, nonempty=True)
                    b = _subset_masks(earlier, nonempty=False)
                    options[v] = (a[:, None] | b[None, :]).ravel()
            earlier = earlier + prev
            prev = layer
        grids = np.meshgrid(*[options[v] for v in range(d)], indexing="ij")
        blocks.append(np.stack([g.ravel() for g in grids], axis=1))
    masks = np.concatenate(blocks, axis=0)
    codes = _codes_from_parent_masks(masks, d)
    return masks[np.argsort(codes, kind="stable")]


def _codes_from_parent_masks(masks: np.ndarray, d: int) -> np.ndarray:
    codes = np.zeros(masks.shape[0], dtype=np.int64)
    for j in range(d):
        for i in range(d):
            bit = (masks[:, j] >> i) & 1
            codes |= bit << (d * d - 1 - (i * d + j))
    return codes


def parent_masks_to_adjacency(masks: np.ndarray, d: int) -> np.ndarray:
    """(n, d) parent bitmasks -> (n, d, d) boolean adjacency."""
    masks = np.asarray(masks, dtype=np.int64)
    bits = (masks[:, None, :] >> np.arange(d)[None, :, None]) & 1
    return bits.astype(bool)


def adjacency_to_parent_masks(adj: np.ndarray) -> np.ndarray:
    """(..., d, d) adjacency -> (..., d) parent bitmasks."""
    adj = np.asarray(adj, dtype=np.int64)
    d = adj.shape[-1]
    weights = (1 << np.arange(d, dtype=np.int64))
    return np.einsum("...ij,i->...j", adj, weights)


def _check_enum_dim(d: int) -> None:
    if d < 1:
        raise ValueError("d must be at least 1")
    if d > MAX_ENUM_DIM:
        raise DimensionTooLarge(f"enumeration is limited to d <= {MAX_ENUM_DIM}, got {d}")


def enumerate_parent_masks(d: int) -> np.ndarray:
    _check_enum_dim(d)
    out = _enumerate_parent_masks(d)
    out.flags.writeable = False
    return out


@functools.lru_cache(maxsize=None)
def _enumerate_adjacency(d: int) -> np.ndarray:
    adj = parent_masks_to_adjacency(_enumerate_parent_masks(d), d)
    adj.flags.writeable = False
    return adj


def enumerate_adjacency(d: int) -> np.ndarray:
    """All DAGs on ``d`` labelled vertices as an ``(n, d, d)`` boolean array."""
    _check_enum_dim(d)
    return _enumerate_adjacency(d)


def enumerate_dags(d: int) -> list[Dag]:
    """Every DAG on ``d`` labelled vertices, ordered lexicographically by flattened adjacency.

    d=6 (3.78M graphs) is allowed but materialising :class:`Dag` objects for it is
    slow; prefer :func:`enumerate_adjacency` there.
    """
    return [validate_dag(a) for a in enumerate_adjacency(d)]


# ---------------------------------------------------------------------------
# random graphs


class GraphFamily(str, enum.Enum):
    ER = "ER"
    SF = "SF"


@dataclass(frozen=True)
class GraphFamilySpec:
    family: GraphFamily
    d: int
    edges_per_node: int = 1
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "family", GraphFamily(str(self.family).upper()
                                                       if not isinstance(self.family, GraphFamily)
                                                       else self.family))
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.edges_per_node < 1:
            raise ValueError("edges_per_node must be >= 1")


def random_graph(spec: GraphFamilySpec, rng: np.random.Generator | None = None) -> Dag:
    """Draw an ER or scale-free DAG.

    ER: each pair of the randomly permuted vertex order gets an edge (earlier ->
    later) with probability ``min(1, 2k/(d-1))``, so the expected edge count is
    ``d*k``. SF: preferential attachment, each new vertex receiving ``k`` edges
    from existing ones; vertices are randomly relabelled afterwards.
    """
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    d, k = spec.d, spec.edges_per_node
    adj = np.zeros((d, d), dtype=np.int8)
    perm = rng.permutation(d)
    if d == 1:
        return validate_dag(adj)
    if spec.family is GraphFamily.ER:
        p = min(1.0, 2.0 * k / (d - 1))
        iu = np.triu_indices(d, 1)
        mask = rng.random(len(iu[0])) < p
        adj[perm[iu[0][mask]], perm[iu[1][mask]]] = 1
    else:
        degree = np.zeros(d)
        for t in range(1, d):
            m = min(k, t)
            w = degree[:t] if degree[:t].sum() > 0 else np.ones(t)
            targets = rng.choice(t, size=m, replace=False, p=w / w.sum())
            for s in targets:
                adj[perm[s], perm[t]] = 1
                degree[s] += 1
            degree[t] += m
    return validate_dag(adj)


# ---------------------------------------------------------------------------
# distances and equivalence classes


def _check_same_d(a, b) -> None:
    if a.d != b.d:
        raise DimensionMismatch(f"d={a.d} vs d={b.d}")


def shd(a: Dag, b: Dag) -> int:
    """Structural Hamming distance; a reversed edge counts once."""
    _check_same_d(a, b)
    return shd_adjacency(a.edges, b.edges)


def shd_adjacency(a: np.ndarray, b: np.ndarray) -> int:
    diff = (a != b) | (a.T != b.T)
    return int(np.triu(diff, 1).sum())


def skeleton(g: Dag) -> np.ndarray:
    return g.edges | g.edges.T


def v_structures(g: Dag) -> frozenset[tuple[int, int, int]]:
    """Unshielded colliders ``i -> k <- j`` as ``(min(i, j), max(i, j), k)``."""
    out = set()
    adj = g.edges
    for k in range(g.d):
        pa = np.flatnonzero(adj[:, k])
        for i, j in itertools.combinations(pa, 2):
            if not adj[i, j] and not adj[j, i]:
                out.add((int(i), int(j), k))
    return frozenset(out)


@dataclass(frozen=True, eq=False)
class Cpdag:
    """Completed PDAG: ``directed`` holds compelled edges, ``undirected`` is symmetric."""

    directed: np.ndarray
    undirected: np.ndarray = field(repr=False)

    @property
    def d(self) -> int:
        return self.directed.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Cpdag):
            return NotImplemented
        return (np.array_equal(self.directed, other.directed)
                and np.array_equal(self.undirected, other.undirected))

    def __hash__(self):
        return hash((self.directed.tobytes(), self.undirected.tobytes()))

    def status(self) -> np.ndarray:
        """Per-pair code: 0 absent, 1 undirected, 2 i->j, 3 j->i (upper triangle meaningful)."""
        s = np.zeros(self.directed.shape, dtype=np.int8)
        s[self.undirected] = 1
        s[self.directed] = 2
        s[self.directed.T] = 3
        return s


def _meek_closure(directed: np.ndarray, undirected: np.ndarray) -> None:
    """Apply Meek rules R1-R4 in place until nothing changes."""
    d = directed.shape[0]

    def adjacent(a, b):
        return directed[a, b] or directed[b, a] or undirected[a, b]

    def orient(a, b):
        undirected[a, b] = undirected[b, a] = False
        directed[a, b] = True

    changed = True
    while changed:
        changed = False
        for a, b in zip(*np.nonzero(np.triu(undirected, 1))):
            for x, y in ((a, b), (b, a)):
                if not undirected[x, y]:
                    break
                # R1: z -> x - y, z and y nonadjacent
                if any(directed[z, x] and not adjacent(z, y) for z in range(d) if z != y):
                    orient(x, y)
                    changed = True
                    break
                # R2: x -> z -> y with x - y
                if any(directed[x, z] and directed[z, y] for z in range(d)):
                    orient(x, y)
                    changed = True
                    break
                # R3: x - z1 -> y, x - z2 -> y, z1 and z2 nonadjacent
                zs = [z for z in range(d) if undirected[x, z] and directed[z, y]]
                if any(not adjacent(z1, z2) for z1, z2 in itertools.combinations(zs, 2)):
                    orient(x, y)
                    changed = True
                    break
                # R4: x - z, z -> w -> y, z and y nonadjacent, x adjacent to w
                hit = False
                for z in range(d):
                    if not undirected[x, z] or adjacent(z, y):
                        continue
                    for w in range(d):
                        if directed[z, w] and directed[w, y] and adjacent(x, w):
                            hit = True
                            break
                    if hit:
                        break
                if hit:
                    orient(x, y)
                    changed = True
                    break


@functools.lru_cache(maxsize=200_000)
def _cpdag_cached(d: int, raw: bytes) -> Cpdag:
    adj = np.frombuffer(raw, dtype=bool).reshape(d, d)
    directed = np.zeros((d, d), dtype=bool)
    undirected = adj | adj.T
    for k in range(d):
        pa = np.flatnonzero(adj[:, k])
        for i, j in itertools.combinations(pa, 2):
            if not (adj[i, j] or adj[j, i]):
                for p in (i, j):
                    directed[p, k] = True
                    undirected[p, k] = undirected[k, p] = False
    _meek_closure(directed, undirected)
    directed.flags.writeable = False
    undirected.flags.writeable = False
    return Cpdag(directed, undirected)


def cpdag_of(g: Dag) -> Cpdag:
    """CPDAG of ``g``: skeleton plus v-structures, closed under Meek's rules."""
    return _cpdag_cached(g.d, np.ascontiguousarray(g.edges, dtype=bool).tobytes())


def cpdag_of_adjacency(adj: np.ndarray) -> Cpdag:
    adj = np.ascontiguousarray(adj, dtype=bool)
    return _cpdag_cached(adj.shape[0], adj.tobytes())


def cpdag_shd(a: Cpdag, b: Cpdag) -> int:
    """Number of vertex pairs whose CPDAG status (absent/undirected/either direction) differs."""
    _check_same_d(a, b)
    sa, sb = a.status(), b.status()
    return int(np.triu(sa != sb, 1).sum())


def same_mec(a: Dag, b: Dag) -> bool:
    """Verma-Pearl: identical skeleton and identical v-structures."""
    _check_same_d(a, b)
    return bool(np.array_equal(skeleton(a), skeleton(b))) and v_structures(a) == v_structures(b)
