"""Approximate posteriors of controllable fidelity built around the exact one."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .exact_posterior import (
    ExactPosterior,
    NigPrior,
    PosteriorSampleSet,
    _as_samples,
    local_table,
    sample_exact,
    sample_parameters,
)
from .graphs import adjacency_to_parent_masks, is_acyclic, parent_masks_to_adjacency


class ModelKind(str, enum.Enum):
    EXACT = "exact"
    TEMPERED = "tempered"
    TOPK = "topk"
    EDGE_NOISE = "edge_noise"
    BOOTSTRAP = "bootstrap"


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind
    parameter: float = 1.0
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        p = self.parameter
        if self.kind is ModelKind.TEMPERED and not p > 0:
            raise ValueError("temperature must be positive")
        if self.kind in (ModelKind.TOPK, ModelKind.BOOTSTRAP) and (p < 1 or p != int(p)):
            raise ValueError(f"{self.kind.value} needs an integer parameter >= 1")
        if self.kind is ModelKind.EDGE_NOISE and not 0 <= p <= 1:
            raise ValueError("flip probability must lie in [0, 1]")

    @property
    def label(self) -> str:
        p = int(self.parameter) if self.parameter == int(self.parameter) else self.parameter
        return f"{self.kind.value}[{p}]"


def tempered_posterior(post: ExactPosterior, tau: float) -> ExactPosterior:
    """Scale graph log-weights by 1/tau and renormalize; parameter blocks are untouched."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    return post.with_log_weights(post.log_weights / tau)


def topk_posterior(post: ExactPosterior, k: int) -> ExactPosterior:
    """Keep the k heaviest DAGs (ties broken by enumeration order)."""
    k = int(k)
    order = np.argsort(-post.log_weights, kind="stable")[:k]
    lw = np.full(len(post), -np.inf)
    lw[order] = post.log_weights[order]
    return post.with_log_weights(lw)


def _flip_edges(adj: np.ndarray, rho: float, rng: np.random.Generator) -> np.ndarray:
    """Flip each off-diagonal indicator with probability rho, never creating a cycle.

    Rejected flips are retried after the others (a later flip can break the
    cycle), for at most d**2 attempts in total.
    """
    d = adj.shape[0]
    out = adj.copy()
    pairs = [(i, j) for i in range(d) for j in range(d) if i != j]
    chosen = rng.random(len(pairs)) < rho
    pending = [pairs[k] for k in rng.permutation(len(pairs)) if chosen[k]]
    attempts = 0
    while pending and attempts < d * d:
        retry = []
        for i, j in pending:
            attempts += 1
            out[i, j] = not out[i, j]
            if out[i, j] and not is_acyclic(out):
                out[i, j] = False
                retry.append((i, j))
            if attempts >= d * d:
                break
        if len(retry) == len(pending):
            break
        pending = retry
    return out


def corrupted_samples(post: ExactPosterior, spec: ModelSpec, m: int, seed=None) -> PosteriorSampleSet:
    """Sample a TopK-truncated posterior or edge-flipped exact draws."""
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    if spec.kind is ModelKind.TOPK:
        out = sample_exact(topk_posterior(post, int(spec.parameter)), m, rng)
        return PosteriorSampleSet(out.adjacency, out.weights, out.noise_vars, None, spec.label)
    if spec.kind is not ModelKind.EDGE_NOISE:
        raise ValueError(f"{spec.kind.value} is not a corruption model")
    base = sample_exact(post, m, rng)
    adj = np.array([_flip_edges(a, spec.parameter, rng) for a in base.adjacency])
    changed = np.flatnonzero(np.any(adj != base.adjacency, axis=(1, 2)))
    weights, noise = base.weights.copy(), base.noise_vars.copy()
    if len(changed):
        masks = adjacency_to_parent_masks(adj[changed])
        weights[changed], noise[changed] = sample_parameters(post.table, masks, rng)
    return PosteriorSampleSet(adj, weights, noise, None, spec.label)


def _single_edge_moves(masks: np.ndarray, d: int):
    for i in range(d):
        for j in range(d):
            if i == j:
                continue
            if (masks[j] >> i) & 1:
                removed = masks.copy()
                removed[j] &= ~(1 << i)
                yield removed
                reversed_ = removed.copy()
                reversed_[i] |= 1 << j
                yield reversed_
            elif not (masks[i] >> j) & 1:
                added = masks.copy()
                added[j] |= 1 << i
                yield added


def hill_climb(score, d: int) -> np.ndarray:
    """Greedy search over single-edge additions, removals and reversals from the empty graph.

    ``score`` maps a (k, d) array of parent masks to k log scores.
    Returns the parent masks of the first local optimum reached.
    """
    masks = np.zeros(d, dtype=np.int64)
    while True:
        current = score(masks[None])[0]
        best_gain, best = 1e-12, None
        moves = list(_single_edge_moves(masks, d))
        gains = score(np.array(moves)) - current if moves else []
        for cand, gain in zip(moves, gains):
            if gain > best_gain and is_acyclic(parent_masks_to_adjacency(cand[None], d)[0]):
                best_gain, best = gain, cand
        if best is None:
            return masks
        masks = best


def bootstrap_posterior(data, b: int, prior: NigPrior | None = None, seed=None) -> PosteriorSampleSet:
    """Hill-climbing on bootstrap resamples, weighted by evidence on the original data."""
    prior = prior or NigPrior()
    x = _as_samples(data)
    n, d = x.shape
    if n < 2 or b < 1:
        raise ValueError("bootstrap needs N >= 2 and b >= 1")
    rng = np.random.default_rng(seed)
    full = local_table(x, prior)
    masks, weights, noise = [], [], []
    for _ in range(int(b)):
        xb = x[rng.integers(0, n, size=n)]
        table = local_table(xb, prior)
        found = hill_climb(table.dag_log_evidence, d)
        w, s = sample_parameters(table, found[None], rng)
        masks.append(found)
        weights.append(w[0])
        noise.append(s[0])
    masks = np.array(masks)
    lw = full.dag_log_evidence(masks)
    probs = np.exp(lw - logsumexp(lw))
    return PosteriorSampleSet(parent_masks_to_adjacency(masks, d), np.array(weights), np.array(noise),
                              probs, f"{ModelKind.BOOTSTRAP.value}[{int(b)}]")


def realize_model(spec: ModelSpec, post: ExactPosterior, data, m: int, prior: NigPrior | None = None,
                  seed=None) -> PosteriorSampleSet:
    """Materialize any model of the population as a sample set."""
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    if spec.kind is ModelKind.EXACT:
        out = sample_exact(post, m, rng)
    elif spec.kind is ModelKind.TEMPERED:
        out = sample_exact(tempered_posterior(post, spec.parameter), m, rng)
    elif spec.kind in (ModelKind.TOPK, ModelKind.EDGE_NOISE):
        out = corrupted_samples(post, spec, m, rng)
    else:
        return bootstrap_posterior(data, int(spec.parameter), prior, rng)
    return PosteriorSampleSet(out.adjacency, out.weights, out.noise_vars, out.sample_weights, spec.label)
