"""Closed-form posterior over linear Gaussian SCMs by exhaustive DAG enumeration.

Parameters of every node follow a Normal-Inverse-Gamma model:
sigma_j^2 ~ InvGamma(alpha, beta), gamma_j | sigma_j^2 ~ N(mu_j, sigma_j^2 Lambda_j^{-1}).
With ``homoscedastic=True`` all nodes share one sigma^2 instead, which makes the
DAG (not only its Markov equivalence class) identifiable. Either way a DAG's
score is assembled from at most ``d * 2**(d-1)`` cached (node, parent set) terms.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp, multigammaln

from .errors import DimensionTooLarge, SingularPrecision
from .graphs import (
    MAX_ENUM_DIM,
    Dag,
    adjacency_to_parent_masks,
    enumerate_parent_masks,
    parent_masks_to_adjacency,
    validate_dag,
)
from .scm import LOG_2PI, Dataset, LinearGaussianScm, Scenario


def _as_samples(data) -> np.ndarray:
    if isinstance(data, Dataset):
        if data.intervention is not None:
            raise ValueError("posterior computations use observational data only")
        return data.samples
    x = np.asarray(data, dtype=float)
    if x.ndim != 2:
        raise ValueError("data must be an (N, d) matrix")
    return x


def _mask_members(mask: int, d: int) -> list[int]:
    return [i for i in range(d) if (mask >> i) & 1]


@dataclass(frozen=True, eq=False)
class NigPrior:
    """Normal-Inverse-Gamma prior shared by all nodes.

    ``mean[i, j]`` is the prior mean of the weight ``i -> j`` and ``precision[j]``
    a (d, d) matrix whose parent sub-block is Lambda_j. ``beta`` may be a scalar
    or one value per node. ``None`` means zeros / identity. ``homoscedastic``
    ties the noise variances of all nodes to a single sigma^2.
    """

    alpha: float = 4.0
    beta: float | np.ndarray = 0.5
    mean: np.ndarray | None = None
    precision: np.ndarray | None = None
    homoscedastic: bool = False

    def __post_init__(self):
        if self.alpha <= 0 or np.any(np.asarray(self.beta) <= 0):
            raise ValueError("alpha and beta must be positive")

    def node_beta(self, j: int) -> float:
        b = np.asarray(self.beta, dtype=float)
        return float(b) if b.ndim == 0 else float(b[j])

    def block(self, node: int, parents, d: int) -> tuple[np.ndarray, np.ndarray]:
        parents = list(parents)
        mu = np.zeros(len(parents)) if self.mean is None else np.asarray(self.mean, float)[parents, node]
        if self.precision is None:
            lam = np.eye(len(parents))
        else:
            lam = np.asarray(self.precision, float)[node][np.ix_(parents, parents)]
        return mu, lam


def scenario_prior(scenario, **overrides) -> NigPrior:
    """Default prior for a data scenario: a shared noise variance when identifiable."""
    homoscedastic = Scenario(scenario) is Scenario.IDENTIFIABLE
    return NigPrior(homoscedastic=homoscedastic, **overrides)


@dataclass(frozen=True, eq=False)
class NigPosterior:
    node: int
    parents: tuple[int, ...]
    precision: np.ndarray
    mean: np.ndarray
    alpha: float
    beta: float


def _logdet_spd(a: np.ndarray) -> float:
    if a.size == 0:
        return 0.0
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise SingularPrecision("precision matrix is not positive definite") from exc
    return 2.0 * float(np.log(np.diag(chol)).sum())


def _nig_from_stats(gram: np.ndarray, n: int, node: int, parents, prior: NigPrior, d: int):
    """Per-node conjugate update from the Gram matrix X^T X.

    Returns the posterior block, the node's own log evidence (independent
    variances), and the pieces needed for the shared-variance evidence:
    ``0.5 * (log det Lambda - log det Lambda')`` and the quadratic term
    ``0.5 * (X_j^T X_j + mu^T Lambda mu - mu'^T Lambda' mu')``.
    """
    parents = list(parents)
    mu, lam = prior.block(node, parents, d)
    beta = prior.node_beta(node)
    lam_post = gram[np.ix_(parents, parents)] + lam
    rhs = lam @ mu + gram[parents, node]
    if parents:
        try:
            chol = np.linalg.cholesky(lam_post)
        except np.linalg.LinAlgError as exc:
            raise SingularPrecision(f"posterior precision of node {node} is singular") from exc
        mu_post = np.linalg.solve(lam_post, rhs)
        logdet_post = 2.0 * float(np.log(np.diag(chol)).sum())
    else:
        mu_post = np.zeros(0)
        logdet_post = 0.0
    half_logdet = 0.5 * (_logdet_spd(lam) - logdet_post)
    quad = 0.5 * float(gram[node, node] + mu @ lam @ mu - mu_post @ lam_post @ mu_post)
    alpha_post = prior.alpha + 0.5 * n
    beta_post = beta + quad
    if beta_post <= 0:
        raise SingularPrecision(f"non-positive posterior scale for node {node}")
    log_ev = (-0.5 * n * LOG_2PI + half_logdet
              + prior.alpha * np.log(beta) - alpha_post * np.log(beta_post)
              + gammaln(alpha_post) - gammaln(prior.alpha))
    post = NigPosterior(node, tuple(parents), lam_post, mu_post, alpha_post, float(beta_post))
    return post, float(log_ev), half_logdet, quad


def _shared_log_evidence(half_logdet_sum, quad_sum, n: int, d: int, prior: NigPrior):
    """Evidence when one sigma^2 ~ InvGamma(alpha, beta) is shared by all d nodes."""
    alpha_post = prior.alpha + 0.5 * n * d
    beta0 = prior.node_beta(0)
    return (-0.5 * n * d * LOG_2PI + half_logdet_sum + prior.alpha * np.log(beta0)
            - alpha_post * np.log(beta0 + quad_sum) + gammaln(alpha_post) - gammaln(prior.alpha))


def nig_update(data, graph: Dag, node: int, prior: NigPrior | None = None) -> NigPosterior:
    """Conjugate update of node ``node``'s (weights, noise variance) given its parents in ``graph``.

    This is the per-node update; with a shared variance the (alpha', beta') of
    the whole graph are available from :meth:`ExactPosterior.nig`.
    """
    prior = prior or NigPrior()
    x = _as_samples(data)
    post, *_ = _nig_from_stats(x.T @ x, x.shape[0], node, graph.parents(node), prior, graph.d)
    return post


def log_marginal_likelihood(data, graph: Dag, prior: NigPrior | None = None) -> float:
    """log p(D | G) with weights and noise variance(s) integrated out."""
    prior = prior or NigPrior()
    x = _as_samples(data)
    n, d = x.shape
    gram = x.T @ x
    parts = [_nig_from_stats(gram, n, j, graph.parents(j), prior, d) for j in range(d)]
    if prior.homoscedastic:
        return float(_shared_log_evidence(sum(p[2] for p in parts), sum(p[3] for p in parts), n, d, prior))
    return float(sum(p[1] for p in parts))


# ---------------------------------------------------------------------------
# local score tables


@dataclass(frozen=True, eq=False)
class LocalTable:
    """NIG posterior blocks for every (node, parent mask), padded to full d-vectors.

    Entries whose mask contains the node itself are unused.
    """

    d: int
    n: int
    prior: NigPrior
    log_evidence: np.ndarray      # (d, 2**d), independent-variance local evidence
    half_logdet: np.ndarray       # (d, 2**d)
    quad: np.ndarray              # (d, 2**d)
    alpha_post: float
    beta_post: np.ndarray         # (d, 2**d)
    mean_post: np.ndarray         # (d, 2**d, d)
    cov_chol: np.ndarray          # (d, 2**d, d, d), Cholesky of Lambda'^{-1}
    precision_post: dict = field(repr=False)

    @property
    def homoscedastic(self) -> bool:
        return self.prior.homoscedastic

    @property
    def shared_alpha_post(self) -> float:
        return self.prior.alpha + 0.5 * self.n * self.d

    def shared_beta_post(self, parent_masks: np.ndarray) -> np.ndarray:
        nodes = np.arange(self.d)[None, :]
        return self.prior.node_beta(0) + self.quad[nodes, parent_masks].sum(axis=-1)

    def dag_log_evidence(self, parent_masks: np.ndarray) -> np.ndarray:
        """log p(D | G) for each row of an (n_dags, d) parent-mask array."""
        masks = np.atleast_2d(np.asarray(parent_masks, dtype=np.int64))
        nodes = np.arange(self.d)[None, :]
        if not self.homoscedastic:
            return self.log_evidence[nodes, masks].sum(axis=1)
        return _shared_log_evidence(self.half_logdet[nodes, masks].sum(axis=1),
                                    self.quad[nodes, masks].sum(axis=1), self.n, self.d, self.prior)

    def posterior(self, node: int, mask: int) -> NigPosterior:
        parents = tuple(_mask_members(mask, self.d))
        return NigPosterior(node, parents, self.precision_post[node, mask],
                            self.mean_post[node, mask, list(parents)],
                            self.alpha_post, float(self.beta_post[node, mask]))


def local_table(data, prior: NigPrior | None = None) -> LocalTable:
    prior = prior or NigPrior()
    x = _as_samples(data)
    n, d = x.shape
    gram = x.T @ x
    size = 1 << d
    log_ev = np.full((d, size), -np.inf)
    half_logdet = np.zeros((d, size))
    quad = np.zeros((d, size))
    beta_post = np.ones((d, size))
    mean_post = np.zeros((d, size, d))
    cov_chol = np.zeros((d, size, d, d))
    precision_post = {}
    for j in range(d):
        for mask in range(size):
            if (mask >> j) & 1:
                continue
            pa = _mask_members(mask, d)
            post, lev, hld, qd = _nig_from_stats(gram, n, j, pa, prior, d)
            log_ev[j, mask] = lev
            half_logdet[j, mask] = hld
            quad[j, mask] = qd
            beta_post[j, mask] = post.beta
            precision_post[j, mask] = post.precision
            if pa:
                mean_post[j, mask, pa] = post.mean
                cov = np.linalg.inv(post.precision)
                cov_chol[j, mask][np.ix_(pa, pa)] = np.linalg.cholesky(0.5 * (cov + cov.T))
    return LocalTable(d, n, prior, log_ev, half_logdet, quad, prior.alpha + 0.5 * n, beta_post,
                      mean_post, cov_chol, precision_post)


def sample_parameters(table: LocalTable, parent_masks: np.ndarray, rng: np.random.Generator):
    """Draw (weights, noise_vars) for each row of parent masks from the NIG blocks."""
    masks = np.asarray(parent_masks, dtype=np.int64)
    m, d = masks.shape
    nodes = np.arange(d)[None, :]
    if table.homoscedastic:
        shared = table.shared_beta_post(masks) / rng.gamma(table.shared_alpha_post, 1.0, size=m)
        sigma2 = np.repeat(shared[:, None], d, axis=1)
    else:
        sigma2 = table.beta_post[nodes, masks] / rng.gamma(table.alpha_post, 1.0, size=(m, d))
    z = rng.normal(size=(m, d, d))
    chol = table.cov_chol[nodes, masks]                               # (m, d, d, d)
    gamma = table.mean_post[nodes, masks] + np.sqrt(sigma2)[..., None] * np.einsum("mjab,mjb->mja", chol, z)
    weights = np.swapaxes(gamma, 1, 2)                                # column j holds node j's weights
    weights = np.where(parent_masks_to_adjacency(masks, d), weights, 0.0)
    return weights, sigma2


# ---------------------------------------------------------------------------
# sample sets


def _batch_acyclic(adj: np.ndarray) -> bool:
    a = adj.astype(np.int64)
    p = a.copy()
    for _ in range(a.shape[-1]):
        if np.any(np.trace(p, axis1=-2, axis2=-1)):
            return False
        p = np.minimum(p @ a, 1)
    return True


@dataclass(frozen=True, eq=False)
class PosteriorSampleSet:
    """M draws of (DAG, weight matrix, noise variances), optionally importance weighted."""

    adjacency: np.ndarray
    weights: np.ndarray
    noise_vars: np.ndarray
    sample_weights: np.ndarray | None = None
    source: str = "exact"

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=bool)
        w = np.asarray(self.weights, dtype=float)
        s = np.asarray(self.noise_vars, dtype=float)
        if adj.ndim != 3 or adj.shape[0] < 1:
            raise ValueError("need at least one sample")
        if w.shape != adj.shape or s.shape != adj.shape[:2]:
            raise ValueError("inconsistent sample shapes")
        if np.any(w[~adj] != 0) or np.any(s <= 0):
            raise ValueError("weights off the graph or non-positive variances")
        if not _batch_acyclic(adj):
            raise ValueError("sample set contains a cyclic graph")
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "noise_vars", s)
        if self.sample_weights is not None:
            p = np.asarray(self.sample_weights, dtype=float)
            if p.shape != (adj.shape[0],) or np.any(p < 0) or p.sum() <= 0:
                raise ValueError("sample weights must be nonnegative with positive sum")
            object.__setattr__(self, "sample_weights", p / p.sum())

    def __len__(self) -> int:
        return self.adjacency.shape[0]

    @property
    def d(self) -> int:
        return self.adjacency.shape[1]

    @property
    def probs(self) -> np.ndarray:
        if self.sample_weights is None:
            return np.full(len(self), 1.0 / len(self))
        return self.sample_weights

    def graphs(self) -> list[Dag]:
        return [validate_dag(a) for a in self.adjacency]

    def scm(self, k: int) -> LinearGaussianScm:
        return LinearGaussianScm(validate_dag(self.adjacency[k]), self.weights[k], self.noise_vars[k])

    def subset(self, idx) -> "PosteriorSampleSet":
        return PosteriorSampleSet(self.adjacency[idx], self.weights[idx], self.noise_vars[idx],
                                  None, self.source)

    def resample(self, m: int, rng: np.random.Generator) -> "PosteriorSampleSet":
        """Unweighted set of ``m`` draws; an unweighted set of size ``m`` is returned as-is."""
        if self.sample_weights is None and len(self) == m:
            return self
        idx = rng.choice(len(self), size=m, p=self.probs)
        return self.subset(idx)

    @classmethod
    def point_mass(cls, scm: LinearGaussianScm, m: int = 1, source: str = "point_mass"):
        return cls(np.repeat(scm.graph.edges[None], m, axis=0),
                   np.repeat(scm.weights[None], m, axis=0),
                   np.repeat(scm.noise_vars[None], m, axis=0), None, source)


# ---------------------------------------------------------------------------
# the exact posterior


@dataclass(frozen=True, eq=False)
class ExactPosterior:
    d: int
    parent_masks: np.ndarray
    log_weights: np.ndarray
    table: LocalTable

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @functools.cached_property
    def adjacency(self) -> np.ndarray:
        return parent_masks_to_adjacency(self.parent_masks, self.d)

    @property
    def dags(self) -> list[Dag]:
        return [validate_dag(a) for a in self.adjacency]

    def __len__(self) -> int:
        return self.parent_masks.shape[0]

    @property
    def mode_index(self) -> int:
        return int(np.argmax(self.log_weights))

    def index_of(self, g: Dag) -> int:
        target = adjacency_to_parent_masks(g.edges)
        hits = np.flatnonzero(np.all(self.parent_masks == target, axis=1))
        if not len(hits):
            raise KeyError(g)
        return int(hits[0])

    def nig(self, k: int) -> list[NigPosterior]:
        """Posterior blocks of DAG ``k``; with a shared variance every entry carries the graph-level (alpha', beta')."""
        entries = [self.table.posterior(j, int(self.parent_masks[k, j])) for j in range(self.d)]
        if self.table.homoscedastic:
            a = self.table.shared_alpha_post
            b = float(self.table.shared_beta_post(self.parent_masks[k][None])[0])
            entries = [NigPosterior(e.node, e.parents, e.precision, e.mean, a, b) for e in entries]
        return entries

    def with_log_weights(self, log_weights: np.ndarray) -> "ExactPosterior":
        lw = np.asarray(log_weights, dtype=float)
        return ExactPosterior(self.d, self.parent_masks, lw - logsumexp(lw), self.table)


def exact_graph_posterior(data, prior: NigPrior | None = None, graph_prior: str = "uniform",
                          score: str = "nig", bge: "BgeParams | None" = None) -> ExactPosterior:
    """Enumerate every DAG and normalize its marginal likelihood.

    ``score="bge"`` replaces the graph weights by BGe scores while keeping the
    NIG parameter blocks for sampling.
    """
    if graph_prior != "uniform":
        raise ValueError(f"unsupported graph prior {graph_prior!r}")
    x = _as_samples(data)
    d = x.shape[1]
    if d > MAX_ENUM_DIM:
        raise DimensionTooLarge(f"exact posterior is limited to d <= {MAX_ENUM_DIM}")
    masks = enumerate_parent_masks(d)
    table = local_table(x, prior)
    if score == "nig":
        lw = table.dag_log_evidence(masks)
    elif score == "bge":
        local = bge_local_table(x, bge)
        lw = local[np.arange(d)[None, :], masks].sum(axis=1)
    else:
        raise ValueError(f"unknown score {score!r}")
    return ExactPosterior(d, masks, lw - logsumexp(lw), table)


def sample_exact(post: ExactPosterior, m: int, seed=None) -> PosteriorSampleSet:
    """Draw G from the graph posterior, then (sigma^2, gamma) from its NIG blocks."""
    if m < 1:
        raise ValueError("m must be >= 1")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(post), size=m, p=post.weights / post.weights.sum())
    masks = post.parent_masks[idx]
    w, s = sample_parameters(post.table, masks, rng)
    return PosteriorSampleSet(parent_masks_to_adjacency(masks, post.d), w, s, None, "exact")


# ---------------------------------------------------------------------------
# BGe


@dataclass(frozen=True)
class BgeParams:
    """Gaussian-Wishart hyperparameters.

    Defaults: alpha_mu = 1, alpha_w = d + 2, prior mean 0 and
    T = t * I with t = alpha_mu (alpha_w - d - 1) / (alpha_mu + 1).
    """

    alpha_mu: float = 1.0
    alpha_w: float | None = None
    mean: np.ndarray | None = None
    t_scale: float | None = None


def _bge_set_scores(x: np.ndarray, params: BgeParams | None) -> np.ndarray:
    """log P(D_Y) for every variable subset Y (indexed by bitmask)."""
    params = params or BgeParams()
    n, d = x.shape
    am = params.alpha_mu
    aw = params.alpha_w if params.alpha_w is not None else d + 2.0
    if aw <= d - 1:
        raise ValueError("alpha_w must exceed d - 1")
    t = params.t_scale if params.t_scale is not None else am * (aw - d - 1) / (am + 1)
    if t <= 0:
        t = 1.0
    nu = np.zeros(d) if params.mean is None else np.asarray(params.mean, float)
    tmat = t * np.eye(d)
    if n > 0:
        xbar = x.mean(axis=0)
        sn = (x - xbar).T @ (x - xbar)
        r = tmat + sn + (n * am / (n + am)) * np.outer(nu - xbar, nu - xbar)
    else:
        r = tmat
    out = np.zeros(1 << d)
    for mask in range(1, 1 << d):
        ys = _mask_members(mask, d)
        k = len(ys)
        a0 = 0.5 * (aw - d + k)
        a1 = 0.5 * (n + aw - d + k)
        out[mask] = (multigammaln(a1, k) - multigammaln(a0, k) - 0.5 * n * k * np.log(np.pi)
                     + 0.5 * k * np.log(am / (am + n))
                     + a0 * _logdet_spd(tmat[np.ix_(ys, ys)]) - a1 * _logdet_spd(r[np.ix_(ys, ys)]))
    return out


def bge_local_table(data, params: BgeParams | None = None) -> np.ndarray:
    """BGe local scores log P(D_{pa+j}) - log P(D_pa) for every (node, parent mask)."""
    x = _as_samples(data)
    d = x.shape[1]
    sets = _bge_set_scores(x, params)
    out = np.full((d, 1 << d), -np.inf)
    for j in range(d):
        for mask in range(1 << d):
            if not (mask >> j) & 1:
                out[j, mask] = sets[mask | (1 << j)] - sets[mask]
    return out


def bge_log_score(data, graph: Dag, params: BgeParams | None = None) -> float:
    """Score-equivalent BGe marginal likelihood of ``graph``."""
    x = _as_samples(data)
    sets = _bge_set_scores(x, params)
    total = 0.0
    for j in range(graph.d):
        pa = sum(1 << i for i in graph.parents(j))
        total += sets[pa | (1 << j)] - sets[pa]
    return float(total)
