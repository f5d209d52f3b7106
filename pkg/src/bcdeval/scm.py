"""Linear Gaussian additive-noise SCMs.

``weights[i, j]`` is the coefficient of ``X_i`` in the equation for ``X_j``, so a
row sample satisfies ``x = x @ W + eps``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateColumn, SingularSystem
from .graphs import Dag

LOG_2PI = float(np.log(2.0 * np.pi))


class Scenario(str, enum.Enum):
    IDENTIFIABLE = "identifiable"
    NON_IDENTIFIABLE = "non_identifiable"


@dataclass(frozen=True, eq=False)
class LinearGaussianScm:
    graph: Dag
    weights: np.ndarray
    noise_vars: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        s = np.asarray(self.noise_vars, dtype=float)
        d = self.graph.d
        if w.shape != (d, d) or s.shape != (d,):
            raise ValueError("weights must be (d, d) and noise_vars (d,)")
        if np.any(w[~self.graph.edges] != 0):
            raise ValueError("nonzero weight outside the graph's edges")
        if np.any(s <= 0):
            raise ValueError("noise variances must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "noise_vars", s)

    @property
    def d(self) -> int:
        return self.graph.d


@dataclass(frozen=True)
class ScmPriorSpec:
    scenario: Scenario = Scenario.IDENTIFIABLE
    weight_variance: float = 2.0
    noise_alpha: float = 4.0
    noise_beta: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        if min(self.weight_variance, self.noise_alpha, self.noise_beta) <= 0:
            raise ValueError("prior hyperparameters must be positive")


@dataclass(frozen=True)
class InterventionSpec:
    target: int
    value: float


@dataclass(frozen=True, eq=False)
class Dataset:
    samples: np.ndarray
    intervention: InterventionSpec | None = None
    standardized: bool = False

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=float)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError("samples must be an (N, d) matrix with N >= 1")
        iv = self.intervention
        if iv is not None:
            if not 0 <= iv.target < x.shape[1]:
                raise ValueError("intervention target out of range")
            if not np.all(x[:, iv.target] == iv.value):
                raise ValueError("intervened column must equal the intervention value")
        object.__setattr__(self, "samples", x)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def d(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True, eq=False)
class GaussianDist:
    mean: np.ndarray
    covariance: np.ndarray
    coords: tuple[int, ...] = field(default=())

    def __post_init__(self):
        c = np.asarray(self.covariance, dtype=float)
        if not np.allclose(c, c.T, atol=1e-10, rtol=0):
            raise ValueError("covariance is not symmetric")
        if c.size and np.linalg.eigvalsh(c).min() < -1e-10:
            raise ValueError("covariance is not positive semidefinite")
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "covariance", c)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.dim == 0:
            return np.zeros(x.shape[0])
        chol = np.linalg.cholesky(self.covariance)
        z = np.linalg.solve(chol, (x - self.mean).T)
        logdet = 2.0 * np.log(np.diag(chol)).sum()
        return -0.5 * (self.dim * LOG_2PI + logdet + (z * z).sum(axis=0))


def draw_scm(graph: Dag, prior: ScmPriorSpec, seed=None) -> LinearGaussianScm:
    """Draw edge weights and noise variances for ``graph`` from the data-generating prior.

    Identifiable: unit noise variances, weights ~ N(0, weight_variance).
    Non-identifiable: sigma_j^2 ~ InvGamma(alpha, beta), and weights into node j
    ~ N(0, sigma_j^2).
    """
    rng = np.random.default_rng(seed)
    d = graph.d
    if prior.scenario is Scenario.IDENTIFIABLE:
        noise = np.ones(d)
        scale = np.full(d, np.sqrt(prior.weight_variance))
    else:
        noise = 1.0 / rng.gamma(prior.noise_alpha, 1.0 / prior.noise_beta, size=d)
        scale = np.sqrt(noise)
    w = rng.normal(size=(d, d)) * scale[None, :]
    w = np.where(graph.edges, w, 0.0)
    return LinearGaussianScm(graph, w, noise)


def ancestral_sample(weights: np.ndarray, noise: np.ndarray, intervention: InterventionSpec | None = None):
    """Propagate noise through one or many linear SCMs.

    ``weights`` is (d, d) or (n, d, d) and ``noise`` is (n, d) holding the raw
    exogenous terms. Uses ``x <- eps + x W`` d times, exact for nilpotent W.
    """
    w = np.array(weights, dtype=float)
    eps = np.array(noise, dtype=float)
    if intervention is not None:
        w[..., :, intervention.target] = 0.0
        eps[:, intervention.target] = intervention.value
    x = eps.copy()
    for _ in range(eps.shape[1]):
        if w.ndim == 2:
            x = eps + x @ w
        else:
            x = eps + np.einsum("ni,nij->nj", x, w)
    return x


def sample(scm: LinearGaussianScm, n: int, intervention: InterventionSpec | None = None,
           seed=None) -> Dataset:
    """Ancestral sampling; a hard intervention clamps its target and drops its noise."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    eps = rng.normal(size=(n, scm.d)) * np.sqrt(scm.noise_vars)
    x = ancestral_sample(scm.weights, eps, intervention)
    return Dataset(x, intervention=intervention)


def joint_gaussian(scm: LinearGaussianScm, intervention: InterventionSpec | None = None) -> GaussianDist:
    """Closed-form distribution of X, or of the non-target coordinates under do()."""
    d = scm.d
    w = scm.weights.copy()
    s = scm.noise_vars.copy()
    shift = np.zeros(d)
    if intervention is not None:
        w[:, intervention.target] = 0.0
        s[intervention.target] = 0.0
        shift[intervention.target] = intervention.value
    try:
        inv = np.linalg.inv(np.eye(d) - w)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem("I - W is not invertible") from exc
    mean = shift @ inv
    cov = inv.T @ np.diag(s) @ inv
    cov = 0.5 * (cov + cov.T)
    if intervention is None:
        return GaussianDist(mean, cov, tuple(range(d)))
    keep = [j for j in range(d) if j != intervention.target]
    return GaussianDist(mean[keep], cov[np.ix_(keep, keep)], tuple(keep))


def batch_log_likelihood(weights: np.ndarray, noise_vars: np.ndarray, x: np.ndarray,
                         exclude: int | None = None) -> np.ndarray:
    """Log-likelihoods of every row of ``x`` under every SCM in a batch.

    weights (M, d, d), noise_vars (M, d), x (H, d) -> (M, H). Node ``exclude``
    contributes no factor (the do-likelihood of an intervened target).
    """
    weights = np.asarray(weights, dtype=float)
    noise_vars = np.asarray(noise_vars, dtype=float)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    pred = np.einsum("hi,mij->mhj", x, weights)
    resid = x[None, :, :] - pred
    terms = -0.5 * (LOG_2PI + np.log(noise_vars)[:, None, :] + resid ** 2 / noise_vars[:, None, :])
    if exclude is not None:
        terms[:, :, exclude] = 0.0
    return terms.sum(axis=2)


def log_likelihood(scm: LinearGaussianScm, x: np.ndarray, exclude: int | None = None):
    """Sum over nodes of log N(x_i; gamma_i^T x_pa(i), sigma_i^2).

    Returns a float for a single sample, an (H,) array for an (H, d) batch.
    """
    x = np.asarray(x, dtype=float)
    out = batch_log_likelihood(scm.weights[None], scm.noise_vars[None], x, exclude)[0]
    return float(out[0]) if x.ndim == 1 else out


def standardize(data: Dataset) -> Dataset:
    """Divide each column by its sample standard deviation (no centring)."""
    x = data.samples
    if x.shape[0] < 2:
        raise ValueError("standardization needs at least two samples")
    var = x.var(axis=0, ddof=1)
    target = data.intervention.target if data.intervention is not None else None
    out = x.copy()
    for j in range(x.shape[1]):
        if var[j] < 1e-12:
            if j == target:
                continue
            raise DegenerateColumn(f"column {j} has (near-)zero variance")
        out[:, j] = x[:, j] / np.sqrt(var[j])
    return replace(data, samples=out, standardized=True)


def rescale(scm: LinearGaussianScm, scale: np.ndarray) -> LinearGaussianScm:
    """The SCM of ``X / scale`` (column-wise), e.g. the truth in standardized units."""
    s = np.asarray(scale, dtype=float)
    if s.shape != (scm.d,) or np.any(s <= 0):
        raise ValueError("scale must be a positive (d,) vector")
    w = scm.weights * s[:, None] / s[None, :]
    return LinearGaussianScm(scm.graph, w, scm.noise_vars / s ** 2)
