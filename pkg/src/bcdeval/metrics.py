"""Graph-only and full-posterior evaluation metrics for approximate BCD posteriors."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp
from scipy.stats import rankdata

from .errors import DegenerateLabels, DimensionMismatch, EmptySampleSet
from .exact_posterior import ExactPosterior, PosteriorSampleSet, sample_exact
from .graphs import Dag, cpdag_of, cpdag_of_adjacency, cpdag_shd, shd_adjacency
from .scm import (
    InterventionSpec,
    LinearGaussianScm,
    ancestral_sample,
    batch_log_likelihood,
    joint_gaussian,
    sample,
)

METRIC_NAMES = ("e_shd", "e_cpdag_shd", "auroc", "auprc", "nll", "i_nll", "i_kl", "i_mmd",
                "graph_mmd", "params_mmd")
HIGHER_IS_BETTER = frozenset({"auroc", "auprc"})
DEFAULT_INTERVENTION_VALUES = (2.0,)


@dataclass
class MetricReport:
    values: dict[str, float] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> float:
        return self.values[name]


class KernelKind(str, enum.Enum):
    HAMMING = "hamming"
    RBF = "rbf"


@dataclass(frozen=True)
class KernelSpec:
    """``bandwidth=None`` selects the median heuristic."""

    kind: KernelKind = KernelKind.RBF
    bandwidth: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", KernelKind(self.kind))
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")


# ---------------------------------------------------------------------------
# graph-only metrics


def edge_marginals(q: PosteriorSampleSet) -> np.ndarray:
    """Posterior probability of each directed edge."""
    return np.einsum("m,mij->ij", q.probs, q.adjacency.astype(float))


def expected_graph_distance(q: PosteriorSampleSet, truth: Dag, mode: str = "shd") -> float:
    """E_q[SHD(G, truth)] or the same between CPDAGs (``mode="cpdag_shd"``)."""
    if q.d != truth.d:
        raise DimensionMismatch(f"d={q.d} vs d={truth.d}")
    if mode == "shd":
        dist = [shd_adjacency(a, truth.edges) for a in q.adjacency]
    elif mode == "cpdag_shd":
        ref = cpdag_of(truth)
        dist = [cpdag_shd(cpdag_of_adjacency(a), ref) for a in q.adjacency]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return float(np.dot(q.probs, dist))


def auroc_score(labels: np.ndarray, scores: np.ndarray) -> float:
    """Mann-Whitney AUROC with average ranks for ties."""
    labels = np.asarray(labels, dtype=bool)
    n_pos, n_neg = labels.sum(), (~labels).sum()
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("AUROC needs both positive and negative labels")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def average_precision(labels: np.ndarray, scores: np.ndarray) -> float:
    """Step-interpolated area under the PR curve; tied scores enter as one block."""
    labels = np.asarray(labels, dtype=bool)
    scores = np.asarray(scores, dtype=float)
    n_pos = labels.sum()
    if n_pos == 0:
        raise DegenerateLabels("average precision needs at least one positive")
    ap, tp, fp, prev_recall = 0.0, 0, 0, 0.0
    for s in np.unique(scores)[::-1]:
        block = scores == s
        tp += int(labels[block].sum())
        fp += int((~labels[block]).sum())
        recall = tp / n_pos
        ap += (recall - prev_recall) * tp / (tp + fp)
        prev_recall = recall
    return float(ap)


def threshold_metrics(q: PosteriorSampleSet, truth: Dag) -> tuple[float, float]:
    """(AUROC, AUPRC) of the edge marginals against the true edges, over all d(d-1) ordered pairs."""
    if q.d != truth.d:
        raise DimensionMismatch(f"d={q.d} vs d={truth.d}")
    off = ~np.eye(truth.d, dtype=bool)
    scores = edge_marginals(q)[off]
    labels = truth.edges[off]
    return auroc_score(labels, scores), average_precision(labels, scores)


# ---------------------------------------------------------------------------
# MMD


def _pairwise_distance(x: np.ndarray, y: np.ndarray, kind: KernelKind) -> np.ndarray:
    """Hamming counts for the Hamming kernel, squared Euclidean distances for RBF."""
    if kind is KernelKind.HAMMING:
        xf, yf = x.astype(float), y.astype(float)
        return xf @ (1.0 - yf).T + (1.0 - xf) @ yf.T
    sq = (x * x).sum(1)[:, None] + (y * y).sum(1)[None, :] - 2.0 * x @ y.T
    return np.maximum(sq, 0.0)


def median_bandwidth(dist: np.ndarray, kind: KernelKind) -> float:
    """Median off-diagonal pairwise distance of a pooled distance matrix (1 if that is 0)."""
    iu = np.triu_indices(dist.shape[0], 1)
    vals = dist[iu]
    if kind is KernelKind.RBF:
        vals = np.sqrt(vals)
    med = float(np.median(vals)) if vals.size else 0.0
    return med if med > 0 else 1.0


def _kernel_from_distance(dist: np.ndarray, kind: KernelKind, bandwidth: float) -> np.ndarray:
    if kind is KernelKind.HAMMING:
        return np.exp(-dist / bandwidth)
    return np.exp(-dist / (2.0 * bandwidth ** 2))


MAX_DENSE_POOL = 4000


def _pooled(x, y, kind: KernelKind) -> np.ndarray:
    z = np.concatenate([np.asarray(x).reshape(len(x), -1), np.asarray(y).reshape(len(y), -1)])
    return z.astype(float) if kind is KernelKind.RBF else z


def _bandwidth(z: np.ndarray, kernel: KernelSpec) -> float:
    """Explicit bandwidth, or the median heuristic (over an evenly strided subset for big pools)."""
    if kernel.bandwidth is not None:
        return kernel.bandwidth
    if len(z) > MAX_DENSE_POOL:
        z = z[np.linspace(0, len(z) - 1, MAX_DENSE_POOL).astype(int)]
    return median_bandwidth(_pairwise_distance(z, z, kernel.kind), kernel.kind)


def pooled_kernel(x: np.ndarray, y: np.ndarray, kernel: KernelSpec) -> np.ndarray:
    """Kernel matrix over the concatenation of ``x`` and ``y``."""
    z = _pooled(x, y, kernel.kind)
    return _kernel_from_distance(_pairwise_distance(z, z, kernel.kind), kernel.kind, _bandwidth(z, kernel))


def _mmd2_from_kernel(k: np.ndarray, nx: int) -> float:
    kxx, kyy, kxy = k[:nx, :nx], k[nx:, nx:], k[:nx, nx:]
    ny = k.shape[0] - nx
    xx = (kxx.sum() - np.trace(kxx)) / (nx * (nx - 1))
    yy = (kyy.sum() - np.trace(kyy)) / (ny * (ny - 1))
    return float(xx + yy - 2.0 * kxy.mean())


def _block_sum(a: np.ndarray, b: np.ndarray, kind: KernelKind, bw: float, block: int = 2000) -> float:
    total = 0.0
    for start in range(0, len(a), block):
        total += _kernel_from_distance(_pairwise_distance(a[start:start + block], b, kind), kind, bw).sum()
    return total


def mmd2_u(x, y, kernel: KernelSpec) -> float:
    """Unbiased U-statistic estimate of MMD^2 (may be negative)."""
    if len(x) < 2 or len(y) < 2:
        raise EmptySampleSet("MMD needs at least two samples on each side")
    nx, ny = len(x), len(y)
    if nx + ny <= MAX_DENSE_POOL:
        return _mmd2_from_kernel(pooled_kernel(x, y, kernel), nx)
    z = _pooled(x, y, kernel.kind)
    bw = _bandwidth(z, kernel)
    zx, zy = z[:nx], z[nx:]
    # the diagonal of a kernel matrix is exp(0) = 1 for both kernels
    xx = (_block_sum(zx, zx, kernel.kind, bw) - nx) / (nx * (nx - 1))
    yy = (_block_sum(zy, zy, kernel.kind, bw) - ny) / (ny * (ny - 1))
    return float(xx + yy - 2.0 * _block_sum(zx, zy, kernel.kind, bw) / (nx * ny))


def mmd_u(x, y, kernel: KernelSpec) -> float:
    """sqrt(max(0, MMD^2_u))."""
    return float(np.sqrt(max(0.0, mmd2_u(x, y, kernel))))


def mmd_permutation_test(x, y, kernel: KernelSpec, n_perm: int = 200, seed=None) -> tuple[float, float]:
    """(observed MMD^2_u, 95th percentile of its permutation null).

    The bandwidth is fixed on the pooled sample, so it is shared by all permutations.
    """
    rng = np.random.default_rng(seed)
    k = pooled_kernel(x, y, kernel)
    nx = len(x)
    observed = _mmd2_from_kernel(k, nx)
    null = np.empty(n_perm)
    for b in range(n_perm):
        p = rng.permutation(k.shape[0])
        null[b] = _mmd2_from_kernel(k[np.ix_(p, p)], nx)
    return observed, float(np.quantile(null, 0.95))


def _graph_vectors(q: PosteriorSampleSet) -> np.ndarray:
    return q.adjacency.reshape(len(q), -1)


def params_embedding(q: PosteriorSampleSet) -> np.ndarray:
    """Flattened weighted adjacency followed by log noise variances (length d^2 + d)."""
    return np.concatenate([q.weights.reshape(len(q), -1), np.log(q.noise_vars)], axis=1)


def graph_mmd(q: PosteriorSampleSet, p_exact: ExactPosterior, m: int, seed=None,
              bandwidth: float | None = None) -> float:
    """Hamming-kernel MMD between m graphs from q and m graphs from the exact posterior."""
    rng = np.random.default_rng(seed)
    qs = q.resample(m, rng)
    ps = sample_exact(p_exact, m, rng)
    return mmd_u(_graph_vectors(qs), _graph_vectors(ps), KernelSpec(KernelKind.HAMMING, bandwidth))


def params_mmd(q: PosteriorSampleSet, p_exact: ExactPosterior, m: int, seed=None) -> float:
    """RBF-kernel MMD between joint (G, phi) draws embedded by :func:`params_embedding`."""
    rng = np.random.default_rng(seed)
    qs = q.resample(m, rng)
    ps = sample_exact(p_exact, m, rng)
    return mmd_u(params_embedding(qs), params_embedding(ps), KernelSpec(KernelKind.RBF))


# ---------------------------------------------------------------------------
# likelihood-based metrics


def held_out_nll(q: PosteriorSampleSet, heldout) -> float:
    """-(1/H) sum_h E_q log p(x_h | G, phi), the expectation of log-densities."""
    x = heldout.samples if hasattr(heldout, "samples") else np.asarray(heldout, dtype=float)
    ll = batch_log_likelihood(q.weights, q.noise_vars, x)     # (M, H)
    return float(-(q.probs @ ll).mean())


def _targets_and_values(d: int, values: Sequence[float] | None):
    values = DEFAULT_INTERVENTION_VALUES if values is None else tuple(values)
    return [InterventionSpec(i, float(s)) for i in range(d) for s in values]


def interventional_nll(q: PosteriorSampleSet, truth: LinearGaussianScm, values=None, h: int = 100,
                       seed=None) -> float:
    """Average over targets and values of -E_x E_q log p(x | G, phi, do(X_i = s)).

    With d=1 no coordinate is free under an intervention and the value is 0.
    """
    if truth.d == 1:
        return 0.0
    rng = np.random.default_rng(seed)
    out = []
    for iv in _targets_and_values(truth.d, values):
        x = sample(truth, h, iv, rng).samples
        ll = batch_log_likelihood(q.weights, q.noise_vars, x, exclude=iv.target)
        out.append(-(q.probs @ ll).mean())
    return float(np.mean(out))


def kl_monte_carlo(log_p: np.ndarray, log_q: np.ndarray) -> tuple[float, float]:
    """(mean, standard error) of log p - log q over draws from p."""
    diff = np.asarray(log_p) - np.asarray(log_q)
    se = float(diff.std(ddof=1) / np.sqrt(len(diff))) if len(diff) > 1 else 0.0
    return float(diff.mean()), se


def interventional_kl(q: PosteriorSampleSet, truth: LinearGaussianScm, values=None, mc_n: int = 100,
                      seed=None, return_se: bool = False):
    """Average over targets/values of KL(p(.|do) || q_mix(.|do)), estimated by Monte Carlo.

    q_mix is the probability-weighted mixture of the per-sample interventional
    Gaussians; each per-intervention estimate is clamped at 0.
    """
    if truth.d == 1:
        return (0.0, 0.0) if return_se else 0.0
    rng = np.random.default_rng(seed)
    ests, ses = [], []
    logw = np.log(np.maximum(q.probs, 1e-300))
    for iv in _targets_and_values(truth.d, values):
        p = joint_gaussian(truth, iv)
        free = rng.multivariate_normal(p.mean, p.covariance, size=mc_n, method="cholesky")
        x = np.insert(free, iv.target, iv.value, axis=1)
        log_p = p.logpdf(free)
        log_q = logsumexp(logw[:, None] + batch_log_likelihood(q.weights, q.noise_vars, x, exclude=iv.target),
                          axis=0)
        est, se = kl_monte_carlo(log_p, log_q)
        ests.append(max(0.0, est))
        ses.append(se)
    value = float(np.mean(ests))
    se = float(np.sqrt(np.sum(np.square(ses))) / len(ses))
    return (value, se) if return_se else value


def posterior_predictive_sample(q: PosteriorSampleSet, m: int, intervention: InterventionSpec | None,
                                rng: np.random.Generator) -> np.ndarray:
    """m data points, each from a freshly drawn posterior SCM."""
    idx = rng.choice(len(q), size=m, p=q.probs)
    eps = rng.normal(size=(m, q.d)) * np.sqrt(q.noise_vars[idx])
    return ancestral_sample(q.weights[idx], eps, intervention)


def interventional_mmd(q: PosteriorSampleSet, truth: LinearGaussianScm, values=None, m: int = 100,
                       seed=None) -> float:
    """Average over targets/values of the RBF MMD between true and posterior-induced do-samples."""
    if truth.d == 1:
        return 0.0
    rng = np.random.default_rng(seed)
    out = []
    for iv in _targets_and_values(truth.d, values):
        keep = [j for j in range(truth.d) if j != iv.target]
        x = sample(truth, m, iv, rng).samples[:, keep]
        y = posterior_predictive_sample(q, m, iv, rng)[:, keep]
        out.append(mmd_u(x, y, KernelSpec(KernelKind.RBF)))
    return float(np.mean(out))


# ---------------------------------------------------------------------------


def evaluate_all(q: PosteriorSampleSet, *, truth: LinearGaussianScm, exact: ExactPosterior, heldout,
                 values=None, n_interventional: int = 100, m_mmd: int = 1000, seed=None,
                 metrics: Sequence[str] = METRIC_NAMES) -> MetricReport:
    """Compute the requested metrics, each from its own child seed.

    A metric that raises is recorded as NaN with its error message in the metadata.
    """
    ss = np.random.SeedSequence(seed) if not isinstance(seed, np.random.SeedSequence) else seed
    children = dict(zip(METRIC_NAMES, ss.spawn(len(METRIC_NAMES))))
    report = MetricReport(metadata={"M": len(q), "H": len(heldout.samples),
                                    "intervention_values": list(values or DEFAULT_INTERVENTION_VALUES),
                                    "errors": {}})
    g = truth.graph
    cache: dict = {}

    def thresholds():
        if "thr" not in cache:
            cache["thr"] = threshold_metrics(q, g)
        return cache["thr"]

    fns = {
        "e_shd": lambda s: expected_graph_distance(q, g, "shd"),
        "e_cpdag_shd": lambda s: expected_graph_distance(q, g, "cpdag_shd"),
        "auroc": lambda s: thresholds()[0],
        "auprc": lambda s: thresholds()[1],
        "nll": lambda s: held_out_nll(q, heldout),
        "i_nll": lambda s: interventional_nll(q, truth, values, n_interventional, s),
        "i_kl": lambda s: interventional_kl(q, truth, values, n_interventional, s),
        "i_mmd": lambda s: interventional_mmd(q, truth, values, n_interventional, s),
        "graph_mmd": lambda s: graph_mmd(q, exact, m_mmd, s),
        "params_mmd": lambda s: params_mmd(q, exact, m_mmd, s),
    }
    for name in metrics:
        try:
            report.values[name] = float(fns[name](children[name]))
        except (DegenerateLabels, EmptySampleSet, ValueError, ArithmeticError) as exc:
            report.values[name] = float("nan")
            report.metadata["errors"][name] = f"{type(exc).__name__}: {exc}"
    return report
