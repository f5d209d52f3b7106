"""Kozachenko-Leonenko entropy estimation and a likelihood-space posterior embedding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import digamma, gammaln

from .errors import DuplicateSamples, TooFewSamples
from .exact_posterior import PosteriorSampleSet
from .scm import batch_log_likelihood

JITTER_SCALE = 1e-10
MAX_BANDWIDTH_PAIRS = 200_000


@dataclass(frozen=True)
class KlEntropySpec:
    neighbor_order: int = 3
    dim: int | None = None

    def __post_init__(self):
        if self.neighbor_order < 1:
            raise ValueError("neighbor order must be >= 1")
        if self.dim is not None and self.dim < 1:
            raise ValueError("dimension must be >= 1")


def log_unit_ball_volume(p: int) -> float:
    """log c_p with c_p = pi^{p/2} / Gamma(1 + p/2)."""
    return 0.5 * p * np.log(np.pi) - gammaln(1.0 + 0.5 * p)


def kl_entropy(samples, spec: KlEntropySpec | None = None) -> float:
    """Kozachenko-Leonenko differential entropy estimate in nats, Euclidean distances."""
    spec = spec or KlEntropySpec()
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, p = x.shape
    if spec.dim is not None and spec.dim != p:
        raise ValueError(f"expected dimension {spec.dim}, got {p}")
    k = spec.neighbor_order
    if n <= k:
        raise TooFewSamples(f"need more than {k} samples, got {n}")
    dist, _ = cKDTree(x).query(x, k=k + 1)
    eps = dist[:, k]
    if np.any(eps <= 0):
        raise DuplicateSamples(f"{int(np.sum(eps <= 0))} samples have a zero-distance neighbour")
    return float(digamma(n) - digamma(k) + log_unit_ball_volume(p) + p * np.mean(np.log(eps)))


def loglik_matrix(q: PosteriorSampleSet, heldout) -> np.ndarray:
    """ell[h, m] = log p(x_h | G_m, phi_m)."""
    x = heldout.samples if hasattr(heldout, "samples") else np.asarray(heldout, dtype=float)
    return batch_log_likelihood(q.weights, q.noise_vars, x).T


def _median_abs_difference(ell: np.ndarray, rng: np.random.Generator) -> float:
    """Median |ell[h, m] - ell[h', m]| over pairs of held-out points, per posterior sample.

    Large inputs are subsampled to MAX_BANDWIDTH_PAIRS random pairs. Falls back
    to 1 when the median is zero.
    """
    h, m = ell.shape
    if m * h * (h - 1) // 2 <= MAX_BANDWIDTH_PAIRS:
        iu = np.triu_indices(h, 1)
        diffs = np.abs(ell[iu[0], :] - ell[iu[1], :]).ravel()
    else:
        cols = rng.integers(0, m, MAX_BANDWIDTH_PAIRS)
        a = rng.integers(0, h, MAX_BANDWIDTH_PAIRS)
        b = rng.integers(0, h, MAX_BANDWIDTH_PAIRS)
        keep = a != b
        diffs = np.abs(ell[a[keep], cols[keep]] - ell[b[keep], cols[keep]])
    med = float(np.median(diffs)) if diffs.size else 0.0
    return med if med > 0 else 1.0


def likelihood_embedding(ell: np.ndarray, bandwidth: float) -> np.ndarray:
    """e_m = mean_h mean_m' k_RBF(ell[h, m], ell[h, m'])."""
    h, m = ell.shape
    out = np.zeros(m)
    for row in ell:
        diff = row[:, None] - row[None, :]
        out += np.exp(-diff * diff / (2.0 * bandwidth ** 2)).mean(axis=1)
    return out / h


def posterior_entropy(q: PosteriorSampleSet, heldout, spec: KlEntropySpec | None = None, seed=None,
                      bandwidth: float | None = None) -> float:
    """Entropy of the scalar likelihood-kernel embedding of the posterior samples.

    Weighted sets are first resampled to equal weights. If embeddings collide
    (e.g. a point mass), uniform jitter of width 1e-10 is added once, which puts
    the estimate near log(1e-10) ~ -23 nats.
    """
    spec = spec or KlEntropySpec()
    rng = np.random.default_rng(seed)
    q = q.resample(len(q), rng)
    ell = loglik_matrix(q, heldout)
    bw = bandwidth if bandwidth is not None else _median_abs_difference(ell, rng)
    e = likelihood_embedding(ell, bw)
    try:
        return kl_entropy(e, KlEntropySpec(spec.neighbor_order, 1))
    except DuplicateSamples:
        e = e + rng.uniform(0.0, JITTER_SCALE, size=e.shape)
        return kl_entropy(e, KlEntropySpec(spec.neighbor_order, 1))
