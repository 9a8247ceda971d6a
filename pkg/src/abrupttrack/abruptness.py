"""Frame-level abrupt-motion detection.

Two scores feed the decision: a global degree from the edge-refined match
error image, and a local degree, the Hellinger distance between Gaussian
mixtures fitted to the target's colors before and after matching.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .imaging import dilate3

COV_FLOOR = 1e-4


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    m = a.max(axis=1)
    m = np.where(np.isfinite(m), m, 0.0)
    return m + np.log(np.exp(a - m[:, None]).sum(axis=1))


def refined_error(gamma: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Divide the match-error image by ``dilate3(edges) + 1``."""
    gamma = np.asarray(gamma, dtype=np.float64)
    edges = np.asarray(edges, dtype=np.float64)
    if gamma.shape != edges.shape:
        raise ValueError(f"shape mismatch {gamma.shape} vs {edges.shape}")
    return gamma / (dilate3(edges) + 1.0)


def global_abrupt_degree(r: np.ndarray) -> float:
    """Mean of ``r`` relative to its maximum; 0 for an all-zero map."""
    r = np.asarray(r, dtype=np.float64)
    peak = r.max() if r.size else 0.0
    if peak <= 0.0:
        return 0.0
    return float(min(1.0, r.sum() / (peak * r.size)))


# --- Gaussian mixtures -------------------------------------------------------


@dataclass(frozen=True)
class Gmm:
    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    @property
    def k(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def component_logpdf(self, x: np.ndarray) -> np.ndarray:
        """``(n, K)`` log densities of each component (unweighted)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        d = self.dim
        out = np.empty((x.shape[0], self.k))
        for j in range(self.k):
            chol = np.linalg.cholesky(self.covs[j])
            z = solve_triangular(chol, (x - self.means[j]).T, lower=True, check_finite=False)
            logdet = 2.0 * np.log(np.diag(chol)).sum()
            out[:, j] = -0.5 * (d * np.log(2 * np.pi) + logdet + (z * z).sum(axis=0))
        return out

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        return _logsumexp_rows(self.component_logpdf(x) + np.log(self.weights))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        counts = rng.multinomial(n, self.weights)
        parts = [
            rng.multivariate_normal(self.means[j], self.covs[j], size=c, method="cholesky")
            for j, c in enumerate(counts)
            if c
        ]
        out = np.concatenate(parts, axis=0)
        return out[rng.permutation(n)]


def _floor_cov(cov: np.ndarray, floor: float = COV_FLOOR) -> np.ndarray:
    # Eigenvalue clipping is the constrained MLE under cov >= floor * I.
    cov = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(cov)
    vals = np.maximum(vals, floor)
    return (vecs * vals) @ vecs.T


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return np.array(centers)


@dataclass
class EmTrace:
    log_likelihood: list
    converged: bool


def fit_gmm(
    samples,
    k: int = 3,
    seed: int = 0,
    max_iter: int = 100,
    tol: float = 1e-6,
    floor: float = COV_FLOOR,
    trace: EmTrace | None = None,
) -> Gmm:
    """EM fit of a ``k``-component full-covariance mixture.

    k-means++ seeding, covariance eigenvalues floored at ``floor``, stops
    when the mean log-likelihood improves by less than ``tol``.  With fewer
    samples than components every sample becomes its own narrow component.
    Pass an :class:`EmTrace` to record the log-likelihood per iteration.
    """
    x = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    n, d = x.shape
    if n == 0:
        raise ValueError("cannot fit a mixture to zero samples")
    if n < k:
        return Gmm(np.full(n, 1.0 / n), x.copy(), np.tile(floor * np.eye(d), (n, 1, 1)))

    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(x, k, rng)
    labels = ((x[:, None, :] - centers[None]) ** 2).sum(axis=2).argmin(axis=1)
    resp = np.zeros((n, k))
    resp[np.arange(n), labels] = 1.0
    # keep every component alive: an empty cluster starts at its seed point
    for j in range(k):
        if resp[:, j].sum() == 0:
            nearest = ((x - centers[j]) ** 2).sum(axis=1).argmin()
            resp[nearest] = 0.0
            resp[nearest, j] = 1.0

    weights, means, covs = _m_step(x, resp, floor)
    history = []
    converged = False
    prev = -np.inf
    for _ in range(max_iter):
        gmm = Gmm(weights, means, covs)
        logp = gmm.component_logpdf(x) + np.log(weights)
        total = _logsumexp_rows(logp)
        ll = float(total.mean())
        history.append(ll)
        if ll - prev < tol:
            converged = True
            break
        prev = ll
        resp = np.exp(logp - total[:, None])
        weights, means, covs = _m_step(x, resp, floor)
    if trace is not None:
        trace.log_likelihood[:] = history
        trace.converged = converged
    return Gmm(weights, means, covs)


def _m_step(x, resp, floor):
    n, d = x.shape
    nk = resp.sum(axis=0)
    nk = np.maximum(nk, 1e-12)
    weights = nk / n
    weights = weights / weights.sum()
    means = (resp.T @ x) / nk[:, None]
    covs = np.empty((len(nk), d, d))
    for j in range(len(nk)):
        diff = x - means[j]
        covs[j] = _floor_cov((resp[:, j, None] * diff).T @ diff / nk[j], floor)
    return weights, means, covs


def bhattacharyya_coefficient_mc(p: Gmm, q: Gmm, n_samples: int = 10_000, seed: int = 0) -> float:
    """Importance-sampled estimate of the integral of sqrt(p q).

    Draws half the samples from each mixture (stratified draw from
    ``(p + q) / 2``); every integrand value lies in [0, 1].
    """
    rng = np.random.default_rng(seed)
    half = n_samples // 2
    x = np.concatenate([p.sample(half, rng), q.sample(n_samples - half, rng)])
    lp = p.logpdf(x)
    lq = q.logpdf(x)
    lm = np.logaddexp(lp, lq) - np.log(2.0)
    return float(np.mean(np.exp(0.5 * (lp + lq) - lm)))


def hellinger_distance(p: Gmm, q: Gmm, seed: int = 0, n_samples: int = 10_000) -> float:
    """Hellinger distance between two mixtures, clamped to [0, 1]."""
    bc = bhattacharyya_coefficient_mc(p, q, n_samples, seed)
    return float(np.sqrt(min(1.0, max(0.0, 1.0 - bc))))


# --- decision ----------------------------------------------------------------


@dataclass(frozen=True)
class AbruptnessReport:
    g: float
    l: float
    a: float
    abrupt: bool


def abruptness_decision(g: float, l: float, threshold: float = 0.2) -> AbruptnessReport:
    """Flag a frame abrupt when ``g > threshold`` or
    ``0.55 + g * (l - 0.45) > 0.5``; equality with 0.5 is not abrupt."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    a = 0.55 + g * (l - 0.45)
    return AbruptnessReport(float(g), float(l), float(a), bool(g > threshold or a > 0.5))
