"""Linear and clustering baselines: PCA via Jacobi eigendecomposition, k-means++ / Lloyd."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .streams import derive_seed


class BaselineConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# symmetric eigensolver


def _round_robin_pairs(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Tournament schedule: n-1 rounds (n even) of n/2 disjoint index pairs."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        p = np.array(players[: m // 2])
        q = np.array(players[m // 2:][::-1])
        keep = (p < n) & (q < n)
        p, q = p[keep], q[keep]
        lo, hi = np.minimum(p, q), np.maximum(p, q)
        rounds.append((lo, hi))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def jacobi_eigh(a: np.ndarray, tol: float = 1e-12, max_sweeps: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Each sweep visits every off-diagonal pair once, in round-robin order so
    that the n/2 rotations of a round touch disjoint rows and columns and can
    be applied together.  Stops when the off-diagonal Frobenius norm falls
    below ``tol`` times the matrix norm.

    Returns eigenvalues in descending order and the matching eigenvectors as
    columns.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    if a.ndim != 2 or a.shape[1] != n:
        raise ValueError("jacobi_eigh needs a square matrix")
    if not np.allclose(a, a.T, atol=1e-10 * max(1.0, np.abs(a).max())):
        raise ValueError("matrix is not symmetric")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    if n == 1:
        return a.diagonal().copy(), v
    scale = np.linalg.norm(a)
    if scale == 0:
        return np.zeros(n), v
    rounds = _round_robin_pairs(n)
    for _ in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off <= tol * scale:
            break
        for p, q in rounds:
            apq = a[p, q]
            active = np.abs(apq) > 1e-300
            if not np.any(active):
                continue
            p, q, apq = p[active], q[active], apq[active]
            app, aqq = a[p, p], a[q, q]
            theta = (aqq - app) / (2.0 * apq)
            t = np.sign(theta) / (np.abs(theta) + np.hypot(theta, 1.0))
            t[theta == 0] = 1.0
            c = 1.0 / np.hypot(t, 1.0)
            s = t * c
            # rotate columns p, q then rows p, q (A <- J^T A J)
            ap, aq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = c * ap - s * aq
            a[:, q] = s * ap + c * aq
            ap, aq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * ap - s[:, None] * aq
            a[q, :] = s[:, None] * ap + c[:, None] * aq
            a[p, q] = 0.0
            a[q, p] = 0.0
            vp, vq = v[:, p].copy(), v[:, q].copy()
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
    else:
        warnings.warn("jacobi_eigh did not reach tolerance", RuntimeWarning, stacklevel=2)
    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]


# ---------------------------------------------------------------------------
# PCA


@dataclass
class PcaModel:
    mean: np.ndarray            # (D,)
    components: np.ndarray      # (D, p), orthonormal columns
    explained_variance: np.ndarray  # (p,), descending
    rank_deficient: bool = False

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.components

    def inverse_transform(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z) @ self.components.T + self.mean


def pca_fit(x: np.ndarray, p: int, rank_tol: float = 1e-10) -> PcaModel:
    """Principal components of ``x`` (N x D).

    Uses the N x N Gram matrix when N < D and the D x D covariance otherwise.
    Components whose variance is negligible are dropped and the model is
    flagged ``rank_deficient``.
    """
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    if not 1 <= p <= min(n, d):
        raise BaselineConfigError(f"p={p} must be in [1, min(N, D)={min(n, d)}]")
    mean = x.mean(axis=0)
    xc = x - mean
    denom = max(n - 1, 1)
    if n < d:
        w, u = jacobi_eigh(xc @ xc.T / denom)
        w, u = w[:p], u[:, :p]
        keep = w > rank_tol * max(w[0], 1e-300)
        w, u = w[keep], u[:, keep]
        comps = xc.T @ u / np.sqrt(w * denom)
    else:
        w, vecs = jacobi_eigh(xc.T @ xc / denom)
        w, comps = w[:p], vecs[:, :p]
        keep = w > rank_tol * max(w[0], 1e-300)
        w, comps = w[keep], comps[:, keep]
    # deterministic sign: largest-magnitude loading positive
    flip = np.sign(comps[np.abs(comps).argmax(axis=0), np.arange(comps.shape[1])])
    flip[flip == 0] = 1.0
    comps = comps * flip
    return PcaModel(mean=mean, components=comps, explained_variance=np.maximum(w, 0.0),
                    rank_deficient=bool(comps.shape[1] < p))


# ---------------------------------------------------------------------------
# k-means


@dataclass
class KMeansResult:
    centroids: np.ndarray   # (k, p)
    assignments: np.ndarray  # (N,)
    inertia: float
    n_iter: int
    restarts_used: int
    inertia_trace: list | None = None


def _sq_dists(x: np.ndarray, c: np.ndarray, x_sq: np.ndarray | None = None) -> np.ndarray:
    x_sq = (x * x).sum(axis=1) if x_sq is None else x_sq
    d = x_sq[:, None] - 2.0 * (x @ c.T) + (c * c).sum(axis=1)[None, :]
    return np.maximum(d, 0.0)


def kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    idx = [int(rng.integers(n))]
    closest = ((x - x[idx[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            # all remaining points coincide with a centre
            choice = int(rng.choice(np.setdiff1d(np.arange(n), idx)))
        else:
            choice = int(rng.choice(n, p=closest / total))
        idx.append(choice)
        closest = np.minimum(closest, ((x - x[choice]) ** 2).sum(axis=1))
    return x[idx].copy()


def _lloyd(x, centroids, max_iter, tol):
    x_sq = (x * x).sum(axis=1)
    k = centroids.shape[0]
    trace = []
    prev = np.inf
    for it in range(1, max_iter + 1):
        d = _sq_dists(x, centroids, x_sq)
        labels = d.argmin(axis=1)
        counts = np.bincount(labels, minlength=k)
        for j in np.flatnonzero(counts == 0):
            # repair: move the empty centroid onto the point farthest from its centroid
            far = int(d[np.arange(len(x)), labels].argmax())
            labels[far] = j
            d[far] = 0.0
            counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, x)
        centroids = sums / counts[:, None]
        inertia = float(((x - centroids[labels]) ** 2).sum())
        trace.append(inertia)
        if prev < np.inf and abs(prev - inertia) <= tol * max(prev, 1e-300):
            break
        prev = inertia
    # final assignment against the final centroids
    labels = _sq_dists(x, centroids, x_sq).argmin(axis=1)
    if len(np.unique(labels)) == k:
        inertia = float(((x - centroids[labels]) ** 2).sum())
    return centroids, labels, inertia, it, trace


def kmeans(x: np.ndarray, k: int, seed: int = 0, n_restarts: int = 10, max_iter: int = 300,
           tol: float = 1e-6) -> KMeansResult:
    """Best of ``n_restarts`` k-means++ seeded Lloyd runs (lowest inertia)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if not 1 <= k <= n:
        raise BaselineConfigError(f"k={k} must be in [1, N={n}]")
    best = None
    for r in range(n_restarts):
        rng = np.random.default_rng(derive_seed(seed, "kmeans", r))
        c0 = kmeans_pp_init(x, k, rng)
        c, labels, inertia, it, trace = _lloyd(x, c0, max_iter, tol)
        if best is None or inertia < best.inertia:
            best = KMeansResult(c, labels, inertia, it, n_restarts, trace)
    return best


def pca_kmeans_pipeline(x: np.ndarray, p: int, k: int, seed: int = 0) -> np.ndarray:
    p = min(p, *x.shape)
    model = pca_fit(x, p)
    return kmeans(model.transform(x), k, seed).assignments
