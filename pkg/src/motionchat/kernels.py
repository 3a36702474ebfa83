"""Hot numeric kernels: numba-jitted loops with a pure-numpy fallback.

Set ``MOTIONCHAT_DISABLE_NUMBA=1`` to force the numpy path everywhere
(useful for debugging and for ``benchmarks/bench_kernels.py``). With numba
enabled, dispatch is by problem size: the jitted loops win on small
codebooks where BLAS call overhead and distance-matrix temporaries
dominate, while the numpy path (expanded-form distances via GEMM) wins on
large ones. The measured crossover on this hardware sits near
``rows * dim ~ 8k`` per distance target, hence ``_GEMM_CUTOVER``.

The two paths compute the same quantities; they may disagree only on
argmin ties between floating-point-equal distances, which seeded random
inputs do not produce.
"""

import os

import numpy as np

_DISABLED = os.environ.get("MOTIONCHAT_DISABLE_NUMBA", "").lower() in ("1", "true", "yes")
_GEMM_CUTOVER = 8192

try:
    from numba import njit, prange

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dep, but stay importable
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not _DISABLED


def _rq_encode_np(latents, codebook, depth):
    n = latents.shape[0]
    codes = np.empty((n, depth), dtype=np.int64)
    residual = latents.copy()
    sq = np.sum(codebook * codebook, axis=1)
    for d in range(depth):
        # ||r - e||^2 = ||r||^2 - 2 r.e + ||e||^2; the ||r||^2 column is
        # constant per row and does not affect the argmin.
        dist = sq[None, :] - 2.0 * (residual @ codebook.T)
        idx = np.argmin(dist, axis=1)
        codes[:, d] = idx
        residual -= codebook[idx]
    return codes, residual


def _nearest_rows_np(points, centroids):
    sq = np.sum(centroids * centroids, axis=1)
    dist = sq[None, :] - 2.0 * (points @ centroids.T)
    return np.argmin(dist, axis=1)


def _pairwise_sqdist_np(a, b):
    aa = np.sum(a * a, axis=1)[:, None]
    bb = np.sum(b * b, axis=1)[None, :]
    d = aa + bb - 2.0 * (a @ b.T)
    np.maximum(d, 0.0, out=d)
    return d


if HAS_NUMBA:

    @njit(cache=True, parallel=True)
    def _rq_encode_nb(latents, codebook, depth):  # pragma: no cover - exercised via dispatch
        n, dim = latents.shape
        k = codebook.shape[0]
        codes = np.empty((n, depth), dtype=np.int64)
        residual = latents.copy()
        for i in prange(n):
            for d in range(depth):
                best = -1
                best_dist = np.inf
                for c in range(k):
                    acc = 0.0
                    for j in range(dim):
                        diff = residual[i, j] - codebook[c, j]
                        acc += diff * diff
                    if acc < best_dist:
                        best_dist = acc
                        best = c
                codes[i, d] = best
                for j in range(dim):
                    residual[i, j] -= codebook[best, j]
        return codes, residual

    @njit(cache=True, parallel=True)
    def _nearest_rows_nb(points, centroids):  # pragma: no cover - exercised via dispatch
        n, dim = points.shape
        k = centroids.shape[0]
        out = np.empty(n, dtype=np.int64)
        for i in prange(n):
            best = -1
            best_dist = np.inf
            for c in range(k):
                acc = 0.0
                for j in range(dim):
                    diff = points[i, j] - centroids[c, j]
                    acc += diff * diff
                if acc < best_dist:
                    best_dist = acc
                    best = c
            out[i] = best
        return out

    @njit(cache=True, parallel=True)
    def _pairwise_sqdist_nb(a, b):  # pragma: no cover - exercised via dispatch
        n, dim = a.shape
        m = b.shape[0]
        out = np.empty((n, m), dtype=np.float64)
        for i in prange(n):
            for c in range(m):
                acc = 0.0
                for j in range(dim):
                    diff = a[i, j] - b[c, j]
                    acc += diff * diff
                out[i, c] = acc
        return out


def _use_jit(target: np.ndarray) -> bool:
    return USE_NUMBA and target.shape[0] * target.shape[1] <= _GEMM_CUTOVER


def rq_encode(latents: np.ndarray, codebook: np.ndarray, depth: int):
    """Greedy residual quantization of a batch of latent vectors.

    Returns ``(codes, residual)`` where codes has shape ``(n, depth)`` and
    residual is what remains after subtracting the selected entries.
    Argmin ties break to the lowest code index.
    """
    latents = np.ascontiguousarray(latents, dtype=np.float64)
    codebook = np.ascontiguousarray(codebook, dtype=np.float64)
    if _use_jit(codebook):
        return _rq_encode_nb(latents, codebook, depth)
    return _rq_encode_np(latents, codebook, depth)


def nearest_rows(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Index of the nearest centroid (squared Euclidean) for each point."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    centroids = np.ascontiguousarray(centroids, dtype=np.float64)
    if _use_jit(centroids):
        return _nearest_rows_nb(points, centroids)
    return _nearest_rows_np(points, centroids)


def pairwise_sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """All-pairs squared Euclidean distances, shape (len(a), len(b))."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if _use_jit(b):
        return _pairwise_sqdist_nb(a, b)
    return _pairwise_sqdist_np(a, b)


def warmup():
    """Trigger JIT compilation so timed code does not pay for it."""
    if not USE_NUMBA:
        return
    z = np.zeros((2, 3))
    c = np.eye(3)[:2]
    rq_encode(z, c, 1)
    nearest_rows(z, c)
    pairwise_sqdist(z, c)
