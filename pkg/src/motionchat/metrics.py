"""Motion evaluation metrics over a pluggable feature space.

Distances are Euclidean throughout. Retrieval ranks each query's match
inside a pool of 1 match + 31 sampled mismatches, with ties counted
against the match so reported precision is a lower bound.
"""

import numpy as np

from .errors import ValidationError
from .features import FeatureSet
from .motion import InteractiveClip
from . import kernels


def psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition; negative
    eigenvalues (numerical noise) are clamped to zero."""
    matrix = np.asarray(matrix, dtype=np.float64)
    sym = 0.5 * (matrix + matrix.T)
    vals, vecs = np.linalg.eigh(sym)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_gaussian(mu1, sigma1, mu2, sigma2) -> float:
    """Squared Frechet distance between two Gaussians:
    ||mu1-mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2))."""
    mu1 = np.atleast_1d(np.asarray(mu1, dtype=np.float64))
    mu2 = np.atleast_1d(np.asarray(mu2, dtype=np.float64))
    sigma1 = np.atleast_2d(np.asarray(sigma1, dtype=np.float64))
    sigma2 = np.atleast_2d(np.asarray(sigma2, dtype=np.float64))
    if mu1.shape != mu2.shape or sigma1.shape != sigma2.shape:
        raise ValidationError("moment shapes do not match")
    diff = mu1 - mu2
    root1 = psd_sqrt(sigma1)
    # Tr((S1 S2)^(1/2)) computed from the symmetric product S1^(1/2) S2 S1^(1/2)
    inner = psd_sqrt(root1 @ sigma2 @ root1)
    return float(diff @ diff + np.trace(sigma1) + np.trace(sigma2) - 2.0 * np.trace(inner))


def fid(set1: FeatureSet, set2: FeatureSet, eps: float = 1e-6) -> float:
    """Frechet distance between Gaussians fitted to the two feature sets.

    Sample covariances are regularized by ``eps * I`` for small-N
    stability.
    """
    if set1.dim != set2.dim:
        raise ValidationError(f"feature dims differ: {set1.dim} vs {set2.dim}")
    if len(set1) < 2 or len(set2) < 2:
        raise ValidationError("fid needs at least 2 vectors per set")
    eye = eps * np.eye(set1.dim)
    mu1 = set1.vectors.mean(axis=0)
    mu2 = set2.vectors.mean(axis=0)
    sigma1 = np.cov(set1.vectors, rowvar=False) + eye
    sigma2 = np.cov(set2.vectors, rowvar=False) + eye
    return frechet_gaussian(mu1, sigma1, mu2, sigma2)


def _positions_stack(clip):
    if isinstance(clip, InteractiveClip):
        return np.stack([p.positions for p in clip.persons])
    return clip.positions[None]


def mpjpe(pred, gt) -> float:
    """Mean per-joint position error in meters over frames, persons, joints."""
    p = _positions_stack(pred)
    g = _positions_stack(gt)
    if p.shape != g.shape:
        raise ValidationError(f"position shapes differ: {p.shape} vs {g.shape}")
    return float(np.linalg.norm(p - g, axis=-1).mean())


def r_precision(
    motion_feats: FeatureSet,
    text_feats: FeatureSet,
    pool: int = 32,
    ks=(1, 2, 3),
    seed: int = 0,
) -> dict:
    """Fraction of queries whose matched motion ranks in the top k of a
    pool of 1 match + (pool-1) seeded mismatches. Ties rank the mismatch
    first."""
    if len(motion_feats) != len(text_feats):
        raise ValidationError("motion and text sets must be aligned by index")
    n = len(motion_feats)
    if n < pool:
        raise ValidationError(f"need at least pool={pool} pairs, got {n}")
    rng = np.random.default_rng(seed)
    m = motion_feats.vectors
    t = text_feats.vectors
    hits = {k: 0 for k in ks}
    for i in range(n):
        others = np.concatenate([np.arange(i), np.arange(i + 1, n)])
        mism = others[rng.permutation(n - 1)[: pool - 1]]
        match_d = float(np.linalg.norm(t[i] - m[i]))
        dists = np.sqrt(kernels.pairwise_sqdist(t[i][None, :], m[mism]))[0]
        rank = 1 + int(np.sum(dists <= match_d))
        for k in ks:
            hits[k] += rank <= k
    return {k: hits[k] / n for k in ks}


def diversity(feats: FeatureSet, seed: int = 0) -> float:
    """Mean distance between paired elements of a random equal split."""
    n = len(feats)
    if n < 2:
        raise ValidationError("diversity needs at least 2 vectors")
    if n % 2:
        n -= 1  # drop the last vector of an odd set
    perm = np.random.default_rng(seed).permutation(len(feats))[:n]
    half = n // 2
    a = feats.vectors[perm[:half]]
    b = feats.vectors[perm[half:]]
    return float(np.mean(np.linalg.norm(a - b, axis=1)))


def mmdist(motion_feats: FeatureSet, text_feats: FeatureSet) -> float:
    """Mean Euclidean distance over matched motion/text feature pairs."""
    if len(motion_feats) != len(text_feats):
        raise ValidationError("motion and text sets must be aligned by index")
    return float(np.mean(np.linalg.norm(motion_feats.vectors - text_feats.vectors, axis=1)))
