"""Greedy residual quantization against a learned codebook.

A latent vector is coded as D indices: each depth picks the codebook entry
nearest to the remaining residual (ties to the lowest index) and subtracts
it. Reconstruction is the sum of the selected entries.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ValidationError


@dataclass
class Codebook:
    """K embedding vectors of dimension ``dim``, quantized to ``depth`` codes.

    ``entries`` has shape (K, dim) when shared across depths (the default)
    or (depth, K, dim) with one table per depth.
    """

    entries: np.ndarray
    depth: int
    shared_across_depths: bool = True

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.float64)
        expected_ndim = 2 if self.shared_across_depths else 3
        if self.entries.ndim != expected_ndim:
            raise ValidationError(
                f"entries must be {expected_ndim}-D for shared={self.shared_across_depths}"
            )
        if self.depth < 1:
            raise ValidationError("depth must be >= 1")
        if not self.shared_across_depths and self.entries.shape[0] != self.depth:
            raise ValidationError("per-depth codebook must have one table per depth")
        if self.size < 2:
            raise ValidationError("codebook needs at least 2 entries")
        table = self.entries if self.shared_across_depths else self.entries[0]
        uniq = np.unique(table, axis=0)
        if uniq.shape[0] != table.shape[0]:
            raise ValidationError("codebook entries must be distinct")

    @property
    def size(self) -> int:
        return self.entries.shape[0] if self.shared_across_depths else self.entries.shape[1]

    @property
    def dim(self) -> int:
        return self.entries.shape[-1]

    def table(self, depth_index: int) -> np.ndarray:
        return self.entries if self.shared_across_depths else self.entries[depth_index]


@dataclass
class CodeGrid:
    """Code indices of shape (timesteps, persons, depth) for one motion span."""

    codes: np.ndarray

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.int64)
        if self.codes.ndim != 3:
            raise ValidationError(f"codes must be (L, persons, depth), got {self.codes.shape}")
        if self.codes.shape[1] not in (1, 2):
            raise ValidationError(f"persons must be 1 or 2, got {self.codes.shape[1]}")
        if self.codes.shape[0] < 1 or self.codes.shape[2] < 1:
            raise ValidationError(f"empty code grid: {self.codes.shape}")
        if self.codes.min() < 0:
            raise ValidationError("negative code index")

    @property
    def length(self) -> int:
        return self.codes.shape[0]

    @property
    def persons(self) -> int:
        return self.codes.shape[1]

    @property
    def depth(self) -> int:
        return self.codes.shape[2]

    def validate_range(self, codebook_size: int) -> None:
        if self.codes.max() >= codebook_size:
            raise ValidationError(f"code index >= codebook size {codebook_size}")

    def __eq__(self, other):
        return isinstance(other, CodeGrid) and np.array_equal(self.codes, other.codes)


def residual_quantize(z: np.ndarray, codebook: Codebook) -> np.ndarray:
    """Code indices (depth,) for one latent vector."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (codebook.dim,):
        raise ValidationError(f"latent has dim {z.shape}, codebook dim {codebook.dim}")
    return residual_quantize_batch(z[None, :], codebook)[0]


def residual_quantize_batch(latents: np.ndarray, codebook: Codebook) -> np.ndarray:
    """Code indices (n, depth) for a batch of latents."""
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim != 2 or latents.shape[1] != codebook.dim:
        raise ValidationError(f"latents must be (n, {codebook.dim}), got {latents.shape}")
    if codebook.shared_across_depths:
        codes, _ = kernels.rq_encode(latents, codebook.entries, codebook.depth)
        return codes
    # Per-depth tables are a config option, not a hot path; plain numpy.
    codes = np.empty((latents.shape[0], codebook.depth), dtype=np.int64)
    residual = latents.copy()
    for d in range(codebook.depth):
        idx = kernels.nearest_rows(residual, codebook.table(d))
        codes[:, d] = idx
        residual -= codebook.table(d)[idx]
    return codes


def dequantize(codes: np.ndarray, codebook: Codebook) -> np.ndarray:
    """Sum of the referenced embeddings; inverse direction of quantization."""
    codes = np.asarray(codes, dtype=np.int64)
    single = codes.ndim == 1
    if single:
        codes = codes[None, :]
    if codes.shape[1] != codebook.depth:
        raise ValidationError(f"expected {codebook.depth} codes per latent, got {codes.shape[1]}")
    if codes.min(initial=0) < 0 or codes.max(initial=0) >= codebook.size:
        raise ValidationError(f"code index out of range [0, {codebook.size})")
    out = np.zeros((codes.shape[0], codebook.dim))
    for d in range(codebook.depth):
        out += codebook.table(d)[codes[:, d]]
    return out[0] if single else out


def make_rows_distinct(rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Jitter duplicate rows (in place) until all rows are unique.

    Keeps the no-two-entries-identical invariant after k-means or dead-code
    reseeding, where several rows can be assigned the same source vector.
    """
    scale = max(float(np.std(rows)), 1e-3)
    for _ in range(100):
        _, first = np.unique(rows, axis=0, return_index=True)
        dup = np.setdiff1d(np.arange(rows.shape[0]), first)
        if dup.size == 0:
            return rows
        rows[dup] += 1e-6 * scale * rng.standard_normal((dup.size, rows.shape[1]))
    raise ValidationError("could not make rows distinct")


def rq_kmeans_init(
    latents: np.ndarray, k: int, depth: int, rng: np.random.Generator, iters: int = 10
) -> np.ndarray:
    """Multi-scale k-means init for a codebook shared across residual depths.

    Clustering raw latents alone leaves no entries at residual scale, so
    depths past the first all fight over the few entries near the origin
    and usage collapses. Instead each depth level clusters the residuals
    left by the previous one, and the shared table is their union.
    """
    latents = np.asarray(latents, dtype=np.float64)
    levels = min(depth, k)
    sizes = [k // levels] * levels
    sizes[0] += k - sum(sizes)
    parts = []
    resid = latents
    for size in sizes:
        cents = kmeans(resid, size, rng, iters)
        parts.append(cents)
        idx = kernels.nearest_rows(resid, cents)
        resid = resid - cents[idx]
    return make_rows_distinct(np.concatenate(parts, axis=0), rng)


def kmeans(points: np.ndarray, k: int, rng: np.random.Generator, iters: int = 10) -> np.ndarray:
    """Lloyd's k-means returning (k, dim) distinct centroids (codebook init).

    When there are fewer points than centroids the points are tiled with
    small jitter so every centroid starts distinct.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if n < k:
        reps = -(-k // n)
        scale = max(np.std(points), 1e-3)
        points = np.concatenate(
            [points + 0.01 * scale * rng.standard_normal(points.shape) * (i > 0) for i in range(reps)]
        )
        n = points.shape[0]
    centroids = points[rng.permutation(n)[:k]].copy()
    for _ in range(iters):
        assign = kernels.nearest_rows(points, centroids)
        for c in range(k):
            members = points[assign == c]
            if len(members):
                centroids[c] = members.mean(axis=0)
            else:
                centroids[c] = points[rng.integers(n)]
    return make_rows_distinct(centroids, rng)
