import numpy as np
import pytest

from motionchat.errors import ValidationError
from motionchat.quantizer import (
    Codebook,
    CodeGrid,
    dequantize,
    kmeans,
    make_rows_distinct,
    residual_quantize,
    residual_quantize_batch,
    rq_kmeans_init,
)


def brute_force_rq(z, entries, depth):
    """Independent greedy oracle: per depth, scan all entries naively."""
    residual = z.astype(np.float64).copy()
    codes = []
    for _ in range(depth):
        dists = [float(((residual - e) ** 2).sum()) for e in entries]
        best = int(np.argmin(dists))
        codes.append(best)
        residual = residual - entries[best]
    return np.array(codes), residual


class TestResidualQuantize:
    def test_exact_hit_then_zero(self):
        rng = np.random.default_rng(0)
        z = rng.standard_normal(4)
        entries = rng.standard_normal((8, 4))
        entries[0] = 0.0
        entries[5] = z
        cb = Codebook(entries, depth=2)
        codes = residual_quantize(z, cb)
        np.testing.assert_array_equal(codes, [5, 0])
        np.testing.assert_array_equal(dequantize(codes, cb), z)

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(1)
        entries = rng.standard_normal((8, 4))
        cb = Codebook(entries, depth=3)
        for _ in range(50):
            z = rng.standard_normal(4)
            expected, _ = brute_force_rq(z, entries, 3)
            np.testing.assert_array_equal(residual_quantize(z, cb), expected)

    def test_grid_shape_at_paper_config(self):
        # K=512, D=4: a 10-step, 2-person encoding quantizes to (10, 2, 4)
        rng = np.random.default_rng(2)
        cb = Codebook(rng.standard_normal((512, 16)), depth=4)
        lat = rng.standard_normal((10, 16))
        codes = np.stack(
            [residual_quantize_batch(lat, cb), residual_quantize_batch(lat + 1, cb)], axis=1
        )
        grid = CodeGrid(codes)
        assert grid.codes.shape == (10, 2, 4)

    def test_dimension_mismatch(self):
        cb = Codebook(np.eye(3), depth=1)
        with pytest.raises(ValidationError):
            residual_quantize(np.zeros(4), cb)

    def test_telescoping_with_zero_entry(self):
        # with a zero entry present, residual norm is non-increasing in depth
        rng = np.random.default_rng(3)
        entries = rng.standard_normal((16, 6))
        entries[0] = 0.0
        for _ in range(1000):
            z = rng.standard_normal(6)
            prev = float(np.linalg.norm(z))
            residual = z.copy()
            for depth in range(1, 5):
                cb = Codebook(entries, depth=1)
                code = residual_quantize(residual, cb)
                residual = residual - entries[code[0]]
                norm = float(np.linalg.norm(residual))
                assert norm <= prev + 1e-12
                prev = norm


class TestDequantize:
    def test_single_depth(self):
        cb = Codebook(np.arange(12.0).reshape(4, 3), depth=1)
        np.testing.assert_array_equal(dequantize(np.array([2]), cb), [6, 7, 8])

    def test_zero_entry_additive_identity(self):
        rng = np.random.default_rng(4)
        entries = rng.standard_normal((8, 4))
        entries[0] = 0.0
        cb = Codebook(entries, depth=2)
        np.testing.assert_array_equal(dequantize(np.array([5, 0]), cb), entries[5])

    def test_matches_summation_oracle(self):
        rng = np.random.default_rng(5)
        entries = rng.standard_normal((16, 5))
        cb = Codebook(entries, depth=4)
        codes = rng.integers(0, 16, size=(20, 4))
        out = dequantize(codes, cb)
        expected = sum(entries[codes[:, d]] for d in range(4))
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_out_of_range_index(self):
        cb = Codebook(np.eye(3), depth=1)
        with pytest.raises(ValidationError):
            dequantize(np.array([3]), cb)

    def test_quantize_of_entry_recovers_it_exactly(self):
        rng = np.random.default_rng(6)
        entries = rng.standard_normal((8, 4))
        entries[3] = 0.0
        cb = Codebook(entries, depth=3)
        for c in range(8):
            codes = residual_quantize(entries[c], cb)
            np.testing.assert_array_equal(dequantize(codes, cb), entries[c])


class TestCodebookValidation:
    def test_duplicate_entries_rejected(self):
        entries = np.ones((3, 2))
        with pytest.raises(ValidationError):
            Codebook(entries, depth=1)

    def test_too_small(self):
        with pytest.raises(ValidationError):
            Codebook(np.ones((1, 2)), depth=1)

    def test_per_depth_tables(self):
        rng = np.random.default_rng(7)
        entries = rng.standard_normal((2, 8, 4))
        cb = Codebook(entries, depth=2, shared_across_depths=False)
        z = rng.standard_normal(4)
        codes = residual_quantize(z, cb)
        expected0 = np.argmin(((z - entries[0]) ** 2).sum(axis=1))
        assert codes[0] == expected0
        resid = z - entries[0][codes[0]]
        expected1 = np.argmin(((resid - entries[1]) ** 2).sum(axis=1))
        assert codes[1] == expected1


class TestCodeGrid:
    def test_validation(self):
        with pytest.raises(ValidationError):
            CodeGrid(np.zeros((2, 3, 1), dtype=int))  # 3 persons
        with pytest.raises(ValidationError):
            CodeGrid(-np.ones((2, 1, 1), dtype=int))

    def test_equality(self):
        a = CodeGrid(np.zeros((2, 1, 1), dtype=int))
        b = CodeGrid(np.zeros((2, 1, 1), dtype=int))
        assert a == b


class TestKmeans:
    def test_recovers_separated_clusters(self):
        rng = np.random.default_rng(8)
        centers = np.array([[0.0, 0.0], [10.0, 10.0], [-10.0, 5.0]])
        pts = np.concatenate([c + 0.1 * rng.standard_normal((30, 2)) for c in centers])
        out = kmeans(pts, 3, np.random.default_rng(0), iters=20)
        found = sorted(tuple(np.round(c)) for c in out)
        assert found == sorted(tuple(c) for c in centers)

    def test_more_centroids_than_points(self):
        rng = np.random.default_rng(9)
        pts = rng.standard_normal((3, 2))
        out = kmeans(pts, 8, np.random.default_rng(0))
        assert out.shape == (8, 2)
        assert np.unique(out, axis=0).shape[0] == 8

    def test_make_rows_distinct(self):
        rows = np.ones((4, 3))
        out = make_rows_distinct(rows, np.random.default_rng(0))
        assert np.unique(out, axis=0).shape[0] == 4

    def test_rq_kmeans_init_covers_residual_scales(self):
        rng = np.random.default_rng(10)
        lat = rng.standard_normal((200, 6))
        table = rq_kmeans_init(lat, 32, 4, np.random.default_rng(0))
        assert table.shape == (32, 6)
        assert np.unique(table, axis=0).shape[0] == 32
        norms = np.linalg.norm(table, axis=1)
        # multi-scale: the later levels sit well inside the first level's shell
        assert norms.min() < 0.5 * norms.max()
