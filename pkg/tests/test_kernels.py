import numpy as np
import pytest

from motionchat import kernels


@pytest.mark.parametrize("n,k,dim,depth", [(50, 8, 4, 1), (40, 16, 8, 3), (20, 200, 64, 4)])
def test_numba_and_numpy_paths_agree(n, k, dim, depth):
    rng = np.random.default_rng(0)
    lat = rng.standard_normal((n, dim))
    cb = rng.standard_normal((k, dim))
    codes_np, resid_np = kernels._rq_encode_np(lat.copy(), cb, depth)
    if kernels.HAS_NUMBA:
        codes_nb, resid_nb = kernels._rq_encode_nb(lat.copy(), cb, depth)
        np.testing.assert_array_equal(codes_np, codes_nb)
        np.testing.assert_allclose(resid_np, resid_nb, atol=1e-12)


def test_nearest_rows_paths_agree():
    rng = np.random.default_rng(1)
    pts = rng.standard_normal((30, 6))
    cents = rng.standard_normal((12, 6))
    np_idx = kernels._nearest_rows_np(pts, cents)
    brute = np.array([np.argmin(((p - cents) ** 2).sum(axis=1)) for p in pts])
    np.testing.assert_array_equal(np_idx, brute)
    if kernels.HAS_NUMBA:
        np.testing.assert_array_equal(kernels._nearest_rows_nb(pts, cents), brute)


def test_pairwise_sqdist_matches_brute_force():
    rng = np.random.default_rng(2)
    a = rng.standard_normal((9, 5))
    b = rng.standard_normal((7, 5))
    brute = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    np.testing.assert_allclose(kernels._pairwise_sqdist_np(a, b), brute, atol=1e-10)
    if kernels.HAS_NUMBA:
        np.testing.assert_allclose(kernels._pairwise_sqdist_nb(a, b), brute, atol=1e-10)


def test_argmin_ties_break_low_in_both_paths():
    lat = np.array([[1.0, 0.0]])
    cb = np.array([[0.0, 1.0], [0.0, -1.0], [2.0, 0.0]])  # first two tie exactly
    codes_np, _ = kernels._rq_encode_np(lat.copy(), cb, 1)
    assert codes_np[0, 0] == 0
    if kernels.HAS_NUMBA:
        codes_nb, _ = kernels._rq_encode_nb(lat.copy(), cb, 1)
        assert codes_nb[0, 0] == 0


def test_dispatch_env_flag(monkeypatch):
    monkeypatch.setattr(kernels, "USE_NUMBA", False)
    lat = np.random.default_rng(3).standard_normal((4, 3))
    cb = np.eye(3)
    codes, resid = kernels.rq_encode(lat, cb, 2)
    assert codes.shape == (4, 2)
