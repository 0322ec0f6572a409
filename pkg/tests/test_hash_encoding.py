"""Multiresolution hashed feature planes: indexing, interpolation, gradients."""

import numpy as np
import pytest

from conftest import directional_diff, interior_points, rel_err

from headfield.hash_encoding import (HashGrid2D, TriPlaneEncoder, hash_index,
                                     level_resolutions)

# 14 levels from 16 to 512 under the default per-level scale factor.
DEFAULT_LADDER = [16, 20, 27, 35, 46, 60, 79, 103, 135, 176, 230, 300, 392, 512]


def make_grid(seed=0, **kwargs):
    return HashGrid2D(rng=np.random.default_rng(seed), **kwargs)


def test_default_resolution_ladder():
    assert level_resolutions(14, 16, 1.3056) == DEFAULT_LADDER


def test_ladder_is_monotone_and_bounded():
    rs = level_resolutions(14, 16, 1.3056)
    assert all(b > a for a, b in zip(rs, rs[1:]))
    assert rs[0] == 16 and rs[-1] == 512


def test_dense_indexing_is_row_major():
    # resolution 4 -> 16 cells <= table size, so no hashing: index = b*R + a
    idx = hash_index(np.array([2]), np.array([3]), 4, 64)
    assert idx[0] == 14
    assert hash_index(np.array([0]), np.array([0]), 4, 64)[0] == 0
    a, b = np.meshgrid(np.arange(4), np.arange(4), indexing="ij")
    got = hash_index(a.ravel(), b.ravel(), 4, 64)
    assert sorted(got.tolist()) == list(range(16))  # injective when dense


def test_hashed_indexing_matches_scalar_oracle():
    # overflowing regime: a XOR (b * prime) in 32-bit arithmetic, mod T
    rng = np.random.default_rng(3)
    R, T = 300, 16384
    assert R * R > T
    a = rng.integers(0, R, size=200)
    b = rng.integers(0, R, size=200)
    got = hash_index(a, b, R, T)
    for ai, bi, gi in zip(a.tolist(), b.tolist(), got.tolist()):
        expect = (ai ^ ((bi * 2654435761) & 0xFFFFFFFF)) % T
        assert gi == expect


def test_hash_indices_stay_in_table():
    rng = np.random.default_rng(4)
    for R in (4, 33, 300, 512):
        a = rng.integers(0, R, size=500)
        b = rng.integers(0, R, size=500)
        idx = hash_index(a, b, R, 128)
        assert idx.min() >= 0 and idx.max() < 128


@pytest.mark.parametrize("base", [3, 5, 9, 17, 33, 65])
def test_vertex_values_are_exact_2d(base):
    # base - 1 is a power of two, so i/(R-1) and its rescaling are exact
    # floats and vertex lookups must return raw table entries bit for bit.
    g = make_grid(seed=base, n_levels=1, table_size=2 ** 14,
                  base_resolution=base, growth=2.0)
    R = base
    ticks = np.arange(R) / (R - 1)
    uu, vv = np.meshgrid(ticks, ticks, indexing="ij")
    coords = np.stack([uu.ravel(), vv.ravel()], axis=1)
    feats = g.encode(coords)[:, 0]
    ia, ib = np.meshgrid(np.arange(R), np.arange(R), indexing="ij")
    idx = hash_index(ia.ravel(), ib.ravel(), R, g.tables.shape[1])
    expect = g.tables[0, idx, 0]
    assert np.array_equal(feats, expect)


def test_vertex_values_are_exact_triplane():
    enc = TriPlaneEncoder(n_levels=1, table_size=2 ** 14, base_resolution=17,
                          growth=2.0, seed=11)
    R = 17
    ticks = np.arange(R) / (R - 1)
    pts = np.stack([np.repeat(ticks, R), np.tile(ticks, R),
                    np.full(R * R, 8 / 16)], axis=1)
    feats = enc.encode(pts)
    ia = (pts[:, 0] * (R - 1)).astype(int)
    ib = (pts[:, 1] * (R - 1)).astype(int)
    T = enc.planes[0].tables.shape[1]
    expect_xy = enc.planes[0].tables[0, hash_index(ia, ib, R, T), 0]
    assert np.array_equal(feats[:, 0], expect_xy)
    # z is fixed on a vertex too, so the other planes are also exact
    iz = np.full(R * R, 8)
    expect_yz = enc.planes[1].tables[0, hash_index(ib, iz, R, T), 0]
    expect_xz = enc.planes[2].tables[0, hash_index(ia, iz, R, T), 0]
    assert np.array_equal(feats[:, 1], expect_yz)
    assert np.array_equal(feats[:, 2], expect_xz)


def test_cell_midpoint_equals_corner_mean():
    g = make_grid(seed=7, n_levels=1, table_size=2 ** 14, base_resolution=5,
                  growth=2.0)
    R, T = 5, g.tables.shape[1]
    for i in range(R - 1):
        for j in range(R - 1):
            mid = np.array([[(i + 0.5) / (R - 1), (j + 0.5) / (R - 1)]])
            corners = [g.tables[0, hash_index(np.array([i + di]),
                                              np.array([j + dj]), R, T)[0], 0]
                       for di in (0, 1) for dj in (0, 1)]
            assert abs(g.encode(mid)[0, 0] - np.mean(corners)) < 1e-12


def test_output_is_three_planes_by_levels():
    enc = TriPlaneEncoder()
    out = enc.encode(np.zeros((5, 3)))
    assert out.shape == (5, 42)
    assert enc.out_dim == 42


def test_identical_tables_collapse_diagonal_points():
    # on the x = y = z diagonal every plane sees the same 2D coordinate
    enc = TriPlaneEncoder(n_levels=3, table_size=256, base_resolution=4,
                          growth=2.0, seed=0)
    for plane in enc.planes[1:]:
        plane.tables[...] = enc.planes[0].tables
    pts = np.linspace(0.05, 0.95, 9)[:, None] * np.ones(3)
    out = enc.encode(pts)
    L = enc.n_levels
    assert np.array_equal(out[:, :L], out[:, L:2 * L])
    assert np.array_equal(out[:, :L], out[:, 2 * L:])


def test_encode_clamps_out_of_range_coordinates():
    g = make_grid(seed=1, n_levels=3, table_size=512, base_resolution=4,
                  growth=2.0)
    inside = np.array([[0.0, 1.0], [1.0, 0.3], [0.0, 0.0]])
    outside = np.array([[-0.7, 1.9], [2.4, 0.3], [-0.1, -5.0]])
    assert np.array_equal(g.encode(outside), g.encode(inside))


def test_encoding_is_continuous_across_cell_boundaries():
    g = make_grid(seed=2, n_levels=4, table_size=1024, base_resolution=4,
                  growth=1.7)
    rng = np.random.default_rng(5)
    R = g.resolutions[-1]
    for _ in range(20):
        i = rng.integers(1, R - 1)
        u = i / (R - 1)
        v = rng.uniform(0.1, 0.9)
        lo = g.encode(np.array([[u - 1e-9, v]]))
        hi = g.encode(np.array([[u + 1e-9, v]]))
        assert np.abs(hi - lo).max() < 1e-6


def test_single_point_touches_at_most_four_cells_per_level():
    enc = TriPlaneEncoder(n_levels=5, table_size=2048, base_resolution=7,
                          growth=1.6, seed=9)
    cache = []
    out = enc.encode(np.array([[0.37, 0.52, 0.81]]), cache=cache)
    grads, _ = enc.backward(cache, np.ones_like(out), want_points=False)
    for tg in grads:
        for level in range(enc.n_levels):
            assert np.count_nonzero(tg[level]) <= 4


def test_table_gradient_matches_directional_difference():
    # encode is linear in the tables, so a central difference along a random
    # direction is exact up to float noise
    enc = TriPlaneEncoder(n_levels=4, table_size=512, base_resolution=5,
                          growth=1.9, seed=3)
    rng = np.random.default_rng(6)
    pts = rng.uniform(0.05, 0.95, size=(7, 3))
    up = rng.standard_normal((7, enc.out_dim))

    cache = []
    enc.encode(pts, cache=cache)
    grads, _ = enc.backward(cache, up, want_points=False)

    dirs = [rng.standard_normal(p.shape) for _, p in enc.parameters()]
    analytic = sum(float((g * d).sum()) for g, d in zip(grads, dirs))

    def total(eps):
        for (_, p), d in zip(enc.parameters(), dirs):
            p += eps * d
        val = float((enc.encode(pts) * up).sum())
        for (_, p), d in zip(enc.parameters(), dirs):
            p -= eps * d
        return val

    eps = 1e-4
    fd = (total(eps) - total(-eps)) / (2 * eps)
    assert rel_err(analytic, fd) < 1e-9


def test_point_gradient_matches_central_difference():
    enc = TriPlaneEncoder(n_levels=4, table_size=1024, base_resolution=6,
                          growth=1.8, seed=4)
    rng = np.random.default_rng(7)
    pts = interior_points(rng, enc.planes[0].resolutions, 10, dims=3)
    up = rng.standard_normal((10, enc.out_dim))

    cache = []
    enc.encode(pts, cache=cache)
    _, dpoints = enc.backward(cache, up, want_points=True)

    d = rng.standard_normal(pts.shape)

    def total(x):
        return float((enc.encode(x) * up).sum())

    fd = directional_diff(total, pts, d, eps=1e-6)
    assert rel_err(float((dpoints * d).sum()), fd) < 1e-6


def test_gradients_across_random_configurations():
    rng = np.random.default_rng(8)
    for trial in range(10):
        L = int(rng.integers(1, 5))
        base = int(rng.integers(4, 12))
        growth = float(rng.uniform(1.3, 2.0))
        enc = TriPlaneEncoder(n_levels=L, table_size=512, base_resolution=base,
                              growth=growth, seed=trial)
        pts = interior_points(rng, enc.planes[0].resolutions, 4, dims=3)
        up = rng.standard_normal((4, enc.out_dim))
        cache = []
        enc.encode(pts, cache=cache)
        grads, dpoints = enc.backward(cache, up, want_points=True)

        d = rng.standard_normal(pts.shape)

        def total(x):
            return float((enc.encode(x) * up).sum())

        fd = directional_diff(total, pts, d, eps=1e-6)
        assert rel_err(float((dpoints * d).sum()), fd) < 1e-4


def test_fresh_tables_are_small_but_not_zero():
    enc = TriPlaneEncoder(seed=0)
    for _, p in enc.parameters():
        assert np.abs(p).max() <= 1e-4
        assert np.abs(p).max() > 0


def test_encode_keeps_requested_dtype():
    enc = TriPlaneEncoder(n_levels=2, table_size=256, base_resolution=4,
                          growth=2.0, seed=0, dtype=np.float32)
    out = enc.encode(np.array([[0.1, 0.2, 0.3]], dtype=np.float32))
    assert out.dtype == np.float32


def test_multifeature_levels_widen_output():
    enc = TriPlaneEncoder(n_levels=3, features_per_level=2, table_size=256,
                          base_resolution=4, growth=2.0, seed=1)
    out = enc.encode(np.random.default_rng(0).uniform(0, 1, (4, 3)))
    assert out.shape == (4, 3 * 3 * 2)
