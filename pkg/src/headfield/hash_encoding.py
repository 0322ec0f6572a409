"""Multiresolution 2D hash grids and the tri-plane point encoder.

A point in the unit cube is projected onto the XY, YZ and XZ planes; each
plane carries a stack of feature grids at geometrically growing resolutions,
stored in fixed-size tables. Coarse levels fit their full grid in the table
and index row-major (collision free); fine levels spatially hash. Features
are bilinearly interpolated, so the encoding is piecewise-smooth in the
point and exactly linear in the tables.

The per-level math is batched over all levels of a plane: the training loop
queries tens of thousands of points per step and the level count is the
inner dimension, so loop-per-level costs more than the arithmetic.
"""

import numpy as np

PRIME_A = np.uint64(1)
PRIME_B = np.uint64(2654435761)


def level_resolutions(n_levels, base_resolution, growth):
    """Per-level grid resolutions: floor(base * growth**level)."""
    return [int(np.floor(base_resolution * growth ** level)) for level in range(n_levels)]


def hash_index(cell_a, cell_b, resolution, table_size):
    """Table row for integer vertex (cell_a, cell_b) of a resolution^2 grid.

    When the whole grid fits in the table the map is the exact row-major
    index cell_b * resolution + cell_a (injective, no collisions). Larger
    grids fall back to the XOR spatial hash modulo the table size.
    """
    a = np.asarray(cell_a, dtype=np.uint64)
    b = np.asarray(cell_b, dtype=np.uint64)
    if resolution * resolution <= table_size:
        return (b * np.uint64(resolution) + a).astype(np.int64)
    h = (a * PRIME_A) ^ (b * PRIME_B)
    return (h % np.uint64(table_size)).astype(np.int64)


class HashGrid2D:
    """Stack of hashed feature grids over the unit square."""

    def __init__(self, n_levels=14, features_per_level=1, table_size=2 ** 14,
                 base_resolution=16, growth=1.3056, rng=None, dtype=np.float64):
        if rng is None:
            rng = np.random.default_rng(0)
        self.n_levels = n_levels
        self.features_per_level = features_per_level
        self.table_size = table_size
        self.resolutions = level_resolutions(n_levels, base_resolution, growth)
        if min(self.resolutions) < 2:
            raise ValueError("grid resolution must be at least 2")
        self.tables = rng.uniform(
            -1e-4, 1e-4, size=(n_levels, table_size, features_per_level)
        ).astype(dtype)
        res = np.array(self.resolutions, dtype=np.int64)
        self._res = res
        # resolutions grow with level, so row-major levels form a prefix
        self._n_row_major = int((res * res <= table_size).sum())
        self._mask = (np.uint64(table_size - 1)
                      if table_size & (table_size - 1) == 0 else None)

    @property
    def out_dim(self):
        return self.n_levels * self.features_per_level

    def _corner_rows(self, cell_a, cell_b):
        """Flat table rows of the 4 cell corners at every level.

        ``cell_a``/``cell_b`` are (L, N) int. Returns (4, L, N) rows offset
        by level * table_size, matching hash_index per level. Rows are
        int64: both take and bincount cast narrower index types up front,
        which costs more than writing wide rows once. Row-major levels (a
        prefix, since resolutions grow) use the exact index; the rest
        XOR-hash. Power-of-two tables mask instead of taking a modulo; hash
        math runs 32-bit there because the masked bits agree.
        """
        levels, n = cell_a.shape
        size = self.table_size
        split = self._n_row_major
        idx = np.empty((4, levels, n), dtype=np.int64)
        if split:
            res = self._res[:split, None].astype(np.int32)
            offs = np.arange(split, dtype=np.int32)[:, None] * np.int32(size)
            row = cell_b[:split] * res + cell_a[:split]
            row += offs
            idx[0, :split] = row
            idx[1, :split] = row + 1
            idx[2, :split] = row + res
            idx[3, :split] = row + res + 1
        if split < levels:
            if self._mask is not None:
                a = cell_a[split:].astype(np.uint32)
                bp = cell_b[split:].astype(np.uint32) * np.uint32(PRIME_B)
                mask = np.uint32(self._mask)
                step = np.uint32(PRIME_B)
                offs = (np.arange(split, levels, dtype=np.uint32)[:, None]
                        * np.uint32(size))
            else:
                a = cell_a[split:].astype(np.uint64)
                bp = cell_b[split:].astype(np.uint64) * PRIME_B
                mask = None
                step = PRIME_B
                offs = (np.arange(split, levels, dtype=np.uint64)[:, None]
                        * np.uint64(size))
            a1 = a + type(step)(1)
            bp1 = bp + step
            for k, h in enumerate((a ^ bp, a1 ^ bp, a ^ bp1, a1 ^ bp1)):
                if mask is not None:
                    h &= mask
                else:
                    h %= np.uint64(size)
                h += offs
                idx[k, split:] = h
        return idx

    def _axis_cells(self, values):
        """Per-level (cell, offset) for one coordinate axis.

        ``values`` is (N,) already clamped to [0, 1]; vertices of a
        resolution-R grid sit at i / (R - 1).
        """
        dt = self.tables.dtype
        scale = (self._res - 1).astype(dt)[:, None]
        lim = (self._res - 2).astype(np.int32)[:, None]
        pos = values * scale
        cell = np.minimum(pos.astype(np.int32), lim)
        np.subtract(pos, cell.astype(dt), out=pos)
        return cell, pos

    def _corners(self, coords):
        """Cell corners and interpolation offsets at every level.

        Returns (flat rows (4, L, N), wa (L, N), wb).
        """
        coords = np.clip(np.asarray(coords, dtype=self.tables.dtype), 0.0, 1.0)
        ca, wa = self._axis_cells(coords[:, 0])
        cb, wb = self._axis_cells(coords[:, 1])
        return self._corner_rows(ca, cb), wa, wb

    def _gather(self, idx):
        """Features for (4, L, N) flat rows: (4, L, N, D)."""
        return self.tables.reshape(-1, self.features_per_level)[idx]

    def _encode_rows(self, idx, wa, wb, cache=None):
        """Interpolate features at precomputed corner rows/offsets.

        Lerps use the two-product form (1-w)*x + w*y, not x + w*(y-x): the
        latter is an ulp off at w == 1, and vertex coordinates must return
        table entries bit for bit. Returns
        (N, n_levels * features_per_level).
        """
        if self.features_per_level == 1:
            f = self.tables.ravel().take(idx, mode="clip")
            omwa = 1.0 - wa
            m0 = omwa * f[0]
            m0 += wa * f[1]
            m1 = omwa * f[2]
            m1 += wa * f[3]
            feat = (1.0 - wb) * m0
            feat += wb * m1
            if cache is not None:
                cache.update(idx=idx, wa=wa, wb=wb, f=f, m0=m0, m1=m1)
            return feat.T
        f = self._gather(idx)
        a = wa[..., None]
        b = wb[..., None]
        feat = (f[0] * (1 - a) * (1 - b) + f[1] * a * (1 - b)
                + f[2] * (1 - a) * b + f[3] * a * b)
        if cache is not None:
            cache.update(idx=idx, wa=wa, wb=wb, f=f)
        return feat.transpose(1, 0, 2).reshape(wa.shape[1], -1)

    def encode(self, coords, cache=None):
        """Encode (N, 2) coordinates to (N, n_levels * features_per_level).

        Pass a dict as ``cache`` to keep lookups for ``backward``.
        """
        idx, wa, wb = self._corners(coords)
        return self._encode_rows(idx, wa, wb, cache=cache)

    def backward(self, cache, upstream, want_coords=True):
        """Gradients of a cached encode.

        Returns ``(table_grad, dcoords)``; table_grad matches ``tables``
        and dcoords is None when not requested. Out-of-range coordinates
        were clamped in the forward pass, so their reported coordinate
        gradient is the one-sided bilinear derivative; probe interior
        points when comparing against finite differences.
        """
        levels, table_size, d = self.tables.shape
        idx, wa, wb = cache["idx"], cache["wa"], cache["wb"]
        n = upstream.shape[0]
        scale = (self._res - 1).astype(self.tables.dtype)[:, None]
        dcoords = np.empty((n, 2), dtype=self.tables.dtype) if want_coords else None

        if d == 1:
            u = np.ascontiguousarray(upstream.T)
            # per-corner scatter weights, factored: u*(1-wa)(1-wb) etc.
            w4 = np.empty((4,) + u.shape, dtype=u.dtype)
            np.multiply(u, wa, out=w4[1])
            np.subtract(u, w4[1], out=w4[0])
            np.multiply(w4[1], wb, out=w4[3])
            np.subtract(w4[1], w4[3], out=w4[1])
            np.multiply(w4[0], wb, out=w4[2])
            np.subtract(w4[0], w4[2], out=w4[0])
            counts = np.bincount(idx.ravel(), weights=w4.ravel(),
                                 minlength=levels * table_size)
            table_grad = counts.reshape(self.tables.shape).astype(self.tables.dtype)
            if want_coords:
                # d/dwa lerps the corner differences; d/dwb is the row gap
                f = cache["f"]
                da0 = f[1] - f[0]
                dfa = f[3] - f[2]
                dfa -= da0
                dfa *= wb
                dfa += da0
                us = u * scale
                dcoords[:, 0] = (us * dfa).sum(axis=0)
                dcoords[:, 1] = (us * (cache["m1"] - cache["m0"])).sum(axis=0)
            return table_grad, dcoords

        f = cache["f"]
        up = np.ascontiguousarray(upstream.reshape(n, levels, d).transpose(1, 0, 2))
        a = wa[..., None]
        b = wb[..., None]
        w4 = np.stack([(1 - a) * (1 - b), a * (1 - b), (1 - a) * b, a * b])
        flat = idx.reshape(4, levels, n, 1) * d + np.arange(d)
        counts = np.bincount(flat.ravel(), weights=(up * w4).ravel(),
                             minlength=levels * table_size * d)
        table_grad = counts.reshape(self.tables.shape).astype(self.tables.dtype)

        if want_coords:
            dfa = (f[1] - f[0]) * (1 - b) + (f[3] - f[2]) * b
            dfb = (f[2] - f[0]) * (1 - a) + (f[3] - f[1]) * a
            dcoords[:, 0] = ((up * dfa).sum(axis=2) * scale).sum(axis=0)
            dcoords[:, 1] = ((up * dfb).sum(axis=2) * scale).sum(axis=0)
        return table_grad, dcoords


# plane order XY, YZ, XZ; each projects a 3D point to the named pair of axes
PLANE_AXES = ((0, 1), (1, 2), (0, 2))


class TriPlaneEncoder:
    """Three orthogonal HashGrid2D planes; features concatenate XY || YZ || XZ."""

    def __init__(self, n_levels=14, features_per_level=1, table_size=2 ** 14,
                 base_resolution=16, growth=1.3056, seed=0, dtype=np.float64):
        rng = np.random.default_rng(seed)
        self.planes = [
            HashGrid2D(n_levels, features_per_level, table_size,
                       base_resolution, growth, rng=rng, dtype=dtype)
            for _ in PLANE_AXES
        ]
        self.n_levels = n_levels
        self.features_per_level = features_per_level

    @property
    def out_dim(self):
        return 3 * self.n_levels * self.features_per_level

    def encode(self, points, cache=None):
        """Encode (N, 3) unit-cube points to (N, out_dim).

        Every 3D axis feeds two planes, so per-axis cells and offsets are
        computed once here; the planes share identical level geometry.
        """
        ref = self.planes[0]
        points = np.clip(np.asarray(points, dtype=ref.tables.dtype), 0.0, 1.0)
        axes = [ref._axis_cells(points[:, k]) for k in range(3)]
        parts = []
        for plane, (i, j) in zip(self.planes, PLANE_AXES):
            (ca, wa), (cb, wb) = axes[i], axes[j]
            sub = None if cache is None else {}
            parts.append(plane._encode_rows(plane._corner_rows(ca, cb), wa, wb,
                                            cache=sub))
            if cache is not None:
                cache.append(sub)
        return np.concatenate(parts, axis=1)

    def backward(self, cache, upstream, want_points=True):
        """Returns (list of per-plane table grads, dpoints or None)."""
        n = upstream.shape[0]
        dpoints = (np.zeros((n, 3), dtype=self.planes[0].tables.dtype)
                   if want_points else None)
        table_grads = []
        width = self.n_levels * self.features_per_level
        # one contiguous transpose; each plane then slices its rows for free
        up_t = np.ascontiguousarray(np.asarray(upstream).T)
        for k, (plane, (i, j)) in enumerate(zip(self.planes, PLANE_AXES)):
            tg, dc = plane.backward(cache[k], up_t[k * width:(k + 1) * width].T,
                                    want_coords=want_points)
            table_grads.append(tg)
            if want_points:
                dpoints[:, i] += dc[:, 0]
                dpoints[:, j] += dc[:, 1]
        return table_grads, dpoints

    def parameters(self):
        return [("xy", self.planes[0].tables),
                ("yz", self.planes[1].tables),
                ("xz", self.planes[2].tables)]
