"""Shared helpers: finite differences and miniature differentiable models.

Finite differences only probe smooth regions: tanh activations instead of
relu, and interior points away from grid cell boundaries (encoding lerps
kink there, and coordinate clamping makes derivatives one-sided at the
domain edge).
"""

import numpy as np

from headfield.radiance_field import RadianceField


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / denom)


def central_diff(f, x, eps=1e-6):
    """Gradient of scalar f at array x by central differences, elementwise.

    Mutates a private copy of x one entry at a time; f is called with the
    whole array.
    """
    x = np.array(x, dtype=np.float64, copy=True)
    g = np.zeros_like(x)
    flat, gf = x.ravel(), g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x)
        flat[i] = orig - eps
        lo = f(x)
        flat[i] = orig
        gf[i] = (hi - lo) / (2.0 * eps)
    return g


def directional_diff(f, x, d, eps=1e-6):
    """Directional derivative of scalar f at x along d, central difference."""
    x = np.asarray(x, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    return float((f(x + eps * d) - f(x - eps * d)) / (2.0 * eps))


def interior_points(rng, resolutions, n, dims, margin=1e-3):
    """Uniform unit-cube samples whose cell fraction at every resolution is
    at least `margin` away from 0 and 1 on every axis.

    Keeps central differences (step ~1e-6 in coordinates) inside a single
    lerp cell at all levels.
    """
    out = np.empty((0, dims))
    while out.shape[0] < n:
        cand = rng.uniform(0.0, 1.0, size=(max(64, 4 * n), dims))
        ok = np.ones(cand.shape[0], dtype=bool)
        for r in resolutions:
            w = cand * (r - 1)
            frac = w - np.floor(w)
            ok &= ((frac > margin) & (frac < 1.0 - margin)).all(axis=1)
        out = np.vstack([out, cand[ok]])
    return out[:n]


def tiny_field(seed=0, **overrides):
    """Small smooth field for gradient checks: 4 levels, width 16, tanh."""
    kwargs = dict(n_levels=4, features_per_level=1, table_size=512,
                  base_resolution=4, growth=1.5, hidden=16, lip_dim=4,
                  exp_dim=3, activation="tanh", seed=seed, dtype=np.float64)
    kwargs.update(overrides)
    return RadianceField(**kwargs)
