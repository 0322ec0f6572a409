"""Conditioned radiance field over a tri-plane hash encoding.

Geometry route: point -> tri-plane features -> density MLP -> (sigma, geo).
Appearance route: [geo, SH(direction), lip feature, expression feature]
-> color MLP -> sigmoid RGB. Conditioning enters the appearance route only,
so density (and therefore silhouettes and occupancy) cannot depend on the
audio/expression signals.
"""

import numpy as np

from .hash_encoding import TriPlaneEncoder
from .nn import DenseNet, sh_basis_deg4, sigmoid

GEO_DIM = 15
SH_DIM = 16


class RadianceField:
    def __init__(self, n_levels=14, features_per_level=1, table_size=2 ** 14,
                 base_resolution=16, growth=1.3056, hidden=64, lip_dim=32,
                 exp_dim=7, activation="relu", sigma_clamp=1e4, aabb=(-1.0, 1.0),
                 seed=0, dtype=np.float64):
        self.encoder = TriPlaneEncoder(n_levels, features_per_level, table_size,
                                       base_resolution, growth, seed=seed, dtype=dtype)
        rng = np.random.default_rng(seed + 1)
        enc_dim = self.encoder.out_dim
        self.density_net = DenseNet([enc_dim, hidden, hidden, 1 + GEO_DIM],
                                    activation=activation, rng=rng, dtype=dtype)
        self.color_net = DenseNet([GEO_DIM + SH_DIM + lip_dim + exp_dim, hidden, hidden, 3],
                                  activation=activation, rng=rng, dtype=dtype)
        self.lip_dim = lip_dim
        self.exp_dim = exp_dim
        self.sigma_clamp = sigma_clamp
        # per-axis box bounds; scalars broadcast
        self.aabb = (np.asarray(aabb[0], dtype=np.float64),
                     np.asarray(aabb[1], dtype=np.float64))
        self.dtype = dtype
        self._config = {
            "n_levels": n_levels, "features_per_level": features_per_level,
            "table_size": table_size, "base_resolution": base_resolution,
            "growth": growth, "hidden": hidden, "lip_dim": lip_dim,
            "exp_dim": exp_dim, "activation": activation,
            "sigma_clamp": sigma_clamp, "seed": seed,
        }

    def config(self):
        """Constructor arguments needed to rebuild this field, JSON-ready."""
        lo, hi = self.aabb
        out = dict(self._config)
        out["aabb"] = [np.broadcast_to(lo, 3).tolist(),
                       np.broadcast_to(hi, 3).tolist()]
        out["dtype"] = np.dtype(self.dtype).name
        return out

    @classmethod
    def from_config(cls, cfg):
        kwargs = dict(cfg)
        kwargs["aabb"] = (np.asarray(kwargs["aabb"][0]),
                          np.asarray(kwargs["aabb"][1]))
        kwargs["dtype"] = np.dtype(kwargs["dtype"])
        return cls(**kwargs)

    def _to_unit(self, points):
        lo, hi = self.aabb
        return (points - lo) / (hi - lo)

    def _cond(self, f, dim, n):
        f = np.asarray(f, dtype=self.dtype)
        if f.ndim == 1:
            if f.shape[0] != dim:
                raise ValueError(f"conditioning vector has size {f.shape[0]}, expected {dim}")
            return np.broadcast_to(f, (n, dim)), True
        if f.shape != (n, dim):
            raise ValueError(f"conditioning batch has shape {f.shape}, expected {(n, dim)}")
        return f, False

    def forward(self, points, dirs, f_lip, f_exp, cache=None, sh=None):
        """Evaluate the field at (N, 3) points viewed along (N, 3) directions.

        Returns (color (N, 3) in [0,1], sigma (N,) >= 0). A precomputed
        direction basis can be passed as ``sh`` instead of ``dirs``.
        """
        points = np.asarray(points, dtype=self.dtype)
        n = points.shape[0]
        sh_injected = sh is not None
        if sh is None:
            dirs = np.asarray(dirs, dtype=np.float64)
            norms = np.linalg.norm(dirs, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-6):
                raise ValueError("view directions must be unit length (within 1e-6)")
            sh = sh_basis_deg4(dirs)
        sh = np.asarray(sh, dtype=self.dtype)
        lip, lip_shared = self._cond(f_lip, self.lip_dim, n)
        exp, exp_shared = self._cond(f_exp, self.exp_dim, n)

        enc_cache = None if cache is None else []
        feats = self.encoder.encode(self._to_unit(points), cache=enc_cache)

        d_cache = None if cache is None else []
        d_out = self.density_net.forward(feats, cache=d_cache)
        raw_sigma = d_out[:, 0]
        geo = d_out[:, 1:]
        sigma_exp = np.exp(np.clip(raw_sigma, -60.0, 60.0))
        sigma = np.minimum(sigma_exp, self.sigma_clamp)

        c_cache = None if cache is None else []
        if lip_shared and exp_shared:
            # conditioning is one vector for the whole batch: fold it into
            # the first-layer bias instead of tiling (N, 39) columns
            static = np.concatenate([lip[0], exp[0]])
            c_in = np.concatenate([geo, sh], axis=1)
            c_raw = self.color_net.forward(c_in, cache=c_cache, static_tail=static)
        else:
            static = None
            c_in = np.concatenate([geo, sh, lip, exp], axis=1)
            c_raw = self.color_net.forward(c_in, cache=c_cache)
        color = sigmoid(c_raw)

        if cache is not None:
            cache.update(enc=enc_cache, density=d_cache, color=c_cache,
                         sigma=sigma, sigma_unclamped=sigma_exp, rgb=color,
                         lip_shared=lip_shared, exp_shared=exp_shared, n=n,
                         static=static, sh_injected=sh_injected)
        return color, sigma

    def backward(self, cache, dcolor, dsigma, want_points=True):
        """Gradients of a cached forward. Returns a dict of gradients.

        Keys: tables (list of 3 per-plane arrays), density/color (weight
        grads, bias grads), points, f_lip, f_exp. The point gradient is
        skipped (None) when not requested.
        """
        # through sigmoid and the sigma clamp/exp
        dcolor = np.asarray(dcolor, dtype=self.dtype)
        dsigma = np.asarray(dsigma, dtype=self.dtype)
        rgb = cache["rgb"]
        dc_raw = dcolor * rgb * (1.0 - rgb)
        active = cache["sigma_unclamped"] < self.sigma_clamp
        draw_sigma = dsigma * cache["sigma"] * active

        static = cache["static"]
        if static is not None:
            # dx trimmed to the geometry columns when the caller supplied the
            # direction basis and cannot use its gradient anyway
            dx_dims = GEO_DIM if cache["sh_injected"] else GEO_DIM + SH_DIM
            cw, cb, dc_in = self.color_net.backward(cache["color"], dc_raw,
                                                    static_tail=static,
                                                    dx_dims=dx_dims)
            dgeo = dc_in[:, :GEO_DIM]
            dsh = None if cache["sh_injected"] else dc_in[:, GEO_DIM:]
            # batch-summed conditioning grads via the constant-column weights
            dstatic = self.color_net.weights[0][GEO_DIM + SH_DIM:] @ cb[0]
            dlip = dstatic[:self.lip_dim]
            dexp = dstatic[self.lip_dim:]
        else:
            cw, cb, dc_in = self.color_net.backward(cache["color"], dc_raw)
            dgeo = dc_in[:, :GEO_DIM]
            dsh = dc_in[:, GEO_DIM:GEO_DIM + SH_DIM]
            o = GEO_DIM + SH_DIM
            dlip = dc_in[:, o:o + self.lip_dim]
            dexp = dc_in[:, o + self.lip_dim:]
            if cache["lip_shared"]:
                dlip = dlip.sum(axis=0)
            if cache["exp_shared"]:
                dexp = dexp.sum(axis=0)

        d_up = np.concatenate([draw_sigma[:, None], dgeo], axis=1)
        dw, db, dfeats = self.density_net.backward(cache["density"], d_up)

        table_grads, dunit = self.encoder.backward(cache["enc"], dfeats,
                                                   want_points=want_points)
        lo, hi = self.aabb
        dpoints = dunit / (hi - lo) if want_points else None
        return {
            "tables": table_grads,
            "density": (dw, db),
            "color": (cw, cb),
            "points": dpoints,
            "sh": dsh,
            "f_lip": dlip,
            "f_exp": dexp,
        }

    def parameter_groups(self):
        """(hash tables, net arrays) for per-group optimizer learning rates."""
        tables = [t for _, t in self.encoder.parameters()]
        nets = self.density_net.weights + self.density_net.biases \
            + self.color_net.weights + self.color_net.biases
        return tables, nets

    def gradient_lists(self, grads):
        """Flatten a ``backward`` dict into lists aligned with parameter_groups."""
        tables = list(grads["tables"])
        dw, db = grads["density"]
        cw, cb = grads["color"]
        nets = list(dw) + list(db) + list(cw) + list(cb)
        return tables, nets
