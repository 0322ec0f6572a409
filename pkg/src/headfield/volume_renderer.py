"""Emission-absorption volume rendering along camera rays.

Rays are split into equal bins between near and far, the field is sampled
once per bin (midpoint, or stratified within the bin), and samples
composite front to back:

    alpha_i = 1 - exp(-sigma_i * delta_i)
    w_i     = T_i * alpha_i,   T_{i+1} = T_i * (1 - alpha_i)
    C       = sum_i w_i c_i + T_final * background

Weights plus final transmittance telescope to exactly 1, which unit tests
rely on. The backward pass is analytic and division-free.
"""

import numpy as np
from concurrent.futures import ThreadPoolExecutor

DEPTH_EPS = 1e-8


def ray_aabb(origins, dirs, lo=-1.0, hi=1.0):
    """Entry/exit distances of rays against an axis-aligned box.

    ``lo``/``hi`` may be scalars or per-axis 3-vectors. Returns
    (tmin, tmax, hit); misses get tmin == tmax == 0.
    """
    inv = 1.0 / np.where(np.abs(dirs) < 1e-12, 1e-12, dirs)
    t0 = (lo - origins) * inv
    t1 = (hi - origins) * inv
    tmin = np.minimum(t0, t1).max(axis=1)
    tmax = np.maximum(t0, t1).min(axis=1)
    tmin = np.maximum(tmin, 0.0)
    hit = tmax > tmin
    tmin = np.where(hit, tmin, 0.0)
    tmax = np.where(hit, tmax, 0.0)
    return tmin, tmax, hit


def make_rays(intrinsics, pose, pixels):
    """World-space rays through the given (u, v) pixel coordinates.

    ``intrinsics`` has focal/cx/cy, ``pose`` maps world to camera
    (x_cam = R x + T). Directions are unit length; projecting any point
    o + t d (t > 0) with the same camera lands back on the pixel.
    """
    if intrinsics.focal <= 0:
        raise ValueError("focal length must be positive")
    pixels = np.asarray(pixels, dtype=np.float64)
    u, v = pixels[:, 0], pixels[:, 1]
    d_cam = np.stack([
        (u - intrinsics.cx) / intrinsics.focal,
        (v - intrinsics.cy) / intrinsics.focal,
        np.ones_like(u),
    ], axis=1)
    r = pose.rotation_matrix()
    origin = -r.T @ pose.translation
    d_world = d_cam @ r
    d_world /= np.linalg.norm(d_world, axis=1, keepdims=True)
    origins = np.broadcast_to(origin, d_world.shape).copy()
    return origins, d_world


def sample_ts(near, far, n_samples, rng=None, offsets=None):
    """Per-bin sample distances (N, S) and bin widths (N,).

    Midpoints by default; pass an rng for stratified jitter, or explicit
    per-ray ``offsets`` in [0, 1) of shape (N, S).
    """
    near = np.asarray(near)
    far = np.asarray(far)
    if near.dtype.kind != "f":
        near = near.astype(np.float64)
        far = far.astype(np.float64)
    delta = (far - near) / n_samples
    if offsets is None:
        if rng is None:
            offsets = np.full((near.shape[0], n_samples), 0.5, dtype=near.dtype)
        else:
            offsets = rng.random((near.shape[0], n_samples))
    base = np.arange(n_samples, dtype=near.dtype)
    ts = near[:, None] + (base + offsets) * delta[:, None]
    return ts, delta


def composite(colors, sigmas, deltas, background, aux=None):
    """Front-to-back compositing. colors (N,S,3), sigmas (N,S),
    deltas (N,) or (N,S), background (3,) or (N,3). Returns (N,3).

    Pass a dict as ``aux`` to receive alphas, weights and the running
    transmittance (N, S+1).
    """
    deltas = np.asarray(deltas)
    if deltas.ndim == 1:
        deltas = deltas[:, None]
    alphas = 1.0 - np.exp(-sigmas * deltas)
    # t[:, i] is transmittance arriving at sample i; t[:, S] survives to background
    n, s = sigmas.shape
    t = np.empty((n, s + 1), dtype=alphas.dtype)
    t[:, 0] = 1.0
    np.cumprod(1.0 - alphas, axis=1, out=t[:, 1:])
    weights = t[:, :s] * alphas
    out = (weights[:, :, None] * colors).sum(axis=1) + t[:, s:s + 1] * background
    if aux is not None:
        aux.update(alphas=alphas, weights=weights, transmittance=t, deltas=deltas)
    return out


def composite_backward(colors, background, aux, upstream):
    """Gradients of ``composite`` given its ``aux`` cache and dL/dC (N,3).

    Returns (dcolors, dsigmas, dbackground). Uses the suffix identity
    dC/dsigma_i = delta_i * (T_{i+1} c_i - tail_i) with
    tail_i = sum_{j>i} w_j c_j + T_final * background.
    """
    weights = aux["weights"]
    t = aux["transmittance"]
    deltas = aux["deltas"]
    n, s = weights.shape
    dcolors = weights[:, :, None] * upstream[:, None, :]
    wc = weights[:, :, None] * colors
    suffix = np.flip(np.cumsum(np.flip(wc, axis=1), axis=1), axis=1)
    tail = np.empty_like(wc)
    tail[:, :-1] = suffix[:, 1:]
    tail[:, -1] = 0.0
    tail += t[:, s:s + 1, None] * np.asarray(background)[None, None, :]
    dsig_per_c = deltas[:, :, None] * (t[:, 1:, None] * colors - tail)
    dsigmas = (dsig_per_c * upstream[:, None, :]).sum(axis=2)
    dbackground = (t[:, s:s + 1] * upstream).sum(axis=0)
    return dcolors, dsigmas, dbackground


def render_rays(field, origins, dirs, near, far, n_samples, f_lip, f_exp,
                background, rng=None, offsets=None, cache=None):
    """Render a batch of rays through a radiance field.

    Returns (colors (N, 3), opacity (N,), depth (N,)); depth is the
    weight-averaged sample distance (background rays get ~0).
    """
    ts, delta = sample_ts(near, far, n_samples, rng=rng, offsets=offsets)
    n, s = ts.shape
    points = origins[:, None, :] + ts[:, :, None] * dirs[:, None, :]
    flat_pts = points.reshape(-1, 3)
    flat_dirs = np.repeat(dirs, s, axis=0)
    f_cache = None if cache is None else {}
    colors, sigmas = field.forward(flat_pts, flat_dirs, f_lip, f_exp, cache=f_cache)
    colors = colors.reshape(n, s, 3)
    sigmas = sigmas.reshape(n, s)
    aux = {}
    out = composite(colors, sigmas, delta, background, aux=aux)
    opacity = aux["weights"].sum(axis=1)
    depth = (aux["weights"] * ts).sum(axis=1) / np.maximum(opacity, DEPTH_EPS)
    if cache is not None:
        cache.update(field_cache=f_cache, colors=colors, sigmas=sigmas,
                     aux=aux, ts=ts, n=n, s=s)
    return out, opacity, depth


def render_rays_backward(field, cache, background, upstream, want_points=False):
    """Backprop dL/dC through compositing and the field.

    Returns the field's gradient dict plus key "background". Sample-point
    gradients are only computed on request; parameter training never reads
    them.
    """
    colors = cache["colors"]
    dcolors, dsigmas, dbg = composite_backward(colors, background, cache["aux"], upstream)
    grads = field.backward(cache["field_cache"],
                           dcolors.reshape(-1, 3), dsigmas.reshape(-1),
                           want_points=want_points)
    grads["background"] = dbg
    return grads


def stratified_offsets(seed, pixel_ids, n_samples):
    """Per-pixel jitter streams keyed by (seed, pixel id), so the result is
    independent of chunking or thread scheduling."""
    out = np.empty((len(pixel_ids), n_samples))
    for k, pid in enumerate(pixel_ids):
        out[k] = np.random.default_rng((seed, int(pid))).random(n_samples)
    return out


def render_frame(field, intrinsics, pose, height, width, f_lip, f_exp,
                 n_samples=128, background=(1.0, 1.0, 1.0), chunk=8192,
                 threads=1, seed=None, aabb_pad=0.02):
    """Render a full (height, width, 3) image.

    Deterministic midpoint sampling by default; with a ``seed`` each pixel
    jitters its samples from its own (seed, pixel index) stream. Rays that
    miss the scene box get the background directly. Chunks can run on a
    thread pool; numpy releases the GIL in the heavy kernels.
    """
    uu, vv = np.meshgrid(np.arange(width), np.arange(height))
    pixels = np.stack([uu.ravel(), vv.ravel()], axis=1)
    origins, dirs = make_rays(intrinsics, pose, pixels)
    lo, hi = field.aabb
    near, far, hit = ray_aabb(origins, dirs, np.asarray(lo) - aabb_pad,
                              np.asarray(hi) + aabb_pad)
    background = np.asarray(background, dtype=np.float64)
    out = np.empty((pixels.shape[0], 3), dtype=np.float64)
    out[~hit] = background
    idx = np.nonzero(hit)[0]
    offsets = None
    if seed is not None:
        offsets = stratified_offsets(seed, idx, n_samples)

    def run(span):
        sel = idx[span]
        offs = None if offsets is None else offsets[span]
        out[sel] = render_rays(field, origins[sel], dirs[sel], near[sel],
                               far[sel], n_samples, f_lip, f_exp, background,
                               offsets=offs)[0]

    spans = [slice(a, min(a + chunk, idx.size)) for a in range(0, idx.size, chunk)]
    if threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, spans))
    else:
        for span in spans:
            run(span)
    return out.reshape(height, width, 3)
