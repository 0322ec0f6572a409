"""Coarse-to-fine training of the radiance field on posed, conditioned frames.

Coarse iterations minimize plain MSE over random rays of a random training
frame. Fine iterations add a patch term: a multi-scale L1 difference of
finite-difference image gradients on a random square patch, weighted by
``fine_weight``. That term sees edges, not absolute levels (any constant
offset is invisible to it), so the ray MSE stays on.

Every iteration reseeds its RNG from (seed, iteration), which makes runs
bit-reproducible and lets a resumed run continue exactly where it left off.
"""

import numpy as np

from .nn import sh_basis_deg4
from .optim import AdamW
from .radiance_field import RadianceField
from .volume_renderer import (
    make_rays, ray_aabb, sample_ts, composite, render_rays_backward, render_frame,
)
from .metrics import psnr


def photometric_loss(pred, target):
    """Squared color error summed over channels, averaged over rays.

    A constant offset delta on every channel scores 3 * delta**2.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    return float(((pred - target) ** 2).sum(axis=-1).mean())


def photometric_loss_grad(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    return 2.0 * (pred - target) / pred.shape[0]


def _avgpool2(x):
    h, w = x.shape[0] // 2 * 2, x.shape[1] // 2 * 2
    x = x[:h, :w]
    return x.reshape(h // 2, 2, w // 2, 2, -1).mean(axis=(1, 3)).reshape(
        h // 2, w // 2, *x.shape[2:])


def _upsample2(d, shape):
    out = np.repeat(np.repeat(d, 2, axis=0), 2, axis=1) / 4.0
    pad_h, pad_w = shape[0] - out.shape[0], shape[1] - out.shape[1]
    if pad_h or pad_w:
        out = np.pad(out, [(0, pad_h), (0, pad_w)] + [(0, 0)] * (out.ndim - 2))
    return out


def patch_perceptual_loss(pred, target, n_scales=3, want_grad=False):
    """Multi-scale gradient-difference loss between two (P, P, 3) patches.

    At each of ``n_scales`` dyadic scales, compares horizontal and vertical
    finite-difference gradients with mean absolute error; scales average.
    Zero iff the patches differ by a constant at every scale. Patches
    smaller than 4x4 are rejected.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError("patch shapes disagree")
    if pred.shape[0] < 4 or pred.shape[1] < 4:
        raise ValueError("patch smaller than 4x4")
    levels_p, levels_t = [pred], [target]
    for _ in range(n_scales - 1):
        levels_p.append(_avgpool2(levels_p[-1]))
        levels_t.append(_avgpool2(levels_t[-1]))
    loss = 0.0
    grads = []
    for p, t in zip(levels_p, levels_t):
        gx = p[:, 1:] - p[:, :-1]
        gy = p[1:] - p[:-1]
        tx = t[:, 1:] - t[:, :-1]
        ty = t[1:] - t[:-1]
        loss += (np.abs(gx - tx).mean() + np.abs(gy - ty).mean()) / n_scales
        if want_grad:
            d = np.zeros_like(p)
            dgx = np.sign(gx - tx) / (gx.size * n_scales)
            dgy = np.sign(gy - ty) / (gy.size * n_scales)
            d[:, 1:] += dgx
            d[:, :-1] -= dgx
            d[1:] += dgy
            d[:-1] -= dgy
            grads.append(d)
    if not want_grad:
        return float(loss)
    dpred = grads[-1]
    for k in range(n_scales - 2, -1, -1):
        dpred = grads[k] + _upsample2(dpred, levels_p[k].shape)
    return float(loss), dpred


def make_optimizer(field, lr_hash=1e-2, lr_other=1e-3, weight_decay=0.0,
                   betas=(0.9, 0.999), eps=1e-8):
    """AdamW with hot hash tables and a cooler group for everything else."""
    tables, nets = field.parameter_groups()
    return AdamW([
        {"params": tables, "lr": lr_hash, "weight_decay": weight_decay},
        {"params": nets, "lr": lr_other, "weight_decay": weight_decay},
    ], betas=betas, eps=eps)


def _accumulate(a, b):
    return [x + y for x, y in zip(a, b)]


def _render_batch(field, origins, dirs, near, far, n_samples, f_lip, f_exp,
                  background, offsets):
    """render_rays with the per-ray SH basis hoisted out of the sample loop."""
    cache = {}
    sh = np.repeat(sh_basis_deg4(dirs), n_samples, axis=0)
    ts, delta = sample_ts(near, far, n_samples, offsets=offsets)
    n, s = ts.shape
    points = (origins[:, None, :] + ts[:, :, None] * dirs[:, None, :]).reshape(-1, 3)
    f_cache = {}
    colors, sigmas = field.forward(points, None, f_lip, f_exp, cache=f_cache, sh=sh)
    colors = colors.reshape(n, s, 3)
    sigmas = sigmas.reshape(n, s)
    aux = {}
    out = composite(colors, sigmas, delta, background, aux=aux)
    cache.update(field_cache=f_cache, colors=colors, sigmas=sigmas, aux=aux, ts=ts)
    return out, cache


def train_step(field, opt, batch, stage, n_samples=64, fine_weight=0.1,
               perc_scales=3, rng=None):
    """One optimization step; returns the loss report dict.

    ``batch`` carries per-frame conditioning plus ray arrays (and a patch in
    the fine stage): keys f_lip, f_exp, rays=(origins, dirs, near, far,
    targets) and optionally patch=(origins, dirs, near, far, target_image).
    """
    background = batch["background"]
    o, d, near, far, target = batch["rays"]
    offsets = (rng.random((o.shape[0], n_samples), dtype=np.float64)
               .astype(o.dtype) if rng is not None else None)
    pred, cache = _render_batch(field, o, d, near, far, n_samples,
                                batch["f_lip"], batch["f_exp"], background, offsets)
    report = {"photometric": photometric_loss(pred, target)}
    upstream = photometric_loss_grad(pred, target)
    grads = render_rays_backward(field, cache, background, upstream)
    g_tables, g_nets = field.gradient_lists(grads)

    if stage == "fine" and batch.get("patch") is not None and fine_weight != 0.0:
        po, pd, pnear, pfar, ptarget = batch["patch"]
        ph, pw = ptarget.shape[:2]
        ppred, pcache = _render_batch(field, po, pd, pnear, pfar, n_samples,
                                      batch["f_lip"], batch["f_exp"], background, None)
        ploss, dpatch = patch_perceptual_loss(ppred.reshape(ph, pw, 3), ptarget,
                                              n_scales=perc_scales, want_grad=True)
        report["perceptual"] = ploss
        pgrads = render_rays_backward(field, pcache, background,
                                      fine_weight * dpatch.reshape(-1, 3))
        pt, pn = field.gradient_lists(pgrads)
        g_tables = _accumulate(g_tables, pt)
        g_nets = _accumulate(g_nets, pn)
        report["total"] = report["photometric"] + fine_weight * ploss
    else:
        report["total"] = report["photometric"]

    opt.step([g_tables, g_nets])
    return report


def build_ray_tables(data, aabb, aabb_pad=0.02, dtype=np.float64):
    """Precompute per-frame rays, box spans and flattened targets.

    Ray geometry is exact in float64 and stored in the training dtype so
    every downstream op stays cast-free.
    """
    h, w = data.frames.shape[1:3]
    uu, vv = np.meshgrid(np.arange(w), np.arange(h))
    pixels = np.stack([uu.ravel(), vv.ravel()], axis=1)
    lo = np.asarray(aabb[0]) - aabb_pad
    hi = np.asarray(aabb[1]) + aabb_pad
    tables = []
    for f in range(data.frames.shape[0]):
        origins, dirs = make_rays(data.intrinsics, data.poses[f], pixels)
        near, far, hit = ray_aabb(origins, dirs, lo, hi)
        tables.append({
            "origins": origins.astype(dtype), "dirs": dirs.astype(dtype),
            "near": near.astype(dtype), "far": far.astype(dtype),
            "hit": np.nonzero(hit)[0],
            "targets": data.frames[f].reshape(-1, 3).astype(dtype),
        })
    return tables


def fit_scene(data, coarse_iters=5000, fine_iters=1000, rays_per_iter=1024,
              patch_size=32, n_samples=64, lr_hash=1e-2, lr_other=1e-3,
              weight_decay=0.0, fine_weight=0.1, perc_scales=3,
              adam_betas=(0.9, 0.999), adam_eps=1e-8, seed=0, holdout=(),
              field=None, field_kwargs=None, dtype=np.float32,
              checkpoint_every=0, checkpoint_fn=None, resume=None,
              eval_every=0, eval_samples=128, threads=1, log=None):
    """Run the coarse then fine schedule; returns (field, opt, history).

    ``holdout`` frames are excluded from training and scored by PSNR at the
    end (and every ``eval_every`` iterations if set). ``resume`` takes a
    (meta, arrays) state as produced by ``pack_state``.
    """
    if field is None:
        kwargs = dict(field_kwargs or {})
        kwargs.setdefault("aabb", getattr(data, "aabb", (-1.0, 1.0)))
        kwargs.setdefault("seed", seed)
        field = RadianceField(dtype=dtype, **kwargs)
    opt = make_optimizer(field, lr_hash, lr_other, weight_decay,
                         betas=adam_betas, eps=adam_eps)
    start = 0
    if resume is not None:
        start = apply_state(field, opt, *resume)

    tables = build_ray_tables(data, field.aabb, dtype=field.dtype)
    h, w = data.frames.shape[1:3]
    train_frames = np.array([f for f in range(data.frames.shape[0])
                             if f not in set(holdout)])
    total = coarse_iters + fine_iters
    history = {"loss": [], "eval": []}
    background = np.asarray(data.background, dtype=np.float64)

    for it in range(start, total):
        rng = np.random.default_rng((seed, it))
        stage = "coarse" if it < coarse_iters else "fine"
        fi = int(train_frames[rng.integers(train_frames.size)])
        tab = tables[fi]
        sel = tab["hit"][rng.integers(tab["hit"].size, size=rays_per_iter)]
        batch = {
            "f_lip": data.f_lip[fi], "f_exp": data.f_exp[fi],
            "background": background,
            "rays": (tab["origins"][sel], tab["dirs"][sel], tab["near"][sel],
                     tab["far"][sel], tab["targets"][sel]),
        }
        if stage == "fine":
            u0 = int(rng.integers(0, w - patch_size + 1))
            v0 = int(rng.integers(0, h - patch_size + 1))
            rows = (np.arange(v0, v0 + patch_size)[:, None] * w
                    + np.arange(u0, u0 + patch_size)[None, :]).ravel()
            batch["patch"] = (tab["origins"][rows], tab["dirs"][rows],
                              tab["near"][rows], tab["far"][rows],
                              tab["targets"][rows].reshape(patch_size, patch_size, 3))
        report = train_step(field, opt, batch, stage, n_samples=n_samples,
                            fine_weight=fine_weight, perc_scales=perc_scales,
                            rng=rng)
        history["loss"].append(report["total"])
        done = it + 1
        if checkpoint_fn is not None and checkpoint_every and done % checkpoint_every == 0:
            checkpoint_fn(done, field, opt)
        if eval_every and len(holdout) and done % eval_every == 0 and done < total:
            scores = evaluate(field, data, holdout, n_samples=eval_samples,
                              threads=threads)
            history["eval"].append((done, float(np.mean(scores))))
            if log:
                log(f"iter {done}: holdout psnr {np.mean(scores):.2f} dB")
        elif log and done % 500 == 0:
            log(f"iter {done} [{stage}]: loss {report['total']:.5f}")

    if len(holdout):
        scores = evaluate(field, data, holdout, n_samples=eval_samples,
                          threads=threads)
        history["eval"].append((total, float(np.mean(scores))))
        if log:
            log(f"final holdout psnr {np.mean(scores):.2f} dB")
    return field, opt, history


def evaluate(field, data, frame_ids, n_samples=128, threads=1):
    """Held-out PSNR per frame, rendered deterministically (midpoint)."""
    h, w = data.frames.shape[1:3]
    out = []
    for f in frame_ids:
        img = render_frame(field, data.intrinsics, data.poses[f], h, w,
                           data.f_lip[f], data.f_exp[f], n_samples=n_samples,
                           background=data.background, threads=threads)
        out.append(psnr(img, data.frames[f]))
    return out


def pack_state(field, opt, iteration):
    """Serialize field + optimizer into (meta, named arrays) for checkpoints."""
    arrays = {}
    for name, arr in field.encoder.parameters():
        arrays[f"table_{name}"] = arr
    for prefix, net in (("density", field.density_net), ("color", field.color_net)):
        for pname, arr in net.parameters():
            arrays[f"{prefix}_{pname}"] = arr
    for gi, g in enumerate(opt.groups):
        for pi in range(len(g["params"])):
            arrays[f"adam_m_{gi}_{pi}"] = g["m"][pi]
            arrays[f"adam_v_{gi}_{pi}"] = g["v"][pi]
    meta = {"iteration": int(iteration), "adam_t": int(opt.t)}
    return meta, arrays


def apply_state(field, opt, meta, arrays):
    """Load a ``pack_state`` snapshot in place; returns the stored iteration."""
    for name, arr in pack_state(field, opt, 0)[1].items():
        src = arrays[name]
        if src.shape != arr.shape or src.dtype != arr.dtype:
            raise ValueError(f"checkpoint array {name} has shape {src.shape} "
                             f"{src.dtype}, expected {arr.shape} {arr.dtype}")
        np.copyto(arr, src)
    opt.t = int(meta["adam_t"])
    return int(meta["iteration"])
