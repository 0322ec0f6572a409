"""Command-line entry points.

Subcommands: synth (build a synthetic dataset), train (fit the field),
stabilize (recover poses from landmark tracks), render (checkpoint to PNG
sequence), eval (metrics CSV), defaults (print the full default config).

Every run is reproducible from its config file plus seed: artifacts are
written without timestamps, and reruns produce byte-identical checkpoints
and CSVs. The SYNCTALK_CORE_THREADS environment variable overrides the
--threads flag everywhere.
"""

import argparse
import csv
import json
import os
import sys

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_config, dump_config
from .dataset import (SceneData, export_scene, frame_name, load_cond,
                      load_dataset, load_image, load_poses, load_template,
                      load_tracks, save_image, save_poses)
from .face_sync import select_core_expression
from .head_sync import CameraIntrinsics, initial_pose_guess, stabilize
from .metrics import lmd, pose_jitter, psnr
from .portrait_sync import composite_portrait, default_blur_sigma
from .radiance_field import RadianceField
from .synth_scene import SynthScene
from .trainer import evaluate, fit_scene, make_optimizer, pack_state, apply_state
from .volume_renderer import render_frame


def _resolve_threads(args, cfg):
    env = os.environ.get("SYNCTALK_CORE_THREADS")
    if env is not None:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(
                f"SYNCTALK_CORE_THREADS must be an integer, got {env!r}")
    if getattr(args, "threads", None) is not None:
        return max(1, args.threads)
    return max(1, cfg["threads"])


def _load_run_config(args):
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    return cfg


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(x):
    return repr(float(x))


def cmd_synth(args):
    cfg = _load_run_config(args)
    scene = SynthScene(
        seed=cfg["seed"], width=cfg["width"], height=cfg["height"],
        fps=cfg["fps"], n_frames=cfg["n_frames"],
        cam_distance=cfg["cam_distance"], focal_scale=cfg["focal_scale"],
        supersample=cfg["supersample"], background=tuple(cfg["background"]),
        az_amplitude=cfg["az_amplitude"], el_amplitude=cfg["el_amplitude"],
        traj_noise_rot=cfg["traj_noise_rot"],
        traj_noise_trans=cfg["traj_noise_trans"])
    export_scene(scene, args.out, track_noise_px=cfg["track_noise_px"],
                 track_noise_rot=cfg["track_noise_rot"],
                 track_noise_trans=cfg["track_noise_trans"],
                 log=print if args.verbose else None)
    print(f"wrote {scene.n_frames} frames at {scene.width}x{scene.height} "
          f"to {args.out}")
    return 0


def _holdout_ids(n_frames, every):
    if every <= 0:
        return []
    return list(range(every // 2, n_frames, every))


def _field_kwargs(cfg, aabb):
    return {
        "n_levels": cfg["n_levels"],
        "features_per_level": cfg["features_per_level"],
        "table_size": cfg["table_size"],
        "base_resolution": cfg["base_resolution"],
        "growth": cfg["growth"],
        "hidden": cfg["hidden"],
        "lip_dim": cfg["lip_dim"],
        "exp_dim": cfg["exp_dim"],
        "activation": cfg["activation"],
        "sigma_clamp": cfg["sigma_clamp"],
        "aabb": aabb,
        "seed": cfg["seed"],
    }


def _checkpoint_meta(field, state_meta, background, width, height):
    return {
        "field": field.config(),
        "state": state_meta,
        "background": [float(c) for c in np.asarray(background).ravel()],
        "width": int(width),
        "height": int(height),
    }


def cmd_train(args):
    cfg = _load_run_config(args)
    threads = _resolve_threads(args, cfg)
    data = load_dataset(args.dataset)
    os.makedirs(args.out, exist_ok=True)
    holdout = _holdout_ids(data.n_frames, cfg["holdout_every"])
    w, h = data.image_size

    resume = None
    if args.resume is not None:
        meta, arrays = load_checkpoint(args.resume)
        resume = (meta["state"], arrays)

    ckpt_dir = os.path.join(args.out, "checkpoints")

    def checkpoint_fn(iteration, field, opt):
        os.makedirs(ckpt_dir, exist_ok=True)
        state_meta, arrays = pack_state(field, opt, iteration)
        save_checkpoint(
            os.path.join(ckpt_dir, f"ckpt_{iteration:06d}.hfck"),
            _checkpoint_meta(field, state_meta, data.background, w, h), arrays)

    field, opt, history = fit_scene(
        data,
        coarse_iters=cfg["coarse_iters"], fine_iters=cfg["fine_iters"],
        rays_per_iter=cfg["rays_per_iter"], patch_size=cfg["patch_size"],
        n_samples=cfg["train_samples"], lr_hash=cfg["lr_hash"],
        lr_other=cfg["lr_other"], weight_decay=cfg["weight_decay"],
        fine_weight=cfg["fine_weight"], perc_scales=cfg["perc_scales"],
        adam_betas=(cfg["adam_beta1"], cfg["adam_beta2"]),
        adam_eps=cfg["adam_eps"], seed=cfg["seed"], holdout=holdout,
        field_kwargs=_field_kwargs(cfg, data.aabb),
        dtype=np.dtype(cfg["train_dtype"]),
        checkpoint_every=cfg["checkpoint_every"], checkpoint_fn=checkpoint_fn,
        resume=resume, eval_every=cfg["eval_every"],
        eval_samples=cfg["eval_samples"], threads=threads, log=print)

    total = cfg["coarse_iters"] + cfg["fine_iters"]
    state_meta, arrays = pack_state(field, opt, total)
    save_checkpoint(os.path.join(args.out, "checkpoint.hfck"),
                    _checkpoint_meta(field, state_meta, data.background, w, h),
                    arrays)
    with open(os.path.join(args.out, "config.yaml"), "w") as fh:
        fh.write(dump_config(cfg))

    start = total - len(history["loss"])
    _write_csv(os.path.join(args.out, "loss.csv"),
               ["iteration", "stage", "loss"],
               [(start + i + 1,
                 "coarse" if start + i < cfg["coarse_iters"] else "fine",
                 _fmt(v))
                for i, v in enumerate(history["loss"])])

    if holdout:
        scores = evaluate(field, data, holdout, n_samples=cfg["eval_samples"],
                          threads=threads)
        rows = [(f, _fmt(s)) for f, s in zip(holdout, scores)]
        rows.append(("mean", _fmt(np.mean(scores))))
        _write_csv(os.path.join(args.out, "eval.csv"), ["frame", "psnr"], rows)
        renders_dir = os.path.join(args.out, "renders")
        os.makedirs(renders_dir, exist_ok=True)
        for f in holdout[:3]:
            img = render_frame(field, data.intrinsics, data.poses[f], h, w,
                               data.f_lip[f], data.f_exp[f],
                               n_samples=cfg["eval_samples"],
                               background=data.background, threads=threads)
            save_image(os.path.join(renders_dir, frame_name(f)), img)
        print(f"holdout psnr: {np.mean(scores):.2f} dB over {len(holdout)} frames")
    return 0


def cmd_stabilize(args):
    cfg = _load_run_config(args)
    observations, valid, image_size = load_tracks(args.tracks)
    template = load_template(args.template)
    os.makedirs(args.out, exist_ok=True)
    w, h = image_size
    guess_intr = CameraIntrinsics(1.0 * w, (w - 1) / 2.0, (h - 1) / 2.0)
    init_poses = [initial_pose_guess(template, observations[f], guess_intr,
                                     valid=valid[f])
                  for f in range(observations.shape[0])]
    result = stabilize(
        observations, template, init_poses, image_size,
        n_candidates=cfg["focal_candidates"],
        span=(cfg["focal_min"], cfg["focal_max"]),
        valid=None if valid.all() else valid, seed=cfg["seed"],
        lm_iters=cfg["lm_iters"], ba1_iters=cfg["ba1_iters"],
        ba2_iters=cfg["ba2_iters"], ba1_lr=cfg["ba1_lr"],
        ba2_lr=cfg["ba2_lr"], patience=cfg["ba_patience"],
        smooth_weight=cfg["ba_smooth"])

    save_poses(os.path.join(args.out, "poses.json"),
               result["intrinsics"], result["poses"])
    report = {
        "focal": float(result["intrinsics"].focal),
        "jitter": float(pose_jitter(result["poses"])),
        "jitter_init": float(pose_jitter(init_poses)),
        "reprojection": {k: float(v.mean() if np.ndim(v) else v)
                         for k, v in result["errors"].items()},
    }
    with open(os.path.join(args.out, "jitter_report.json"), "w") as fh:
        json.dump(report, fh, sort_keys=True, indent=1)
        fh.write("\n")
    print(f"focal {report['focal']:.2f} px, final reprojection "
          f"{report['reprojection']['ba2']:.3e} px^2, "
          f"jitter {report['jitter']:.3e}")
    return 0


def cmd_render(args):
    cfg = _load_run_config(args)
    threads = _resolve_threads(args, cfg)
    meta, arrays = load_checkpoint(args.checkpoint)
    field = RadianceField.from_config(meta["field"])
    opt = make_optimizer(field)
    apply_state(field, opt, meta["state"], arrays)

    intr, poses = load_poses(args.poses)
    f_lip, bs = load_cond(args.cond)
    if f_lip.shape[0] != len(poses):
        raise ValueError(f"frame count mismatch: {args.poses} has "
                         f"{len(poses)}, {args.cond} has {f_lip.shape[0]}")
    f_exp = select_core_expression(bs)
    h, w = int(meta["height"]), int(meta["width"])
    background = np.asarray(meta["background"])

    original = None
    if args.composite is not None:
        original = load_dataset(args.composite)
        if original.n_frames < len(poses):
            raise ValueError(f"composite dataset {args.composite} has "
                             f"{original.n_frames} frames, need {len(poses)}")

    os.makedirs(args.out, exist_ok=True)
    sigma = default_blur_sigma(h, cfg["blur_base_sigma"])
    for f in range(len(poses)):
        img = render_frame(field, intr, poses[f], h, w, f_lip[f], f_exp[f],
                           n_samples=cfg["eval_samples"],
                           background=background, threads=threads)
        if original is not None:
            img = composite_portrait(img, original.frames[f],
                                     original.face_masks[f],
                                     original.neck_masks[f], sigma=sigma)
        save_image(os.path.join(args.out, frame_name(f)), img)
        if args.verbose and (f + 1) % 10 == 0:
            print(f"rendered frame {f + 1}/{len(poses)}")
    print(f"rendered {len(poses)} frames to {args.out}")
    return 0


def _frames_dir(path):
    sub = os.path.join(path, "frames")
    return sub if os.path.isdir(sub) else path


def _list_frames(path):
    d = _frames_dir(path)
    names = sorted(n for n in os.listdir(d)
                   if n.startswith("frame_") and n.endswith(".png"))
    if not names:
        raise ValueError(f"no frame_*.png files found in {d}")
    return [os.path.join(d, n) for n in names]


def cmd_eval(args):
    run = os.path.basename(os.path.normpath(args.render_dir))
    pred_paths = _list_frames(args.render_dir)
    ref_paths = _list_frames(args.reference_dir)
    if len(pred_paths) != len(ref_paths):
        raise ValueError(f"frame count mismatch: {args.render_dir} has "
                         f"{len(pred_paths)}, {args.reference_dir} has "
                         f"{len(ref_paths)}")
    rows = []
    scores = []
    for f, (pp, rp) in enumerate(zip(pred_paths, ref_paths)):
        value = psnr(load_image(pp), load_image(rp))
        scores.append(value)
        rows.append((run, "psnr", f, _fmt(value)))
    rows.append((run, "psnr_mean", "", _fmt(np.mean(scores))))

    ta = os.path.join(args.render_dir, "tracks.json")
    tb = os.path.join(args.reference_dir, "tracks.json")
    if os.path.exists(ta) and os.path.exists(tb):
        a, _, _ = load_tracks(ta)
        b, _, _ = load_tracks(tb)
        rows.append((run, "lmd", "", _fmt(lmd(a, b))))
    for tag, d in (("jitter", args.render_dir), ("jitter_ref", args.reference_dir)):
        pp = os.path.join(d, "poses.json")
        if os.path.exists(pp):
            _, poses = load_poses(pp)
            rows.append((run, tag, "", _fmt(pose_jitter(poses))))

    _write_csv(args.out, ["run", "metric", "frame", "value"], rows)
    print(f"mean psnr {np.mean(scores):.2f} dB over {len(scores)} frames "
          f"-> {args.out}")
    return 0


def cmd_defaults(args):
    text = dump_config(load_config(None))
    if args.out is not None:
        with open(args.out, "w") as fh:
            fh.write(text)
        print(f"wrote defaults to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def _add_common(sub, out_required=True, resume=False):
    sub.add_argument("--config", default=None, help="YAML config file")
    sub.add_argument("--seed", type=int, default=None,
                     help="override the config seed")
    if out_required:
        sub.add_argument("--out", required=True, help="output directory")
    sub.add_argument("--threads", type=int, default=None,
                     help="worker threads (env SYNCTALK_CORE_THREADS wins)")
    if resume:
        sub.add_argument("--resume", default=None,
                         help="checkpoint to resume training from")
    sub.add_argument("--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="headfield",
        description="Conditioned head radiance field toolkit")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("synth", help="generate a synthetic head dataset")
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = subs.add_parser("train", help="fit the field to a dataset")
    p.add_argument("dataset", help="dataset directory")
    _add_common(p, resume=True)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("stabilize", help="recover smooth poses from tracks")
    p.add_argument("tracks", help="tracks.json path")
    p.add_argument("template", help="template.json path")
    _add_common(p)
    p.set_defaults(func=cmd_stabilize)

    p = subs.add_parser("render", help="render a pose/conditioning sequence")
    p.add_argument("checkpoint", help="checkpoint file")
    p.add_argument("poses", help="poses.json path")
    p.add_argument("cond", help="cond.csv path")
    p.add_argument("--composite", default=None,
                   help="dataset directory to composite renders into")
    _add_common(p)
    p.set_defaults(func=cmd_render)

    p = subs.add_parser("eval", help="PSNR/LMD/jitter metrics CSV")
    p.add_argument("render_dir")
    p.add_argument("reference_dir")
    p.add_argument("--out", required=True, help="metrics CSV path")
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("defaults", help="print the default config")
    p.add_argument("--out", default=None, help="write to a file instead")
    p.set_defaults(func=cmd_defaults)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
