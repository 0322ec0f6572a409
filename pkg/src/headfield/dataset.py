"""Dataset directory layout and loaders.

A dataset is a directory of per-frame PNGs plus sidecar files:

    frames/frame_0000.png      RGB frames, zero-padded indices
    masks/face_0000.png        binary face region
    masks/neck_0000.png        binary neck region
    poses.json                 intrinsics + per-frame quaternion/translation
    tracks.json                2D landmark tracks with a validity mask
    template.json              rigid 3D landmark template for the stabilizer
    cond.csv                   per-frame lip feature and 52 blendshape columns
    meta.json                  fps, resolution, frame count, background, bounds

Frame counts must agree across every file; loaders raise naming the file
that disagrees (or is missing).
"""

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .face_sync import BLENDSHAPE_NAMES, select_core_expression
from .head_sync import CameraIntrinsics, HeadPose
from .synth_scene import LIP_FEATURE_DIM


def save_image(path, img):
    """Float [0, 1] image (or bool mask) to PNG."""
    img = np.asarray(img)
    if img.dtype == bool:
        data = img.astype(np.uint8) * 255
    else:
        data = (np.clip(img, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    Image.fromarray(data).save(path)


def load_image(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing image file: {path}")
    return np.asarray(Image.open(path), dtype=np.float64) / 255.0


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _read_json(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing dataset file: {path}")
    with open(path) as fh:
        return json.load(fh)


def save_poses(path, intrinsics, poses):
    _write_json(path, {
        "intrinsics": intrinsics.to_dict(),
        "frames": [p.to_dict() for p in poses],
    })


def load_poses(path):
    data = _read_json(path)
    intr = CameraIntrinsics.from_dict(data["intrinsics"])
    poses = [HeadPose.from_dict(d) for d in data["frames"]]
    return intr, poses


def save_tracks(path, observations, valid, image_size):
    obs = np.asarray(observations, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    clean = np.where(valid[..., None], obs, 0.0)
    _write_json(path, {
        "frames": clean.tolist(),
        "valid": valid.tolist(),
        "image_size": [int(image_size[0]), int(image_size[1])],
    })


def load_tracks(path):
    data = _read_json(path)
    obs = np.asarray(data["frames"], dtype=np.float64)
    valid = np.asarray(data["valid"], dtype=bool)
    if obs.shape[:2] != valid.shape:
        raise ValueError(f"{path}: frames and valid shapes disagree")
    return obs, valid, tuple(data["image_size"])


def save_template(path, points):
    _write_json(path, {"points": np.asarray(points, dtype=np.float64).tolist()})


def load_template(path):
    return np.asarray(_read_json(path)["points"], dtype=np.float64)


def save_cond(path, f_lip, blendshapes):
    f_lip = np.asarray(f_lip, dtype=np.float64)
    blendshapes = np.asarray(blendshapes, dtype=np.float64)
    header = ([f"lip_{i}" for i in range(f_lip.shape[1])]
              + [f"bs_{i}" for i in range(len(BLENDSHAPE_NAMES))])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in np.concatenate([f_lip, blendshapes], axis=1):
            writer.writerow([repr(float(v)) for v in row])


def load_cond(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing dataset file: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    n_lip = sum(1 for h in header if h.startswith("lip_"))
    n_bs = sum(1 for h in header if h.startswith("bs_"))
    if n_bs != len(BLENDSHAPE_NAMES):
        raise ValueError(f"{path}: expected {len(BLENDSHAPE_NAMES)} blendshape "
                         f"columns, found {n_bs}")
    table = np.array([[float(v) for v in row] for row in body])
    return table[:, :n_lip], table[:, n_lip:n_lip + n_bs]


@dataclass
class SceneData:
    """In-memory dataset: everything the trainer and stabilizer consume."""
    frames: np.ndarray                # (F, H, W, 3) float in [0, 1]
    intrinsics: CameraIntrinsics
    poses: list
    f_lip: np.ndarray                 # (F, 32)
    blendshapes: np.ndarray           # (F, 52)
    fps: float = 25.0
    background: np.ndarray = None
    aabb: tuple = (-1.0, 1.0)
    face_masks: np.ndarray = None     # (F, H, W) bool
    neck_masks: np.ndarray = None
    tracks: np.ndarray = None         # (F, K, 2)
    tracks_valid: np.ndarray = None
    template: np.ndarray = None
    f_exp: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.background is None:
            self.background = np.zeros(3)
        self.f_exp = select_core_expression(self.blendshapes)

    @property
    def n_frames(self):
        return self.frames.shape[0]

    @property
    def image_size(self):
        return self.frames.shape[2], self.frames.shape[1]


def frame_name(i):
    return f"frame_{i:04d}.png"


def export_scene(scene, out_dir, track_noise_px=0.0, track_noise_rot=0.0,
                 track_noise_trans=0.0, log=None):
    """Write a synthetic scene out as a dataset directory."""
    os.makedirs(os.path.join(out_dir, "frames"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "masks"), exist_ok=True)
    poses = scene.poses()
    f_lip = np.empty((scene.n_frames, LIP_FEATURE_DIM))
    bs = np.empty((scene.n_frames, len(BLENDSHAPE_NAMES)))
    for f in range(scene.n_frames):
        img = scene.render_frame(f, pose=poses[f])
        masks = scene.masks(f, pose=poses[f])
        save_image(os.path.join(out_dir, "frames", frame_name(f)), img)
        save_image(os.path.join(out_dir, "masks", f"face_{f:04d}.png"), masks["face"])
        save_image(os.path.join(out_dir, "masks", f"neck_{f:04d}.png"), masks["neck"])
        f_lip[f], bs[f] = scene.conditioning(f)
        if log and (f + 1) % 10 == 0:
            log(f"rendered frame {f + 1}/{scene.n_frames}")
    obs, valid, _ = scene.emit_tracks(noise_px=track_noise_px,
                                      pose_noise_rot=track_noise_rot,
                                      pose_noise_trans=track_noise_trans)
    save_poses(os.path.join(out_dir, "poses.json"), scene.intrinsics(), poses)
    save_tracks(os.path.join(out_dir, "tracks.json"), obs, valid,
                (scene.width, scene.height))
    save_template(os.path.join(out_dir, "template.json"), scene.landmarks3d())
    save_cond(os.path.join(out_dir, "cond.csv"), f_lip, bs)
    lo, hi = scene.aabb()
    _write_json(os.path.join(out_dir, "meta.json"), {
        "fps": scene.fps,
        "width": scene.width,
        "height": scene.height,
        "n_frames": scene.n_frames,
        "background": list(map(float, scene.background)),
        "aabb": [lo.tolist(), hi.tolist()],
    })
    return out_dir


def load_dataset(path):
    """Read a dataset directory into a SceneData, checking consistency."""
    meta = _read_json(os.path.join(path, "meta.json"))
    n = int(meta["n_frames"])
    frames = []
    for f in range(n):
        frames.append(load_image(os.path.join(path, "frames", frame_name(f))))
    frames = np.stack(frames)
    if frames.shape[1] != meta["height"] or frames.shape[2] != meta["width"]:
        raise ValueError(f"{path}: frame resolution {frames.shape[2]}x"
                         f"{frames.shape[1]} does not match meta.json")

    intr, poses = load_poses(os.path.join(path, "poses.json"))
    f_lip, bs = load_cond(os.path.join(path, "cond.csv"))
    counts = {"poses.json": len(poses), "cond.csv": f_lip.shape[0]}

    tracks = valid = template = None
    tracks_path = os.path.join(path, "tracks.json")
    if os.path.exists(tracks_path):
        tracks, valid, _ = load_tracks(tracks_path)
        counts["tracks.json"] = tracks.shape[0]
    template_path = os.path.join(path, "template.json")
    if os.path.exists(template_path):
        template = load_template(template_path)

    face = neck = None
    if os.path.isdir(os.path.join(path, "masks")):
        face = np.stack([load_image(os.path.join(path, "masks", f"face_{f:04d}.png"))
                         for f in range(n)]) > 0.5
        neck = np.stack([load_image(os.path.join(path, "masks", f"neck_{f:04d}.png"))
                         for f in range(n)]) > 0.5

    for name, count in counts.items():
        if count != n:
            raise ValueError(f"{path}: inconsistent frame counts: meta.json "
                             f"says {n}, {name} has {count}")

    aabb = (-1.0, 1.0)
    if "aabb" in meta:
        aabb = (np.asarray(meta["aabb"][0]), np.asarray(meta["aabb"][1]))
    return SceneData(
        frames=frames, intrinsics=intr, poses=poses, f_lip=f_lip,
        blendshapes=bs, fps=float(meta.get("fps", 25.0)),
        background=np.asarray(meta.get("background", [0.0, 0.0, 0.0])),
        aabb=aabb, face_masks=face, neck_masks=neck,
        tracks=tracks, tracks_valid=valid, template=template,
    )
