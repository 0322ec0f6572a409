"""Analytic head scene: the ground-truth oracle for end-to-end tests.

A stylized head is assembled from closed-form primitives in the unit world
box: a skin ellipsoid, two eye spheres, a lip ellipsoid whose color follows
a scalar lip signal, a brow box driven by one expression coefficient, and a
neck ellipsoid for the compositing tests. The camera sways on a sinusoidal
orbit. Frames are ray traced exactly (with supersampling for pixel-level
antialiasing), so the generator hands every test exact images, masks,
landmark tracks, conditioning signals and poses.
"""

import numpy as np
from dataclasses import dataclass, field

from .geometry import matrix_to_quat, quat_multiply, quat_from_rotvec
from .head_sync import CameraIntrinsics, HeadPose
from .face_sync import BLENDSHAPE_NAMES, core_expression_indices
from .volume_renderer import make_rays

LIP_FEATURE_DIM = 32


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def _intersect_ellipsoid(origins, dirs, center, radii):
    """Nearest positive hit distance per ray (inf on miss)."""
    o = (origins - np.asarray(center)) / np.asarray(radii)
    d = dirs / np.asarray(radii)
    a = (d * d).sum(axis=1)
    b = 2.0 * (o * d).sum(axis=1)
    c = (o * o).sum(axis=1) - 1.0
    disc = b * b - 4 * a * c
    sq = np.sqrt(np.maximum(disc, 0.0))
    t_near = (-b - sq) / (2 * a)
    t = np.where((disc > 0) & (t_near > 1e-9), t_near, np.inf)
    return t


def _intersect_box(origins, dirs, lo, hi):
    """Slab test; returns (t, entry axis index) with t = inf on miss."""
    inv = 1.0 / np.where(np.abs(dirs) < 1e-12, 1e-12, dirs)
    t1 = (lo - origins) * inv
    t2 = (hi - origins) * inv
    tmins = np.minimum(t1, t2)
    tmaxs = np.maximum(t1, t2)
    axis = tmins.argmax(axis=1)
    tmin = tmins.max(axis=1)
    tmax = tmaxs.min(axis=1)
    hit = (tmax > tmin) & (tmin > 1e-9)
    return np.where(hit, tmin, np.inf), axis


@dataclass
class SynthScene:
    """Scene description plus all its derived oracles."""
    seed: int = 0
    width: int = 64
    height: int = 64
    fps: float = 25.0
    n_frames: int = 60
    cam_distance: float = 2.3
    focal_scale: float = 1.2       # focal = focal_scale * width
    supersample: int = 2
    background: tuple = (0.12, 0.15, 0.2)
    az_amplitude: float = 0.25     # radians
    el_amplitude: float = 0.12
    traj_noise_rot: float = 0.0    # optional jitter on the true trajectory
    traj_noise_trans: float = 0.0

    head_center: tuple = (0.0, 0.08, 0.0)
    head_radii: tuple = (0.45, 0.58, 0.48)
    neck_center: tuple = (0.0, -0.62, 0.0)
    neck_radii: tuple = (0.16, 0.34, 0.16)

    lip_basis: np.ndarray = field(init=False, repr=False)
    exp_pattern: np.ndarray = field(init=False, repr=False)

    # primitive ids, also used as mask labels
    BG, HEAD, NECK, LIP, BROW, EYE_L, EYE_R = range(7)

    def __post_init__(self):
        if self.n_frames < 2:
            raise ValueError("need at least 2 frames")
        if max(abs(self.az_amplitude), abs(self.el_amplitude)) >= np.deg2rad(45):
            raise ValueError("rotation amplitude must stay below 45 degrees")
        rng = np.random.default_rng(self.seed)
        u = _unit(rng.standard_normal(LIP_FEATURE_DIM))
        w = rng.standard_normal(LIP_FEATURE_DIM)
        w = _unit(w - (w @ u) * u)
        self.lip_basis = np.stack([u, w])
        self.exp_pattern = 0.4 + 0.6 * rng.random(7)

        hc, hr = np.asarray(self.head_center), np.asarray(self.head_radii)
        self._lip_center = hc + hr * _unit((0.0, -0.5, 0.85))
        self._lip_radii = np.array([0.17, 0.075, 0.08])
        self._brow_lo = np.array([-0.28, 0.33, 0.30])
        self._brow_hi = np.array([0.28, 0.42, 0.53])
        self._eye_centers = [hc + hr * _unit((-0.33, 0.22, 0.92)),
                             hc + hr * _unit((0.33, 0.22, 0.92))]
        self._eye_radius = 0.07

    # ---------------------------------------------------------- camera

    def intrinsics(self, width=None, height=None):
        w = self.width if width is None else width
        h = self.height if height is None else height
        return CameraIntrinsics(self.focal_scale * w, (w - 1) / 2.0, (h - 1) / 2.0)

    def pose(self, frame):
        """World-to-camera pose of the swaying camera at a frame index."""
        t = frame / self.fps
        az = self.az_amplitude * np.sin(2 * np.pi * 0.35 * t)
        el = self.el_amplitude * np.sin(2 * np.pi * 0.23 * t + 1.0)
        c = self.cam_distance * np.array([
            np.sin(az) * np.cos(el), np.sin(el), np.cos(az) * np.cos(el)])
        z = _unit(-c)
        x = _unit(np.cross(np.array([0.0, -1.0, 0.0]), z))
        y = np.cross(z, x)
        r = np.stack([x, y, z])
        quat, trans = matrix_to_quat(r), -r @ c
        if self.traj_noise_rot > 0 or self.traj_noise_trans > 0:
            rng = np.random.default_rng((self.seed, frame))
            if self.traj_noise_rot > 0:
                quat = quat_multiply(quat_from_rotvec(
                    self.traj_noise_rot * rng.standard_normal(3)), quat)
            if self.traj_noise_trans > 0:
                trans = trans + self.traj_noise_trans * rng.standard_normal(3)
        return HeadPose(quat, trans)

    def poses(self):
        return [self.pose(f) for f in range(self.n_frames)]

    def aabb(self):
        """Tight world bounds of the geometry, for the field and renderer."""
        return (np.array([-0.55, -1.0, -0.55]), np.array([0.55, 0.72, 0.6]))

    # ---------------------------------------------------------- signals

    def signals(self, frame):
        """(lip, brow) drive signals in [0, 1] at a frame index."""
        t = frame / self.fps
        lip = 0.5 + 0.5 * np.sin(2 * np.pi * 1.7 * t)
        brow = 0.5 + 0.5 * np.sin(2 * np.pi * 0.9 * t + 0.7)
        return float(lip), float(brow)

    def lip_feature(self, lip_signal):
        """32-channel audio-style feature, linear in the lip signal."""
        u, w = self.lip_basis
        return lip_signal * u + (1.0 - lip_signal) * w

    def blendshapes(self, brow_signal):
        """52 blendshape weights; only the brow/blink channels move."""
        bs = np.zeros(len(BLENDSHAPE_NAMES))
        bs[core_expression_indices()] = self.exp_pattern * brow_signal
        return bs

    def conditioning(self, frame):
        """(f_lip (32,), blendshapes (52,)) for a frame index."""
        lip, brow = self.signals(frame)
        return self.lip_feature(lip), self.blendshapes(brow)

    # ---------------------------------------------------------- tracing

    def trace(self, origins, dirs, lip_signal, brow_signal):
        """Exact render of arbitrary rays: (colors (N, 3), hit ids (N,))."""
        n = origins.shape[0]
        t_best = np.full(n, np.inf)
        hit_id = np.full(n, self.BG, dtype=np.int64)
        normal = np.zeros((n, 3))
        albedo = np.tile(np.asarray(self.background, dtype=np.float64), (n, 1))

        def take(pid, t, normals_fn, albedo_fn):
            closer = t < t_best
            if not closer.any():
                return
            idx = np.nonzero(closer)[0]
            p = origins[idx] + t[idx, None] * dirs[idx]
            t_best[idx] = t[idx]
            hit_id[idx] = pid
            normal[idx] = normals_fn(p, idx)
            albedo[idx] = albedo_fn(p)

        def ell_normal(center, radii):
            def fn(p, idx):
                nv = (p - np.asarray(center)) / np.asarray(radii) ** 2
                return nv / np.linalg.norm(nv, axis=1, keepdims=True)
            return fn

        skin = np.array([0.82, 0.62, 0.52])
        take(self.HEAD,
             _intersect_ellipsoid(origins, dirs, self.head_center, self.head_radii),
             ell_normal(self.head_center, self.head_radii),
             lambda p: skin + 0.05 * (np.sin(5.0 * p[:, 0:1]) + np.sin(7.0 * p[:, 1:2])) / 2.0)
        take(self.NECK,
             _intersect_ellipsoid(origins, dirs, self.neck_center, self.neck_radii),
             ell_normal(self.neck_center, self.neck_radii),
             lambda p: np.full((p.shape[0], 3), (0.72, 0.54, 0.46)))
        lip_color = (np.array([0.45, 0.18, 0.22])
                     + lip_signal * np.array([0.4, 0.08, 0.1]))
        take(self.LIP,
             _intersect_ellipsoid(origins, dirs, self._lip_center, self._lip_radii),
             ell_normal(self._lip_center, self._lip_radii),
             lambda p: np.tile(lip_color, (p.shape[0], 1)))
        t_box, axis = _intersect_box(origins, dirs, self._brow_lo, self._brow_hi)
        brow_color = (np.array([0.38, 0.28, 0.22])
                      + brow_signal * np.array([-0.28, -0.18, -0.12]))

        def box_normal(p, idx):
            nv = np.zeros((p.shape[0], 3))
            ax = axis[idx]
            nv[np.arange(p.shape[0]), ax] = -np.sign(dirs[idx, ax])
            return nv

        take(self.BROW, t_box, box_normal, lambda p: np.tile(brow_color, (p.shape[0], 1)))
        for pid, ec in ((self.EYE_L, self._eye_centers[0]),
                        (self.EYE_R, self._eye_centers[1])):
            take(pid,
                 _intersect_ellipsoid(origins, dirs, ec, [self._eye_radius] * 3),
                 ell_normal(ec, [self._eye_radius] * 3),
                 lambda p: np.full((p.shape[0], 3), (0.15, 0.12, 0.1)))

        light = _unit((0.3, 0.5, 0.8))
        lit = hit_id != self.BG
        shade = 0.68 + 0.32 * np.maximum((normal[lit] * light).sum(axis=1), 0.0)
        colors = albedo
        colors[lit] = np.clip(albedo[lit] * shade[:, None], 0.0, 1.0)
        return colors, hit_id

    def _pixel_rays(self, pose, offsets, width, height):
        uu, vv = np.meshgrid(np.arange(width), np.arange(height))
        base = np.stack([uu.ravel(), vv.ravel()], axis=1).astype(np.float64)
        intr = self.intrinsics(width, height)
        rays = []
        for du, dv in offsets:
            rays.append(make_rays(intr, pose, base + np.array([du, dv])))
        return rays

    def render_frame(self, frame, pose=None, width=None, height=None):
        """Supersampled (H, W, 3) float image of a frame."""
        width = self.width if width is None else width
        height = self.height if height is None else height
        if pose is None:
            pose = self.pose(frame)
        lip, brow = self.signals(frame)
        ss = self.supersample
        grid = (np.arange(ss) + 0.5) / ss - 0.5
        offsets = [(du, dv) for dv in grid for du in grid]
        acc = np.zeros((height * width, 3))
        for o, d in self._pixel_rays(pose, offsets, width, height):
            acc += self.trace(o, d, lip, brow)[0]
        acc /= len(offsets)
        return acc.reshape(height, width, 3)

    def masks(self, frame, pose=None, width=None, height=None):
        """Binary face/neck/lip masks from the pixel-center rays."""
        width = self.width if width is None else width
        height = self.height if height is None else height
        if pose is None:
            pose = self.pose(frame)
        (o, d), = self._pixel_rays(pose, [(0.0, 0.0)], width, height)
        _, hit_id = self.trace(o, d, 0.5, 0.5)
        hit_id = hit_id.reshape(height, width)
        face = (hit_id != self.BG) & (hit_id != self.NECK)
        return {"face": face, "neck": hit_id == self.NECK, "lip": hit_id == self.LIP}

    # ---------------------------------------------------------- landmarks

    def landmarks3d(self):
        """Fixed head-local 3D landmarks: a face ring plus feature points."""
        dirs = []
        for ang in np.linspace(0, 2 * np.pi, 12, endpoint=False):
            dirs.append((0.7 * np.cos(ang), 0.7 * np.sin(ang), 0.72))
        dirs += [(0.0, -0.5, 0.85), (-0.18, -0.52, 0.84), (0.18, -0.52, 0.84),
                 (0.0, -0.7, 0.7), (-0.35, 0.55, 0.75), (0.35, 0.55, 0.75),
                 (-0.33, 0.22, 0.92), (0.33, 0.22, 0.92)]
        dirs = np.array([_unit(d) for d in dirs])
        return np.asarray(self.head_center) + dirs * np.asarray(self.head_radii)

    def emit_tracks(self, noise_px=0.0, pose_noise_rot=0.0, pose_noise_trans=0.0,
                    seed=None):
        """Landmark observations plus a rough (noisy) pose track.

        Returns (observations (F, K, 2), valid (F, K) bools, rough poses).
        Validity marks landmarks in front of the camera. Noise magnitudes:
        pixels, radians, world units.
        """
        rng = np.random.default_rng(self.seed + 1 if seed is None else seed)
        pts = self.landmarks3d()
        intr = self.intrinsics()
        obs = np.empty((self.n_frames, pts.shape[0], 2))
        valid = np.ones(obs.shape[:2], dtype=bool)
        rough = []
        for f in range(self.n_frames):
            pose = self.pose(f)
            xc = pts @ pose.rotation_matrix().T + pose.translation
            valid[f] = xc[:, 2] > 1e-9
            z = np.where(valid[f], xc[:, 2], 1.0)
            obs[f, :, 0] = intr.focal * xc[:, 0] / z + intr.cx
            obs[f, :, 1] = intr.focal * xc[:, 1] / z + intr.cy
            obs[f, ~valid[f]] = np.nan
            if noise_px > 0:
                obs[f, valid[f]] += noise_px * rng.standard_normal(
                    (int(valid[f].sum()), 2))
            dq = quat_from_rotvec(pose_noise_rot * rng.standard_normal(3)) \
                if pose_noise_rot > 0 else np.array([1.0, 0, 0, 0])
            dt = pose_noise_trans * rng.standard_normal(3) if pose_noise_trans > 0 else 0.0
            rough.append(HeadPose(quat_multiply(dq, pose.quat), pose.translation + dt))
        return obs, valid, rough


def generate_scene(spec=None, seed=0, **overrides):
    """Build a SynthScene from a spec mapping (plus keyword overrides)."""
    kwargs = dict(spec or {})
    kwargs.update(overrides)
    kwargs["seed"] = seed
    return SynthScene(**kwargs)


def reference_render(scene, frame, resolution=None):
    """Exact image plus masks at an optional (width, height) resolution."""
    w, h = resolution if resolution is not None else (scene.width, scene.height)
    img = scene.render_frame(frame, width=w, height=h)
    return img, scene.masks(frame, width=w, height=h)


def emit_tracks(scene, noise_px=0.0, **kwargs):
    return scene.emit_tracks(noise_px=noise_px, **kwargs)
