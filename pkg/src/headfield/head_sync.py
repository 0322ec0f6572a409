"""Head pose stabilization from tracked 2D facial landmarks.

Pipeline: pick the focal length whose refined poses explain the landmarks
best (grid search, poses re-initialized per candidate), then per-frame
Levenberg-Marquardt pose refinement against a canonical landmark model,
then two rounds of bundle adjustment: first the 3D landmarks alone from a
random start with poses frozen, then everything jointly. All reprojection
costs are mean squared pixel distances; gradients are analytic throughout.
"""

import numpy as np
from dataclasses import dataclass

from .geometry import (
    quat_normalize, quat_to_matrix, quat_multiply, quat_from_rotvec,
    quats_to_matrices, quat_rotation_jacobian_batch, align_quat_signs,
)
from .optim import AdamW


@dataclass
class CameraIntrinsics:
    focal: float
    cx: float
    cy: float

    def to_dict(self):
        return {"focal": float(self.focal), "cx": float(self.cx), "cy": float(self.cy)}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["focal"]), float(d["cx"]), float(d["cy"]))


@dataclass
class HeadPose:
    """World-to-camera rigid transform: x_cam = R(quat) @ x_world + translation."""
    quat: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.quat = quat_normalize(self.quat)
        self.translation = np.asarray(self.translation, dtype=np.float64)

    def rotation_matrix(self):
        return quat_to_matrix(self.quat)

    def copy(self):
        return HeadPose(self.quat.copy(), self.translation.copy())

    def to_dict(self):
        return {"quat": [float(v) for v in self.quat],
                "translation": [float(v) for v in self.translation]}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["quat"], dtype=np.float64),
                   np.asarray(d["translation"], dtype=np.float64))


def project(points, pose, intrinsics):
    """Pinhole projection of (N, 3) world points to (N, 2) pixels.

    Raises if any point lands on or behind the camera plane.
    """
    points = np.asarray(points, dtype=np.float64)
    xc = points @ pose.rotation_matrix().T + pose.translation
    z = xc[:, 2]
    if np.any(z <= 1e-12):
        raise ValueError("point behind camera")
    u = intrinsics.focal * xc[:, 0] / z + intrinsics.cx
    v = intrinsics.focal * xc[:, 1] / z + intrinsics.cy
    return np.stack([u, v], axis=1)


def landmark_error(points, pose, intrinsics, observed, valid=None):
    """Mean squared pixel distance between projected and observed landmarks.

    A uniform 1-pixel offset therefore scores exactly 1.0.
    """
    proj = project(points, pose, intrinsics)
    d2 = ((proj - np.asarray(observed, dtype=np.float64)) ** 2).sum(axis=1)
    if valid is not None:
        valid = np.asarray(valid, dtype=bool)
        if not valid.any():
            return 0.0
        d2 = d2[valid]
    return float(d2.mean())


def _project_batch(points, quats, trans, intrinsics):
    """(F,4),(F,3) poses x (N,3) points -> camera points (F,N,3) and pixels (F,N,2)."""
    r = quats_to_matrices(quats)
    xc = np.einsum("fij,nj->fni", r, points) + trans[:, None, :]
    z = xc[..., 2]
    uv = np.empty(xc.shape[:2] + (2,))
    uv[..., 0] = intrinsics.focal * xc[..., 0] / z + intrinsics.cx
    uv[..., 1] = intrinsics.focal * xc[..., 1] / z + intrinsics.cy
    return xc, uv


def reprojection_cost(points, quats, trans, intrinsics, observed, valid=None):
    """Mean squared pixel distance over all frames and valid landmarks."""
    xc, uv = _project_batch(np.asarray(points, dtype=np.float64),
                            np.asarray(quats, dtype=np.float64),
                            np.asarray(trans, dtype=np.float64), intrinsics)
    d2 = ((uv - observed) ** 2).sum(axis=-1)
    if valid is None:
        return float(d2.mean())
    valid = np.asarray(valid, dtype=bool)
    return float(d2[valid].mean())


def refine_pose(points, observed, intrinsics, init_pose, max_iters=50,
                lam0=1e-3, tol=1e-14):
    """Levenberg-Marquardt fit of one pose to observed (N, 2) landmarks.

    Rotation updates are left-multiplied axis-angle increments; the damping
    scales with diag(J^T J). Returns (pose, mean squared pixel error).
    """
    points = np.asarray(points, dtype=np.float64)
    observed = np.asarray(observed, dtype=np.float64)
    q = quat_normalize(init_pose.quat)
    t = init_pose.translation.astype(np.float64).copy()
    f = intrinsics.focal

    def cost(qq, tt):
        xc = points @ quat_to_matrix(qq).T + tt
        z = xc[:, 2]
        if np.any(z <= 1e-9):
            return np.inf, None, None
        uv = np.stack([f * xc[:, 0] / z + intrinsics.cx,
                       f * xc[:, 1] / z + intrinsics.cy], axis=1)
        return float(((uv - observed) ** 2).sum()), xc, uv

    c, xc, uv = cost(q, t)
    if not np.isfinite(c):
        raise ValueError("initial pose puts landmarks behind the camera")
    lam = lam0
    for _ in range(max_iters):
        x, y, z = xc[:, 0], xc[:, 1], xc[:, 2]
        jp = np.zeros((points.shape[0], 2, 3))
        jp[:, 0, 0] = f / z
        jp[:, 0, 2] = -f * x / z ** 2
        jp[:, 1, 1] = f / z
        jp[:, 1, 2] = -f * y / z ** 2
        # rotated (not translated) points drive the rotation block
        rp = xc - t
        cross = np.zeros((points.shape[0], 3, 3))
        cross[:, 0, 1] = -rp[:, 2]
        cross[:, 0, 2] = rp[:, 1]
        cross[:, 1, 0] = rp[:, 2]
        cross[:, 1, 2] = -rp[:, 0]
        cross[:, 2, 0] = -rp[:, 1]
        cross[:, 2, 1] = rp[:, 0]
        jw = -np.einsum("nij,njk->nik", jp, cross)
        j = np.concatenate([jw, jp], axis=2).reshape(-1, 6)
        r = (uv - observed).reshape(-1)
        g = j.T @ r
        h = j.T @ j
        accepted = False
        for _ in range(8):
            damp = h + lam * np.diag(np.maximum(np.diag(h), 1e-12))
            try:
                delta = np.linalg.solve(damp, -g)
            except np.linalg.LinAlgError:
                lam *= 3.0
                continue
            q_try = quat_normalize(quat_multiply(quat_from_rotvec(delta[:3]), q))
            t_try = t + delta[3:]
            c_try, xc_try, uv_try = cost(q_try, t_try)
            if c_try < c:
                rel_drop = (c - c_try) / max(c, 1e-300)
                q, t, c, xc, uv = q_try, t_try, c_try, xc_try, uv_try
                lam = max(lam / 3.0, 1e-12)
                accepted = True
                break
            lam *= 3.0
            if lam > 1e12:
                break
        if not accepted:
            break
        if rel_drop < tol:
            break
    pose = HeadPose(q, t)
    return pose, c / points.shape[0]


def refine_poses(points, observations, intrinsics, init_poses, chain=False, **kwargs):
    """Per-frame LM refinement over (F, N, 2) observations.

    With ``chain`` each frame starts from the previous refined pose instead
    of its own initializer. Returns (poses, per-frame mean squared errors).
    """
    poses, errs = [], []
    prev = None
    for fidx in range(observations.shape[0]):
        init = prev if (chain and prev is not None) else init_poses[fidx]
        pose, err = refine_pose(points, observations[fidx], intrinsics, init, **kwargs)
        poses.append(pose)
        errs.append(err)
        prev = pose
    return poses, np.array(errs)


def focal_candidates(image_width, n=25, span=(0.5, 2.0)):
    """Log-spaced focal grid in units of the image width."""
    return np.geomspace(span[0] * image_width, span[1] * image_width, n)


def focal_search(points, observations, init_poses, image_size, candidates=None,
                 n_candidates=25, span=(0.5, 2.0), **refine_kwargs):
    """Pick the focal length minimizing total refined reprojection error.

    Poses restart from ``init_poses`` for every candidate so candidates are
    scored independently. Ties keep the smaller focal. Returns
    (best intrinsics, refined poses at the best focal, error per candidate,
    candidate array).
    """
    w, h = image_size
    if candidates is None:
        candidates = focal_candidates(w, n_candidates, span)
    candidates = np.asarray(candidates, dtype=np.float64)
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    errors = np.empty(candidates.shape[0])
    best = None
    for k, f in enumerate(candidates):
        intr = CameraIntrinsics(float(f), cx, cy)
        poses, errs = refine_poses(points, observations, intr,
                                   [p.copy() for p in init_poses], **refine_kwargs)
        errors[k] = errs.mean()
        if best is None or errors[k] < best[0]:
            best = (errors[k], intr, poses)
    return best[1], best[2], errors, candidates


def _joint_cost_grads(points, quats, trans, intrinsics, observed, valid,
                      want_points=True, want_poses=True):
    """Cost plus analytic gradients for the bundle adjustment stages."""
    xc, uv = _project_batch(points, quats, trans, intrinsics)
    res = uv - observed
    if valid is not None:
        res = res * valid[..., None]
        denom = max(int(valid.sum()), 1)
    else:
        denom = res.shape[0] * res.shape[1]
    cost = float((res ** 2).sum() / denom)

    f = intrinsics.focal
    z = xc[..., 2]
    duv = 2.0 * res / denom
    # chain through the pinhole division
    dxc = np.empty_like(xc)
    dxc[..., 0] = duv[..., 0] * f / z
    dxc[..., 1] = duv[..., 1] * f / z
    dxc[..., 2] = -(duv[..., 0] * xc[..., 0] + duv[..., 1] * xc[..., 1]) * f / z ** 2

    out = {"cost": cost}
    if want_points:
        r = quats_to_matrices(quats)
        out["points"] = np.einsum("fij,fni->nj", r, dxc)
    if want_poses:
        jq = quat_rotation_jacobian_batch(quats, points)
        out["quats"] = np.einsum("fnij,fni->fj", jq, dxc)
        out["trans"] = dxc.sum(axis=1)
    return out


def ba_stage1(observations, quats, trans, intrinsics, n_points=None, iters=2000,
              lr=1e-2, patience=100, valid=None, seed=0, init_points=None):
    """Recover 3D landmarks from frozen poses, starting from random points.

    Adam with early stopping on the best cost seen; returns the best
    points, not the last iterate.
    """
    observations = np.asarray(observations, dtype=np.float64)
    quats = np.asarray(quats, dtype=np.float64)
    trans = np.asarray(trans, dtype=np.float64)
    seen = (np.asarray(valid, dtype=bool).sum(axis=0) if valid is not None
            else np.full(observations.shape[1], observations.shape[0]))
    weak = int((seen < 2).sum())
    if weak:
        raise ValueError(
            f"{weak} landmark(s) observed in fewer than 2 frames are "
            "under-constrained; triangulation needs motion")
    if init_points is None:
        rng = np.random.default_rng(seed)
        n = n_points if n_points is not None else observations.shape[1]
        points = rng.uniform(-0.5, 0.5, size=(n, 3))
    else:
        points = np.array(init_points, dtype=np.float64, copy=True)
    opt = AdamW([{"params": [points], "lr": lr}])
    best_cost, best_points, since = np.inf, points.copy(), 0
    history = []
    for _ in range(iters):
        g = _joint_cost_grads(points, quats, trans, intrinsics, observations,
                              valid, want_poses=False)
        history.append(g["cost"])
        if g["cost"] < best_cost - 1e-15:
            best_cost, best_points, since = g["cost"], points.copy(), 0
        else:
            since += 1
            if since >= patience:
                break
        opt.step([[g["points"]]])
    return best_points, best_cost, history


def _second_diff_energy(quats, trans):
    """Temporal roughness of the stacked (quat, translation) trajectory.

    Returns (value, dquats, dtrans) for mean_t ||x_{t+1} - 2 x_t + x_{t-1}||^2
    over the 7-vector x_t = (q_t, tau_t). The gradient is the adjoint of the
    second-difference stencil.
    """
    dq = np.zeros_like(quats)
    dt = np.zeros_like(trans)
    n = quats.shape[0] - 2
    if n < 1:
        return 0.0, dq, dt

    def block(x, out):
        s = x[2:] - 2.0 * x[1:-1] + x[:-2]
        g = (2.0 / n) * s
        out[2:] += g
        out[1:-1] -= 2.0 * g
        out[:-2] += g
        return (s ** 2).sum() / n

    value = block(quats, dq) + block(trans, dt)
    return value, dq, dt


def ba_stage2(points, poses, intrinsics, observations, iters=2000, lr=1e-3,
              patience=100, valid=None, smooth_weight=100.0):
    """Joint refinement of landmarks and every pose.

    Quaternion gradients are projected onto the tangent of the unit sphere
    and quaternions renormalized after each step. Early stopping tracks the
    best cost; best iterates are returned.

    smooth_weight > 0 swaps the objective for C * (1 + w * S) where C is the
    reprojection cost and S the mean squared second difference of the pose
    trajectory. Free per-frame poses soak up landmark noise frame by frame,
    which makes the recovered trajectory jitter more than the initialization
    it started from; the roughness factor couples neighboring frames so that
    noise averages out instead. Scaling the penalty by C itself keeps the
    pressure proportional to the data misfit: on clean tracks C vanishes and
    the fit stays exact. Quaternion signs are aligned along time first so the
    finite differences compare rotations, not hemisphere flips. History holds
    the optimized objective; the returned cost is the reprojection part alone.
    """
    observations = np.asarray(observations, dtype=np.float64)
    points = np.array(points, dtype=np.float64, copy=True)
    quats = np.stack([quat_normalize(p.quat) for p in poses])
    trans = np.stack([p.translation.astype(np.float64) for p in poses])
    if smooth_weight != 0.0:
        quats = align_quat_signs(quats)
    opt = AdamW([{"params": [points, quats, trans], "lr": lr}])
    best = {"total": np.inf}
    since = 0
    history = []
    for _ in range(iters):
        g = _joint_cost_grads(points, quats, trans, intrinsics, observations, valid)
        cost = g["cost"]
        if smooth_weight != 0.0:
            rough, dq_r, dt_r = _second_diff_energy(quats, trans)
            scale = 1.0 + smooth_weight * rough
            total = cost * scale
            dp = g["points"] * scale
            dq = g["quats"] * scale + cost * smooth_weight * dq_r
            dt = g["trans"] * scale + cost * smooth_weight * dt_r
        else:
            total = cost
            dp, dq, dt = g["points"], g["quats"], g["trans"]
        history.append(total)
        if total < best["total"] - 1e-18:
            best = {"total": total, "cost": cost, "points": points.copy(),
                    "quats": quats.copy(), "trans": trans.copy()}
            since = 0
        else:
            since += 1
            if since >= patience:
                break
        dq -= (dq * quats).sum(axis=1, keepdims=True) * quats
        opt.step([[dp, dq, dt]])
        quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    out_poses = [HeadPose(q, t) for q, t in zip(best["quats"], best["trans"])]
    return best["points"], out_poses, best["cost"], history


def initial_pose_guess(model_points, observed, intrinsics, valid=None):
    """Rough pose from image statistics alone: identity rotation, depth from
    the ratio of model to pixel RMS radius, lateral offset from the centroid.
    Good enough to seed the LM refiner."""
    pts = np.asarray(model_points, dtype=np.float64)
    obs = np.asarray(observed, dtype=np.float64)
    if valid is not None:
        obs = obs[np.asarray(valid, dtype=bool)]
    if obs.shape[0] < 2:
        raise ValueError("need at least 2 valid landmarks for a pose guess")
    r3 = np.sqrt(((pts - pts.mean(axis=0)) ** 2).sum(axis=1).mean())
    uv = obs.mean(axis=0)
    r2 = max(np.sqrt(((obs - uv) ** 2).sum(axis=1).mean()), 1e-6)
    z = intrinsics.focal * r3 / r2
    center = np.array([(uv[0] - intrinsics.cx) * z / intrinsics.focal,
                       (uv[1] - intrinsics.cy) * z / intrinsics.focal, z])
    return HeadPose(np.array([1.0, 0.0, 0.0, 0.0]), center - pts.mean(axis=0))


def stabilize(observations, model_points, init_poses, image_size, candidates=None,
              n_candidates=25, span=(0.5, 2.0), valid=None, seed=0, lm_iters=50,
              ba1_iters=2000, ba2_iters=2000, ba1_lr=1e-2, ba2_lr=1e-3,
              patience=100, smooth_weight=100.0):
    """Full stabilizer: focal grid search, LM pose refinement, then both
    bundle adjustment stages. Returns a dict with intrinsics, poses, points
    and the per-stage reprojection errors.

    Landmarks missing in any frame are dropped for the per-frame LM stages
    (which need a consistent point set) and restored, masked, for bundle
    adjustment.
    """
    observations = np.asarray(observations, dtype=np.float64)
    model_points = np.asarray(model_points, dtype=np.float64)
    lm_points, lm_obs = model_points, observations
    if valid is not None and not np.asarray(valid).all():
        keep = np.asarray(valid, dtype=bool).all(axis=0)
        if keep.sum() < 4:
            raise ValueError("need at least 4 landmarks visible in every frame")
        lm_points, lm_obs = model_points[keep], observations[:, keep]
    # chained refinement: video frames are temporally smooth, and the rough
    # initializer alone can drop large-rotation frames into the mirrored
    # pose basin that shallow landmark sets admit
    intr, poses, cand_errors, cands = focal_search(
        lm_points, lm_obs, init_poses, image_size,
        candidates=candidates, n_candidates=n_candidates, span=span,
        max_iters=lm_iters, chain=True)
    quats = np.stack([p.quat for p in poses])
    trans = np.stack([p.translation for p in poses])
    lm_err = reprojection_cost(model_points, quats, trans, intr, observations, valid)

    # both BA stages start from the tracker's rough poses: stage 1
    # triangulates with them frozen, stage 2 releases everything jointly.
    # The refined poses above only serve the focal search and error report.
    rough_q = np.stack([quat_normalize(p.quat) for p in init_poses])
    rough_t = np.stack([np.asarray(p.translation, dtype=np.float64)
                        for p in init_poses])
    points1, ba1_err, _ = ba_stage1(observations, rough_q, rough_t, intr,
                                    valid=valid, seed=seed, iters=ba1_iters,
                                    lr=ba1_lr, patience=patience)
    points2, poses2, ba2_err, _ = ba_stage2(points1, init_poses, intr,
                                            observations, valid=valid,
                                            iters=ba2_iters, lr=ba2_lr,
                                            patience=patience,
                                            smooth_weight=smooth_weight)
    return {
        "intrinsics": intr,
        "poses": poses2,
        "points": points2,
        "errors": {"refine": lm_err, "ba1": ba1_err, "ba2": ba2_err},
        "focal_errors": cand_errors,
        "focal_candidates": cands,
    }
