"""Image, landmark and pose-trajectory quality metrics."""

import numpy as np

from .geometry import align_quat_signs


def psnr(a, b, peak=1.0):
    """Peak signal-to-noise ratio in dB; identical inputs give +inf."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / mse))


def lmd(pred, ref):
    """Mean Euclidean landmark distance over (..., K, 2) arrays."""
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    return float(np.linalg.norm(pred - ref, axis=-1).mean())


def pose_jitter(poses):
    """Mean second-difference magnitude of a pose track.

    Quaternions are sign-aligned first, then each frame becomes the 7-vector
    [quat, translation]; the score is the mean norm of its discrete second
    differences. Smooth tracks score near zero; frame-to-frame noise does not.
    """
    if len(poses) < 3:
        return 0.0
    quats = align_quat_signs(np.stack([p.quat for p in poses]))
    trans = np.stack([p.translation for p in poses])
    x = np.concatenate([quats, trans], axis=1)
    d2 = x[2:] - 2.0 * x[1:-1] + x[:-2]
    return float(np.linalg.norm(d2, axis=1).mean())
