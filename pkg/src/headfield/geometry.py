"""Quaternion and rotation helpers shared by the pose, rendering and scene modules.

Quaternions are scalar-first ``(w, x, y, z)`` unit 4-vectors. Rotations act on
column vectors, ``v' = R @ v``.
"""

import numpy as np


def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ValueError("cannot normalize zero quaternion")
    return q / n


def quat_to_matrix(q):
    """Rotation matrix of a unit quaternion (normalizes defensively)."""
    w, x, y, z = quat_normalize(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R):
    """Unit quaternion (w >= 0) of a rotation matrix."""
    R = np.asarray(R, dtype=np.float64)
    t = np.trace(R)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(R[i, i] - R[j, j] - R[k, k] + 1.0, 0.0)) * 2
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    if q[0] < 0:
        q = -q
    return quat_normalize(q)


def quat_multiply(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n == 0.0:
        return np.array([1.0, 0.0, 0.0, 0.0])
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis / n])


def quat_from_rotvec(v):
    """Quaternion of a rotation vector (axis * angle)."""
    v = np.asarray(v, dtype=np.float64)
    angle = np.linalg.norm(v)
    if angle < 1e-300:
        return np.array([1.0, 0.0, 0.0, 0.0])
    return quat_from_axis_angle(v, angle)


def quat_from_euler(rx, ry, rz):
    """Quaternion of intrinsic X-Y-Z Euler rotations (radians)."""
    qx = quat_from_axis_angle([1, 0, 0], rx)
    qy = quat_from_axis_angle([0, 1, 0], ry)
    qz = quat_from_axis_angle([0, 0, 1], rz)
    return quat_multiply(qx, quat_multiply(qy, qz))


def rotation_geodesic_angle(Ra, Rb):
    """Geodesic distance between two rotations, in radians."""
    c = (np.trace(Ra.T @ Rb) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def align_quat_signs(quats):
    """Flip quaternion signs so consecutive frames sit on the same hemisphere."""
    quats = np.array(quats, dtype=np.float64, copy=True)
    for t in range(1, len(quats)):
        if np.dot(quats[t], quats[t - 1]) < 0:
            quats[t] = -quats[t]
    return quats


def quat_rotation_jacobian(q, p):
    """d(R(q) @ p)/dq for the quadratic-in-q rotation map, shape (3, 4).

    Uses the unnormalized quadratic form; callers keep q unit-length.
    """
    w, x, y, z = q
    px, py, pz = p
    # d(Rp)/dw, .../dx, .../dy, .../dz, each a 3-vector.
    dw = 2 * np.array(
        [w * px - z * py + y * pz, z * px + w * py - x * pz, -y * px + x * py + w * pz]
    )
    dx = 2 * np.array(
        [x * px + y * py + z * pz, y * px - x * py - w * pz, z * px + w * py - x * pz]
    )
    dy = 2 * np.array(
        [-y * px + x * py + w * pz, x * px + y * py + z * pz, -w * px + z * py - y * pz]
    )
    dz = 2 * np.array(
        [-z * px - w * py + x * pz, w * px - z * py + y * pz, x * px + y * py + z * pz]
    )
    return np.stack([dw, dx, dy, dz], axis=1)


def quats_to_matrices(quats):
    """Batched quat_to_matrix: (F, 4) unit quaternions to (F, 3, 3)."""
    q = np.asarray(quats, dtype=np.float64)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    out = np.empty((q.shape[0], 3, 3))
    out[:, 0, 0] = 1 - 2 * (y * y + z * z)
    out[:, 0, 1] = 2 * (x * y - w * z)
    out[:, 0, 2] = 2 * (x * z + w * y)
    out[:, 1, 0] = 2 * (x * y + w * z)
    out[:, 1, 1] = 1 - 2 * (x * x + z * z)
    out[:, 1, 2] = 2 * (y * z - w * x)
    out[:, 2, 0] = 2 * (x * z - w * y)
    out[:, 2, 1] = 2 * (y * z + w * x)
    out[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return out


def quat_rotation_jacobian_batch(quats, points):
    """Batched quat_rotation_jacobian: (F, 4) x (N, 3) -> (F, N, 3, 4)."""
    q = np.asarray(quats, dtype=np.float64)
    p = np.asarray(points, dtype=np.float64)
    w, x, y, z = (q[:, None, k] for k in range(4))
    px, py, pz = (p[None, :, k] for k in range(3))
    j = np.empty((q.shape[0], p.shape[0], 3, 4))
    j[..., 0, 0] = w * px - z * py + y * pz
    j[..., 1, 0] = z * px + w * py - x * pz
    j[..., 2, 0] = -y * px + x * py + w * pz
    j[..., 0, 1] = x * px + y * py + z * pz
    j[..., 1, 1] = y * px - x * py - w * pz
    j[..., 2, 1] = z * px + w * py - x * pz
    j[..., 0, 2] = -y * px + x * py + w * pz
    j[..., 1, 2] = x * px + y * py + z * pz
    j[..., 2, 2] = -w * px + z * py - y * pz
    j[..., 0, 3] = -z * px - w * py + x * pz
    j[..., 1, 3] = w * px - z * py + y * pz
    j[..., 2, 3] = x * px + y * py + z * pz
    j *= 2.0
    return j
