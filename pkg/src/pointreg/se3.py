"""Rigid-motion math on SE(3) with numpy.

Conventions used throughout the package:

* A rigid transform is a 4x4 homogeneous matrix ``g`` with rotation block
  ``g[:3, :3]`` and translation ``g[:3, 3]``; points are column vectors, so
  ``g`` acts as ``p -> R @ p + t``.
* A twist is a 6-vector ``xi = (wx, wy, wz, vx, vy, vz)`` -- rotation part
  first, translation part second.
* ``exp_map`` and ``log_map`` are exact inverses away from 180-degree
  rotations; angles within ``PI_EXCLUSION_BAND`` of pi are rejected rather
  than silently returning one of the two valid logs.

All functions take and return float64 arrays.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import AngleNearPi

# Below this rotation angle (radians) the closed-form exp/log coefficients
# lose precision to cancellation, so 4th-order Taylor expansions are used.
SMALL_ANGLE = 1e-4

# log_map refuses rotations whose angle is within this band of pi (radians).
PI_EXCLUSION_BAND = 1e-6

# compose() re-orthonormalizes a rotation block whose drift from orthogonality
# (Frobenius norm of R^T R - I) exceeds this.
ORTHONORMALITY_DRIFT_LIMIT = 1e-9

# Basis twists: GENERATORS[i] is the 4x4 derivative of exp at the identity in
# the i-th twist coordinate (three rotations, then three translations).
GENERATORS = np.zeros((6, 4, 4))
GENERATORS[0, 2, 1], GENERATORS[0, 1, 2] = 1.0, -1.0
GENERATORS[1, 0, 2], GENERATORS[1, 2, 0] = 1.0, -1.0
GENERATORS[2, 1, 0], GENERATORS[2, 0, 1] = 1.0, -1.0
GENERATORS[3, 0, 3] = 1.0
GENERATORS[4, 1, 3] = 1.0
GENERATORS[5, 2, 3] = 1.0
GENERATORS.setflags(write=False)


def skew(w) -> np.ndarray:
    """Return the 3x3 cross-product matrix of a 3-vector: skew(w) @ p == w x p."""
    wx, wy, wz = np.asarray(w, dtype=float).reshape(3)
    return np.array([
        [0.0, -wz, wy],
        [wz, 0.0, -wx],
        [-wy, wx, 0.0],
    ])


def _as_twist(xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float).reshape(6)
    if not np.all(np.isfinite(xi)):
        raise ValueError("twist contains non-finite entries")
    return xi


def _as_transform(g) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    if g.shape != (4, 4):
        raise ValueError(f"expected a 4x4 transform, got shape {g.shape}")
    return g


def hat(xi) -> np.ndarray:
    """Return the 4x4 matrix form of a twist (linear combination of GENERATORS)."""
    xi = _as_twist(xi)
    m = np.zeros((4, 4))
    m[:3, :3] = skew(xi[:3])
    m[:3, 3] = xi[3:]
    return m


def exp_map(xi) -> np.ndarray:
    """Exponential map: twist 6-vector -> 4x4 rigid transform.

    Uses the Rodrigues closed form for the rotation block and the standard
    left Jacobian for the translation block, switching to Taylor expansions
    of the trigonometric coefficients below SMALL_ANGLE.
    """
    xi = _as_twist(xi)
    w, v = xi[:3], xi[3:]
    theta = float(np.linalg.norm(w))
    W = skew(w)
    W2 = W @ W

    t2 = theta * theta
    if theta < SMALL_ANGLE:
        t4 = t2 * t2
        a = 1.0 - t2 / 6.0 + t4 / 120.0          # sin(theta)/theta
        b = 0.5 - t2 / 24.0 + t4 / 720.0         # (1 - cos(theta))/theta^2
        c = 1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0  # (theta - sin(theta))/theta^3
    else:
        a = math.sin(theta) / theta
        b = (1.0 - math.cos(theta)) / t2
        c = (1.0 - a) / t2

    eye = np.eye(3)
    rot = eye + a * W + b * W2
    left_jac = eye + b * W + c * W2

    g = np.eye(4)
    g[:3, :3] = rot
    g[:3, 3] = left_jac @ v
    return g


def rotation_angle(g) -> float:
    """Rotation angle of a transform in radians, in [0, pi].

    Computed from the trace, so it is total: it works at and near pi where
    log_map refuses.
    """
    g = _as_transform(g)
    cos_theta = (np.trace(g[:3, :3]) - 1.0) / 2.0
    return math.acos(min(1.0, max(-1.0, cos_theta)))


def log_map(g) -> np.ndarray:
    """Logarithm map: 4x4 rigid transform -> twist 6-vector.

    Raises AngleNearPi when the rotation angle is within PI_EXCLUSION_BAND
    of pi, where the log is not well determined.
    """
    g = _as_transform(g)
    rot = g[:3, :3]
    t = g[:3, 3]
    theta = rotation_angle(g)
    if theta > math.pi - PI_EXCLUSION_BAND:
        raise AngleNearPi(
            f"rotation angle {theta:.9f} rad is within {PI_EXCLUSION_BAND} of pi"
        )

    # Antisymmetric part of R encodes sin(theta) * skew(w_unit).
    anti = 0.5 * (rot - rot.T)
    w_raw = np.array([anti[2, 1], anti[0, 2], anti[1, 0]])

    t2 = theta * theta
    if theta < SMALL_ANGLE:
        t4 = t2 * t2
        # theta / sin(theta) expanded around 0.
        w = w_raw * (1.0 + t2 / 6.0 + 7.0 * t4 / 360.0)
        d = 1.0 / 12.0 + t2 / 720.0 + t4 / 30240.0
    else:
        w = w_raw * (theta / math.sin(theta))
        a = math.sin(theta) / theta
        b = (1.0 - math.cos(theta)) / t2
        d = (1.0 - a / (2.0 * b)) / t2

    W = skew(w)
    inv_left_jac = np.eye(3) - 0.5 * W + d * (W @ W)
    return np.concatenate([w, inv_left_jac @ t])


def _project_to_rotation(rot: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense (polar factor via SVD)."""
    u, _, vt = np.linalg.svd(rot)
    r = u @ vt
    if np.linalg.det(r) < 0.0:
        u = u.copy()
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return r


def compose(a, b) -> np.ndarray:
    """Product of two transforms, a @ b, guarding against orthogonality drift.

    If the rotation block of the product has drifted from orthogonality by
    more than ORTHONORMALITY_DRIFT_LIMIT (Frobenius norm of R^T R - I), it is
    snapped back to the nearest rotation. The homogeneous bottom row is set
    exactly.
    """
    a = _as_transform(a)
    b = _as_transform(b)
    g = a @ b
    rot = g[:3, :3]
    drift = np.linalg.norm(rot.T @ rot - np.eye(3))
    if drift > ORTHONORMALITY_DRIFT_LIMIT:
        g[:3, :3] = _project_to_rotation(rot)
    g[3, :] = (0.0, 0.0, 0.0, 1.0)
    return g


def inverse(g) -> np.ndarray:
    """Inverse of a rigid transform, computed in closed form (R^T, -R^T t)."""
    g = _as_transform(g)
    rot_t = g[:3, :3].T
    out = np.eye(4)
    out[:3, :3] = rot_t
    out[:3, 3] = -rot_t @ g[:3, 3]
    return out


def translation(t) -> np.ndarray:
    """Pure-translation transform moving points by the 3-vector t."""
    t = np.asarray(t, dtype=float).reshape(3)
    g = np.eye(4)
    g[:3, 3] = t
    return g


def apply_transform(g, points) -> np.ndarray:
    """Apply a transform to an (N, 3) array of points, returning a new array."""
    g = _as_transform(g)
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) point array, got shape {points.shape}")
    return points @ g[:3, :3].T + g[:3, 3]


def pose_error(estimate, truth) -> tuple[float, float]:
    """(rotation error in degrees, translation error) between two transforms.

    The rotation error is the geodesic angle of R_est^T @ R_true; the
    translation error is the Euclidean distance between translation parts.
    Both are total functions: no exclusion band near 180 degrees.
    """
    estimate = _as_transform(estimate)
    truth = _as_transform(truth)
    rel_rot = estimate[:3, :3].T @ truth[:3, :3]
    cos_theta = (np.trace(rel_rot) - 1.0) / 2.0
    rot_err_deg = math.degrees(math.acos(min(1.0, max(-1.0, cos_theta))))
    trans_err = float(np.linalg.norm(estimate[:3, 3] - truth[:3, 3]))
    return rot_err_deg, trans_err


def increment_magnitude(g) -> float:
    """Size of a transform as sqrt(angle^2 + |translation|^2).

    Unlike |log_map(g)| this is defined for every rigid transform, including
    rotations at exactly 180 degrees, which makes it safe for logging the
    per-iteration updates of solvers that may misbehave.
    """
    g = _as_transform(g)
    theta = rotation_angle(g)
    return math.sqrt(theta * theta + float(g[:3, 3] @ g[:3, 3]))
