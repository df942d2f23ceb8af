"""Rotation helpers.

Conventions
-----------
Euler angles are ``[roll, pitch, yaw]`` about earth-fixed axes, composed as
``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``.  Angular velocities are expressed in
the world frame.  Quaternions are scalar-first ``[w, x, y, z]`` numpy arrays.

Everything here is written for 3-vectors and 3x3 matrices; the scalar
formulas are several times faster than the general numpy routines at this
size, which matters inside the 800 Hz simulation loop.
"""

import math

import numpy as np

from .errors import SingularPitch

PITCH_GUARD = 1e-3

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def cross(a, b):
    return np.array([
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ])


def skew(v):
    """Matrix ``S`` with ``S @ w == cross(v, w)``."""
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def rot_x(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def wrap_angle(a):
    """Wrap to (-pi, pi]. Angles already in range come back unchanged."""
    if -math.pi < a <= math.pi:
        return float(a)
    w = math.fmod(a + math.pi, 2.0 * math.pi)
    if w <= 0.0:
        w += 2.0 * math.pi
    return w - math.pi


def euler_to_rot(theta):
    roll, pitch, yaw = theta
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    return np.array([
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ])


def rot_to_euler(R):
    sp = -R[2, 0]
    sp = min(1.0, max(-1.0, sp))
    pitch = math.asin(sp)
    roll = math.atan2(R[2, 1], R[2, 2])
    yaw = math.atan2(R[1, 0], R[0, 0])
    return np.array([roll, pitch, yaw])


def euler_rate_map(theta):
    """T(theta) such that ``omega_world = T @ theta_dot``; det T = cos(pitch)."""
    _, pitch, yaw = theta
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    return np.array([
        [cy * cp, -sy, 0.0],
        [sy * cp, cy, 0.0],
        [-sp, 0.0, 1.0],
    ])


def inverse_euler_rate_map(theta, guard=PITCH_GUARD):
    """Inverse of :func:`euler_rate_map`.

    Raises
    ------
    SingularPitch
        If ``|pitch| >= pi/2 - guard``.
    """
    _, pitch, yaw = theta
    if abs(pitch) >= 0.5 * math.pi - guard:
        raise SingularPitch(f"pitch {pitch:.6f} rad within {guard} of +-pi/2")
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    tp = sp / cp
    return np.array([
        [cy / cp, sy / cp, 0.0],
        [-sy, cy, 0.0],
        [cy * tp, sy * tp, 1.0],
    ])


# -- quaternions -------------------------------------------------------------

def quat_normalize(q):
    return q / math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])


def quat_conj(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_mul(a, b):
    """Hamilton product ``a (x) b``, renormalized."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    q = np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])
    return quat_normalize(q)


def quat_to_rot(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rot_to_quat(R):
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0.0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s,
                      (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s,
                      0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s,
                      (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    if q[0] < 0.0:
        q = -q
    return quat_normalize(q)


def euler_to_quat(theta):
    return rot_to_quat(euler_to_rot(theta))


def quat_to_euler(q):
    return rot_to_euler(quat_to_rot(q))


def quat_exp(rotvec):
    """Unit quaternion of the rotation by ``|rotvec|`` about ``rotvec``."""
    angle = math.sqrt(rotvec[0] ** 2 + rotvec[1] ** 2 + rotvec[2] ** 2)
    if angle < 1e-12:
        # second-order series keeps the result unit to rounding
        return quat_normalize(np.array([1.0, 0.5 * rotvec[0], 0.5 * rotvec[1], 0.5 * rotvec[2]]))
    s = math.sin(0.5 * angle) / angle
    return np.array([math.cos(0.5 * angle), s * rotvec[0], s * rotvec[1], s * rotvec[2]])


def quat_geodesic(a, b):
    """Rotation angle between two unit quaternions, in [0, pi].

    atan2 of the relative rotation's parts keeps small angles accurate,
    where acos of the dot product bottoms out near 1e-8.
    """
    e = quat_mul(quat_conj(a), b)
    return 2.0 * math.atan2(math.sqrt(e[1] * e[1] + e[2] * e[2] + e[3] * e[3]), abs(e[0]))


def yaw_of_quat(q):
    w, x, y, z = q
    return math.atan2(2 * (x * y + w * z), 1 - 2 * (y * y + z * z))


# -- symmetric 3x3 packing ------------------------------------------------------

SYM6_ORDER = ("Ixx", "Ixy", "Ixz", "Iyy", "Iyz", "Izz")


def sym6_to_mat(v):
    """Assemble ``[Ixx, Ixy, Ixz, Iyy, Iyz, Izz]`` into a 3x3 matrix.

    Accepts a trailing-axis batch, shape ``(..., 6) -> (..., 3, 3)``.
    """
    v = np.asarray(v, dtype=float)
    out = np.empty(v.shape[:-1] + (3, 3))
    out[..., 0, 0] = v[..., 0]
    out[..., 0, 1] = out[..., 1, 0] = v[..., 1]
    out[..., 0, 2] = out[..., 2, 0] = v[..., 2]
    out[..., 1, 1] = v[..., 3]
    out[..., 1, 2] = out[..., 2, 1] = v[..., 4]
    out[..., 2, 2] = v[..., 5]
    return out


def mat_to_sym6(M):
    M = np.asarray(M, dtype=float)
    return np.stack([M[..., 0, 0], 0.5 * (M[..., 0, 1] + M[..., 1, 0]),
                     0.5 * (M[..., 0, 2] + M[..., 2, 0]), M[..., 1, 1],
                     0.5 * (M[..., 1, 2] + M[..., 2, 1]), M[..., 2, 2]], axis=-1)
