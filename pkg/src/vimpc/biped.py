"""Seven-link biped: torso plus two (thigh, shank, foot) legs.

Each leg is a spherical hip and a knee.  Feet are rigid bodies whose pose is
prescribed (flat, commanded yaw); there are no ankle joints.  The model gives
the configuration-dependent centroidal composite rigid-body inertia and the
centroidal momentum that the rest of the package treats as ground truth.

Link frames put the z axis along the link pointing back toward the parent
joint, x forward.  The "ankle" is the foot pose position, which is also the
sole centre.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import geom
from .errors import NotPositiveDefinite, OutOfReach

KNEE_EPS = 0.02
REACH_MARGIN = 1e-4
SIDES = ("left", "right")


@dataclass(frozen=True)
class LinkParams:
    mass: float
    com_offset: np.ndarray
    inertia_local: np.ndarray  # sym6, about the link CoM in the link frame
    length: float = 0.0

    def __post_init__(self):
        if self.mass < 0:
            raise ValueError("link mass must be non-negative")
        object.__setattr__(self, "com_offset", np.asarray(self.com_offset, dtype=float))
        object.__setattr__(self, "inertia_local", np.asarray(self.inertia_local, dtype=float))


def box_inertia(mass, lx, ly, lz):
    return np.array([mass * (ly ** 2 + lz ** 2) / 12.0, 0.0, 0.0,
                     mass * (lx ** 2 + lz ** 2) / 12.0, 0.0,
                     mass * (lx ** 2 + ly ** 2) / 12.0])


def rod_inertia(mass, length, radius):
    """Solid cylinder along z."""
    ixx = mass * (3.0 * radius ** 2 + length ** 2) / 12.0
    return np.array([ixx, 0.0, 0.0, ixx, 0.0, 0.5 * mass * radius ** 2])


@dataclass(frozen=True)
class FootPose:
    position: np.ndarray
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))

    @property
    def rotation(self):
        return geom.rot_z(self.yaw)


@dataclass(frozen=True)
class LegJointState:
    hip_angles: np.ndarray  # yaw, roll, pitch
    knee_angle: float       # interior angle, pi is a straight leg

    def as_array(self):
        return np.array([*self.hip_angles, self.knee_angle])


@dataclass(frozen=True)
class BipedModel:
    torso: LinkParams
    thigh: LinkParams
    shank: LinkParams
    foot: LinkParams
    hip_offsets: dict = field(default_factory=lambda: {
        "left": np.array([0.0, 0.10, -0.20]),
        "right": np.array([0.0, -0.10, -0.20]),
    })
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))

    def __post_init__(self):
        object.__setattr__(self, "hip_offsets",
                           {k: np.asarray(v, dtype=float) for k, v in self.hip_offsets.items()})
        object.__setattr__(self, "gravity", np.asarray(self.gravity, dtype=float))
        links = (self.torso, self.thigh, self.shank, self.foot, self.thigh, self.shank, self.foot)
        object.__setattr__(self, "_masses", np.array([l.mass for l in links]))
        object.__setattr__(self, "_inertias", geom.sym6_to_mat(np.array([l.inertia_local for l in links])))
        object.__setattr__(self, "_com_offsets", np.array([l.com_offset for l in links]))

    @property
    def total_mass(self):
        return float(self._masses.sum())

    @property
    def g(self):
        """Gravity magnitude."""
        return float(np.linalg.norm(self.gravity))

    @property
    def reach(self):
        lt, ls = self.thigh.length, self.shank.length
        return abs(lt - ls) + REACH_MARGIN, lt + ls - REACH_MARGIN

    def with_masses(self, **masses):
        """Copy with some link masses replaced (inertias scaled to match)."""
        kw = {}
        for name in ("torso", "thigh", "shank", "foot"):
            link = getattr(self, name)
            if name in masses:
                m = masses[name]
                scale = m / link.mass if link.mass > 0 else 0.0
                link = LinkParams(m, link.com_offset, link.inertia_local * scale, link.length)
            kw[name] = link
        return BipedModel(**kw, hip_offsets=self.hip_offsets, gravity=self.gravity)


def default_model():
    """39 kg biped with heavy legs (about 31% of the mass)."""
    return BipedModel(
        torso=LinkParams(27.0, np.zeros(3), box_inertia(27.0, 0.30, 0.25, 0.50)),
        thigh=LinkParams(3.5, np.array([0.0, 0.0, -0.20]), rod_inertia(3.5, 0.40, 0.05), 0.40),
        shank=LinkParams(2.0, np.array([0.0, 0.0, -0.20]), rod_inertia(2.0, 0.40, 0.04), 0.40),
        foot=LinkParams(0.5, np.array([0.0, 0.0, 0.02]), box_inertia(0.5, 0.20, 0.10, 0.04)),
    )


# nominal standing configuration of the default model
NOMINAL_BASE_HEIGHT = 0.87
NOMINAL_FOOT_Y = 0.10


def nominal_stance(model=None, base_height=NOMINAL_BASE_HEIGHT):
    """Base pose and feet for quiet standing, feet under the hips."""
    model = model or default_model()
    base_pos = np.array([0.0, 0.0, base_height])
    left = FootPose(np.array([0.0, model.hip_offsets["left"][1], 0.0]), 0.0)
    right = FootPose(np.array([0.0, model.hip_offsets["right"][1], 0.0]), 0.0)
    return base_pos, np.zeros(3), left, right


# -- kinematics ----------------------------------------------------------------

def _as_rot(base_orient):
    base_orient = np.asarray(base_orient, dtype=float)
    if base_orient.shape == (3, 3):
        return base_orient
    return geom.euler_to_rot(base_orient)


def _leg_in_base(model, d, side):
    """IK for a hip-to-ankle vector ``d`` in the base frame.

    Returns (R_thigh, R_shank, knee position, interior knee angle), all in the
    base frame with the hip at the origin.
    """
    lt, ls = model.thigh.length, model.shank.length
    dx, dy, dz = d
    D = math.sqrt(dx * dx + dy * dy + dz * dz)
    lo, hi = model.reach
    if not (lo <= D <= hi):
        raise OutOfReach(side, D, lo, hi)
    ux, uy, uz = dx / D, dy / D, dz / D
    # in-plane forward direction: e_x minus its component along the leg
    nx, ny, nz = 1.0 - ux * ux, -ux * uy, -ux * uz
    nn = math.sqrt(nx * nx + ny * ny + nz * nz)
    if nn < 1e-9:
        nx, ny, nz = -uz * ux, -uz * uy, 1.0 - uz * uz
        nn = math.sqrt(nx * nx + ny * ny + nz * nz)
    nx, ny, nz = nx / nn, ny / nn, nz / nn
    a = (lt * lt - ls * ls + D * D) / (2.0 * D)
    b = math.sqrt(max(lt * lt - a * a, 0.0))
    kx, ky, kz = a * ux + b * nx, a * uy + b * ny, a * uz + b * nz
    # thigh frame: z from knee to hip, x forward in the leg plane
    zx, zy, zz = -kx / lt, -ky / lt, -kz / lt
    dot = nx * zx + ny * zy + nz * zz
    xx, xy, xz = nx - dot * zx, ny - dot * zy, nz - dot * zz
    xn = math.sqrt(xx * xx + xy * xy + xz * xz)
    xx, xy, xz = xx / xn, xy / xn, xz / xn
    yx, yy, yz = zy * xz - zz * xy, zz * xx - zx * xz, zx * xy - zy * xx
    R_thigh = np.array([[xx, yx, zx], [xy, yy, zy], [xz, yz, zz]])
    cos_k = (lt * lt + ls * ls - D * D) / (2.0 * lt * ls)
    knee = math.acos(min(1.0, max(-1.0, cos_k)))
    R_shank = R_thigh @ geom.rot_y(math.pi - knee)
    return R_thigh, R_shank, np.array([kx, ky, kz]), knee


def _hip_angles(R):
    """Decompose ``R = Rz(yaw) Rx(roll) Ry(pitch)``."""
    roll = math.asin(min(1.0, max(-1.0, R[2, 1])))
    yaw = math.atan2(-R[0, 1], R[1, 1])
    pitch = math.atan2(-R[2, 0], R[2, 2])
    return np.array([yaw, roll, pitch])


def leg_ik(model, base_pos, base_orient, foot, side):
    """Joint angles placing the ``side`` ankle at ``foot.position``.

    Raises
    ------
    OutOfReach
        If the hip-to-ankle distance leaves the reachable shell.
    """
    R_b = _as_rot(base_orient)
    hip = np.asarray(base_pos, dtype=float) + R_b @ model.hip_offsets[side]
    d = R_b.T @ (foot.position - hip)
    R_thigh, _, _, knee = _leg_in_base(model, d, side)
    return LegJointState(_hip_angles(R_thigh), knee)


def clamp_to_reach(model, base_pos, base_orient, position, side, margin=0.005):
    """Move ``position`` radially from the hip into the reachable shell.

    Used only where an inertia must be evaluated for a predicted pose that the
    leg cannot actually reach (far-horizon knots at high speed).
    """
    R_b = _as_rot(base_orient)
    hip = np.asarray(base_pos, dtype=float) + R_b @ model.hip_offsets[side]
    d = np.asarray(position, dtype=float) - hip
    D = math.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
    lo, hi = model.reach
    lo, hi = lo + margin, hi - margin
    if lo <= D <= hi:
        return np.asarray(position, dtype=float)
    if D < 1e-12:
        d, D = -R_b[:, 2], 1.0
    return hip + d * (min(max(D, lo), hi) / D)


def leg_fk(model, base_pos, base_orient, joints, side):
    """Ankle position (world) from joint angles."""
    R_b = _as_rot(base_orient)
    yaw, roll, pitch = joints.hip_angles
    R_thigh = R_b @ geom.rot_z(yaw) @ geom.rot_x(roll) @ geom.rot_y(pitch)
    hip = np.asarray(base_pos, dtype=float) + R_b @ model.hip_offsets[side]
    knee = hip + R_thigh @ np.array([0.0, 0.0, -model.thigh.length])
    R_shank = R_thigh @ geom.rot_y(math.pi - joints.knee_angle)
    return knee + R_shank @ np.array([0.0, 0.0, -model.shank.length])


def link_frames(model, base_pos, base_orient, foot_positions, foot_rotations):
    """CoM positions and orientations of all seven links.

    Link order: torso, left thigh/shank/foot, right thigh/shank/foot.

    Returns
    -------
    coms : (7, 3) ndarray
    rots : (7, 3, 3) ndarray
    knees : (2,) interior knee angles
    """
    R_b = _as_rot(base_orient)
    p_b = np.asarray(base_pos, dtype=float)
    coms = np.empty((7, 3))
    rots = np.empty((7, 3, 3))
    knees = np.empty(2)
    off = model._com_offsets
    coms[0] = p_b + R_b @ off[0]
    rots[0] = R_b
    for j, side in enumerate(SIDES):
        hip_b = model.hip_offsets[side]
        d = R_b.T @ (foot_positions[j] - p_b) - hip_b
        R_t, R_s, knee_b, knees[j] = _leg_in_base(model, d, side)
        i = 1 + 3 * j
        R_tw = R_b @ R_t
        R_sw = R_b @ R_s
        hip_w = p_b + R_b @ hip_b
        knee_w = hip_w + R_b @ knee_b
        coms[i] = hip_w + R_tw @ off[i]
        rots[i] = R_tw
        coms[i + 1] = knee_w + R_sw @ off[i + 1]
        rots[i + 1] = R_sw
        R_f = foot_rotations[j]
        coms[i + 2] = foot_positions[j] + R_f @ off[i + 2]
        rots[i + 2] = R_f
    return coms, rots, knees


def _composite_from_frames(model, coms, rots):
    m = model._masses
    M = m.sum()
    com = m @ coms / M
    d = coms - com
    I_rot = rots @ model._inertias @ rots.transpose(0, 2, 1)
    I = I_rot.sum(axis=0)
    dd = np.einsum("k,ki,kj->ij", m, d, d)
    I += np.eye(3) * np.trace(dd) - dd
    return I, com


def composite_inertia_world(model, base_pos, base_orient, left, right):
    """World-frame CCRBI about the CoM, and the CoM."""
    coms, rots, _ = link_frames(model, base_pos, base_orient,
                                (left.position, right.position),
                                (left.rotation, right.rotation))
    return _composite_from_frames(model, coms, rots)


def composite_inertia(model, base_pos, base_orient, left, right):
    """Composite inertia about the CoM in the base-yaw frame.

    Returns
    -------
    inertia : (6,) ndarray
        ``[Ixx, Ixy, Ixz, Iyy, Iyz, Izz]`` with world axes rotated by -(base yaw).
    com : (3,) ndarray
        World-frame centre of mass.
    """
    R_b = _as_rot(base_orient)
    I_w, com = composite_inertia_world(model, base_pos, R_b, left, right)
    Rz = geom.rot_z(math.atan2(R_b[1, 0], R_b[0, 0]))
    return geom.mat_to_sym6(Rz.T @ I_w @ Rz), com


def center_of_mass(model, base_pos, base_orient, left, right):
    coms, _, _ = link_frames(model, base_pos, base_orient,
                             (left.position, right.position),
                             (left.rotation, right.rotation))
    return model._masses @ coms / model._masses.sum()


def _vee_skew(M):
    return 0.5 * np.array([M[2, 1] - M[1, 2], M[0, 2] - M[2, 0], M[1, 0] - M[0, 1]])


FD_STEP = 1e-6


@dataclass(frozen=True)
class CentroidalMomentum:
    linear: np.ndarray
    angular: np.ndarray


def momentum_from_frames(model, frames_minus, frames_mid, frames_plus, h):
    """Centroidal momentum by central differences of link poses."""
    c_m, R_m = frames_minus
    c_0, R_0 = frames_mid
    c_p, R_p = frames_plus
    m = model._masses
    v = (c_p - c_m) / (2.0 * h)
    com = m @ c_0 / m.sum()
    d = c_0 - com
    k = np.zeros(3)
    for i in range(7):
        w = _vee_skew(R_p[i] @ R_m[i].T) / (2.0 * h)
        k += R_0[i] @ (model._inertias[i] @ (R_0[i].T @ w)) + m[i] * geom.cross(d[i], v[i])
    return CentroidalMomentum(m @ v, k)


def centroidal_momentum(model, base_pos, base_orient, base_lin_vel, base_ang_vel,
                        left, right, left_vel=None, right_vel=None, h=FD_STEP):
    """Centroidal momentum of the prescribed base and foot motion.

    ``left_vel``/``right_vel`` are ``(linear velocity, angular velocity)`` pairs
    for the feet in the world frame.  The angular part may be a scalar yaw rate
    or a 3-vector; ``None`` means a stationary foot.  Link twists come from
    central differences of the link poses with step ``h``.
    """
    R_b = _as_rot(base_orient)
    p_b = np.asarray(base_pos, dtype=float)
    v_b = np.asarray(base_lin_vel, dtype=float)
    w_b = np.asarray(base_ang_vel, dtype=float)
    feet = (left, right)
    vels = []
    for fv in (left_vel, right_vel):
        if fv is None:
            vels.append((np.zeros(3), np.zeros(3)))
            continue
        w = np.asarray(fv[1], dtype=float)
        if w.ndim == 0:
            w = np.array([0.0, 0.0, float(w)])
        vels.append((np.asarray(fv[0], dtype=float), w))

    def frames(s):
        Rb = geom.quat_to_rot(geom.quat_exp(w_b * s)) @ R_b
        pos = [f.position + s * fv[0] for f, fv in zip(feet, vels)]
        rot = [geom.quat_to_rot(geom.quat_exp(fv[1] * s)) @ f.rotation
               for f, fv in zip(feet, vels)]
        c, r, _ = link_frames(model, p_b + s * v_b, Rb, pos, rot)
        return c, r

    return momentum_from_frames(model, frames(-h), frames(0.0), frames(h), h)


def wbo_angular_velocity(k_G, I_G):
    """Whole-body angular velocity ``I_G^-1 k_G`` via Cholesky.

    ``I_G`` may be a 3x3 matrix or a sym6 vector.
    """
    I = np.asarray(I_G, dtype=float)
    if I.shape == (6,):
        I = geom.sym6_to_mat(I)
    try:
        L = np.linalg.cholesky(I)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("composite inertia is not positive definite") from exc
    y = np.linalg.solve(L, np.asarray(k_G, dtype=float))
    return np.linalg.solve(L.T, y)
