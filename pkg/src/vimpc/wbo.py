"""Whole-body orientation.

The WBO frame rotates with the inertia-weighted mean angular velocity
``I_G^-1 k_G``.  Offline, a quadratic map from the eight leg joints to the
vector part of the base-to-WBO quaternion is fitted to integrated ground
truth; online, the simulator propagates the WBO quaternion directly.
"""

import math
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from pathlib import Path

import numpy as np

from . import biped, geom
from .ccinn import LineReader, format_row
from .errors import FormatError, RankDeficient, VimpcError

N_JOINTS = 8
BASIS_EXPONENTS = (
    [(0,) * N_JOINTS]
    + [tuple(int(i == j) for i in range(N_JOINTS)) for j in range(N_JOINTS)]
    + [tuple((i == a) + (i == b) for i in range(N_JOINTS))
       for a, b in combinations_with_replacement(range(N_JOINTS), 2)]
)
N_BASIS = len(BASIS_EXPONENTS)
_PAIRS = np.array(list(combinations_with_replacement(range(N_JOINTS), 2)))
RIDGE = 1e-8
MAX_CONDITION = 1e12
HEADER = "WBOMAP v1"


def monomial_basis(q):
    """``[1, q1..q8, q1^2, q1 q2, ..., q8^2]`` (45 terms). Batched over leading axes."""
    q = np.asarray(q, dtype=float)
    quad = q[..., _PAIRS[:, 0]] * q[..., _PAIRS[:, 1]]
    return np.concatenate([np.ones(q.shape[:-1] + (1,)), q, quad], axis=-1)


def basis_index(i, j):
    """Position of the monomial ``q_i q_j`` (0-based joints) in the basis."""
    i, j = min(i, j), max(i, j)
    return 1 + N_JOINTS + int(np.flatnonzero((_PAIRS[:, 0] == i) & (_PAIRS[:, 1] == j))[0])


def leg_joints(model, base_pos, base_orient, left, right):
    """Eight joint angles: per leg hip yaw, roll, pitch and knee, left first."""
    ql = biped.leg_ik(model, base_pos, base_orient, left, "left")
    qr = biped.leg_ik(model, base_pos, base_orient, right, "right")
    return np.concatenate([ql.as_array(), qr.as_array()])


def mirror_joints(q):
    """Joint angles of the left-right mirrored pose.

    Reflecting y swaps the legs and negates hip yaw and roll.
    """
    q = np.asarray(q, dtype=float)
    sign = np.array([-1.0, -1.0, 1.0, 1.0])
    out = np.empty_like(q)
    out[..., :4] = q[..., 4:] * sign
    out[..., 4:] = q[..., :4] * sign
    return out


# mirroring a rotation through the xz plane keeps y and negates x and z
_MIRROR_XYZ = np.array([-1.0, 1.0, -1.0])


@dataclass
class WboMap:
    coefficients: np.ndarray = field(default_factory=lambda: np.zeros((3, N_BASIS)))
    basis_spec: tuple = tuple(BASIS_EXPONENTS)
    residual: float = 0.0

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (3, N_BASIS):
            raise VimpcError(f"coefficients must be 3x{N_BASIS}, got {self.coefficients.shape}")
        if not np.all(np.isfinite(self.coefficients)):
            raise VimpcError("coefficients must be finite")

    def vector_part(self, q):
        return monomial_basis(q) @ self.coefficients.T


def wbo_orientation(wmap, q_legs, base_quat):
    """WBO quaternion ``Q_B (x) Q_B,WBO`` from the fitted map.

    Returns ``(quaternion, clamped)``; ``clamped`` is set when the fitted
    vector part left the unit ball and was rescaled onto it.
    """
    xyz = wmap.vector_part(q_legs)
    n2 = float(xyz @ xyz)
    clamped = n2 > 1.0
    if clamped:
        xyz = xyz / math.sqrt(n2)
        n2 = 1.0
    q_rel = np.array([math.sqrt(max(0.0, 1.0 - n2)), *xyz])
    return geom.quat_mul(base_quat, q_rel), clamped


@dataclass(frozen=True)
class WboState:
    orientation: np.ndarray = field(default_factory=lambda: geom.IDENTITY_QUAT.copy())
    angular_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))


def propagate_wbo(state, omega, dt):
    """Advance the WBO quaternion by a world-frame rotation ``omega * dt``."""
    if not (0.0 < dt <= 0.1):
        raise VimpcError(f"dt must lie in (0, 0.1], got {dt}")
    omega = np.asarray(omega, dtype=float)
    q = geom.quat_mul(geom.quat_exp(omega * dt), state.orientation)
    return WboState(q, omega.copy())


# -- fitting --------------------------------------------------------------------------

@dataclass
class LegTrajectory:
    """Foot paths with the base held fixed.

    ``left``/``right`` are ``(T, 4)`` arrays of ``x, y, z, yaw`` per sample.
    """
    times: np.ndarray
    left: np.ndarray
    right: np.ndarray
    base_pos: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, biped.NOMINAL_BASE_HEIGHT]))

    def pose(self, k):
        return (biped.FootPose(self.left[k, :3], self.left[k, 3]),
                biped.FootPose(self.right[k, :3], self.right[k, 3]))


def sample_leg_trajectories(n, duration=0.5, rate=200.0, seed=0):
    """Random foot motions out of the nominal stance.

    Each foot moves from its nominal pose, where the WBO and base frames
    coincide by definition, to a sampled end pose with a smooth (cosine)
    time law and a half-sine lift, base fixed.  Open paths from a common
    start keep the integrated ground truth close to a function of the
    joints; closed cycles would accumulate a net rotation the map cannot
    represent.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(int(round(duration * rate)) + 1) / rate
    s = 0.5 - 0.5 * np.cos(math.pi * t / t[-1])
    out = []
    for _ in range(n):
        feet = []
        for sgn in (1.0, -1.0):
            x0, y0, yaw0 = 0.0, sgn * biped.NOMINAL_FOOT_Y, 0.0
            x1 = rng.uniform(-0.30, 0.30)
            y1 = y0 + sgn * rng.uniform(-0.03, 0.05)
            yaw1 = rng.uniform(-0.3, 0.3)
            lift = rng.uniform(0.0, 0.10)
            x = x0 + (x1 - x0) * s
            y = y0 + (y1 - y0) * s
            z = lift * np.sin(math.pi * s)
            yaw = yaw0 + (yaw1 - yaw0) * s
            feet.append(np.column_stack([x, y, z, yaw]))
        out.append(LegTrajectory(t, feet[0], feet[1]))
    return out


def integrate_ground_truth(model, traj):
    """Joint angles and base-relative WBO quaternions along a trajectory.

    ``omega_WBO`` at each sample comes from the centroidal momentum of the
    prescribed foot motion (velocities by central differences of the path)
    and is integrated from the identity with the midpoint rule.
    """
    t = traj.times
    T = len(t)
    R_b = np.eye(3)
    q = np.empty((T, N_JOINTS))
    omega = np.empty((T, 3))
    vel = [np.gradient(f, t, axis=0) for f in (traj.left, traj.right)]
    for k in range(T):
        left, right = traj.pose(k)
        q[k] = leg_joints(model, traj.base_pos, R_b, left, right)
        mom = biped.centroidal_momentum(
            model, traj.base_pos, R_b, np.zeros(3), np.zeros(3), left, right,
            (vel[0][k, :3], vel[0][k, 3]), (vel[1][k, :3], vel[1][k, 3]))
        I_w, _ = biped.composite_inertia_world(model, traj.base_pos, R_b, left, right)
        omega[k] = biped.wbo_angular_velocity(mom.angular, I_w)
    quats = np.empty((T, 4))
    quats[0] = geom.IDENTITY_QUAT
    s = WboState()
    for k in range(1, T):
        s = propagate_wbo(s, 0.5 * (omega[k - 1] + omega[k]), t[k] - t[k - 1])
        quats[k] = s.orientation
    return q, quats


def fit_from_samples(q, xyz, weights=None, ridge=RIDGE):
    """Weighted ridge least squares for ``xyz ~ Theta @ basis(q)``.

    The normal equations are normalized by the total weight, so scaling
    every weight leaves the fit unchanged.

    Raises
    ------
    RankDeficient
        If the normal matrix has condition number above 1e12.
    """
    L = monomial_basis(q)
    w = np.ones(L.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    W = w / w.sum()
    G = (L * W[:, None]).T @ L + ridge * np.eye(N_BASIS)
    cond = np.linalg.cond(G)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise RankDeficient(f"normal matrix condition number {cond:.3e} exceeds {MAX_CONDITION:.0e}")
    rhs = (L * W[:, None]).T @ xyz
    theta = np.linalg.solve(G, rhs).T
    resid = xyz - L @ theta.T
    rms = float(np.sqrt(np.sum(W * np.sum(resid * resid, axis=1))))
    return WboMap(theta, residual=rms)


def fit_wbo_map(model, trajectories, symmetrize=True, weights=None):
    """Fit the WBO map to ground truth integrated along ``trajectories``.

    With ``symmetrize`` every sample is also added in left-right mirrored
    form, which makes the fitted map mirror-antisymmetric in roll and yaw.
    """
    if len(trajectories) < 10:
        raise VimpcError("need at least 10 trajectories")
    if any(len(tr.times) < 100 for tr in trajectories):
        raise VimpcError("each trajectory needs at least 100 samples")
    Q, X = [], []
    for tr in trajectories:
        q, quats = integrate_ground_truth(model, tr)
        Q.append(q)
        X.append(quats[:, 1:])
    Q = np.vstack(Q)
    X = np.vstack(X)
    w = None if weights is None else np.concatenate(
        [np.full(len(tr.times), wi) for tr, wi in zip(trajectories, weights)])
    if symmetrize:
        Q = np.vstack([Q, mirror_joints(Q)])
        X = np.vstack([X, X * _MIRROR_XYZ])
        if w is not None:
            w = np.concatenate([w, w])
    return fit_from_samples(Q, X, w)


def evaluate_map(wmap, model, trajectories):
    """Geodesic errors of the map against integrated ground truth."""
    errs = []
    for tr in trajectories:
        q, quats = integrate_ground_truth(model, tr)
        for qk, gt in zip(q, quats):
            pred, _ = wbo_orientation(wmap, qk, geom.IDENTITY_QUAT)
            errs.append(geom.quat_geodesic(pred, gt))
    return np.array(errs)


# -- serialization -----------------------------------------------------------------

def dumps_map(wmap):
    lines = [HEADER, f"3 {N_BASIS}"]
    lines.extend(format_row(r) for r in wmap.coefficients)
    return "\n".join(lines) + "\n"


def loads_map(text):
    r = LineReader(text)
    r.header(HEADER)
    dims = r.next("dims").split()
    if dims != ["3", str(N_BASIS)]:
        raise FormatError(f"dims {' '.join(dims)}, expected 3 {N_BASIS}", r.pos)
    coeffs = np.array([r.row(N_BASIS, "coefficients") for _ in range(3)])
    r.finish()
    return WboMap(coeffs)


def save_map(wmap, path):
    Path(path).write_text(dumps_map(wmap))


def load_map(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    return loads_map(text)


DEFAULT_MAP = Path(__file__).resolve().parent / "data" / "wbo_default.txt"
DEFAULT_TRAJECTORIES = 40


def fit_default(model, n=DEFAULT_TRAJECTORIES, seed=0):
    """The fit shipped with the package: ``n`` sampled motions from ``seed``."""
    return fit_wbo_map(model, sample_leg_trajectories(n, seed=seed))


def load_default():
    return load_map(DEFAULT_MAP)
