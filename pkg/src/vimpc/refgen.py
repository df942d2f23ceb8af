"""Reference generation for the MPC horizon.

Footholds follow a Raibert-style rule with a capture-point correction and
a centrifugal term; swing feet follow cubic curves between liftoff and the
landing target chosen at liftoff.  CoM and yaw references are integrated
forward from the current state with the commanded body velocity.  The
inertia reference comes from the predicted foot poses at every knot.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import biped, ccinn, gait, geom
from .errors import PhaseOutOfRange, VimpcError
from .mpc import NX, HorizonReference


@dataclass(frozen=True)
class VelocityCommand:
    """Body-frame CoM velocity (x, y) and yaw rate."""
    vx: float = 0.0
    vy: float = 0.0
    yaw_rate: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.vx, self.vy, self.yaw_rate)):
            raise VimpcError("velocity command must be finite")

    @property
    def body_velocity(self):
        return np.array([self.vx, self.vy, 0.0])

    def world_velocity(self, yaw):
        c, s = math.cos(yaw), math.sin(yaw)
        return np.array([c * self.vx - s * self.vy, s * self.vx + c * self.vy, 0.0])


class RateLimiter:
    """Ramps the active command toward a target at bounded acceleration."""

    def __init__(self, max_lin_acc=1.0, max_yaw_acc=2.0, initial=None):
        self.max_lin_acc = max_lin_acc
        self.max_yaw_acc = max_yaw_acc
        self.current = initial or VelocityCommand()

    def step(self, target, dt):
        c = self.current
        dv = np.array([target.vx - c.vx, target.vy - c.vy])
        n = float(np.hypot(*dv))
        lim = self.max_lin_acc * dt
        if n > lim:
            dv *= lim / n
        dw = target.yaw_rate - c.yaw_rate
        lim_w = self.max_yaw_acc * dt
        dw = min(max(dw, -lim_w), lim_w)
        self.current = VelocityCommand(c.vx + dv[0], c.vy + dv[1], c.yaw_rate + dw)
        return self.current


@dataclass(frozen=True)
class FootstepPlannerConfig:
    k1: float = 0.08
    k2: float = 1.0
    h: float = 0.70
    apex: float = 0.08
    g: float = 9.81
    hip_lateral: float = 0.10

    def __post_init__(self):
        if self.h <= 0:
            raise VimpcError("CoM height h must be positive")
        if self.g <= 0:
            raise VimpcError("gravity magnitude must be positive")
        if self.apex < 0:
            raise VimpcError("swing apex must be non-negative")


def plan_foothold(p_c, v_c, cmd, cfg, dt_rem, torso_yaw):
    """Foothold xy from the CoM state and the command.

    ``p_c + (dt_rem/2) v + k1 (v - v_cmd) + (k2 h / g) (v x w_cmd)``, with the
    commanded velocity rotated to the world by ``torso_yaw``.
    """
    if dt_rem <= 0:
        raise VimpcError("dt_rem must be positive")
    v = np.array([v_c[0], v_c[1], 0.0])
    v_cmd = cmd.world_velocity(torso_yaw)
    w_cmd = np.array([0.0, 0.0, cmd.yaw_rate])
    p = (0.5 * dt_rem) * v + cfg.k1 * (v - v_cmd) + (cfg.k2 * cfg.h / cfg.g) * geom.cross(v, w_cmd)
    return np.array([p_c[0] + p[0], p_c[1] + p[1]])


def landing_yaw(torso_yaw, yaw_rate, dt_rem):
    return geom.wrap_angle(torso_yaw + 0.5 * yaw_rate * dt_rem)


# -- swing trajectories -------------------------------------------------------------

@dataclass(frozen=True)
class SwingTrajectory:
    """Swing from ``start`` to ``end`` over ``duration`` seconds.

    Horizontal motion is a cubic Bezier with both interior control points
    on the endpoints (``P1 = P0``, ``P2 = P3``), so the foot leaves and lands
    with zero horizontal velocity.  Height rises to ``apex`` above the
    higher endpoint at mid-swing along two cubic segments with zero
    vertical velocity at liftoff, apex and touchdown.  Yaw is linear.
    """
    start: biped.FootPose
    end: biped.FootPose
    apex: float
    duration: float

    def __post_init__(self):
        if self.duration <= 0:
            raise VimpcError("swing duration must be positive")

    @property
    def apex_height(self):
        return max(self.start.position[2], self.end.position[2]) + self.apex

    @property
    def control_points(self):
        p0 = self.start.position[:2]
        p3 = self.end.position[:2]
        return np.array([p0, p0, p3, p3])


def _bezier(P, s):
    a, b = 1.0 - s, s
    pos = a ** 3 * P[0] + 3 * a * a * b * P[1] + 3 * a * b * b * P[2] + b ** 3 * P[3]
    vel = 3 * (a * a * (P[1] - P[0]) + 2 * a * b * (P[2] - P[1]) + b * b * (P[3] - P[2]))
    return pos, vel


def _smoothstep(z0, z1, u):
    """Cubic from z0 to z1 with zero slope at both ends; derivative is d/du."""
    return z0 + (z1 - z0) * u * u * (3.0 - 2.0 * u), (z1 - z0) * 6.0 * u * (1.0 - u)


def swing_position(traj, s):
    """Pose and world velocity at normalized swing phase ``s``.

    Returns ``(FootPose, linear velocity, yaw rate)``.

    Raises
    ------
    PhaseOutOfRange
        If ``s`` lies outside [0, 1].
    """
    if not (0.0 <= s <= 1.0):
        raise PhaseOutOfRange(f"swing phase {s} outside [0, 1]")
    if s == 1.0:
        return traj.end, np.zeros(3), (traj.end.yaw - traj.start.yaw) / traj.duration
    xy, dxy = _bezier(traj.control_points, s)
    z0, z1, top = traj.start.position[2], traj.end.position[2], traj.apex_height
    if s < 0.5:
        z, dz = _smoothstep(z0, top, 2.0 * s)
    else:
        z, dz = _smoothstep(top, z1, 2.0 * s - 1.0)
    dz *= 2.0
    dyaw = geom.wrap_angle(traj.end.yaw - traj.start.yaw)
    yaw = traj.start.yaw + s * dyaw
    pose = biped.FootPose(np.array([xy[0], xy[1], z]), yaw)
    vel = np.array([dxy[0], dxy[1], dz]) / traj.duration
    return pose, vel, dyaw / traj.duration


# -- CoM / yaw references ----------------------------------------------------------

def com_wbo_reference(p_c, yaw, cmd, N, dt, h):
    """Euler-integrated yaw and CoM references for knots ``0..N``.

    Returns ``(yaw_ref (N+1,), p_ref (N+1, 3))`` with ``z`` held at ``h``.
    """
    yaw_ref = np.empty(N + 1)
    p_ref = np.empty((N + 1, 3))
    yaw_ref[0] = yaw
    p_ref[0] = (p_c[0], p_c[1], h)
    vb = cmd.body_velocity
    for k in range(N):
        yaw_ref[k + 1] = yaw_ref[k] + dt * cmd.yaw_rate
        c, s = math.cos(yaw_ref[k + 1]), math.sin(yaw_ref[k + 1])
        p_ref[k + 1] = p_ref[k] + dt * np.array([c * vb[0] - s * vb[1], s * vb[0] + c * vb[1], 0.0])
    return yaw_ref, p_ref


# -- inertia sources ---------------------------------------------------------------

class OracleInertia:
    """Analytic composite inertia of the biped at the given pose."""

    name = "oracle"

    def __init__(self, model):
        self.model = model

    def __call__(self, base_pos, base_yaw, left, right, base_orient=None):
        R = geom.rot_z(base_yaw) if base_orient is None else base_orient
        I6, _ = biped.composite_inertia(self.model, base_pos, R, left, right)
        return I6

    def batch(self, base_pos, base_yaw, feet):
        return np.array([self(b, y, l, r) for b, y, (l, r) in zip(base_pos, base_yaw, feet)])


class NetworkInertia:
    """Composite inertia predicted by the trained network."""

    name = "ccinn"

    def __init__(self, params):
        self.params = params

    def __call__(self, base_pos, base_yaw, left, right, base_orient=None):
        I6, _ = ccinn.predict(self.params, ccinn.features(base_pos, base_yaw, left, right))
        return I6

    def batch(self, base_pos, base_yaw, feet):
        X = np.array([ccinn.features(b, y, l, r) for b, y, (l, r) in zip(base_pos, base_yaw, feet)])
        I6, _ = ccinn.predict_batch(self.params, X)
        return I6


class ConstantInertia:
    """A fixed inertia regardless of configuration."""

    name = "constant"

    def __init__(self, I6):
        self.I6 = np.asarray(I6, dtype=float)

    def __call__(self, *args, **kwargs):
        return self.I6.copy()

    def batch(self, base_pos, base_yaw, feet):
        return np.tile(self.I6, (len(feet), 1))


# -- step planner -----------------------------------------------------------------

@dataclass
class _FootPlan:
    stance: biped.FootPose
    swing: SwingTrajectory = None
    t_liftoff: float = 0.0


@dataclass
class CoMState:
    """What the planner needs from the robot at a control tick."""
    p_c: np.ndarray
    v_c: np.ndarray
    yaw: float
    base_pos: np.ndarray
    base_yaw: float


class StepPlanner:
    """Per-foot stance holds and swing trajectories.

    A swing's landing target is fixed at liftoff from the measured CoM
    state.  Swings that start later inside the horizon are predicted from
    the reference and recomputed on every tick.
    """

    def __init__(self, gait_spec, cfg, feet):
        self.gait = gait_spec
        self.cfg = cfg
        self.feet = [_FootPlan(f) for f in feet]

    def _hip_offset(self, i, yaw):
        sgn = 1.0 if i == 0 else -1.0
        c, s = math.cos(yaw), math.sin(yaw)
        return np.array([-s * sgn * self.cfg.hip_lateral, c * sgn * self.cfg.hip_lateral])

    def target(self, i, p_c, v_c, yaw, cmd):
        """Landing pose for foot ``i`` lifting off now from CoM state ``(p_c, v_c, yaw)``."""
        T_sw = self.gait.swing_duration(i)
        T_st = self.gait.stance_duration(i)
        yaw_td = yaw + cmd.yaw_rate * T_sw
        anchor = np.asarray(p_c[:2]) + np.asarray(v_c[:2]) * T_sw + self._hip_offset(i, yaw_td)
        xy = plan_foothold(anchor, v_c, cmd, self.cfg, T_st, yaw_td)
        return biped.FootPose(np.array([xy[0], xy[1], 0.0]), landing_yaw(yaw_td, cmd.yaw_rate, T_st))

    def advance(self, t, state, cmd):
        """Process liftoffs and touchdowns up to time ``t``."""
        for i, fp in enumerate(self.feet):
            stance = self.gait.in_stance(t, i)
            if stance and fp.swing is not None:
                fp.stance = fp.swing.end
                fp.swing = None
            elif not stance and fp.swing is None:
                T_sw = self.gait.swing_duration(i)
                prog = gait.swing_progress(self.gait, t, i)
                fp.t_liftoff = t - prog * T_sw
                fp.swing = SwingTrajectory(fp.stance, self.target(i, state.p_c, state.v_c, state.yaw, cmd),
                                           self.cfg.apex, T_sw)

    def pose(self, i, t):
        """Commanded pose and velocity of foot ``i`` at time ``t`` (current plan only)."""
        fp = self.feet[i]
        if fp.swing is None:
            return fp.stance, np.zeros(3), 0.0
        s = (t - fp.t_liftoff) / fp.swing.duration
        return swing_position(fp.swing, min(max(s, 0.0), 1.0))

    def horizon_poses(self, t, times, ref_at, cmd):
        """Predicted foot poses at ``times`` (all >= ``t``).

        ``ref_at(tau)`` returns the reference ``(p_c, v_c, yaw)`` at time tau.
        """
        out = np.empty((len(times), 2), dtype=object)
        for i, fp in enumerate(self.feet):
            T_sw = self.gait.swing_duration(i)
            plan_stance = fp.stance
            swing, t_lo = fp.swing, fp.t_liftoff
            for k, tau in enumerate(times):
                if self.gait.in_stance(tau, i):
                    if swing is not None and tau >= t_lo + T_sw - 1e-9:
                        plan_stance = swing.end
                        swing = None
                    out[k, i] = plan_stance
                    continue
                prog = gait.swing_progress(self.gait, tau, i)
                lo = tau - prog * T_sw
                if swing is None or abs(lo - t_lo) > 1e-9:
                    if swing is not None:
                        plan_stance = swing.end
                    p_r, v_r, yaw_r = ref_at(lo)
                    swing = SwingTrajectory(plan_stance, self.target(i, p_r, v_r, yaw_r, cmd),
                                            self.cfg.apex, T_sw)
                    t_lo = lo
                out[k, i] = swing_position(swing, min(max(prog, 0.0), 1.0))[0]
        return out


def _interp_reference(times, yaw_ref, p_ref, cmd):
    def ref_at(tau):
        yaw = float(np.interp(tau, times, yaw_ref))
        p = np.array([np.interp(tau, times, p_ref[:, j]) for j in range(3)])
        if tau > times[-1]:
            yaw = yaw_ref[-1] + cmd.yaw_rate * (tau - times[-1])
            p = p_ref[-1] + cmd.world_velocity(yaw_ref[-1]) * (tau - times[-1])
        return p, cmd.world_velocity(yaw), yaw
    return ref_at


def build_horizon_reference(planner, source, state, cmd, mpc_cfg, t, model=None, clamp=True):
    """Assemble the per-knot references for one MPC solve.

    ``source`` maps (base position, base yaw, feet) to body-frame inertia;
    knot foot poses used for inertia are clamped into the legs' reachable
    shell when ``model`` is given and ``clamp`` is set.
    """
    N, dt = mpc_cfg.N, mpc_cfg.dt
    times = t + dt * np.arange(N + 1)
    yaw_ref, p_ref = com_wbo_reference(state.p_c, state.yaw, cmd, N, dt, planner.cfg.h)
    x_ref = np.zeros((N + 1, NX))
    x_ref[:, 2] = yaw_ref
    x_ref[:, 3:6] = p_ref
    x_ref[:, 8] = cmd.yaw_rate
    vb = cmd.body_velocity
    c, s = np.cos(yaw_ref), np.sin(yaw_ref)
    x_ref[:, 9] = c * vb[0] - s * vb[1]
    x_ref[:, 10] = s * vb[0] + c * vb[1]

    flags = gait.contact_flags(planner.gait, t, N, dt).flags
    ref_at = _interp_reference(times, yaw_ref, p_ref, cmd)
    poses = planner.horizon_poses(t, times, ref_at, cmd)
    foot_pos = np.array([[p.position for p in row] for row in poses])
    foot_yaw = np.array([[p.yaw for p in row] for row in poses])

    # base follows the same integration from its current pose
    base_yaw = state.base_yaw + (yaw_ref - yaw_ref[0])
    base_pos = np.empty((N + 1, 3))
    base_pos[:] = state.base_pos
    base_pos[:, :2] += p_ref[:, :2] - p_ref[0, :2]
    feet = []
    for k in range(N + 1):
        pair = []
        for i, side in enumerate(biped.SIDES):
            p = poses[k, i]
            if clamp and model is not None:
                p = biped.FootPose(biped.clamp_to_reach(model, base_pos[k], geom.rot_z(base_yaw[k]),
                                                        p.position, side), p.yaw)
            pair.append(p)
        feet.append(pair)
    inertia = source.batch(base_pos, base_yaw, feet)
    return HorizonReference(x_ref, inertia, foot_pos, foot_yaw, flags, t)
