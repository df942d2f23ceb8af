"""Closed-loop simulation of the biped under the MPC.

The plant is a single rigid body whose inertia follows the kinematic leg
configuration.  Its angular state is the whole-body angular velocity
``omega = I(q)^-1 L`` with ``L`` the centroidal angular momentum, driven by

    I(q) omega_dot = sum(r_i x f_i + tau_i) - omega x I omega - I_dot omega

(the last two terms toggleable).  The torso turns at
``omega - I^-1 h_rel``, where ``h_rel`` is the momentum of the legs moving
relative to the torso, so swinging legs make the torso counter-rotate while
the whole-body orientation does not.  Legs follow the step planner
exactly; stance feet never move.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import biped, ccinn, gait, geom, mpc, refgen, wbo
from .biped import BipedModel
from .errors import EmptyLog, OutOfReach, VimpcError
from .gait import GaitSpec
from .mpc import MpcConfig
from .refgen import FootstepPlannerConfig, VelocityCommand

MODES = ("vi", "baseline1", "baseline2")
FALL_HEIGHT_FRACTION = 0.45
FALL_TILT = 0.6


@dataclass(frozen=True)
class PlantConfig:
    sim_dt: float = 1.25e-3
    mpc_period: float = 5e-3
    include_gyroscopic: bool = True
    include_inertia_rate: bool = True
    wrench_noise_std: tuple = (0.0, 0.0)   # force N, torque N m

    def __post_init__(self):
        if self.sim_dt <= 0 or self.mpc_period <= 0:
            raise VimpcError("sim_dt and mpc_period must be positive")
        r = self.mpc_period / self.sim_dt
        if abs(r - round(r)) > 1e-9 or round(r) < 1:
            raise VimpcError("mpc_period must be an integer multiple of sim_dt")
        if any(s < 0 for s in self.wrench_noise_std):
            raise VimpcError("noise standard deviations must be non-negative")

    @property
    def substeps(self):
        return int(round(self.mpc_period / self.sim_dt))


# -- plant --------------------------------------------------------------------------

@dataclass(frozen=True)
class Kinematics:
    """Configuration-dependent quantities, torso frame unless noted."""
    base_pos: np.ndarray        # world
    com_b: np.ndarray           # CoM in the torso frame
    inertia_b: np.ndarray       # (3, 3) about the CoM
    link_coms: np.ndarray       # (7, 3)
    link_rots: np.ndarray       # (7, 3, 3)
    feet: tuple                 # world FootPoses


@dataclass(frozen=True)
class PlantState:
    t: float
    p_c: np.ndarray
    v_c: np.ndarray
    quat: np.ndarray            # torso orientation
    omega: np.ndarray           # whole-body angular velocity, world
    kin: Kinematics
    h_rel: np.ndarray = field(default_factory=lambda: np.zeros(3))       # torso frame
    inertia_rate_b: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    wbo_state: wbo.WboState = field(default_factory=wbo.WboState)

    @property
    def rotation(self):
        return geom.quat_to_rot(self.quat)

    @property
    def euler(self):
        return geom.quat_to_euler(self.quat)

    @property
    def inertia_world(self):
        R = self.rotation
        return R @ self.kin.inertia_b @ R.T

    @property
    def omega_torso(self):
        R = self.rotation
        return self.omega - R @ np.linalg.solve(self.kin.inertia_b, self.h_rel)

    @property
    def yaw(self):
        return geom.yaw_of_quat(self.quat)


def _kinematics(model, p_c, R_b, feet, com_guess):
    p_b = p_c - R_b @ com_guess
    pos_b = [R_b.T @ (f.position - p_b) for f in feet]
    rot_b = [R_b.T @ f.rotation for f in feet]
    coms, rots, _ = biped.link_frames(model, np.zeros(3), np.eye(3), pos_b, rot_b)
    I_b, c_b = biped._composite_from_frames(model, coms, rots)
    # the legs were solved from p_b; the CoM mismatch is one step of com_b drift
    return Kinematics(p_b, c_b, I_b, coms, rots, tuple(feet))


def _vee(M):
    return 0.5 * np.stack([M[..., 2, 1] - M[..., 1, 2], M[..., 0, 2] - M[..., 2, 0],
                           M[..., 1, 0] - M[..., 0, 1]], axis=-1)


def _relative_momentum(model, kin, prev, dt):
    """Angular momentum about the CoM of the legs moving relative to the torso."""
    m = model._masses
    v = (kin.link_coms - prev.link_coms) / dt
    w = _vee(kin.link_rots @ prev.link_rots.transpose(0, 2, 1)) / dt
    d = kin.link_coms - kin.com_b
    I_links = kin.link_rots @ model._inertias @ kin.link_rots.transpose(0, 2, 1)
    return np.einsum("kij,kj->i", I_links, w) + np.sum(m[:, None] * np.cross(d, v), axis=0)


def initial_state(model, planner, h, base_yaw=0.0):
    """Standing at rest with the CoM at height ``h`` above the origin."""
    R = geom.rot_z(base_yaw)
    feet = tuple(planner.pose(i, 0.0)[0] for i in range(2))
    p_c = np.array([0.0, 0.0, h])
    kin = _kinematics(model, p_c, R, feet, np.array([0.0, 0.0, h - biped.NOMINAL_BASE_HEIGHT]))
    for _ in range(50):
        prev = kin.com_b
        kin = _kinematics(model, p_c, R, feet, prev)
        if np.abs(kin.com_b - prev).max() < 1e-14:
            break
    return PlantState(0.0, p_c, np.zeros(3), geom.rot_to_quat(R), np.zeros(3), kin)


def standing_planner(model, cfg, h, gait_spec=gait.STANDING, base_yaw=0.0):
    """Planner with the feet under the hips, shifted so the nominal-stance CoM is at the origin."""
    R = geom.rot_z(base_yaw)
    b, o, l, r = biped.nominal_stance(model)
    com = biped.center_of_mass(model, b, o, l, r)
    shift = np.array([com[0], com[1], 0.0])
    feet = [biped.FootPose(R @ (f.position - shift), base_yaw) for f in (l, r)]
    return refgen.StepPlanner(gait_spec, cfg, feet)


def applied_wrench(state, wrench, flags, noise=None):
    """Net force and moment about the CoM from the stance feet."""
    F = np.zeros(3)
    M = np.zeros(3)
    for i in range(2):
        if not flags[i]:
            continue
        w = wrench[6 * i:6 * i + 6]
        if noise is not None:
            w = w + noise[6 * i:6 * i + 6]
        r = state.kin.feet[i].position - state.p_c
        F += w[3:]
        M += w[:3] + geom.cross(r, w[3:])
    return F, M


def plant_step(state, wrench, cfg, model, planner, noise=None):
    """Advance the plant by ``cfg.sim_dt`` under a held wrench.

    Raises
    ------
    OutOfReach
        If a leg cannot reach its commanded foot pose.
    """
    dt = cfg.sim_dt
    flags = [planner.gait.in_stance(state.t, i) for i in range(2)]
    F, M = applied_wrench(state, wrench, flags, noise)
    R = state.rotation
    I_w = R @ state.kin.inertia_b @ R.T
    rhs = M
    if cfg.include_gyroscopic:
        rhs = rhs - geom.cross(state.omega, I_w @ state.omega)
    if cfg.include_inertia_rate:
        rhs = rhs - R @ (state.inertia_rate_b @ (R.T @ state.omega))
    omega_dot = np.linalg.solve(I_w, rhs)

    v = state.v_c + dt * (F / model.total_mass + model.gravity)
    p = state.p_c + dt * v
    omega = state.omega + dt * omega_dot
    omega_t = omega - R @ np.linalg.solve(state.kin.inertia_b, state.h_rel)
    quat = geom.quat_mul(geom.quat_exp(omega_t * dt), state.quat)
    wb = wbo.propagate_wbo(state.wbo_state, omega, dt)

    # snapped so that times stay on the sim_dt grid over long runs
    t = round(state.t + dt, 12)
    feet = tuple(planner.pose(i, t)[0] for i in range(2))
    R1 = geom.quat_to_rot(quat)
    kin = _kinematics(model, p, R1, feet, state.kin.com_b)
    h_rel = _relative_momentum(model, kin, state.kin, dt)
    I_dot = (kin.inertia_b - state.kin.inertia_b) / dt
    return PlantState(t, p, v, quat, omega, kin, h_rel, I_dot, wb)


def detect_fall(state, h):
    """CoM below 45% of ``h`` or torso roll/pitch beyond 0.6 rad."""
    if state.p_c[2] < FALL_HEIGHT_FRACTION * h:
        return True
    roll, pitch, _ = state.euler
    return abs(roll) > FALL_TILT or abs(pitch) > FALL_TILT


# -- logging ---------------------------------------------------------------------------

COLUMNS = (
    ["t", "px", "py", "pz", "roll", "pitch", "yaw", "vx", "vy", "vz", "wx", "wy", "wz",
     "wbo_roll", "wbo_pitch", "wbo_yaw", "contact_l", "fz_l", "contact_r", "fz_r"]
    + [f"u0_{j}" for j in range(12)]
    + ["ref_vx", "ref_vy", "ref_yaw_rate", "mpc_iters", "mpc_solve_ms", "mpc_kkt", "fall_flag",
       "mpc_tick", "solver_fail"]
)
COL = {c: j for j, c in enumerate(COLUMNS)}


@dataclass
class SimLog:
    data: np.ndarray                                   # (rows, len(COLUMNS))
    inertia_ref: list = field(default_factory=list)    # per MPC tick, (N+1, 6) body frame
    events: list = field(default_factory=list)

    def __len__(self):
        return self.data.shape[0]

    def column(self, name):
        return self.data[:, COL[name]]

    def to_csv(self, path):
        header = ",".join(COLUMNS)
        np.savetxt(path, self.data, fmt="%.17g", delimiter=",", header=header, comments="")

    @classmethod
    def from_csv(cls, path):
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        if header != COLUMNS:
            raise VimpcError(f"unexpected CSV header in {path}")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data.reshape(-1, len(COLUMNS)))


def _log_row(state, q_wbo, u, flags, cmd, stats, fall, tick, fail):
    roll, pitch, yaw = state.euler
    wr, wp, wy = geom.quat_to_euler(q_wbo)
    w = state.omega_torso
    return [state.t, *state.p_c, roll, pitch, yaw, *state.v_c, *w, wr, wp, wy,
            float(flags[0]), u[5] if flags[0] else 0.0, float(flags[1]), u[11] if flags[1] else 0.0,
            *u, cmd.vx, cmd.vy, cmd.yaw_rate, *stats, float(fall), float(tick), float(fail)]


# -- closed loop -------------------------------------------------------------------------

@dataclass
class LoopConfig:
    model: BipedModel = field(default_factory=biped.default_model)
    gait: GaitSpec = field(default_factory=GaitSpec)
    planner: FootstepPlannerConfig = field(default_factory=FootstepPlannerConfig)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    plant: PlantConfig = field(default_factory=PlantConfig)
    command: VelocityCommand = field(default_factory=VelocityCommand)
    inertia_source: str = "ccinn"      # or "oracle", used by VI mode
    weights: object = None             # MlpParams, None loads the packaged default
    wbo_source: str = "map"            # or "integrated"
    wbo_map: object = None             # WboMap, None loads the packaged default
    warm_start: bool = True
    seed: int = 0


class Controller:
    """MPC controller for one mode; owns the warm-start buffer."""

    def __init__(self, cfg, mode):
        if mode not in MODES:
            raise VimpcError(f"unknown mode {mode!r}, expected one of {MODES}")
        self.cfg = cfg
        self.mode = mode
        model = cfg.model
        if mode == "vi":
            if cfg.inertia_source == "oracle":
                self.source = refgen.OracleInertia(model)
            elif cfg.inertia_source == "ccinn":
                params = cfg.weights if cfg.weights is not None else ccinn.load_default()
                self.source = refgen.NetworkInertia(params)
            else:
                raise VimpcError(f"unknown inertia source {cfg.inertia_source!r}")
        elif mode == "baseline1":
            # the standing pose the plant starts from, CoM at the nominal height
            h = cfg.planner.h
            st = initial_state(model, standing_planner(model, cfg.planner, h), h)
            self.source = refgen.ConstantInertia(geom.mat_to_sym6(st.kin.inertia_b))
        else:
            self.source = None
        if cfg.wbo_source not in ("map", "integrated"):
            raise VimpcError(f"unknown WBO source {cfg.wbo_source!r}")
        self.wbo_map = None
        if cfg.wbo_source == "map":
            self.wbo_map = cfg.wbo_map if cfg.wbo_map is not None else wbo.load_default()
        self.warm = None

    def wbo_quaternion(self, state):
        """Whole-body orientation: fitted map on the torso pose, or the integrated one."""
        if self.wbo_map is None:
            return state.wbo_state.orientation
        q = wbo.leg_joints(self.cfg.model, state.kin.base_pos, state.rotation, *state.kin.feet)
        return wbo.wbo_orientation(self.wbo_map, q, state.quat)[0]

    def safe_wbo_quaternion(self, state):
        """As ``wbo_quaternion``, falling back to the torso when a leg is out of reach."""
        try:
            return self.wbo_quaternion(state)
        except OutOfReach:
            return state.quat

    def measured_state(self, state, q_wbo=None):
        """MPC initial state: whole-body orientation for VI, torso otherwise."""
        if self.mode == "vi":
            q = self.wbo_quaternion(state) if q_wbo is None else q_wbo
            theta = geom.quat_to_euler(q)
            omega = state.omega
        else:
            theta = state.euler
            omega = state.omega_torso
        return mpc.state_vector(theta, state.p_c, omega, state.v_c)

    def source_for(self, state):
        if self.source is not None:
            return self.source
        # current configuration's inertia held over the horizon
        R = state.rotation
        Rz = geom.rot_z(state.yaw)
        I_yaw = Rz.T @ R @ state.kin.inertia_b @ R.T @ Rz
        return refgen.ConstantInertia(geom.mat_to_sym6(I_yaw))

    def reference(self, state, planner, cmd, q_wbo=None):
        x0 = self.measured_state(state, q_wbo)
        cs = refgen.CoMState(state.p_c, state.v_c, float(x0[2]), state.kin.base_pos, state.yaw)
        ref = refgen.build_horizon_reference(planner, self.source_for(state), cs, cmd,
                                             self.cfg.mpc, state.t, self.cfg.model)
        return x0, ref

    def solve(self, state, planner, cmd, q_wbo=None):
        x0, ref = self.reference(state, planner, cmd, q_wbo)
        model = self.cfg.model
        sol = mpc.solve_mpc(x0, ref, self.cfg.mpc, model.total_mass, model.gravity,
                            warm=self.warm if self.cfg.warm_start else None)
        self.warm = sol.U
        return sol, ref


def run_closed_loop(cfg, mode, duration, progress=None):
    """Simulate ``duration`` seconds; stops early on a fall.

    A solver failure keeps the previous wrench and flags the row.  A leg
    that cannot reach its foot counts as a fall.
    """
    model = cfg.model
    pc = cfg.plant
    h = cfg.planner.h
    planner = standing_planner(model, cfg.planner, h, cfg.gait)
    state = initial_state(model, planner, h)
    ctrl = Controller(cfg, mode)
    limiter = refgen.RateLimiter()
    rng = np.random.default_rng(cfg.seed)
    noisy = any(s > 0 for s in pc.wrench_noise_std)
    std = np.tile(np.r_[[pc.wrench_noise_std[1]] * 3, [pc.wrench_noise_std[0]] * 3], 2)

    steps = int(round(duration / pc.sim_dt))
    per = pc.substeps
    rows = []
    log = SimLog(np.zeros((0, len(COLUMNS))))
    u = mpc.static_wrench(np.array([f.position - state.p_c for f in state.kin.feet]),
                          [1, 1], model.total_mass, model.gravity, cfg.mpc.input_weights)
    stats = (0.0, 0.0, 0.0)
    cmd = limiter.current
    fall = False
    for k in range(steps):
        tick = k % per == 0
        fail = False
        if tick:
            cmd = limiter.step(cfg.command, pc.mpc_period)
        cs = refgen.CoMState(state.p_c, state.v_c, state.yaw, state.kin.base_pos, state.yaw)
        planner.advance(state.t, cs, cmd)
        q_wbo = ctrl.safe_wbo_quaternion(state)
        if tick:
            try:
                sol, ref = ctrl.solve(state, planner, cmd, q_wbo)
                u = sol.u0
                stats = (float(sol.iterations), 1e3 * sol.solve_time, float(sol.kkt))
                log.inertia_ref.append(ref.inertia.copy())
            except VimpcError as exc:
                fail = True
                stats = (-1.0, 0.0, float("nan"))
                log.events.append((state.t, type(exc).__name__, str(exc)))
        flags = [planner.gait.in_stance(state.t, i) for i in range(2)]
        noise = rng.normal(0.0, 1.0, 12) * std if noisy else None
        try:
            new = plant_step(state, u, pc, model, planner, noise)
        except OutOfReach as exc:
            log.events.append((state.t, "OutOfReach", str(exc)))
            fall = True
            rows.append(_log_row(state, q_wbo, u, flags, cmd, stats, fall, tick, fail))
            break
        rows.append(_log_row(state, q_wbo, u, flags, cmd, stats, False, tick, fail))
        state = new
        if detect_fall(state, h):
            fall = True
            rows[-1][COL["fall_flag"]] = 1.0
            log.events.append((state.t, "Fall", "balance lost"))
            break
        if progress is not None and tick:
            progress(state)
    log.data = np.array(rows, dtype=float).reshape(-1, len(COLUMNS))
    log.final_state = state
    return log


# -- metrics ------------------------------------------------------------------------------

SETTLE_TIME = 0.5


def _rmse(e):
    return float(np.sqrt(np.mean(np.square(e)))) if e.size else 0.0


def _moving_average(x, n):
    if n <= 1 or x.shape[0] < n:
        return x
    c = np.cumsum(np.vstack([np.zeros((1,) + x.shape[1:]), x]), axis=0)
    return (c[n:] - c[:-n]) / n


def compute_metrics(log, gait_period=0.5):
    """Tracking and solver statistics of a run.

    Velocity errors are taken in the torso-yaw frame after the command has
    finished ramping plus a settling time.  ``avg_*`` errors use velocities
    averaged over one gait period, which removes the in-step sway.
    """
    if len(log) == 0:
        raise EmptyLog("log has no rows")
    t = log.column("t")
    yaw = log.column("yaw")
    c, s = np.cos(yaw), np.sin(yaw)
    vx = c * log.column("vx") + s * log.column("vy")
    vy = -s * log.column("vx") + c * log.column("vy")
    wz = log.column("wz")
    ref = np.column_stack([log.column("ref_vx"), log.column("ref_vy"), log.column("ref_yaw_rate")])
    final = ref[-1]
    reached = np.all(np.abs(ref - final) <= 1e-12, axis=1)
    t_ramp = t[np.argmax(reached)] if reached.any() else t[-1]
    win = t >= t_ramp + SETTLE_TIME
    err = np.column_stack([vx - ref[:, 0], vy - ref[:, 1], wz - ref[:, 2]])[win]
    dt = t[1] - t[0] if len(t) > 1 else 1.0
    avg = _moving_average(err, int(round(gait_period / dt)))
    ticks = log.column("mpc_tick") > 0
    ok = ticks & (log.column("solver_fail") == 0)
    st = log.column("mpc_solve_ms")[ok]
    fall = bool(log.column("fall_flag").max() > 0)
    # a command counts as sustained once held for a gait period without falling
    held = t <= t[-1] - gait_period if fall else np.ones(t.shape, dtype=bool)
    speed = np.hypot(ref[:, 0], ref[:, 1])[held]
    yaw_rate = np.abs(ref[:, 2])[held]
    return {
        "duration": float(t[-1] - t[0] + dt),
        "vel_rmse_x": _rmse(err[:, 0]),
        "vel_rmse_y": _rmse(err[:, 1]),
        "yaw_rate_rmse": _rmse(err[:, 2]),
        "avg_vel_rmse": _rmse(np.hypot(avg[:, 0], avg[:, 1])) if avg.size else 0.0,
        "avg_yaw_rate_rmse": _rmse(avg[:, 2]) if avg.size else 0.0,
        "mean_solve_ms": float(st.mean()) if st.size else 0.0,
        "p99_solve_ms": float(np.percentile(st, 99)) if st.size else 0.0,
        "max_solve_ms": float(st.max()) if st.size else 0.0,
        "mpc_solves": int(ticks.sum()),
        "solver_failures": int((log.column("solver_fail") > 0).sum()),
        "fall": fall,
        "max_sustained_speed": float(speed.max()) if speed.size else 0.0,
        "max_sustained_yaw_rate": float(yaw_rate.max()) if yaw_rate.size else 0.0,
        "window_start": float(t_ramp + SETTLE_TIME),
    }


def sweep_pass(metrics, command):
    """No fall and period-averaged tracking error below 30% of the command."""
    if metrics["fall"]:
        return False
    speed = math.hypot(command.vx, command.vy)
    ok = True
    if speed > 0:
        ok &= metrics["avg_vel_rmse"] < 0.3 * speed
    if command.yaw_rate != 0:
        ok &= metrics["avg_yaw_rate_rmse"] < 0.3 * abs(command.yaw_rate)
    return bool(ok)


def format_metrics(m):
    return "".join(f"{k} = {v!r}\n" for k, v in m.items())
