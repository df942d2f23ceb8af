"""Convex variable-inertia MPC over a single-rigid-body model.

State (12): ``[Theta (roll, pitch, yaw), p_c, omega (world), v_c]``.
Input (12): ``[tau_1, f_1, tau_2, f_2]`` contact wrenches in the world frame.

The horizon dynamics are linearized along a :class:`HorizonReference` and
discretized by explicit Euler, then condensed so that only the wrenches of
feet in stance remain as decision variables.
"""

import math
import time
from functools import lru_cache
from dataclasses import dataclass, field

import numpy as np

from . import geom
from .errors import DimensionMismatch, Infeasible, MaxIterations, NotPositiveDefinite, NumericalFailure
from .qp import QpProblem, solve_qp

NX = 12
NU = 12
N_FEET = 2
WRENCH = 6

TH, POS, OMG, VEL = slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 12)


@dataclass
class MpcConfig:
    N: int = 10
    dt: float = 0.05
    state_weights: np.ndarray = field(default_factory=lambda: np.array(
        [500.0, 500.0, 200.0, 800.0, 800.0, 1000.0, 5.0, 5.0, 5.0, 10.0, 10.0, 10.0]))
    torque_weight: float = 1e-4
    force_weight: float = 1e-6
    terminal_factor: float = 10.0
    mu: float = 0.5
    foot_half_length: float = 0.10
    foot_half_width: float = 0.05
    f_min: float = 5.0
    f_max: float = 500.0
    qp_tol: float = 1e-8
    qp_max_iter: int = 50

    def __post_init__(self):
        self.state_weights = np.asarray(self.state_weights, dtype=float)

    @property
    def input_weights(self):
        w = np.array([self.torque_weight] * 3 + [self.force_weight] * 3)
        return np.tile(w, N_FEET)

    @property
    def terminal_weights(self):
        return self.state_weights * self.terminal_factor


def state_vector(theta, p, omega, v):
    return np.concatenate([theta, p, omega, v]).astype(float)


# -- continuous model ------------------------------------------------------------

def continuous_dynamics(x, u, I_world, r, flags, mass, gravity):
    """Time derivative of the SRB state with gyroscopic effects neglected.

    ``r`` holds the foot positions relative to the CoM, shape (2, 3).
    """
    I = np.asarray(I_world, dtype=float)
    if I.shape == (6,):
        I = geom.sym6_to_mat(I)
    try:
        L = np.linalg.cholesky(I)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("inertia must be positive definite") from exc
    Tinv = geom.inverse_euler_rate_map(x[TH])
    moment = np.zeros(3)
    force = np.zeros(3)
    for i in range(N_FEET):
        if flags[i]:
            tau = u[6 * i:6 * i + 3]
            f = u[6 * i + 3:6 * i + 6]
            moment += geom.cross(r[i], f) + tau
            force += f
    omega_dot = np.linalg.solve(L.T, np.linalg.solve(L, moment))
    xd = np.empty(NX)
    xd[TH] = Tinv @ x[OMG]
    xd[POS] = x[VEL]
    xd[OMG] = omega_dot
    xd[VEL] = force / mass + gravity
    return xd


# -- reference container -----------------------------------------------------------

@dataclass
class HorizonReference:
    """Per-knot references for one MPC solve.

    ``x_ref``, ``inertia``, ``foot_pos`` and ``foot_yaw`` have N+1 knots;
    ``flags`` has N (one per input).  ``inertia`` is body (base-yaw) frame.
    """
    x_ref: np.ndarray       # (N+1, 12)
    inertia: np.ndarray     # (N+1, 6)
    foot_pos: np.ndarray    # (N+1, 2, 3) world
    foot_yaw: np.ndarray    # (N+1, 2)
    flags: np.ndarray       # (N, 2)
    t0: float = 0.0

    @property
    def N(self):
        return self.flags.shape[0]

    @property
    def yaw_ref(self):
        return self.x_ref[:, 2]

    def r_ref(self):
        return self.foot_pos - self.x_ref[:, None, POS]

    def inertia_world(self, k):
        Rz = geom.rot_z(self.x_ref[k, 2])
        return Rz @ geom.sym6_to_mat(self.inertia[k]) @ Rz.T

    def shifted(self):
        """Drop knot 0 (used for receding-horizon checks)."""
        return HorizonReference(self.x_ref[1:], self.inertia[1:], self.foot_pos[1:],
                                self.foot_yaw[1:], self.flags[1:], self.t0)


@dataclass
class LinearizedModel:
    A: np.ndarray  # (N, 12, 12)
    B: np.ndarray  # (N, 12, 12), swing-foot columns zeroed
    d: np.ndarray  # (N, 12)

    @property
    def N(self):
        return self.A.shape[0]

    def step(self, k, x, u):
        return self.A[k] @ x + self.B[k] @ u + self.d[k]

    def rollout(self, x0, U):
        X = [np.asarray(x0, dtype=float)]
        for k in range(self.N):
            X.append(self.step(k, X[-1], U[k]))
        return np.array(X)


def continuous_jacobians(theta_ref, I_world, r, flags, mass):
    """Continuous ``A_bar`` and ``B_bar`` at one knot."""
    Ab = np.zeros((NX, NX))
    Ab[TH, OMG] = geom.inverse_euler_rate_map(theta_ref)
    Ab[POS, VEL] = np.eye(3)
    try:
        Iinv = np.linalg.inv(np.linalg.cholesky(I_world))
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("reference inertia is not positive definite") from exc
    Iinv = Iinv.T @ Iinv
    Bb = np.zeros((NX, NU))
    for i in range(N_FEET):
        if not flags[i]:
            continue
        c = 6 * i
        Bb[OMG, c:c + 3] = Iinv
        Bb[OMG, c + 3:c + 6] = Iinv @ geom.skew(r[i])
        Bb[VEL, c + 3:c + 6] = np.eye(3) / mass
    return Ab, Bb


def linearize_discretize(ref, cfg, mass, gravity):
    """Explicit-Euler, time-varying affine model along ``ref``."""
    N = ref.N
    if ref.x_ref.shape[0] < N + 1 or ref.inertia.shape[0] < N:
        raise DimensionMismatch("reference shorter than the horizon")
    dt = cfg.dt
    r = ref.r_ref()
    A = np.empty((N, NX, NX))
    B = np.empty((N, NX, NU))
    d = np.zeros((N, NX))
    eye = np.eye(NX)
    for k in range(N):
        Ab, Bb = continuous_jacobians(ref.x_ref[k, TH], ref.inertia_world(k), r[k],
                                      ref.flags[k], mass)
        A[k] = eye + dt * Ab
        B[k] = dt * Bb
        d[k, VEL] = dt * np.asarray(gravity)
    return LinearizedModel(A, B, d)


# -- contact wrench cone ---------------------------------------------------------

@lru_cache(maxsize=16)
def _cached_local_rows(mu, X, Y):
    rows = cwc_local_rows(mu, X, Y)
    rows.setflags(write=False)
    return rows


def cwc_local_rows(mu, X, Y):
    """16 homogeneous rows ``F w <= 0`` of the rectangular-foot CWC.

    ``w = [tau_x, tau_y, tau_z, f_x, f_y, f_z]`` about the sole centre in the
    foot frame; ``X``/``Y`` are the half-length/half-width.
    """
    rows = [
        [0, 0, 0, 1, 0, -mu],
        [0, 0, 0, -1, 0, -mu],
        [0, 0, 0, 0, 1, -mu],
        [0, 0, 0, 0, -1, -mu],
        [1, 0, 0, 0, 0, -Y],
        [-1, 0, 0, 0, 0, -Y],
        [0, 1, 0, 0, 0, -X],
        [0, -1, 0, 0, 0, -X],
    ]
    k = mu * (X + Y)
    for s1 in (1.0, -1.0):
        for s2 in (1.0, -1.0):
            # tau_z >= -k f_z + |Y f_x - mu tau_x| + |X f_y - mu tau_y|
            rows.append([-s1 * mu, -s2 * mu, -1.0, s1 * Y, s2 * X, -k])
            # tau_z <= k f_z - |Y f_x + mu tau_x| - |X f_y + mu tau_y|
            rows.append([s1 * mu, s2 * mu, 1.0, s1 * Y, s2 * X, -k])
    return np.array(rows, dtype=float)


def cwc_generators(mu, X, Y):
    """Wrench-cone generators: 4 sole corners x 4 friction-pyramid edges."""
    gens = []
    for cx in (X, -X):
        for cy in (Y, -Y):
            p = np.array([cx, cy, 0.0])
            for ex in (mu, -mu):
                for ey in (mu, -mu):
                    f = np.array([ex, ey, 1.0])
                    gens.append(np.concatenate([geom.cross(p, f), f]))
    return np.array(gens).T  # (6, 16)


def foot_wrench_rows(cfg, foot_yaw):
    """Rows (17, 6) and bounds for one world-frame foot wrench."""
    F = _cached_local_rows(float(cfg.mu), float(cfg.foot_half_length), float(cfg.foot_half_width))
    Rt = geom.rot_z(foot_yaw).T
    rows = np.zeros((17, 6))
    rows[:16, :3] = F[:, :3] @ Rt
    rows[:16, 3:] = F[:, 3:] @ Rt
    rows[16, 5] = 1.0
    lower = np.concatenate([np.full(16, -np.inf), [cfg.f_min]])
    upper = np.concatenate([np.zeros(16), [cfg.f_max]])
    return rows, lower, upper


def contact_wrench_constraints(cfg, foot_yaw, flags):
    """Per-knot constraint blocks for all stance feet.

    Returns a list over knots of ``(C_k, lower_k, upper_k)`` acting on the full
    12-vector ``u_k``; swing feet get ``u_i = 0`` rows.
    """
    out = []
    for k in range(flags.shape[0]):
        Cs, ls, us = [], [], []
        for i in range(N_FEET):
            block = np.zeros((17 if flags[k, i] else 6, NU))
            if flags[k, i]:
                rows, lo, up = foot_wrench_rows(cfg, foot_yaw[k, i])
                block[:, 6 * i:6 * i + 6] = rows
            else:
                block[:, 6 * i:6 * i + 6] = np.eye(6)
                lo = up = np.zeros(6)
            Cs.append(block)
            ls.append(lo)
            us.append(up)
        out.append((np.vstack(Cs), np.concatenate(ls), np.concatenate(us)))
    return out


def wrench_feasible(cfg, foot_yaw, wrench, tol=0.0):
    rows, lo, up = foot_wrench_rows(cfg, foot_yaw)
    v = rows @ wrench
    return bool(np.all(v <= up + tol) and np.all(v >= lo - tol))


# -- input reference -----------------------------------------------------------------

def static_wrench(r, flags, mass, gravity, weights):
    """Least-weighted-norm wrenches that hold the SRB in static equilibrium."""
    active = [i for i in range(N_FEET) if flags[i]]
    u = np.zeros(NU)
    if not active:
        return u
    A = np.zeros((6, 6 * len(active)))
    for j, i in enumerate(active):
        A[0:3, 6 * j + 3:6 * j + 6] = np.eye(3)
        A[3:6, 6 * j:6 * j + 3] = np.eye(3)
        A[3:6, 6 * j + 3:6 * j + 6] = geom.skew(r[i])
    b = np.concatenate([-mass * np.asarray(gravity), np.zeros(3)])
    wa = np.concatenate([weights[6 * i:6 * i + 6] for i in active])
    # zero weights leave the weighted norm undefined; use the plain one then
    winv = 1.0 / wa if np.all(wa > 0) else np.ones_like(wa)
    AW = A * winv
    w = winv * (A.T @ np.linalg.solve(AW @ A.T, b))
    for j, i in enumerate(active):
        u[6 * i:6 * i + 6] = w[6 * j:6 * j + 6]
    return u


# -- condensing ----------------------------------------------------------------------

@dataclass
class CondensedMpc:
    qp: QpProblem
    Sx: np.ndarray      # (N*12, 12)
    Su: np.ndarray      # (N*12, nU)
    c: np.ndarray       # (N*12,)
    columns: list       # (knot, foot) for each 6-wide decision block
    u_ref: np.ndarray   # (N, 12)

    def expand(self, U):
        """Reduced decision vector -> (N, 12) full input sequence."""
        N = self.u_ref.shape[0]
        full = np.zeros((N, NU))
        for j, (k, i) in enumerate(self.columns):
            full[k, 6 * i:6 * i + 6] = U[6 * j:6 * j + 6]
        return full

    def predict(self, x0, U):
        X = self.Sx @ x0 + self.Su @ U + self.c
        return np.vstack([x0, X.reshape(-1, NX)])


def condense(lin, ref, cfg, x0, mass, gravity):
    """Eliminate states; decision variables are the stance-foot wrenches."""
    N = lin.N
    if ref.N != N or np.asarray(x0).shape != (NX,):
        raise DimensionMismatch("model, reference and initial state disagree")
    columns = [(k, i) for k in range(N) for i in range(N_FEET) if ref.flags[k, i]]
    nU = WRENCH * len(columns)
    col_of = {kc: j for j, kc in enumerate(columns)}

    Sx = np.empty((N * NX, NX))
    Su = np.zeros((N * NX, nU))
    c = np.empty(N * NX)
    A_prev = np.eye(NX)
    S_prev = np.zeros((NX, nU))
    c_prev = np.zeros(NX)
    for k in range(N):
        A = lin.A[k]
        rows = slice(k * NX, (k + 1) * NX)
        Sx[rows] = A @ A_prev
        S_k = A @ S_prev
        for i in range(N_FEET):
            if ref.flags[k, i]:
                j = col_of[(k, i)]
                S_k[:, 6 * j:6 * j + 6] += lin.B[k][:, 6 * i:6 * i + 6]
        Su[rows] = S_k
        c[rows] = A @ c_prev + lin.d[k]
        A_prev, S_prev, c_prev = Sx[rows], S_k, c[rows]

    q = np.concatenate([np.tile(cfg.state_weights, N - 1), cfg.terminal_weights])
    rw = cfg.input_weights
    r = ref.r_ref()
    u_ref = np.array([static_wrench(r[k], ref.flags[k], mass, gravity, rw) for k in range(N)])
    Rdiag = np.concatenate([rw[6 * i:6 * i + 6] for (k, i) in columns]) if columns else np.zeros(0)
    Uref = np.concatenate([u_ref[k, 6 * i:6 * i + 6] for (k, i) in columns]) if columns else np.zeros(0)

    e = Sx @ x0 + c - ref.x_ref[1:N + 1].reshape(-1)
    QSu = Su * q[:, None]
    H = 2.0 * (Su.T @ QSu)
    H[np.diag_indices_from(H)] += 2.0 * Rdiag
    g = 2.0 * (QSu.T @ e - Rdiag * Uref)

    nb = len(columns)
    Cb = np.empty((nb, 17, WRENCH))
    lower = np.empty((nb, 17))
    upper = np.empty((nb, 17))
    for j, (k, i) in enumerate(columns):
        Cb[j], lower[j], upper[j] = foot_wrench_rows(cfg, ref.foot_yaw[k, i])
    qp = QpProblem(H, g, lower=lower.reshape(-1), upper=upper.reshape(-1), C_blocks=Cb)
    return CondensedMpc(qp, Sx, Su, c, columns, u_ref)


# -- solve -------------------------------------------------------------------------------

@dataclass
class MpcSolution:
    u0: np.ndarray          # (12,)
    U: np.ndarray           # (N, 12)
    X: np.ndarray           # (N+1, 12) predicted states
    iterations: int
    kkt: float
    solve_time: float       # seconds spent in the QP solver
    build_time: float       # seconds spent linearizing and condensing
    qp: object = None
    qp_solution: object = None


def solve_mpc(x0, ref, cfg, mass, gravity, warm=None):
    """Solve one MPC problem from measured state ``x0``.

    ``warm`` is an optional (N, 12) input sequence used as the primal
    starting point; blocks for feet in swing are ignored.

    Raises
    ------
    Infeasible
        The QP did not converge and the best iterate violates a constraint;
        ``exc.row`` names the most violated row.
    MaxIterations
        The QP did not converge but the best iterate is feasible.
    """
    x0 = np.asarray(x0, dtype=float)
    t0 = time.perf_counter()
    lin = linearize_discretize(ref, cfg, mass, gravity)
    cond = condense(lin, ref, cfg, x0, mass, gravity)
    t1 = time.perf_counter()
    try:
        u_start = None
        if warm is not None and cond.columns:
            u_start = np.concatenate([warm[k, 6 * i:6 * i + 6] for (k, i) in cond.columns])
        sol = solve_qp(cond.qp, tol=cfg.qp_tol, max_iter=cfg.qp_max_iter, u0=u_start)
    except (MaxIterations, NumericalFailure) as exc:
        best = getattr(exc, "solution", None)
        if best is not None:
            v = cond.qp.C @ best.u
            viol = np.maximum(cond.qp.lower - v, v - cond.qp.upper)
            row = int(np.argmax(viol))
            if viol[row] > 1e-6:
                j = row // 17
                k, i = cond.columns[j]
                raise Infeasible(f"knot {k} foot {i} row {row % 17} violated by {viol[row]:.3e}",
                                 row=row, violation=float(viol[row])) from exc
        raise
    t2 = time.perf_counter()
    U = cond.expand(sol.u)
    X = cond.predict(x0, sol.u)
    return MpcSolution(U[0], U, X, sol.iterations, sol.kkt, t2 - t1, t1 - t0, cond.qp, sol)
