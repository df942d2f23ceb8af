"""QP solver self-test: random small QPs against active-set enumeration,
and condensed walking-MPC problems checked by their KKT residual."""

import time

import numpy as np

from . import biped, gait, mpc
from .qp import QpProblem, enumerate_active_sets, solve_qp


def random_qp(rng, n=None, m=None):
    """Strictly convex QP with box-style rows around a feasible point.

    About a third of the rows are one-sided so that both bound types and
    infinite bounds are exercised.
    """
    n = int(rng.integers(1, 7)) if n is None else n
    m = int(rng.integers(1, 9)) if m is None else m
    A = rng.normal(size=(n, n))
    H = A @ A.T + 0.1 * n * np.eye(n)
    g = rng.normal(size=n) * 3.0
    C = rng.normal(size=(m, n))
    c0 = C @ rng.normal(size=n) * 0.3
    lower = c0 - rng.uniform(0.1, 1.0, m)
    upper = c0 + rng.uniform(0.1, 1.0, m)
    side = rng.integers(0, 3, m)
    lower[side == 1] = -np.inf
    upper[side == 2] = np.inf
    return QpProblem(H, g, C, lower, upper)


def random_mpc_problem(rng, model=None, cfg=None):
    """Condensed MPC QP for a perturbed walking state (N = 10 by default)."""
    model = model or biped.default_model()
    cfg = cfg or mpc.MpcConfig()
    N = cfg.N
    bp, eu, L, R = biped.nominal_stance(model)
    I6, com = biped.composite_inertia(model, bp, eu, L, R)
    x0 = mpc.state_vector(rng.normal(size=3) * 0.05, com + rng.normal(size=3) * 0.02,
                          rng.normal(size=3) * 0.3, rng.normal(size=3) * 0.3)
    xr = np.tile(mpc.state_vector(np.zeros(3), com, np.zeros(3), np.array([1.0, 0.0, 0.0])), (N + 1, 1))
    xr[:, 3] += np.arange(N + 1) * cfg.dt
    spec = gait.GaitSpec()
    t0 = rng.uniform(0.0, spec.period)
    flags = gait.contact_flags(spec, t0, N, cfg.dt).flags
    fp = np.tile(np.array([L.position, R.position]), (N + 1, 1, 1))
    fp[:, :, 0] += rng.normal(size=2) * 0.1
    ref = mpc.HorizonReference(xr, np.tile(I6, (N + 1, 1)), fp, np.zeros((N + 1, 2)), flags)
    lin = mpc.linearize_discretize(ref, cfg, model.total_mass, model.gravity)
    return mpc.condense(lin, ref, cfg, x0, model.total_mass, model.gravity).qp


def run(n_random=200, n_mpc=20, seed=0, tol=1e-6, kkt_tol=1e-8):
    """Returns a dict of results; ``ok`` is set when every check passed."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(n_random):
        p = random_qp(rng)
        u = solve_qp(p).u
        ref = enumerate_active_sets(p)
        worst = max(worst, float(np.max(np.abs(u - ref))))
    kkts, sizes = [], []
    for _ in range(n_mpc):
        p = random_mpc_problem(rng)
        kkts.append(solve_qp(p, tol=kkt_tol).kkt)
        sizes.append((p.n, p.m))
    elapsed = time.perf_counter() - t0
    max_kkt = float(max(kkts)) if kkts else 0.0
    return {"random_max_err": worst, "mpc_max_kkt": max_kkt, "mpc_sizes": sizes,
            "elapsed": elapsed, "ok": worst < tol and max_kkt < kkt_tol}
