"""Dense convex QP solver.

Solves::

    minimize    0.5 u'Hu + g'u
    subject to  lower <= C u <= upper

with a Mehrotra predictor-corrector primal-dual interior-point method.  Infinite
bounds are dropped; the remaining sides become one-sided rows ``G u + s = h``
with slack ``s >= 0`` and multiplier ``z >= 0``.

Constraints come either as a dense ``C`` or, for stacked per-foot contact
wrenches, as ``C_blocks``: one small row block per aligned group of
``block_size`` variables.  In the block form every product with ``G`` is a
batched small matmul and the ``G' W G`` term of the reduced Newton system is
block diagonal, which removes most of the per-iteration overhead.
"""

import itertools
import math

import numpy as np
from scipy.linalg.lapack import dpotrf, dpotrs

from .errors import DimensionMismatch, MaxIterations, NumericalFailure

FRACTION_TO_BOUNDARY = 0.995
DIVERGED = 1e20


class QpProblem:
    """``min 0.5 u'Hu + g'u`` s.t. ``lower <= C u <= upper``.

    Pass either a dense ``C`` (m, n) or ``C_blocks`` (nb, r, block_size), the
    latter meaning row ``b*r + j`` touches only variables of group ``b``.
    """

    def __init__(self, H, g, C=None, lower=None, upper=None, block_size=None, C_blocks=None):
        self.H = np.asarray(H, dtype=float)
        self.g = np.asarray(g, dtype=float).reshape(-1)
        n = self.g.shape[0]
        if self.H.shape != (n, n):
            raise DimensionMismatch(f"H is {self.H.shape}, expected {(n, n)}")
        self._C = None
        self.C_blocks = None
        if C_blocks is not None:
            Cb = np.asarray(C_blocks, dtype=float)
            if Cb.ndim != 3 or Cb.shape[0] * Cb.shape[2] != n:
                raise DimensionMismatch(f"C_blocks {Cb.shape} does not tile {n} variables")
            self.C_blocks = Cb
            block_size = Cb.shape[2]
            m = Cb.shape[0] * Cb.shape[1]
        else:
            C = np.zeros((0, n)) if C is None else C
            self._C = np.asarray(C, dtype=float).reshape(-1, n)
            m = self._C.shape[0]
        self.block_size = block_size
        self.lower = np.full(m, -np.inf) if lower is None else np.asarray(lower, dtype=float).reshape(-1)
        self.upper = np.full(m, np.inf) if upper is None else np.asarray(upper, dtype=float).reshape(-1)
        if self.lower.shape != (m,) or self.upper.shape != (m,):
            raise DimensionMismatch("bound vectors must match the rows of C")

    @property
    def n(self):
        return self.g.shape[0]

    @property
    def m(self):
        return self.lower.shape[0]

    @property
    def C(self):
        if self._C is None:
            nb, r, bs = self.C_blocks.shape
            C = np.zeros((nb, r, nb, bs))
            idx = np.arange(nb)
            C[idx, :, idx, :] = self.C_blocks
            self._C = C.reshape(nb * r, nb * bs)
        return self._C

    def C_mul(self, u):
        if self.C_blocks is not None:
            nb, r, bs = self.C_blocks.shape
            return np.matmul(self.C_blocks, u.reshape(nb, bs, 1)).reshape(-1)
        return self._C @ u

    def C_rmul(self, y):
        if self.C_blocks is not None:
            nb, r, bs = self.C_blocks.shape
            return np.matmul(y.reshape(nb, 1, r), self.C_blocks).reshape(-1)
        return self._C.T @ y

    def objective(self, u):
        return 0.5 * u @ self.H @ u + self.g @ u


class QpSolution:
    def __init__(self, u, lam_lower, lam_upper, status, iterations, stationarity,
                 primal_violation, complementarity):
        self.u = u
        self.lam_lower = lam_lower
        self.lam_upper = lam_upper
        self.status = status
        self.iterations = iterations
        self.stationarity = stationarity
        self.primal_violation = primal_violation
        self.complementarity = complementarity

    @property
    def kkt(self):
        return max(self.stationarity, self.primal_violation, self.complementarity)

    def __repr__(self):
        return (f"QpSolution(status={self.status!r}, iterations={self.iterations}, "
                f"kkt={self.kkt:.3e})")


def kkt_residual(p, u, lam_lower, lam_upper):
    """(stationarity, primal violation, complementarity), all infinity norms.

    Multipliers on infinite bounds must be zero; they are ignored.
    """
    u = np.asarray(u, dtype=float)
    lam_lower = np.asarray(lam_lower, dtype=float)
    lam_upper = np.asarray(lam_upper, dtype=float)
    if u.shape != (p.n,) or lam_lower.shape != (p.m,) or lam_upper.shape != (p.m,):
        raise DimensionMismatch("candidate dimensions do not match the problem")
    lo_fin = np.isfinite(p.lower)
    up_fin = np.isfinite(p.upper)
    ll = np.where(lo_fin, lam_lower, 0.0)
    lu = np.where(up_fin, lam_upper, 0.0)
    stat = p.H @ u + p.g
    if p.m:
        stat = stat + p.C_rmul(lu - ll)
    stationarity = float(np.max(np.abs(stat))) if p.n else 0.0
    if p.m == 0:
        return stationarity, 0.0, 0.0
    Cu = p.C_mul(u)
    lo = np.where(lo_fin, p.lower, 0.0)
    up = np.where(up_fin, p.upper, 0.0)
    primal = float(max(0.0, np.max(np.where(lo_fin, lo - Cu, 0.0)),
                       np.max(np.where(up_fin, Cu - up, 0.0))))
    comp = float(max(np.max(np.abs(ll * (Cu - lo))), np.max(np.abs(lu * (up - Cu)))))
    return stationarity, primal, comp


def duality_gap(p, u, lam_lower, lam_upper):
    """Primal minus Lagrangian-dual objective at a KKT candidate."""
    lo = np.where(np.isfinite(p.lower), p.lower, 0.0)
    up = np.where(np.isfinite(p.upper), p.upper, 0.0)
    primal = p.objective(u)
    dual = -0.5 * u @ p.H @ u - lam_upper @ up + lam_lower @ lo
    return float(primal - dual)


# -- one-sided constraint operators ---------------------------------------------------

class _DenseRows:
    """One-sided rows ``G u <= h`` from a dense ``C``."""

    def __init__(self, p):
        self.lo_fin = np.flatnonzero(np.isfinite(p.lower))
        self.up_fin = np.flatnonzero(np.isfinite(p.upper))
        C = p.C
        self.G = np.vstack([C[self.up_fin], -C[self.lo_fin]])
        self.h = np.concatenate([p.upper[self.up_fin], -p.lower[self.lo_fin]])

    def scale(self, D):
        G = self.G * D[None, :]
        norm = np.sqrt(np.einsum("ij,ij->i", G, G))
        norm[norm == 0.0] = 1.0
        self.G = G / norm[:, None]
        self.h = self.h / norm
        self.Gt = np.ascontiguousarray(self.G.T)
        self.norm = norm

    def mul(self, u):
        return self.G @ u

    def rmul(self, z):
        return self.Gt @ z

    def gram_add(self, M, w):
        M += self.Gt @ (w[:, None] * self.G)

    def unpack(self, z, m):
        lu = np.zeros(m)
        ll = np.zeros(m)
        lu[self.up_fin] = z[:self.up_fin.size]
        ll[self.lo_fin] = z[self.up_fin.size:]
        return ll, lu


class _BlockRows:
    """One-sided rows from ``C_blocks`` when every block has the same pattern
    of finite bounds."""

    def __init__(self, p):
        Cb = p.C_blocks
        nb, r, bs = Cb.shape
        lo = p.lower.reshape(nb, r)
        up = p.upper.reshape(nb, r)
        lo_fin = np.isfinite(lo)
        up_fin = np.isfinite(up)
        if not ((lo_fin == lo_fin[0]).all() and (up_fin == up_fin[0]).all()):
            raise ValueError("bound pattern differs between blocks")
        ui = np.flatnonzero(up_fin[0])
        li = np.flatnonzero(lo_fin[0])
        self.ui, self.li, self.r = ui, li, r
        self.G3 = np.concatenate([Cb[:, ui], -Cb[:, li]], axis=1)
        self.h = np.concatenate([up[:, ui], -lo[:, li]], axis=1).reshape(-1)
        self.nb, self.R, self.bs = self.G3.shape

    def scale(self, D):
        G3 = self.G3 * D.reshape(self.nb, 1, self.bs)
        norm = np.sqrt(np.einsum("brk,brk->br", G3, G3))
        norm[norm == 0.0] = 1.0
        self.G3 = G3 / norm[:, :, None]
        self.G3t = np.ascontiguousarray(self.G3.transpose(0, 2, 1))
        self.h = self.h / norm.reshape(-1)
        self.norm = norm.reshape(-1)

    def mul(self, u):
        return np.matmul(self.G3, u.reshape(self.nb, self.bs, 1)).reshape(-1)

    def rmul(self, z):
        return np.matmul(self.G3t, z.reshape(self.nb, self.R, 1)).reshape(-1)

    def gram_add(self, M, w):
        blocks = np.matmul(self.G3t, self.G3 * w.reshape(self.nb, self.R, 1))
        # writable view of the diagonal blocks
        diag = np.einsum("ijik->ijk", M.reshape(self.nb, self.bs, self.nb, self.bs))
        diag += blocks

    def unpack(self, z, m):
        z3 = z.reshape(self.nb, self.R)
        lu = np.zeros((self.nb, self.r))
        ll = np.zeros((self.nb, self.r))
        lu[:, self.ui] = z3[:, :self.ui.size]
        ll[:, self.li] = z3[:, self.ui.size:]
        return ll.reshape(-1), lu.reshape(-1)


def _max_step(v, dv):
    """Largest step in [0, 1] keeping ``v + a dv >= 0``."""
    neg = dv < 0.0
    if not neg.any():
        return 1.0
    return min(1.0, float((v[neg] / -dv[neg]).min()))


def _factor(M):
    c, info = dpotrf(M, lower=1, clean=0, overwrite_a=1)
    if info != 0:
        raise NumericalFailure("reduced KKT matrix is not positive definite")
    return c


def _factor_gram(H, rows, w):
    """Cholesky of ``H + G' diag(w) G``.

    Near convergence ``w`` spans many decades and rounding can break
    definiteness; a small diagonal shift, grown until the factorization
    succeeds, then keeps the Newton step usable.
    """
    M = H.copy()
    rows.gram_add(M, w)
    c, info = dpotrf(M, lower=1, clean=0, overwrite_a=0)
    if info == 0:
        return c
    shift = 1e-14 * max(1.0, float(np.abs(np.diag(M)).max()))
    for _ in range(8):
        c, info = dpotrf(M + shift * np.eye(M.shape[0]), lower=1, clean=0, overwrite_a=1)
        if info == 0:
            return c
        shift *= 100.0
    raise NumericalFailure("reduced KKT matrix is not positive definite")


def solve_qp(p, tol=1e-8, max_iter=50, u0=None):
    """Solve ``p`` to KKT tolerance ``tol``.

    Before iterating, the objective is divided by its largest Hessian
    diagonal, variables are scaled to a unit Hessian diagonal and constraint
    rows are normalized; convergence is declared on the residuals of the
    original problem.  ``u0`` replaces the unconstrained minimizer as the
    primal starting point.

    Raises
    ------
    MaxIterations
        The best iterate is attached as ``exc.solution``.
    NumericalFailure
        The reduced KKT matrix could not be factorized, or the iterates
        diverged (typically an infeasible problem); in the latter case the
        best iterate is attached as ``exc.solution``.
    """
    n, m = p.n, p.m
    hd = np.abs(np.diag(p.H)) if n else np.ones(0)
    obj_scale = float(hd.max()) if n else 1.0
    if not obj_scale > 0.0:
        obj_scale = 1.0
    D = 1.0 / np.sqrt(np.maximum(hd / obj_scale, 1e-12))
    H = (p.H / obj_scale) * D[:, None] * D[None, :]
    g = (p.g / obj_scale) * D

    rows = None
    if p.C_blocks is not None:
        try:
            rows = _BlockRows(p)
        except ValueError:
            rows = None
    if rows is None:
        rows = _DenseRows(p)
    rows.scale(D)
    h = rows.h
    mm = h.shape[0]

    def finish(u, z, status, it):
        u = u * D
        ll, lu = rows.unpack(z * obj_scale / rows.norm, m)
        st, pr, co = kkt_residual(p, u, ll, lu)
        return QpSolution(u, ll, lu, status, it, st, pr, co)

    if u0 is None:
        u = dpotrs(_factor(H.copy()), -g, lower=1)[0]
    else:
        u = np.asarray(u0, dtype=float) / D
    if mm == 0:
        return finish(u, np.zeros(0), "solved", 0)

    # slacks pushed into the interior; v = [s, z]
    v = np.concatenate([np.maximum(h - rows.mul(u), 1.0), np.ones(mm)])
    s, z = v[:mm], v[mm:]
    dv = np.empty(2 * mm)
    ds, dz = dv[:mm], dv[mm:]

    best = None
    for it in range(1, max_iter + 1):
        r_d = H @ u + g + rows.rmul(z)
        r_p = rows.mul(u) + s - h
        sz = s * z
        mu = float(sz.sum()) / mm
        res = max(float(np.abs(r_d).max()), float(np.abs(r_p).max()), float(sz.max()))
        if not math.isfinite(res) or res > DIVERGED:
            # infeasible problems drive the slacks and multipliers off to infinity
            sol = finish(best[1], best[2], "diverged", it - 1) if best else None
            raise NumericalFailure(f"iterates diverged after {it - 1} iterations", sol)
        if best is None or res < best[0]:
            best = (res, u, z.copy())
        if res < tol:
            sol = finish(u, z, "solved", it - 1)
            if sol.kkt < tol:
                return sol

        w = z / s
        cf = _factor_gram(H, rows, w)

        # predictor (affine scaling)
        t = w * r_p - z
        du = dpotrs(cf, -r_d - rows.rmul(t), lower=1)[0]
        Gdu = rows.mul(du)
        np.add(t, w * Gdu, out=dz)
        np.subtract(-r_p, Gdu, out=ds)
        a_aff = _max_step(v, dv)
        mu_aff = float((s + a_aff * ds) @ (z + a_aff * dz)) / mm
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0

        # corrector
        t = (z * r_p - sz - ds * dz + sigma * mu) / s
        du = dpotrs(cf, -r_d - rows.rmul(t), lower=1)[0]
        Gdu = rows.mul(du)
        np.add(t, w * Gdu, out=dz)
        np.subtract(-r_p, Gdu, out=ds)
        alpha = FRACTION_TO_BOUNDARY * _max_step(v, dv)
        u = u + alpha * du
        v += alpha * dv

    res = max(float(np.abs(H @ u + g + rows.rmul(z)).max()),
              float(np.abs(rows.mul(u) + s - h).max()), float((s * z).max()))
    if res < best[0]:
        best = (res, u, z.copy())
    sol = finish(best[1], best[2], "max_iterations", max_iter)
    if sol.kkt < tol:
        sol.status = "solved"
        return sol
    raise MaxIterations(f"no convergence in {max_iter} iterations (kkt {sol.kkt:.3e})", sol)


def enumerate_active_sets(p):
    """Brute-force QP solution by trying every active set.

    For each subset of one-sided constraints treated as equalities, solve the
    equality-constrained KKT system and keep the primal-feasible,
    dual-feasible candidate with the lowest objective.  Exponential in the
    number of rows; meant only as a test oracle for small problems.
    """
    rows, signs, bounds = [], [], []
    C = p.C
    for i in range(p.m):
        if np.isfinite(p.upper[i]):
            rows.append(i)
            signs.append(1.0)
            bounds.append(p.upper[i])
        if np.isfinite(p.lower[i]):
            rows.append(i)
            signs.append(-1.0)
            bounds.append(-p.lower[i])
    G = np.array([s * C[i] for i, s in zip(rows, signs)]).reshape(-1, p.n)
    h = np.array(bounds)
    best = None
    for k in range(0, min(len(rows), p.n) + 1):
        for act in itertools.combinations(range(len(rows)), k):
            act = list(act)
            A = G[act]
            K = np.block([[p.H, A.T], [A, np.zeros((k, k))]])
            rhs = np.concatenate([-p.g, h[act]])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            u, z = sol[:p.n], sol[p.n:]
            if np.any(z < -1e-9) or np.any(G @ u - h > 1e-9):
                continue
            f = p.objective(u)
            if best is None or f < best[0] - 1e-12:
                best = (f, u)
    return None if best is None else best[1]
