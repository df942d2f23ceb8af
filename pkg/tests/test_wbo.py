import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from vimpc import biped, geom, wbo
from vimpc.errors import FormatError, RankDeficient, VimpcError


def test_basis_at_zero():
    lam = wbo.monomial_basis(np.zeros(8))
    assert lam.shape == (45,)
    assert lam[0] == 1.0 and np.count_nonzero(lam) == 1


def test_basis_first_joint():
    q = np.zeros(8)
    q[0] = 1.0
    lam = wbo.monomial_basis(q)
    assert set(np.flatnonzero(lam)) == {0, 1, wbo.basis_index(0, 0)}
    assert wbo.basis_index(0, 0) == 9


def test_basis_cross_term(rng):
    q = rng.normal(size=8)
    lam = wbo.monomial_basis(q)
    assert len(lam) == 45
    assert lam[wbo.basis_index(2, 4)] == pytest.approx(q[2] * q[4])
    assert wbo.basis_index(4, 2) == wbo.basis_index(2, 4)
    # lexicographic upper-triangular ordering
    expect = [1.0, *q] + [q[i] * q[j] for i in range(8) for j in range(i, 8)]
    assert np.allclose(lam, expect, atol=0)


def test_basis_batched(rng):
    Q = rng.normal(size=(4, 8))
    assert np.array_equal(wbo.monomial_basis(Q)[2], wbo.monomial_basis(Q[2]))


def test_zero_map_returns_base(rng):
    wm = wbo.WboMap()
    base = geom.quat_normalize(rng.normal(size=4))
    q, clamped = wbo.wbo_orientation(wm, rng.normal(size=8), base)
    assert np.allclose(q, base, atol=1e-15) and not clamped


def test_clamped_vector_part():
    coeffs = np.zeros((3, 45))
    coeffs[0, 0] = 2.0
    q, clamped = wbo.wbo_orientation(wbo.WboMap(coeffs), np.zeros(8), geom.IDENTITY_QUAT)
    assert clamped
    assert np.allclose(q, [0.0, 1.0, 0.0, 0.0])


def test_map_shape_checked():
    with pytest.raises(VimpcError):
        wbo.WboMap(np.zeros((3, 44)))
    bad = np.zeros((3, 45))
    bad[1, 3] = np.nan
    with pytest.raises(VimpcError):
        wbo.WboMap(bad)


def test_mirror_configuration_cancels_roll_yaw(model, wbo_map, rng):
    base = np.array([0.0, 0.0, 0.87])
    for _ in range(20):
        x, z, yaw = rng.uniform(-0.15, 0.15), rng.uniform(0.0, 0.08), rng.uniform(-0.2, 0.2)
        y = 0.10 + rng.uniform(-0.02, 0.03)
        left = biped.FootPose([x, y, z], yaw)
        right = biped.FootPose([x, -y, z], -yaw)
        q = wbo.leg_joints(model, base, np.zeros(3), left, right)
        assert np.allclose(wbo.mirror_joints(q), q, atol=1e-12)
        xyz = wbo_map.vector_part(q)
        assert abs(xyz[0]) < 1e-6 and abs(xyz[2]) < 1e-6


def test_fitted_map_is_mirror_antisymmetric(wbo_map, rng):
    for _ in range(20):
        q = rng.normal(size=8) * 0.3
        a = wbo_map.vector_part(q)
        b = wbo_map.vector_part(wbo.mirror_joints(q))
        assert np.allclose(b, a * [-1.0, 1.0, -1.0], atol=1e-10)


def test_held_out_geodesic_error(model, wbo_map):
    held_out = wbo.sample_leg_trajectories(6, seed=1001)
    errs = wbo.evaluate_map(wbo_map, model, held_out)
    assert np.median(errs) < 0.05
    assert errs.max() < 0.05


def test_map_continuous_in_joints(wbo_map, rng):
    for _ in range(50):
        q = rng.normal(size=8) * 0.4
        a, _ = wbo.wbo_orientation(wbo_map, q, geom.IDENTITY_QUAT)
        b, _ = wbo.wbo_orientation(wbo_map, q + rng.normal(size=8) * 1e-6, geom.IDENTITY_QUAT)
        assert np.linalg.norm(a - b) < 1e-4


def still_trajectories(n, T=101):
    out = []
    for k in range(n):
        left = np.tile([0.02 * k, 0.10, 0.0, 0.0], (T, 1))
        right = np.tile([-0.01 * k, -0.10, 0.0, 0.0], (T, 1))
        out.append(wbo.LegTrajectory(np.arange(T) / 200.0, left, right))
    return out


def test_still_legs_fit_zero(model):
    # every pose is static, so the integrated WBO never leaves the identity
    trajs = still_trajectories(10)
    for tr in trajs[:2]:
        _, quats = wbo.integrate_ground_truth(model, tr)
        assert np.array_equal(quats[:, 1:], np.zeros((len(tr.times), 3)))
    wm = wbo.fit_wbo_map(model, trajs)
    assert np.abs(wm.coefficients).max() < 1e-12
    assert wm.residual == 0.0


def test_single_joint_sinusoid_residual():
    # xyz depends on one joint through a smooth non-polynomial map
    t = np.linspace(0.0, 1.0, 400)
    q = np.zeros((t.size, 8))
    q[:, 3] = 1.2 + 0.3 * np.sin(2 * math.pi * t)
    xyz = np.column_stack([0.05 * np.sin(q[:, 3]), 0.02 * np.cos(q[:, 3]), np.zeros(t.size)])
    # ridge keeps the collinear monomials solvable at the 1e12 condition cap
    with pytest.raises(RankDeficient):
        wbo.fit_from_samples(q, xyz, ridge=1e-14)
    wm = wbo.fit_from_samples(q, xyz)
    pred = wm.vector_part(q)
    err = np.abs(pred - xyz).max()
    # truncation of sin/cos after second order over |dq| <= 0.3
    bound = 0.05 * 0.3 ** 3 / 6 + 0.02 * 0.3 ** 3 / 6
    assert err <= bound
    assert wm.residual <= err


def test_weight_scaling_invariance(rng):
    q = rng.normal(size=(300, 8)) * 0.3
    xyz = rng.normal(size=(300, 3)) * 0.01
    w = rng.uniform(0.5, 2.0, 300)
    a = wbo.fit_from_samples(q, xyz, w)
    b = wbo.fit_from_samples(q, xyz, 2.0 * w)
    assert np.abs(a.coefficients - b.coefficients).max() < 1e-10


def test_fit_preconditions(model):
    with pytest.raises(VimpcError):
        wbo.fit_wbo_map(model, still_trajectories(9))
    with pytest.raises(VimpcError):
        wbo.fit_wbo_map(model, still_trajectories(10, T=99))


def test_propagate_zero_rate(rng):
    q0 = geom.quat_normalize(rng.normal(size=4))
    s = wbo.propagate_wbo(wbo.WboState(q0), np.zeros(3), 0.01)
    assert np.allclose(s.orientation, q0, atol=1e-15)
    assert np.array_equal(s.angular_velocity, np.zeros(3))


def test_propagate_yaw_half_turn():
    s = wbo.propagate_wbo(wbo.WboState(), [0.0, 0.0, math.pi], 0.1)
    for _ in range(9):
        s = wbo.propagate_wbo(s, [0.0, 0.0, math.pi], 0.1)
    assert geom.quat_geodesic(s.orientation, geom.euler_to_quat([0.0, 0.0, math.pi])) < 1e-9


def test_propagate_dt_range():
    with pytest.raises(VimpcError):
        wbo.propagate_wbo(wbo.WboState(), np.zeros(3), 0.0)
    with pytest.raises(VimpcError):
        wbo.propagate_wbo(wbo.WboState(), np.zeros(3), 0.2)


def test_propagate_many_steps_closed_form(rng):
    w = rng.normal(size=3)
    q0 = geom.quat_normalize(rng.normal(size=4))
    s = wbo.WboState(q0)
    for _ in range(1000):
        s = wbo.propagate_wbo(s, w, 1e-3)
    exact = geom.quat_mul(geom.quat_exp(w * 1.0), q0)
    assert geom.quat_geodesic(s.orientation, exact) < 1e-8
    assert abs(np.linalg.norm(s.orientation) - 1.0) < 1e-15


def varying_rate(t):
    return np.array([math.sin(3 * t), math.cos(2 * t), 0.5 + t])


def hamilton(a, b):
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array([w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
                     w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
                     w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
                     w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2])


def reference_quaternion(q0, t0, dt):
    # world-frame rate: dq/dt = 0.5 (0, w) q
    def f(t, q):
        return 0.5 * hamilton(np.array([0.0, *varying_rate(t)]), q)
    sol = solve_ivp(f, (t0, t0 + dt), q0, rtol=1e-13, atol=1e-15, method="DOP853")
    return geom.quat_normalize(sol.y[:, -1])


def one_step_errors(dts, t0=0.3):
    q0 = geom.euler_to_quat([0.1, -0.2, 0.3])
    errs = []
    for dt in dts:
        s = wbo.propagate_wbo(wbo.WboState(q0), varying_rate(t0), dt)
        errs.append(geom.quat_geodesic(s.orientation, reference_quaternion(q0, t0, dt)))
    return np.array(errs)


def test_propagation_one_step_error_is_second_order():
    dts = np.array([1e-2, 1e-3, 1e-4])
    errs = one_step_errors(dts)
    slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    assert slope == pytest.approx(2.0, abs=0.1)


def test_propagation_constant_rate_exact(rng):
    w = rng.normal(size=3)
    for dt in (1e-2, 1e-3, 1e-4):
        s = wbo.propagate_wbo(wbo.WboState(), w, dt)
        assert geom.quat_geodesic(s.orientation, geom.quat_exp(w * dt)) < 1e-12


def test_static_configuration_zero_rate(model, stance):
    base, eu, L, R = stance
    h = biped.centroidal_momentum(model, base, eu, np.zeros(3), np.zeros(3), L, R)
    I, _ = biped.composite_inertia_world(model, base, eu, L, R)
    assert np.array_equal(biped.wbo_angular_velocity(h.angular, I), np.zeros(3))


def test_map_text_round_trip(wbo_map, tmp_path):
    text = wbo.dumps_map(wbo_map)
    assert np.array_equal(wbo.loads_map(text).coefficients, wbo_map.coefficients)
    wbo.save_map(wbo_map, tmp_path / "m.txt")
    assert (tmp_path / "m.txt").read_text() == text


def test_map_format_errors(wbo_map):
    text = wbo.dumps_map(wbo_map)
    with pytest.raises(FormatError):
        wbo.loads_map(text.replace("WBOMAP v1", "WBOMAP v2"))
    with pytest.raises(FormatError) as err:
        wbo.loads_map(text.replace("3 45", "3 44"))
    assert err.value.line == 2
    with pytest.raises(FormatError):
        wbo.loads_map("\n".join(text.splitlines()[:3]))
    with pytest.raises(FormatError):
        wbo.load_map("/nonexistent/map.txt")
