import math

import numpy as np
import pytest

from vimpc import biped, ccinn, gait, geom, mpc, refgen, sim
from vimpc.errors import PhaseOutOfRange, VimpcError
from vimpc.refgen import FootstepPlannerConfig, VelocityCommand

CFG = FootstepPlannerConfig()


def test_foothold_at_rest():
    p = refgen.plan_foothold([0.3, -0.2, 0.7], [0, 0, 0], VelocityCommand(), CFG, 0.275, 0.4)
    assert np.array_equal(p, [0.3, -0.2])


def test_foothold_tracking_velocity():
    p = refgen.plan_foothold([0.0, 0.0, 0.7], [1.0, 0.0, 0.0], VelocityCommand(1.0), CFG, 0.275, 0.0)
    assert np.allclose(p, [0.1375, 0.0], atol=1e-15)


def test_foothold_centrifugal_term():
    cfg = FootstepPlannerConfig(k1=0.0, k2=1.0, h=0.7)
    p = refgen.plan_foothold([0, 0, 0.7], [1.0, 0.0, 0.0], VelocityCommand(1.0, 0.0, 1.0), cfg, 1e-12, 0.0)
    # (h/g) (1,0,0) x (0,0,1) = (0, -h/g)
    assert np.allclose(p, [0.0, -0.7 / 9.81], atol=1e-12)
    assert p[1] == pytest.approx(-0.07135, abs=1e-5)


def test_foothold_capture_point_gain():
    p = refgen.plan_foothold([0, 0, 0.7], [0.5, 0.0], VelocityCommand(0.0, 0.2), CFG, 0.2, 0.0)
    assert np.allclose(p, [0.1 * 0.5 + 0.08 * 0.5, -0.08 * 0.2])


def test_foothold_yaw_equivariant(rng):
    for _ in range(50):
        p_c, v = rng.normal(size=3), rng.normal(size=3)
        cmd = VelocityCommand(*rng.normal(size=3))
        yaw, a = rng.uniform(-3, 3, 2)
        R = geom.rot_z(a)
        p0 = refgen.plan_foothold(p_c, v, cmd, CFG, 0.2, yaw)
        p1 = refgen.plan_foothold(R @ p_c, R @ v, cmd, CFG, 0.2, yaw + a)
        assert np.allclose(R[:2, :2] @ p0, p1, atol=1e-9)


def test_foothold_bad_dt():
    with pytest.raises(VimpcError):
        refgen.plan_foothold([0, 0, 0], [0, 0, 0], VelocityCommand(), CFG, 0.0, 0.0)


def test_landing_yaw():
    assert refgen.landing_yaw(0.7, 0.0, 0.3) == 0.7
    assert refgen.landing_yaw(0.0, 2.0, 0.2) == pytest.approx(0.2, abs=1e-15)
    assert refgen.landing_yaw(math.pi - 0.01, 2.0, 0.2) == pytest.approx(-math.pi + 0.19, abs=1e-12)


def swing(z0=0.0, z1=0.0):
    return refgen.SwingTrajectory(biped.FootPose([0.1, 0.1, z0], 0.1), biped.FootPose([0.5, 0.2, z1], 0.4),
                                  0.08, 0.225)


def test_swing_endpoints_exact():
    tr = swing()
    a, _, _ = refgen.swing_position(tr, 0.0)
    b, _, _ = refgen.swing_position(tr, 1.0)
    assert np.array_equal(a.position, tr.start.position) and a.yaw == tr.start.yaw
    assert np.array_equal(b.position, tr.end.position) and b.yaw == tr.end.yaw


def test_swing_apex_at_midpoint():
    tr = swing()
    p, v, _ = refgen.swing_position(tr, 0.5)
    assert p.position[2] == pytest.approx(0.08, abs=1e-12)
    zs = [refgen.swing_position(tr, s)[0].position[2] for s in np.linspace(0, 1, 2001)]
    assert max(zs) == pytest.approx(tr.apex_height, abs=1e-6)
    assert swing(0.02, 0.0).apex_height == pytest.approx(0.10)


def test_swing_midpoint_speed():
    tr = swing()
    _, v, _ = refgen.swing_position(tr, 0.5)
    chord = np.linalg.norm(tr.end.position[:2] - tr.start.position[:2])
    assert np.linalg.norm(v[:2]) == pytest.approx(1.5 * chord / tr.duration, rel=1e-12)


def test_swing_velocity_matches_finite_difference():
    tr = swing(0.01, 0.03)
    h = 1e-6
    for s in np.linspace(0.05, 0.95, 10):
        p0 = refgen.swing_position(tr, s - h)[0].position
        p1 = refgen.swing_position(tr, s + h)[0].position
        _, v, _ = refgen.swing_position(tr, s)
        assert np.allclose(v, (p1 - p0) / (2 * h * tr.duration), atol=1e-6)


def test_swing_zero_vertical_speed_at_ends():
    tr = swing(0.0, 0.02)
    for s in (0.0, 1.0 - 1e-15, 1.0):
        _, v, _ = refgen.swing_position(tr, s)
        assert abs(v[2]) < 1e-12


def test_swing_yaw_linear():
    tr = swing()
    for s in (0.25, 0.5, 0.75):
        assert refgen.swing_position(tr, s)[0].yaw == pytest.approx(0.1 + 0.3 * s)


def test_swing_phase_range():
    with pytest.raises(PhaseOutOfRange):
        refgen.swing_position(swing(), 1.01)
    with pytest.raises(PhaseOutOfRange):
        refgen.swing_position(swing(), -0.1)


def test_com_reference_static():
    yaw, p = refgen.com_wbo_reference([0.2, 0.1, 0.6], 0.3, VelocityCommand(), 10, 0.05, 0.7)
    assert np.all(yaw == 0.3)
    assert np.all(p == [0.2, 0.1, 0.7])


def test_com_reference_straight():
    yaw, p = refgen.com_wbo_reference([0, 0, 0.7], 0.0, VelocityCommand(1.0), 10, 0.05, 0.7)
    assert np.allclose(p[-1], [0.5, 0.0, 0.7], atol=1e-14)
    assert np.allclose(np.diff(p[:, 0]), 0.05)


def circle_error(dt):
    n = int(round(1.0 / dt))
    yaw, p = refgen.com_wbo_reference([0, 0, 0.7], 0.0, VelocityCommand(1.0, 0.0, math.pi), n, dt, 0.7)
    t = dt * np.arange(n + 1)
    r = 1.0 / math.pi
    exact = np.column_stack([r * np.sin(math.pi * t), r * (1 - np.cos(math.pi * t))])
    return np.abs(p[:, :2] - exact).max(), yaw[-1]


def test_com_reference_half_circle():
    e1, yaw = circle_error(0.05)
    e2, _ = circle_error(0.025)
    assert yaw == pytest.approx(math.pi)
    assert e1 <= 0.05 + 1e-12  # one step of arc at unit speed
    # first-order Euler: halving the step halves the error
    assert e1 / e2 == pytest.approx(2.0, rel=0.1)


def test_rate_limiter():
    lim = refgen.RateLimiter()
    target = VelocityCommand(1.0, 0.0, 1.0)
    for _ in range(100):
        c = lim.step(target, 0.005)
    assert c.vx == pytest.approx(0.5) and c.yaw_rate == pytest.approx(1.0)
    for _ in range(200):
        c = lim.step(target, 0.005)
    assert c == target
    lim = refgen.RateLimiter()
    c = lim.step(VelocityCommand(3.0, 4.0), 0.1)
    assert math.hypot(c.vx, c.vy) == pytest.approx(0.1)


def test_command_world_velocity():
    cmd = VelocityCommand(1.0, 0.5)
    assert np.allclose(cmd.world_velocity(0.5 * math.pi), [-0.5, 1.0, 0.0])
    with pytest.raises(VimpcError):
        VelocityCommand(float("nan"))


def test_planner_config_checks():
    with pytest.raises(VimpcError):
        FootstepPlannerConfig(h=0.0)
    with pytest.raises(VimpcError):
        FootstepPlannerConfig(apex=-0.1)


def com_state(t, v):
    return refgen.CoMState(np.array([v * t, 0.0, CFG.h]), np.array([v, 0.0, 0.0]), 0.0,
                           np.array([v * t, 0.0, 0.87]), 0.0)


def test_standing_reference_constant(model, weights):
    pl = sim.standing_planner(model, CFG, CFG.h)
    st = com_state(0.0, 0.0)
    ref = refgen.build_horizon_reference(pl, refgen.NetworkInertia(weights), st, VelocityCommand(),
                                         mpc.MpcConfig(), 0.0, model)
    assert np.allclose(ref.inertia, ref.inertia[0], atol=1e-14)
    oracle = refgen.build_horizon_reference(pl, refgen.OracleInertia(model), st, VelocityCommand(),
                                            mpc.MpcConfig(), 0.0, model)
    gap = ccinn.relative_frobenius(ref.inertia, oracle.inertia)
    assert gap.max() < 0.05
    assert ref.flags.all()
    assert ref.x_ref.shape == (11, 12) and ref.flags.shape == (10, 2)


@pytest.fixture(scope="module")
def walking_refs():
    model = biped.default_model()
    pl = sim.standing_planner(model, CFG, CFG.h, gait.GaitSpec())
    net = refgen.NetworkInertia(ccinn.load_default())
    ora = refgen.OracleInertia(model)
    cmd = VelocityCommand(1.2)
    out = []
    for t in np.round(np.arange(0.0, 1.5, 0.05), 10):
        st = com_state(t, 1.2)
        pl.advance(t, st, cmd)
        out.append((t, refgen.build_horizon_reference(pl, net, st, cmd, mpc.MpcConfig(), t, model),
                    refgen.build_horizon_reference(pl, ora, st, cmd, mpc.MpcConfig(), t, model)))
    return out


def test_walking_inertia_varies_and_repeats(walking_refs):
    nominal = walking_refs[0][2].inertia[0, 3]
    iyy = np.array([r.inertia[0, 3] for _, r, _ in walking_refs])
    assert np.ptp(iyy) / nominal > 0.05
    # one gait period is ten of these 0.05 s ticks
    steady = iyy[10:]
    assert np.allclose(steady[:10], steady[10:20], rtol=0.02)
    for _, r, _ in walking_refs:
        assert np.ptp(r.inertia[:, 3]) > 0.0
        lam = np.linalg.eigvalsh(geom.sym6_to_mat(r.inertia))
        assert lam.min() > 0.0


def test_network_tracks_oracle_along_horizon(walking_refs):
    held_out = ccinn.generate_dataset(biped.default_model(), n_motions=100, seed=77)
    err = ccinn.relative_frobenius(*ccinn.predict_batch(ccinn.load_default(), held_out.inputs)[:1],
                                   held_out.targets)
    p95 = np.percentile(err, 95)
    for _, net, ora in walking_refs:
        assert ccinn.relative_frobenius(net.inertia, ora.inertia).max() <= p95


def test_first_knot_flags_match_gait(walking_refs):
    spec = gait.GaitSpec()
    for t, r, _ in walking_refs:
        assert list(r.flags[0]) == [int(spec.in_stance(t, i)) for i in range(2)]


def test_swing_targets_ahead_when_walking(walking_refs):
    t, r, _ = walking_refs[-1]
    # landing targets lie ahead of the current CoM by roughly half a stride
    assert r.foot_pos[:, :, 0].max() > r.x_ref[0, 3]
    assert np.all(np.abs(r.foot_pos[:, 0, 1] - 0.1) < 0.05)
    assert np.all(np.abs(r.foot_pos[:, 1, 1] + 0.1) < 0.05)


def test_inertia_sources_agree_on_interface(model, weights, stance):
    base, _, L, R = stance
    sources = [refgen.OracleInertia(model), refgen.NetworkInertia(weights),
               refgen.ConstantInertia(biped.composite_inertia(model, *stance)[0])]
    for src in sources:
        one = src(base, 0.0, L, R)
        many = src.batch(np.array([base, base]), np.zeros(2), [(L, R), (L, R)])
        assert one.shape == (6,) and many.shape == (2, 6)
        assert np.allclose(many[1], one)
