import numpy as np
import pytest

from vimpc import gait
from vimpc.errors import VimpcError

WALK = gait.GaitSpec()


def phase_oracle(spec, tau, i):
    return ((tau / spec.period + spec.phase_offset[i]) % 1.0) < spec.stance_fraction[i]


def test_double_support_all_stance():
    flags = gait.contact_flags(gait.STANDING, 0.37, 10, 0.05).flags
    assert flags.shape == (10, 2) and flags.all()


def test_default_schedule_at_zero():
    flags = gait.contact_flags(WALK, 0.0, 10, 0.05).flags
    assert flags[:6, 0].all() and not flags[6:, 0].any()
    assert flags[0, 1] == 1  # phase 0.5 is still inside [0, 0.55)
    # the other foot: offset 0.5 puts knot k at phase 0.5 + 0.1 k
    expect = [phase_oracle(WALK, 0.05 * k, 1) for k in range(10)]
    assert list(flags[:, 1]) == [int(e) for e in expect]
    assert list(flags[:, 1]) == [1, 0, 0, 0, 0, 1, 1, 1, 1, 1]


def test_periodic(rng):
    for t in rng.uniform(0, 5, 20):
        a = gait.contact_flags(WALK, t, 10, 0.05)
        b = gait.contact_flags(WALK, t + WALK.period, 10, 0.05)
        assert np.array_equal(a.flags, b.flags)


def test_flags_match_phase_rule(rng):
    for t in rng.uniform(0, 3, 50):
        flags = gait.contact_flags(WALK, t, 10, 0.05).flags
        for k in range(10):
            for i in range(2):
                tau = t + 0.05 * k
                ph = (tau / WALK.period + WALK.phase_offset[i]) % 1.0
                if min(abs(ph - 0.55), ph, 1 - ph, abs(ph - 0.05)) < 1e-9:
                    continue  # boundary snapping is tested separately
                assert flags[k, i] == int(phase_oracle(WALK, tau, i))


def test_negative_time_rejected():
    with pytest.raises(VimpcError):
        gait.contact_flags(WALK, -0.1, 10, 0.05)


def test_time_remaining_default():
    assert gait.stance_time_remaining(WALK, 0.0, 0) == pytest.approx(0.275, abs=1e-12)


def test_time_remaining_at_transition_is_full_segment():
    # liftoff of foot 0 at t = 0.275: the whole swing lies ahead
    assert gait.stance_time_remaining(WALK, 0.275, 0) == pytest.approx(0.225, abs=1e-12)
    # touchdown at t = 0.5
    assert gait.stance_time_remaining(WALK, 0.5, 0) == pytest.approx(0.275, abs=1e-12)


def test_time_remaining_range(rng):
    for t in rng.uniform(0, 10, 500):
        for i in range(2):
            r = gait.stance_time_remaining(WALK, t, i)
            assert 0.0 < r <= WALK.period
            # the flag flips right after the remaining time and not before
            assert WALK.in_stance(t + 0.5 * r, i) == WALK.in_stance(t, i)
            assert WALK.in_stance(t + r + 1e-7, i) != WALK.in_stance(t, i)
    assert gait.stance_time_remaining(gait.STANDING, 0.3, 0) == gait.STANDING.period


def test_support_pattern():
    for ph in np.linspace(0, 1, 1000, endpoint=False):
        t = ph * WALK.period
        n = int(WALK.in_stance(t, 0)) + int(WALK.in_stance(t, 1))
        double = (0.0 <= ph < 0.05) or (0.5 <= ph < 0.55)
        assert n == (2 if double else 1)


def test_two_transitions_per_foot_per_period(rng):
    for t in rng.uniform(0, 3, 20):
        sched = gait.contact_flags(WALK, t, 10, 0.05)
        counts = [sum(1 for tr in sched.transitions if tr[1] == i) for i in range(2)]
        assert counts == [2, 2]
        for tau, i, new in sched.transitions:
            assert t < tau < t + WALK.period
            assert WALK.in_stance(tau, i) == bool(new)


def test_swing_progress():
    assert gait.swing_progress(WALK, 0.1, 0) is None
    assert gait.swing_progress(WALK, 0.275, 0) == pytest.approx(0.0, abs=1e-9)
    assert gait.swing_progress(WALK, 0.3875, 0) == pytest.approx(0.5, abs=1e-9)


def test_spec_validation():
    with pytest.raises(VimpcError):
        gait.GaitSpec(period=0.0)
    with pytest.raises(VimpcError):
        gait.GaitSpec(stance_fraction=(0.4, 0.4))  # flight phase
    with pytest.raises(VimpcError):
        gait.GaitSpec(phase_offset=(0.0, 1.0))
    with pytest.raises(VimpcError):
        gait.GaitSpec(stance_fraction=(0.0, 1.0))
