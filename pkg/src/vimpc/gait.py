"""Periodic phase-based gait scheduling."""

from dataclasses import dataclass, field

import numpy as np

from .errors import VimpcError

# phases are snapped to this resolution so knot times that land on a
# transition (e.g. t = 0.275 s) classify the same way on every platform
_PHASE_DIGITS = 10


@dataclass(frozen=True)
class GaitSpec:
    period: float = 0.5
    stance_fraction: tuple = (0.55, 0.55)
    phase_offset: tuple = (0.0, 0.5)

    def __post_init__(self):
        if self.period <= 0:
            raise VimpcError("gait period must be positive")
        sf = tuple(float(x) for x in self.stance_fraction)
        po = tuple(float(x) for x in self.phase_offset)
        object.__setattr__(self, "stance_fraction", sf)
        object.__setattr__(self, "phase_offset", po)
        if len(sf) != len(po):
            raise VimpcError("stance_fraction and phase_offset must have one entry per foot")
        if any(not (0.0 < s <= 1.0) for s in sf):
            raise VimpcError("stance fractions must lie in (0, 1]")
        if any(not (0.0 <= o < 1.0) for o in po):
            raise VimpcError("phase offsets must lie in [0, 1)")
        grid = np.linspace(0.0, 1.0, 10000, endpoint=False)
        support = np.zeros(grid.shape, dtype=bool)
        for s, o in zip(sf, po):
            support |= np.mod(grid + o, 1.0) < s
        if not support.all():
            raise VimpcError("gait leaves the robot with no foot in stance")

    @property
    def n_feet(self):
        return len(self.stance_fraction)

    def stance_duration(self, foot):
        return self.stance_fraction[foot] * self.period

    def swing_duration(self, foot):
        return (1.0 - self.stance_fraction[foot]) * self.period

    def phase(self, t, foot):
        p = (t / self.period + self.phase_offset[foot]) % 1.0
        return round(p, _PHASE_DIGITS) % 1.0

    def in_stance(self, t, foot):
        return self.phase(t, foot) < self.stance_fraction[foot]


STANDING = GaitSpec(period=0.5, stance_fraction=(1.0, 1.0), phase_offset=(0.0, 0.0))


@dataclass(frozen=True)
class ContactSchedule:
    flags: np.ndarray          # (N, n_feet) of 0/1
    times: np.ndarray          # knot times
    transitions: list = field(default_factory=list)  # (time, foot, new_flag)


def contact_flags(spec, t, N, dt):
    """Stance flags at knot times ``t + k dt`` for ``k = 0..N-1``."""
    if t < 0:
        raise VimpcError("time must be non-negative")
    times = t + dt * np.arange(N)
    flags = np.array([[1 if spec.in_stance(tk, i) else 0 for i in range(spec.n_feet)]
                      for tk in times], dtype=int)
    transitions = []
    for i in range(spec.n_feet):
        tau = t
        end = t + N * dt
        while True:
            tau = tau + stance_time_remaining(spec, tau, i)
            if tau >= end - 1e-12:
                break
            transitions.append((tau, i, 1 if spec.in_stance(tau, i) else 0))
    transitions.sort()
    return ContactSchedule(flags, times, transitions)


def stance_time_remaining(spec, t, foot):
    """Time until this foot's next stance/swing switch, in (0, period]."""
    p = spec.phase(t, foot)
    s = spec.stance_fraction[foot]
    if s >= 1.0:
        return spec.period
    if p < s:
        rem = (s - p) * spec.period
    else:
        rem = (1.0 - p) * spec.period
    return rem


def swing_progress(spec, t, foot):
    """Normalized swing phase in [0, 1) or ``None`` when the foot is in stance."""
    p = spec.phase(t, foot)
    s = spec.stance_fraction[foot]
    if p < s:
        return None
    return (p - s) / (1.0 - s)
