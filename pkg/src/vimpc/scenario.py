"""Scenario files: ``[section]`` headers, ``key = value`` lines, ``#`` comments.

Keys may also be written dotted (``mpc.N = 12``), in which case the prefix
names the section regardless of the current header.  Vectors are written
as whitespace- or comma-separated numbers.  Every key has a default, so an
empty file is a valid scenario.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import biped, ccinn, wbo
from .errors import ParseError, ValidationError
from .gait import GaitSpec
from .mpc import MpcConfig
from .refgen import FootstepPlannerConfig, VelocityCommand
from .sim import LoopConfig, PlantConfig

COMMAND_TYPES = ("forward", "diagonal", "turn_in_place", "circular")
MODE_ALIASES = {"vi": "vi", "baseline1": "baseline1", "baseline2": "baseline2",
                "b1": "baseline1", "b2": "baseline2"}


# -- value kinds ---------------------------------------------------------------------

def _float(text):
    v = float(text)
    if not math.isfinite(v):
        raise ValueError("not finite")
    return v


def _int(text):
    return int(text)


def _bool(text):
    t = text.lower()
    if t in ("true", "yes", "on", "1"):
        return True
    if t in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _vector(n):
    def parse(text):
        parts = text.replace(",", " ").split()
        if len(parts) != n:
            raise ValueError(f"expected {n} numbers, got {len(parts)}")
        return tuple(_float(p) for p in parts)
    parse.width = n
    return parse


def _string(text):
    return text


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return " ".join(repr(v) for v in value)
    return str(value)


# -- schema ----------------------------------------------------------------------------
#
# section -> key -> (parser, default, check, constraint text)

def _positive(v):
    return v > 0


def _nonneg(v):
    return v >= 0


_M = MpcConfig()
_P = PlantConfig()
_F = FootstepPlannerConfig()
_G = GaitSpec()
_B = biped.default_model()

SCHEMA = {
    "biped": {
        "torso_mass": (_float, _B.torso.mass, _positive, "torso_mass > 0"),
        "thigh_mass": (_float, _B.thigh.mass, _positive, "thigh_mass > 0"),
        "shank_mass": (_float, _B.shank.mass, _positive, "shank_mass > 0"),
        "foot_mass": (_float, _B.foot.mass, _positive, "foot_mass > 0"),
    },
    "gait": {
        "period": (_float, _G.period, lambda v: 0.2 <= v <= 2.0, "0.2 <= period <= 2"),
        "stance_fraction": (_vector(2), _G.stance_fraction,
                            lambda v: all(0.0 < x <= 1.0 for x in v), "stance fractions in (0, 1]"),
        "phase_offset": (_vector(2), _G.phase_offset,
                         lambda v: all(0.0 <= x < 1.0 for x in v), "phase offsets in [0, 1)"),
    },
    "planner": {
        "k1": (_float, _F.k1, lambda v: 0.0 <= v <= 1.0, "0 <= k1 <= 1"),
        "k2": (_float, _F.k2, lambda v: 0.0 <= v <= 5.0, "0 <= k2 <= 5"),
        "h": (_float, _F.h, lambda v: 0.4 <= v <= 0.8, "0.4 <= h <= 0.8"),
        "apex": (_float, _F.apex, lambda v: 0.0 <= v <= 0.2, "0 <= apex <= 0.2"),
        "g": (_float, _F.g, _positive, "g > 0"),
        "hip_lateral": (_float, _F.hip_lateral, lambda v: 0.0 <= v <= 0.2, "0 <= hip_lateral <= 0.2"),
    },
    "mpc": {
        "N": (_int, _M.N, lambda v: 2 <= v <= 50, "N ≥ 2 (at most 50)"),
        "dt": (_float, _M.dt, lambda v: 0.0 < v <= 0.2, "0 < dt <= 0.2"),
        "state_weights": (_vector(12), tuple(float(x) for x in _M.state_weights),
                          lambda v: all(x >= 0 for x in v), "state weights >= 0"),
        "torque_weight": (_float, _M.torque_weight, _positive, "torque_weight > 0"),
        "force_weight": (_float, _M.force_weight, _positive, "force_weight > 0"),
        "terminal_factor": (_float, _M.terminal_factor, _nonneg, "terminal_factor >= 0"),
        "mu": (_float, _M.mu, lambda v: 0.0 < v <= 2.0, "0 < mu <= 2"),
        "foot_half_length": (_float, _M.foot_half_length, lambda v: 0.0 < v <= 0.3,
                             "0 < foot_half_length <= 0.3"),
        "foot_half_width": (_float, _M.foot_half_width, lambda v: 0.0 < v <= 0.2,
                            "0 < foot_half_width <= 0.2"),
        "f_min": (_float, _M.f_min, _nonneg, "f_min >= 0"),
        "f_max": (_float, _M.f_max, _positive, "f_max > 0"),
        "qp_tol": (_float, _M.qp_tol, lambda v: 0.0 < v <= 1e-3, "0 < qp_tol <= 1e-3"),
        "qp_max_iter": (_int, _M.qp_max_iter, lambda v: 1 <= v <= 1000, "1 <= qp_max_iter <= 1000"),
    },
    "plant": {
        "sim_dt": (_float, _P.sim_dt, lambda v: 0.0 < v <= 0.01, "0 < sim_dt <= 0.01"),
        "mpc_period": (_float, _P.mpc_period, lambda v: 0.0 < v <= 0.1, "0 < mpc_period <= 0.1"),
        "include_gyroscopic": (_bool, _P.include_gyroscopic, None, ""),
        "include_inertia_rate": (_bool, _P.include_inertia_rate, None, ""),
        "wrench_noise_std": (_vector(2), _P.wrench_noise_std,
                             lambda v: all(x >= 0 for x in v), "noise std >= 0"),
    },
    "command": {
        "type": (_string, "forward", lambda v: v in COMMAND_TYPES, f"type in {COMMAND_TYPES}"),
        "speed": (_float, 0.0, lambda v: abs(v) <= 5.0, "|speed| <= 5"),
        "yaw_rate": (_float, 0.0, lambda v: abs(v) <= 5.0, "|yaw_rate| <= 5"),
        "duration": (_float, 10.0, lambda v: 0.0 < v <= 600.0, "0 < duration <= 600"),
        "seed": (_int, 0, _nonneg, "seed >= 0"),
    },
    "controller": {
        "mode": (_string, "vi", lambda v: v in MODE_ALIASES, "mode in vi, baseline1, baseline2"),
        "inertia_source": (_string, "ccinn", lambda v: v in ("ccinn", "oracle"),
                           "inertia_source in ccinn, oracle"),
        "weights": (_string, "", None, ""),
        "wbo_source": (_string, "map", lambda v: v in ("map", "integrated"),
                       "wbo_source in map, integrated"),
        "wbo_map": (_string, "", None, ""),
        "warm_start": (_bool, True, None, ""),
    },
}


def defaults():
    return {sec: {k: spec[1] for k, spec in keys.items()} for sec, keys in SCHEMA.items()}


@dataclass
class Scenario:
    """Parsed values per section plus the directory relative paths resolve against."""
    values: dict = field(default_factory=defaults)
    base_dir: Path = field(default_factory=Path.cwd, compare=False)

    def __getitem__(self, section):
        return self.values[section]

    def with_values(self, **sections):
        """Copy with some keys replaced, e.g. ``with_values(command={"speed": 1.0})``."""
        vals = {s: dict(v) for s, v in self.values.items()}
        for sec, upd in sections.items():
            vals[sec].update(upd)
        out = Scenario(vals, self.base_dir)
        validate(out)
        return out

    @property
    def mode(self):
        return MODE_ALIASES[self["controller"]["mode"]]

    @property
    def duration(self):
        return self["command"]["duration"]

    def velocity_command(self):
        c = self["command"]
        s, w = c["speed"], c["yaw_rate"]
        if c["type"] == "forward":
            return VelocityCommand(s, 0.0, 0.0)
        if c["type"] == "diagonal":
            return VelocityCommand(s / math.sqrt(2.0), s / math.sqrt(2.0), 0.0)
        if c["type"] == "turn_in_place":
            return VelocityCommand(0.0, 0.0, w)
        return VelocityCommand(s, 0.0, w)

    def resolve(self, path):
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def model(self):
        b = self["biped"]
        return biped.default_model().with_masses(
            torso=b["torso_mass"], thigh=b["thigh_mass"], shank=b["shank_mass"], foot=b["foot_mass"])

    def loop_config(self):
        """Everything the closed loop needs; loads weight and map files."""
        g, p, m, pl, c = (self[s] for s in ("gait", "planner", "mpc", "plant", "controller"))
        weights = ccinn.load_weights(self.resolve(c["weights"])) if c["weights"] else None
        wmap = wbo.load_map(self.resolve(c["wbo_map"])) if c["wbo_map"] else None
        return LoopConfig(
            model=self.model(),
            gait=GaitSpec(g["period"], g["stance_fraction"], g["phase_offset"]),
            planner=FootstepPlannerConfig(**p),
            mpc=MpcConfig(**{k: (np.array(v) if k == "state_weights" else v) for k, v in m.items()}),
            plant=PlantConfig(**pl),
            command=self.velocity_command(),
            inertia_source=c["inertia_source"],
            weights=weights,
            wbo_source=c["wbo_source"],
            wbo_map=wmap,
            warm_start=c["warm_start"],
            seed=self["command"]["seed"],
        )


# -- parsing -------------------------------------------------------------------------------

def parse_text(text, base_dir=None):
    """Parse scenario text; see the module docstring for the format."""
    vals = defaults()
    seen = set()
    section = None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ParseError(f"unterminated section header {line!r}", n)
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ParseError(f"unknown section [{section}]", n)
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {line!r}", n)
        key, value = (s.strip() for s in line.split("=", 1))
        sec = section
        if "." in key:
            sec, key = key.split(".", 1)
            if sec not in SCHEMA:
                raise ParseError(f"unknown section {sec!r} in dotted key", n)
        if sec is None:
            raise ParseError(f"key {key!r} outside any section", n)
        if key not in SCHEMA[sec]:
            raise ParseError(f"unknown key {key!r} in [{sec}]", n)
        if (sec, key) in seen:
            raise ParseError(f"duplicate key {sec}.{key}", n)
        seen.add((sec, key))
        parser = SCHEMA[sec][key][0]
        try:
            vals[sec][key] = parser(value)
        except ValueError as exc:
            raise ParseError(f"{sec}.{key}: bad value {value!r} ({exc})", n) from None
    sc = Scenario(vals, Path(base_dir) if base_dir is not None else Path.cwd())
    validate(sc)
    return sc


def parse_scenario(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    return parse_text(text, path.resolve().parent)


def validate(sc):
    """Range checks per key plus cross-field rules.

    Raises
    ------
    ValidationError
        Naming the offending key and the violated constraint.
    """
    for sec, keys in SCHEMA.items():
        for key, (_, _, check, text) in keys.items():
            if check is not None and not check(sc[sec][key]):
                raise ValidationError(f"{sec}.{key}", text)
    m, p, g, c = sc["mpc"], sc["plant"], sc["gait"], sc["controller"]
    if m["f_min"] >= m["f_max"]:
        raise ValidationError("mpc.f_min", "f_min < f_max")
    r = p["mpc_period"] / p["sim_dt"]
    if abs(r - round(r)) > 1e-9:
        raise ValidationError("plant.mpc_period", "integer multiple of sim_dt")
    try:
        GaitSpec(g["period"], g["stance_fraction"], g["phase_offset"])
    except Exception as exc:
        raise ValidationError("gait", str(exc)) from None
    for key in ("weights", "wbo_map"):
        if c[key] and not sc.resolve(c[key]).is_file():
            raise ValidationError(f"controller.{key}", f"file {c[key]!r} must exist")
    ctype, cmd = sc["command"]["type"], sc["command"]
    if ctype == "circular" and (cmd["speed"] == 0.0 or cmd["yaw_rate"] == 0.0):
        raise ValidationError("command.yaw_rate", "circular needs nonzero speed and yaw_rate")


def serialize(sc):
    """Scenario text that parses back to an equal scenario."""
    out = []
    for sec, keys in SCHEMA.items():
        out.append(f"[{sec}]")
        out.extend(f"{k} = {_fmt(sc[sec][k])}" for k in keys)
        out.append("")
    return "\n".join(out)
