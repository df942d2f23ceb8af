import math

import numpy as np
import pytest

from vimpc import scenario
from vimpc.errors import ParseError, ValidationError
from vimpc.mpc import MpcConfig
from vimpc.scenario import parse_text, serialize


def test_empty_file_gives_defaults(tmp_path):
    (tmp_path / "s.txt").write_text("")
    sc = scenario.parse_scenario(tmp_path / "s.txt")
    assert sc.values == scenario.defaults()
    cfg = sc.loop_config()
    assert cfg.mpc.N == MpcConfig().N and cfg.plant.sim_dt == 1.25e-3
    assert sc.mode == "vi" and sc.duration == 10.0


def test_sections_comments_and_dotted_keys():
    text = """
    # a forward walk
    [command]
    type = forward   # trailing comment
    speed = 0.8
    [controller]
    mode = b1
    mpc.N = 12
    plant.wrench_noise_std = 1.0, 0.1
    """
    sc = parse_text(text)
    assert sc["command"]["speed"] == 0.8 and sc.mode == "baseline1"
    assert sc["mpc"]["N"] == 12 and sc["plant"]["wrench_noise_std"] == (1.0, 0.1)
    assert sc.velocity_command().vx == 0.8


def test_n_below_two_rejected():
    with pytest.raises(ValidationError) as err:
        parse_text("mpc.N = 0")
    assert err.value.key == "mpc.N" and "N ≥ 2" in str(err.value)


@pytest.mark.parametrize("text, line, fragment", [
    ("[mpc]\nN = 10\n[bogus]\n", 3, "unknown section"),
    ("[mpc]\nwidth = 3\n", 2, "unknown key"),
    ("[mpc]\nN = ten\n", 2, "bad value"),
    ("\n\nN = 3\n", 3, "outside any section"),
    ("[mpc]\nN = 3\nN = 4\n", 3, "duplicate"),
    ("[mpc\n", 1, "unterminated"),
    ("[mpc]\njust words\n", 2, "key = value"),
    ("[plant]\nwrench_noise_std = 1 2 3\n", 2, "expected 2 numbers"),
    ("[mpc]\nmu = nan\n", 2, "not finite"),
    ("[plant]\ninclude_gyroscopic = maybe\n", 2, "boolean"),
])
def test_parse_errors_carry_line(text, line, fragment):
    with pytest.raises(ParseError) as err:
        parse_text(text)
    assert err.value.line == line and fragment in str(err.value)


@pytest.mark.parametrize("text, key", [
    ("mpc.mu = 0", "mpc.mu"),
    ("mpc.f_min = 600", "mpc.f_min"),
    ("plant.mpc_period = 0.003", "plant.mpc_period"),
    ("gait.stance_fraction = 0.4 0.4", "gait"),
    ("command.type = sideways", "command.type"),
    ("command.type = circular\ncommand.speed = 0.5", "command.yaw_rate"),
    ("controller.weights = nowhere.txt", "controller.weights"),
    ("controller.mode = vi3", "controller.mode"),
    ("planner.h = 1.5", "planner.h"),
])
def test_validation_errors(text, key):
    with pytest.raises(ValidationError) as err:
        parse_text(text)
    assert err.value.key == key


def test_missing_file(tmp_path):
    with pytest.raises(ParseError):
        scenario.parse_scenario(tmp_path / "none.txt")


def test_relative_paths_resolve_against_file(tmp_path, weights):
    from vimpc import ccinn
    ccinn.save_weights(weights, tmp_path / "w.txt")
    (tmp_path / "s.txt").write_text("[controller]\nweights = w.txt\n")
    sc = scenario.parse_scenario(tmp_path / "s.txt")
    assert sc.loop_config().weights.equals(weights)


def random_values(rng):
    vals = scenario.defaults()
    vals["mpc"]["N"] = int(rng.integers(2, 30))
    vals["mpc"]["mu"] = float(rng.uniform(0.1, 1.5))
    vals["mpc"]["state_weights"] = tuple(float(x) for x in rng.uniform(0, 100, 12))
    vals["planner"]["h"] = float(rng.uniform(0.5, 0.75))
    vals["gait"]["period"] = float(rng.uniform(0.3, 1.0))
    vals["plant"]["include_gyroscopic"] = bool(rng.integers(0, 2))
    vals["plant"]["wrench_noise_std"] = (float(rng.uniform(0, 3)), float(rng.uniform(0, 1)))
    vals["command"]["type"] = str(rng.choice(scenario.COMMAND_TYPES))
    vals["command"]["speed"] = float(rng.uniform(0.1, 2.0))
    vals["command"]["yaw_rate"] = float(rng.uniform(0.1, 2.0))
    vals["command"]["seed"] = int(rng.integers(0, 1000))
    vals["controller"]["mode"] = str(rng.choice(["vi", "baseline1", "baseline2"]))
    vals["biped"]["thigh_mass"] = float(rng.uniform(1.0, 6.0))
    return vals


def test_round_trip(rng):
    for _ in range(30):
        sc = scenario.Scenario(random_values(rng))
        scenario.validate(sc)
        back = parse_text(serialize(sc))
        assert back == sc
        assert serialize(back) == serialize(sc)


def test_command_types():
    s = math.sqrt(2.0)
    sc = parse_text("command.type = diagonal\ncommand.speed = 1.0")
    c = sc.velocity_command()
    assert c.vx == pytest.approx(1 / s) and c.vy == pytest.approx(1 / s)
    c = parse_text("command.type = turn_in_place\ncommand.yaw_rate = 1.5\ncommand.speed = 0.7").velocity_command()
    assert (c.vx, c.vy, c.yaw_rate) == (0.0, 0.0, 1.5)
    c = parse_text("command.type = circular\ncommand.speed = 0.5\ncommand.yaw_rate = 0.5").velocity_command()
    assert (c.vx, c.yaw_rate) == (0.5, 0.5)


def test_with_values_revalidates():
    sc = parse_text("")
    assert sc.with_values(command={"speed": 1.0})["command"]["speed"] == 1.0
    assert sc["command"]["speed"] == 0.0
    with pytest.raises(ValidationError):
        sc.with_values(mpc={"N": 1})


def test_biped_masses_reach_model():
    sc = parse_text("[biped]\nthigh_mass = 2.0\n")
    m = sc.model()
    assert m.thigh.mass == 2.0
    assert np.isclose(m.total_mass, scenario.defaults()["biped"]["torso_mass"]
                      + 2 * (2.0 + m.shank.mass + m.foot.mass))
