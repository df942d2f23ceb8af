import shutil
import subprocess
import sys

import pytest

from vimpc import cli, wbo


def run(*argv):
    return cli.main([str(a) for a in argv])


def write(tmp_path, text, name="s.txt"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_usage_errors(capsys):
    assert run() == cli.EXIT_CONFIG
    assert run("fly") == cli.EXIT_CONFIG
    assert run("run", "--scenario", "x") == cli.EXIT_CONFIG  # --out missing
    assert run("--help") == cli.EXIT_OK


def test_console_script_installed(tmp_path):
    exe = shutil.which("vimpc")
    cmd = [exe] if exe else [sys.executable, "-m", "vimpc.cli"]
    r = subprocess.run(cmd + ["run", "--scenario", str(tmp_path / "missing.txt"), "--out", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == cli.EXIT_CONFIG and "error" in r.stderr


def test_parse_range():
    assert cli.parse_range("0.1:0.5:0.1") == [0.1, 0.2, 0.3, 0.4, 0.5]
    assert cli.parse_range("1:1:0.5") == [1.0]
    for bad in ("1:0:0.1", "0:1:0", "0:1", "a:b:c"):
        with pytest.raises(cli.UsageError):
            cli.parse_range(bad)


def test_bad_scenario_exit_code(tmp_path, capsys):
    p = write(tmp_path, "[mpc]\nN = 1\n")
    assert run("run", "--scenario", p, "--out", tmp_path / "o") == cli.EXIT_CONFIG
    assert "mpc.N" in capsys.readouterr().err
    p = write(tmp_path, "[mpc]\nwhat = 1\n")
    assert run("run", "--scenario", p, "--out", tmp_path / "o") == cli.EXIT_CONFIG
    assert "line 2" in capsys.readouterr().err


def test_standing_run(tmp_path, capsys):
    # both feet down for the whole run
    p = write(tmp_path, "[gait]\nstance_fraction = 1 1\n[command]\nduration = 3.0\n")
    assert run("run", "--scenario", p, "--out", tmp_path / "o") == cli.EXIT_OK
    metrics = dict(line.split(" = ") for line in (tmp_path / "o" / "metrics.txt").read_text().splitlines())
    assert float(metrics["vel_rmse_x"]) < 0.02 and float(metrics["vel_rmse_y"]) < 0.02
    assert metrics["fall"] == "False"
    header = (tmp_path / "o" / "log.csv").read_text().splitlines()[0]
    assert header.startswith("t,px,py,pz,roll,pitch,yaw")


def test_infeasible_friction_fails_loudly(tmp_path, capsys):
    p = write(tmp_path, "[mpc]\nmu = 0.001\n[command]\nspeed = 1.5\nduration = 3.0\n")
    code = run("run", "--scenario", p, "--out", tmp_path / "o")
    assert code in (cli.EXIT_FALL, cli.EXIT_SOLVER)
    err = capsys.readouterr().err
    assert "Infeasible" in err or "Fall" in err or "MaxIterations" in err


def test_run_deterministic_without_timing(tmp_path):
    p = write(tmp_path, "[command]\nspeed = 0.4\nduration = 1.0\nseed = 3\n[plant]\nwrench_noise_std = 1.0 0.1\n")
    for d in ("a", "b"):
        assert run("run", "--scenario", p, "--out", tmp_path / d, "--no-timing") == cli.EXIT_OK
    for f in ("log.csv", "metrics.txt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_mode_override(tmp_path):
    p = write(tmp_path, "[command]\nduration = 0.05\n")
    assert run("run", "--scenario", p, "--out", tmp_path / "o", "--mode", "b2") == cli.EXIT_OK
    assert run("run", "--scenario", p, "--out", tmp_path / "o", "--mode", "b3") == cli.EXIT_CONFIG


def test_data_train_eval_pipeline(tmp_path, capsys):
    assert run("gen-data", "--out", tmp_path / "d", "--n", 40, "--seed", 1) == cli.EXIT_OK
    for name in ("a.txt", "b.txt"):
        assert run("train", "--data", tmp_path / "d", "--out", tmp_path / name, "--seed", 2,
                   "--epochs", 2) == cli.EXIT_OK
    assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()
    capsys.readouterr()
    assert run("eval-net", "--weights", tmp_path / "a.txt", "--data", tmp_path / "d") == cli.EXIT_OK
    assert "median_rel_fro" in capsys.readouterr().out
    assert run("eval-net", "--weights", tmp_path / "a.txt", "--data", tmp_path / "nope") == cli.EXIT_CONFIG
    (tmp_path / "bad.txt").write_text("garbage\n")
    assert run("eval-net", "--weights", tmp_path / "bad.txt", "--data", tmp_path / "d") == cli.EXIT_CONFIG


def test_gen_data_rejects_zero(tmp_path):
    assert run("gen-data", "--out", tmp_path / "d", "--n", 0) != cli.EXIT_OK


def test_fit_wbo(tmp_path, capsys):
    assert run("fit-wbo", "--out", tmp_path / "m.txt", "--n", 10) == cli.EXIT_OK
    assert wbo.load_map(tmp_path / "m.txt").coefficients.shape == (3, 45)
    assert run("fit-wbo", "--out", tmp_path / "m.txt", "--n", 3) != cli.EXIT_OK


def test_qp_selftest(capsys):
    assert run("qp-selftest", "--n", 30, "--n-mpc", 2) == cli.EXIT_OK
    assert "PASS" in capsys.readouterr().out


def test_degenerate_sweep(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("VIMPC_THREADS", "1")
    p = write(tmp_path, "")
    assert run("sweep", "--scenario", p, "--axis", "forward", "--range", "0.3:0.3:0.1",
               "--modes", "vi", "--duration", 1.0, "--out", tmp_path / "o") == cli.EXIT_OK
    rows = cli.read_sweep_table(tmp_path / "o" / "sweep.csv")
    assert [r["kind"] for r in rows] == ["point", "max_sustained"]
    assert rows[0]["command"] == "0.3" and rows[0]["fall"] == "0"


def test_yaw_sweep_schema(tmp_path, monkeypatch):
    monkeypatch.setenv("VIMPC_THREADS", "2")
    p = write(tmp_path, "")
    assert run("sweep", "--scenario", p, "--axis", "yaw", "--range", "0.5:1.0:0.5",
               "--modes", "vi,b1", "--duration", 0.5, "--out", tmp_path / "o") == cli.EXIT_OK
    rows = cli.read_sweep_table(tmp_path / "o" / "sweep.csv")
    assert list(rows[0]) == list(cli.SWEEP_COLUMNS)
    assert len(rows) == 2 * 2 + 2 and {r["axis"] for r in rows} == {"yaw"}
    assert {r["mode"] for r in rows} == {"vi", "baseline1"}


def test_sweep_argument_errors(tmp_path, monkeypatch):
    p = write(tmp_path, "")
    assert run("sweep", "--scenario", p, "--axis", "forward", "--range", "1:0:0.1",
               "--out", tmp_path / "o") == cli.EXIT_CONFIG
    assert run("sweep", "--scenario", p, "--axis", "sideways", "--range", "0:1:0.1",
               "--out", tmp_path / "o") == cli.EXIT_CONFIG
    monkeypatch.setenv("VIMPC_THREADS", "many")
    assert run("sweep", "--scenario", p, "--axis", "forward", "--range", "0:0:0.1",
               "--out", tmp_path / "o") == cli.EXIT_CONFIG


def test_max_sustained():
    rows = [{"command": 0.1, "pass": True}, {"command": 0.2, "pass": False}, {"command": 0.3, "pass": True}]
    assert cli.max_sustained(rows) == 0.3
    assert cli.max_sustained([]) == 0.0


def test_circular_point_keeps_radius():
    from vimpc import scenario
    sc = scenario.parse_text("command.type = circular\ncommand.speed = 0.5\ncommand.yaw_rate = 0.25")
    pt = cli.point_scenario(sc, "circular", 1.0)
    assert pt["command"]["speed"] == 1.0 and pt["command"]["yaw_rate"] == 0.5
