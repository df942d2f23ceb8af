"""Command-line entry point.

Exit codes
----------
0  success
1  the robot fell (``run``)
2  the MPC solver failed at least once (``run``)
3  bad input: scenario, arguments or data/weight files
4  internal error
5  the QP self-test found a mismatch
"""

import argparse
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import biped, ccinn, scenario, selftest, sim, wbo
from .errors import FormatError, ParseError, ValidationError, VimpcError

EXIT_OK, EXIT_FALL, EXIT_SOLVER, EXIT_CONFIG, EXIT_INTERNAL, EXIT_SELFTEST = range(6)
AXES = ("forward", "diagonal", "yaw", "circular")
SWEEP_COLUMNS = ("kind", "mode", "axis", "command", "pass", "fall", "avg_vel_rmse",
                 "avg_yaw_rate_rmse", "vel_rmse_x", "vel_rmse_y", "yaw_rate_rmse",
                 "mean_solve_ms", "p99_solve_ms", "solver_failures", "t_end", "event", "error")


TIMING_KEYS = ("mean_solve_ms", "p99_solve_ms", "max_solve_ms")


class UsageError(VimpcError):
    pass


def _say(*args):
    print(*args, file=sys.stderr, flush=True)


# -- data and network ---------------------------------------------------------------

def cmd_gen_data(a):
    data = ccinn.generate_dataset(biped.default_model(), n_motions=a.n, seed=a.seed)
    data.save(a.out)
    print(f"wrote {len(data)} samples from {a.n} motions to {a.out}")
    return EXIT_OK


def cmd_train(a):
    data = ccinn.Dataset.load(a.data)
    cfg = ccinn.TrainConfig(epochs=a.epochs, seed=a.seed)

    def progress(entry):
        if "val_median_rel_fro" in entry:
            _say(f"epoch {entry['epoch'] + 1}: train mse {entry['train_mse']:.3e}, "
                 f"val median rel err {entry['val_median_rel_fro']:.4%}")

    params = ccinn.train(data, cfg, progress=progress)
    ccinn.save_weights(params, a.out)
    print(f"wrote {a.out}")
    return EXIT_OK


def cmd_eval_net(a):
    params = ccinn.load_weights(a.weights)
    data = ccinn.Dataset.load(a.data)
    _, va = data.split()
    subset = ccinn.Dataset(data.inputs[va], data.targets[va]) if va.size else data
    for k, v in ccinn.evaluate(params, subset).items():
        print(f"{k} = {v!r}")
    return EXIT_OK


def cmd_fit_wbo(a):
    model = biped.default_model()
    wmap = wbo.fit_default(model, a.n, a.seed)
    wbo.save_map(wmap, a.out)
    err = wbo.evaluate_map(wmap, model, wbo.sample_leg_trajectories(10, seed=a.seed + 1))
    print(f"wrote {a.out}: fit residual {wmap.residual:.3e}, held-out median "
          f"{np.median(err):.3e} rad, max {err.max():.3e} rad")
    return EXIT_OK


def cmd_qp_selftest(a):
    r = selftest.run(n_random=a.n, n_mpc=a.n_mpc, seed=a.seed)
    n, m = r["mpc_sizes"][0] if r["mpc_sizes"] else (0, 0)
    print(f"random QPs: max deviation from enumeration {r['random_max_err']:.3e} (limit 1e-6)")
    print(f"condensed MPC (n={n}, m={m}): max KKT residual {r['mpc_max_kkt']:.3e} (limit 1e-8)")
    print(f"elapsed {r['elapsed']:.2f} s: {'PASS' if r['ok'] else 'FAIL'}")
    return EXIT_OK if r["ok"] else EXIT_SELFTEST


# -- simulation ------------------------------------------------------------------------

def _mode_name(text):
    try:
        return scenario.MODE_ALIASES[text]
    except KeyError:
        raise UsageError(f"unknown mode {text!r}") from None


def cmd_run(a):
    sc = scenario.parse_scenario(a.scenario)
    mode = _mode_name(a.mode) if a.mode else sc.mode
    cfg = sc.loop_config()
    log = sim.run_closed_loop(cfg, mode, sc.duration)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    m = sim.compute_metrics(log, cfg.gait.period)
    if a.no_timing:
        # wall-clock solve times are the only non-reproducible outputs
        log.data[:, sim.COL["mpc_solve_ms"]] = 0.0
        for k in TIMING_KEYS:
            m.pop(k)
    log.to_csv(out / "log.csv")
    (out / "metrics.txt").write_text(sim.format_metrics(m))
    sys.stdout.write(sim.format_metrics(m))
    for t, kind, msg in log.events:
        _say(f"t = {t:.4f} s: {kind}: {msg}")
    if m["fall"]:
        return EXIT_FALL
    if m["solver_failures"]:
        return EXIT_SOLVER
    return EXIT_OK


def parse_range(text):
    """``start:stop:step`` -> inclusive list of points."""
    try:
        start, stop, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise UsageError(f"range must be start:stop:step, got {text!r}") from None
    if not step > 0:
        raise UsageError("range step must be positive")
    if start > stop:
        raise UsageError("range start must not exceed stop")
    n = int(math.floor((stop - start) / step + 1e-9))
    return [round(start + i * step, 10) for i in range(n + 1)]


def point_scenario(sc, axis, value):
    """Scenario for one sweep point."""
    c = sc["command"]
    if axis == "forward":
        upd = {"type": "forward", "speed": value}
    elif axis == "diagonal":
        upd = {"type": "diagonal", "speed": value}
    elif axis == "yaw":
        upd = {"type": "turn_in_place", "yaw_rate": value}
    else:
        # constant radius taken from the scenario when it is circular
        radius = c["speed"] / c["yaw_rate"] if c["type"] == "circular" else 1.0
        upd = {"type": "circular", "speed": value, "yaw_rate": value / radius}
    return sc.with_values(command=upd)


def _sweep_point(job):
    sc, axis, value, mode = job
    row = dict.fromkeys(SWEEP_COLUMNS, "")
    row.update(kind="point", mode=mode, axis=axis, command=value)
    try:
        psc = point_scenario(sc, axis, value)
        cfg = psc.loop_config()
        log = sim.run_closed_loop(cfg, mode, psc.duration)
        m = sim.compute_metrics(log, cfg.gait.period)
        row.update({k: m[k] for k in SWEEP_COLUMNS if k in m})
        row["pass"] = sim.sweep_pass(m, cfg.command)
        row["t_end"] = float(log.column("t")[-1])
        if log.events:
            row["event"] = log.events[0][1]
    except Exception as exc:  # recorded per cell; the sweep carries on
        row.update({"pass": False, "error": type(exc).__name__})
    return row


def _threads():
    env = os.environ.get("VIMPC_THREADS")
    if env is None:
        return min(4, os.cpu_count() or 1)
    try:
        n = int(env)
    except ValueError:
        raise UsageError(f"VIMPC_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise UsageError("VIMPC_THREADS must be at least 1")
    return n


def max_sustained(rows):
    """Largest passing command magnitude, 0 if none passed."""
    ok = [abs(r["command"]) for r in rows if r["pass"] is True]
    return max(ok) if ok else 0.0


def _cell(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_sweep_table(path, rows):
    lines = [",".join(SWEEP_COLUMNS)]
    lines.extend(",".join(_cell(r[c]) for c in SWEEP_COLUMNS) for r in rows)
    Path(path).write_text("\n".join(lines) + "\n")


def read_sweep_table(path):
    text = Path(path).read_text().splitlines()
    header = text[0].split(",")
    return [dict(zip(header, line.split(","))) for line in text[1:]]


def run_sweep(sc, axis, values, modes, workers=1):
    """Rows for every (mode, value) followed by one max-sustained row per mode."""
    jobs = [(sc, axis, v, m) for m in modes for v in values]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as ex:
            rows = list(ex.map(_sweep_point, jobs))
    else:
        rows = [_sweep_point(j) for j in jobs]
    out = list(rows)
    for m in modes:
        row = dict.fromkeys(SWEEP_COLUMNS, "")
        row.update(kind="max_sustained", mode=m, axis=axis,
                   command=max_sustained([r for r in rows if r["mode"] == m]))
        out.append(row)
    return out


def cmd_sweep(a):
    sc = scenario.parse_scenario(a.scenario)
    if a.axis not in AXES:
        raise UsageError(f"axis must be one of {AXES}")
    values = parse_range(a.range)
    modes = [_mode_name(m.strip()) for m in a.modes.split(",") if m.strip()]
    if not modes:
        raise UsageError("no modes given")
    if a.duration is not None:
        sc = sc.with_values(command={"duration": a.duration})
    workers = _threads()
    t0 = time.perf_counter()
    rows = run_sweep(sc, a.axis, values, modes, workers)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    write_sweep_table(out / "sweep.csv", rows)
    unit = "rad/s" if a.axis == "yaw" else "m/s"
    for r in rows:
        if r["kind"] == "max_sustained":
            print(f"{r['mode']}: max sustained {r['command']:.2f} {unit}")
    print(f"{len(values) * len(modes)} points in {time.perf_counter() - t0:.1f} s "
          f"with {workers} worker(s); table in {out / 'sweep.csv'}")
    errors = [r for r in rows if r["error"]]
    for r in errors:
        _say(f"{r['mode']} at {r['command']}: {r['error']}")
    return EXIT_INTERNAL if errors else EXIT_OK


# -- entry point -------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="vimpc", description="Variable-inertia MPC for a biped.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", help="sample a composite-inertia dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=1200, help="number of sampled motions")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", help="train the inertia network")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--epochs", type=int, default=ccinn.TrainConfig.epochs)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval-net", help="network error on a dataset's validation split")
    s.add_argument("--weights", required=True)
    s.add_argument("--data", required=True)
    s.set_defaults(func=cmd_eval_net)

    s = sub.add_parser("fit-wbo", help="fit the whole-body orientation map")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=wbo.DEFAULT_TRAJECTORIES)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_fit_wbo)

    s = sub.add_parser("qp-selftest", help="check the QP solver")
    s.add_argument("--n", type=int, default=200, help="random QPs")
    s.add_argument("--n-mpc", type=int, default=20, help="condensed MPC problems")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_qp_selftest)

    s = sub.add_parser("run", help="simulate one scenario")
    s.add_argument("--scenario", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--mode", help="override the scenario's controller mode")
    s.add_argument("--no-timing", action="store_true",
                   help="write zero solve times so that repeated runs give identical files")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="maximum sustained command per mode")
    s.add_argument("--scenario", required=True)
    s.add_argument("--axis", required=True, choices=AXES)
    s.add_argument("--range", required=True, help="start:stop:step")
    s.add_argument("--modes", default="vi,b1,b2")
    s.add_argument("--out", required=True)
    s.add_argument("--duration", type=float, help="seconds per point (default: scenario)")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return a.func(a)
    except (ParseError, ValidationError, FormatError, UsageError) as exc:
        _say(f"error: {exc}")
        return EXIT_CONFIG
    except VimpcError as exc:
        _say(f"error: {type(exc).__name__}: {exc}")
        return EXIT_INTERNAL
    except Exception as exc:  # any other failure must still exit nonzero
        _say(f"internal error: {type(exc).__name__}: {exc}")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
