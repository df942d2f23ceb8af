"""Walk forward with each controller mode and print tracking metrics.

    python3 demos/compare_modes.py [speed] [seconds]
"""
import sys

from vimpc import refgen, sim


def main(speed=1.0, duration=5.0):
    cfg = sim.LoopConfig(command=refgen.VelocityCommand(speed))
    print(f"forward walking at {speed} m/s for {duration} s")
    print(f"{'mode':<10} {'fall':>5} {'avg_vel_rmse':>13} {'vel_rmse_y':>11} {'mean_ms':>8} {'p99_ms':>7}")
    for mode in sim.MODES:
        m = sim.compute_metrics(sim.run_closed_loop(cfg, mode, duration), cfg.gait.period)
        print(f"{mode:<10} {str(m['fall']):>5} {m['avg_vel_rmse']:13.4f} {m['vel_rmse_y']:11.4f} "
              f"{m['mean_solve_ms']:8.3f} {m['p99_solve_ms']:7.3f}")


if __name__ == "__main__":
    args = [float(a) for a in sys.argv[1:3]]
    main(*args)
