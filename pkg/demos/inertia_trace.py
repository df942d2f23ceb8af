"""Print the predicted pitch inertia across the horizon over one gait cycle.

Each row is one MPC tick; columns are the horizon knots.  The rows shift left
as time advances, which is the horizon sliding over the gait.
"""
import numpy as np

from vimpc import refgen, sim


def main(speed=1.2, duration=3.0, stride=10):
    cfg = sim.LoopConfig(command=refgen.VelocityCommand(speed))
    log = sim.run_closed_loop(cfg, "vi", duration)
    iyy = np.array(log.inertia_ref)[:, :, 3]
    per = int(round(cfg.gait.period / cfg.plant.mpc_period))
    cycle = iyy[-per:]
    print(f"Iyy [kg m^2] at {speed} m/s, last gait period, every {stride} ticks "
          f"({stride * cfg.plant.mpc_period * 1e3:.0f} ms)")
    for k in range(0, per, stride):
        print(" ".join(f"{v:6.3f}" for v in cycle[k]))
    print(f"peak-to-peak at knot 0: {np.ptp(cycle[:, 0]):.3f}  mean {cycle[:, 0].mean():.3f}")


if __name__ == "__main__":
    main()
