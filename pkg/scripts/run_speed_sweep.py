#!/usr/bin/env python3
"""Behavior sweep: leader speed 8.0-14.9 m/s in 0.1 m/s steps, both weight
modes (adaptive and fixed). Emits per-speed labels and the aggregate table
to out/sweep/sweep_table.csv. Expect roughly 10 minutes on one core; set
PLANNER_THREADS to parallelize.
"""
import sys

from cilqr_planner.cli import main

if __name__ == "__main__":
    sys.exit(main(["--scenario", "scenarios/sweep.cfg",
                   "--mode", "sweep", "--out", "out/sweep"] + sys.argv[1:]))
