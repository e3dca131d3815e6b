#!/usr/bin/env python3
"""Replan-time measurement on the overtake scenario (40-step horizon,
40 obstacle ellipses per target). Prints mean/std wall time per tick and
warns if the 100 ms soft budget is exceeded. Output: out/timing/timing.csv.
"""
import sys

from cilqr_planner.cli import main

if __name__ == "__main__":
    sys.exit(main(["--scenario", "scenarios/overtake.cfg",
                   "--mode", "timing", "--out", "out/timing"] + sys.argv[1:]))
