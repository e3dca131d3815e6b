#!/usr/bin/env python3
"""Cut-in experiment: adjacent-lane car merges ahead of the ego over 3 s.

The expected response is a yield: decelerate, then follow at a steady gap.
Writes outputs under out/cutin/.
"""
import sys

from cilqr_planner.cli import main

if __name__ == "__main__":
    sys.exit(main(["--scenario", "scenarios/cutin.cfg",
                   "--out", "out/cutin", "--plot"] + sys.argv[1:]))
