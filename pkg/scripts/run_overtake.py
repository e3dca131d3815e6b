#!/usr/bin/env python3
"""Overtake experiment: slow leader ahead, opposing traffic in the other lane.

Writes trajectory/metrics CSVs and an overhead SVG under out/overtake/.
"""
import sys

from cilqr_planner.cli import main

if __name__ == "__main__":
    sys.exit(main(["--scenario", "scenarios/overtake.cfg",
                   "--out", "out/overtake", "--plot"] + sys.argv[1:]))
