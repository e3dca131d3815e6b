#!/usr/bin/env python3
"""Prediction ablation on the sudden-acceleration scenario.

Runs the same scenario twice: with the hybrid predictor (reachability for the
first 0.5 s, fitted linear model afterwards) and with the long-term-only
predictor (split 0). The hybrid branch clears; the long-term-only branch ends
in a collision because the fitted model lags the leader's surprise
acceleration. Outputs land under out/sudden_accel/split_*/.
"""
import sys

from cilqr_planner.cli import main

if __name__ == "__main__":
    sys.exit(main(["--scenario", "scenarios/sudden_accel.cfg",
                   "--mode", "ablation", "--seed", "1",
                   "--out", "out/sudden_accel", "--plot"] + sys.argv[1:]))
