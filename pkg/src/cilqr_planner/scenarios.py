"""Canonical two-lane scenario configurations used by the CLI and tests."""
from __future__ import annotations

import math

from .constraints import AdaptiveWeightParams, CostWeights
from .dynamics import VehicleState
from .simulator import (ConstantSpeed, CutIn, LaneGeometry, ScenarioConfig,
                        SuddenAccel, TargetSpec)

# Weights tuned for overtaking a slow (8 m/s) leader; frozen in fixed mode.
OVERTAKE_TUNED_WEIGHTS = CostWeights(w_a=1.0, w_delta=10.0, w_ref=0.08,
                                     w_vel=1.0)


def overtake_scenario(v_target: float = 8.0, gap: float = 20.0,
                      opposing: bool = True, opposing_speed: float = 10.0,
                      opposing_gap: float = 110.0,
                      duration_s: float = 30.0) -> ScenarioConfig:
    """Slow leader ahead in the ego lane; optional opposing car in the other lane."""
    targets = [TargetSpec(init=VehicleState(gap, -3.0, v_target, 0.0),
                          script=ConstantSpeed(v_target))]
    if opposing:
        targets.append(TargetSpec(
            init=VehicleState(opposing_gap, 3.0, opposing_speed, math.pi),
            script=ConstantSpeed(opposing_speed)))
    return ScenarioConfig(
        lane=LaneGeometry(),
        ego_init=VehicleState(0.0, -3.0, 15.0, 0.0),
        v_ref=15.0,
        ref_y=-3.0,
        targets=targets,
        weight_mode="adaptive",
        fixed_weights=OVERTAKE_TUNED_WEIGHTS,
        # a1 raised from the 1.2 default: it sets the lateral-deviation price
        # of a pass and hence where the pass/follow decision flips as target
        # speed approaches the reference speed.
        adaptive_params=AdaptiveWeightParams(a1=2.4),
        duration_s=duration_s,
    )


def cutin_scenario(v_target: float = 12.0, gap: float = 11.0,
                   cutin_duration: float = 3.0, cutin_start: float = 0.5,
                   duration_s: float = 15.0) -> ScenarioConfig:
    """Adjacent-lane car ahead cuts into the ego lane via a lateral quintic.

    The default gap is center-to-center; 11 m leaves ~5 m bumper-to-bumper.
    Fixed lane-keeping-biased weights pin the yield-and-follow response.
    """
    targets = [TargetSpec(
        init=VehicleState(gap, 3.0, v_target, 0.0),
        script=CutIn(t_start=cutin_start, duration=cutin_duration,
                     y_from=3.0, y_to=-3.0))]
    return ScenarioConfig(
        ego_init=VehicleState(0.0, -3.0, 15.0, 0.0),
        v_ref=15.0,
        ref_y=-3.0,
        targets=targets,
        weight_mode="fixed",
        fixed_weights=CostWeights(w_a=1.0, w_delta=10.0, w_ref=2.0, w_vel=0.5),
        duration_s=duration_s,
    )


def sudden_accel_scenario(v_target: float = 8.0, gap: float = 20.0,
                          accel: float = 6.0, v_cap: float = 18.0,
                          trigger_gap: float = -4.0, split_s: float = 0.5,
                          duration_s: float = 20.0) -> ScenarioConfig:
    """Leader accelerates hard once the ego front bumper pulls within range.

    The default trigger fires when the ego's front bumper is 4 m past the
    leader's center, i.e. mid-overtake -- the acceleration surprises the
    planner exactly while it is merging back.
    """
    targets = [TargetSpec(
        init=VehicleState(gap, -3.0, v_target, 0.0),
        script=SuddenAccel(trigger_gap=trigger_gap, accel=accel, v_cap=v_cap))]
    return ScenarioConfig(
        ego_init=VehicleState(0.0, -3.0, 15.0, 0.0),
        v_ref=15.0,
        ref_y=-3.0,
        targets=targets,
        weight_mode="adaptive",
        split_s=split_s,
        r_safe=0.0,
        duration_s=duration_s,
    )


def empty_road_scenario(duration_s: float = 10.0) -> ScenarioConfig:
    """No targets; the ego should hold lane center and reference speed."""
    return ScenarioConfig(ego_init=VehicleState(0.0, -3.0, 15.0, 0.0),
                          targets=[], duration_s=duration_s)


def sweep_base_scenario(gap: float = 20.0, duration_s: float = 30.0
                        ) -> ScenarioConfig:
    """Single-leader base for the behavior sweep (no opposing traffic)."""
    return overtake_scenario(v_target=8.0, gap=gap, opposing=False,
                             duration_s=duration_s)
