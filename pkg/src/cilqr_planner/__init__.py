"""Uncertainty-aware constrained iLQR motion planner for on-road vehicles."""

from .constraints import (AdaptiveWeightParams, BarrierParams, CilqrCostModel,
                          CostWeights, EllipseObstacle, QuadraticCostTerm,
                          ReferencePath, adaptive_weights, barrier,
                          build_step_cost, control_limit_constraints,
                          ellipse_constraint, quadratize_barrier)
from .dynamics import (ControlInput, ControlLimits, LinearizedStep,
                       VehicleGeometry, VehicleState, linearize, step)
from .ilqr import (FeedbackLaw, NotPositiveDefinite, SolveResult,
                   SolverSettings, TrajectoryPlan, backward_pass, forward_pass,
                   solve, solve_bicycle)
from .prediction import (ControlIntervals, DomainExceeded, RLSState, ReachBox,
                         TargetObservation, TargetPredictor,
                         inflate_box_to_ellipse, predict_hybrid, reach_horizon,
                         reach_step, rls_predict, rls_update)

__all__ = [n for n in dir() if not n.startswith("_")]
