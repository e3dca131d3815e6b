"""End-to-end acceptance suite.

Each test covers one acceptance criterion, states its tolerance/budget in the
docstring, and emits a single PASS line on success (run with -s to see them).
The speed-sweep test dominates the runtime (several minutes on one core).
"""
import math
import sys
import time

import numpy as np
import pytest

from cilqr_planner.cli import main
from cilqr_planner.constraints import (BarrierParams, CilqrCostModel,
                                       CostWeights, EllipseObstacle,
                                       ReferencePath, barrier)
from cilqr_planner.dynamics import (ControlLimits, VehicleGeometry,
                                    linearize_array, step_array)
from cilqr_planner.ilqr import SolverSettings, solve, solve_bicycle
from cilqr_planner.prediction import (ControlIntervals, RLSState,
                                      TargetObservation, reach_horizon,
                                      rls_update)
from cilqr_planner.scenarios import (cutin_scenario, overtake_scenario,
                                     sudden_accel_scenario,
                                     sweep_base_scenario)
from cilqr_planner.simulator import (aggregate_sweep, run_scenario,
                                     sweep_speeds)

GEOM = VehicleGeometry()
LIMITS = ControlLimits()


def report(line):
    # bypass pytest's capture: the per-criterion pass lines (with their
    # measured values) belong in the console/tee output of a green run too
    print(f"\nPASS {line}", file=sys.__stdout__)


# ---------------------------------------------------------------------------
# 1. derivative suite

def test_criterion_1_gradients():
    """Analytic derivatives vs central finite differences.

    Dynamics Jacobians: 1000 random samples, relative error <= 1e-4.
    Cost quadratization (incl. barrier terms): 1000 samples, <= 1e-3.
    Budget: < 5 s.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    h = 1e-5
    worst_dyn = 0.0
    for _ in range(1000):
        x = np.array([rng.uniform(-100, 100), rng.uniform(-6, 6),
                      rng.uniform(0, 25), rng.uniform(-1.2, 1.2)])
        u = np.array([rng.uniform(-4, 6), rng.uniform(-0.52, 0.52)])
        F = linearize_array(x, u, 0.1, GEOM)
        z = np.concatenate([x, u])
        for j in range(6):
            zp, zm = z.copy(), z.copy()
            zp[j] += h
            zm[j] -= h
            fd = (step_array(zp[:4], zp[4:], 0.1, GEOM)
                  - step_array(zm[:4], zm[4:], 0.1, GEOM)) / (2 * h)
            rel = np.abs(F[:, j] - fd) / np.maximum(np.abs(fd), 1e-4)
            worst_dyn = max(worst_dyn, rel.max())
    assert worst_dyn <= 1e-4

    ref = ReferencePath.straight(-20.0, 120.0, -3.0, 15.0)
    model = CilqrCostModel(ref, CostWeights(), LIMITS, GEOM,
                           road_bounds=(-6.0, 6.0))
    worst_cost = 0.0
    for _ in range(1000):
        obs = EllipseObstacle(rng.uniform(0, 20), rng.uniform(-5, 5),
                              rng.uniform(-0.5, 0.5), 3.0, 1.2, active_step=0)
        model.set_obstacles([obs])
        X = np.array([[rng.uniform(0, 20) + 0.1, rng.uniform(-4.5, -1.5),
                       rng.uniform(5, 20), rng.uniform(-0.4, 0.4)],
                      [30.1, -3.0, 15.0, 0.0]])
        U = np.array([[rng.uniform(-3, 5), rng.uniform(-0.4, 0.4)]])
        _, g, _ = model.quadratize_all(X, U)
        for j in range(4):
            Xp, Xm = X.copy(), X.copy()
            Xp[0, j] += h
            Xm[0, j] -= h
            fd = (model.trajectory_cost(Xp, U)
                  - model.trajectory_cost(Xm, U)) / (2 * h)
            rel = abs(g[0, j] - fd) / max(abs(fd), 1e-2)
            worst_cost = max(worst_cost, rel)
    assert worst_cost <= 1e-3
    dt = time.perf_counter() - t0
    assert dt < 5.0
    report(f"criterion 1: dynamics FD err {worst_dyn:.2e} <= 1e-4, "
           f"cost FD err {worst_cost:.2e} <= 1e-3, {dt:.1f}s < 5s")


# ---------------------------------------------------------------------------
# 2. reachability soundness

def _batch_bicycle_step(X, a, delta, dt, L):
    """Vectorized discrete bicycle step (trajectory generator, not the SUT)."""
    kappa = np.tan(delta) / L
    l = X[:, 2] * dt + 0.5 * a * dt * dt
    out = X.copy()
    straight = np.abs(kappa) <= 1e-6
    phi = X[:, 3] + kappa * l
    with np.errstate(divide="ignore", invalid="ignore"):
        dx = (np.sin(phi) - np.sin(X[:, 3])) / kappa
        dy = (np.cos(X[:, 3]) - np.cos(phi)) / kappa
    dx = np.where(straight, l * np.cos(X[:, 3]), dx)
    dy = np.where(straight, l * np.sin(X[:, 3]), dy)
    phi = np.where(straight, X[:, 3], phi)
    out[:, 0] += dx
    out[:, 1] += dy
    out[:, 2] += a * dt
    out[:, 3] = phi
    return out


def test_criterion_2_reachability_soundness():
    """1e5 sampled admissible trajectories, 20 initial conditions, 0 box exits.

    Accel interval [-4, 6] m/s^2, steering-rate interval [-0.1, 0.1] rad/s,
    0.5 s horizons (5 steps of 0.1 s). Budget: < 60 s.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(77)
    ctrl = ControlIntervals(accel=(-4.0, 6.0), steer_rate=(-0.1, 0.1))
    n_ic, n_traj, n_steps, dt = 20, 5000, 5, 0.1
    violations = 0
    for _ in range(n_ic):
        obs = TargetObservation(
            0.0, px=rng.uniform(-50, 50), py=rng.uniform(-6, 6),
            theta=rng.uniform(-0.5, 0.5), v=rng.uniform(3.0, 20.0),
            pos_hw=0.2, yaw_hw=0.05, speed_hw=0.5)
        boxes = reach_horizon(obs, ctrl, n_steps, dt, GEOM)
        assert not any(b.degenerate for b in boxes)
        X = np.column_stack([
            rng.uniform(obs.px - 0.2, obs.px + 0.2, n_traj),
            rng.uniform(obs.py - 0.2, obs.py + 0.2, n_traj),
            rng.uniform(obs.v - 0.5, obs.v + 0.5, n_traj),
            rng.uniform(obs.theta - 0.05, obs.theta + 0.05, n_traj)])
        delta = rng.uniform(-0.05, 0.05, n_traj)
        for b in boxes:
            a = rng.uniform(*ctrl.accel, n_traj)
            delta = delta + rng.uniform(*ctrl.steer_rate, n_traj) * dt
            X = _batch_bicycle_step(X, a, delta, dt, GEOM.wheelbase)
            X[:, 2] = np.maximum(X[:, 2], 0.0)
            inside = ((b.px[0] <= X[:, 0]) & (X[:, 0] <= b.px[1])
                      & (b.py[0] <= X[:, 1]) & (X[:, 1] <= b.py[1])
                      & (b.v[0] <= X[:, 2]) & (X[:, 2] <= b.v[1])
                      & (b.theta[0] <= X[:, 3]) & (X[:, 3] <= b.theta[1]))
            violations += int(np.count_nonzero(~inside))
    assert violations == 0
    dt_run = time.perf_counter() - t0
    assert dt_run < 60.0
    report(f"criterion 2: 0 exits over {n_ic * n_traj} trajectories, "
           f"{dt_run:.1f}s < 60s")


# ---------------------------------------------------------------------------
# 3. overtake scenario

def test_criterion_3_overtake():
    """Overtake geometry: leader 20 m ahead at 8 m/s, reference 15 m/s.

    Assert: no collision, Overtake label, final speed within 0.5 m/s of 15.
    Budget: < 30 s.
    """
    t0 = time.perf_counter()
    log = run_scenario(overtake_scenario(), seed=0)
    dt = time.perf_counter() - t0
    assert not log.collided
    assert log.label.label == "Overtake"
    assert abs(log.ego[-1, 2] - 15.0) <= 0.5
    assert dt < 30.0
    report(f"criterion 3: Overtake, final v {log.ego[-1, 2]:.2f} m/s "
           f"(|dv| <= 0.5), min clearance {log.min_clearance.min():.2f} m, "
           f"{dt:.1f}s < 30s")


# ---------------------------------------------------------------------------
# 4. cut-in scenario

def test_criterion_4_cutin_yield():
    """Cut-in at 12 m/s, 3 s lateral quintic, ~5 m initial bumper gap.

    Assert: no collision; a deceleration phase (min ego speed strictly below
    the initial 15 m/s); then car-following with a steady-state gap that is
    positive and bounded (between 2 m and 30 m over the last 5 s).
    A 0.35 s cut-in is run as the failure-boundary probe; it is permitted
    (not required) to collide.
    """
    log = run_scenario(cutin_scenario(), seed=0)
    assert not log.collided
    assert log.ego[:, 2].min() < 15.0
    n_tail = int(5.0 / log.dt)
    gap = log.targets[0, -n_tail:, 0] - log.ego[-n_tail:, 0]
    assert np.all(gap > 2.0)
    assert np.all(gap < 30.0)
    fast = run_scenario(cutin_scenario(cutin_duration=0.35, duration_s=6.0),
                        seed=0)
    assert fast.label.label in ("Collision", "Transient", "LaneKeep",
                                "Overtake")
    report(f"criterion 4: yield (v_min {log.ego[:, 2].min():.2f} < 15) then "
           f"follow (last-5s gap {gap.min():.1f}..{gap.max():.1f} m); "
           f"0.35s probe -> {fast.label.label}")


# ---------------------------------------------------------------------------
# 5. prediction ablation

def test_criterion_5_prediction_ablation():
    """Sudden-acceleration scenario with r_safe = 0.

    Hybrid prediction (split 0.5 s) must avoid collision; long-term-only
    prediction (split 0) must collide. Budget: < 60 s.
    """
    t0 = time.perf_counter()
    hybrid = run_scenario(sudden_accel_scenario(split_s=0.5), seed=1)
    longonly = run_scenario(sudden_accel_scenario(split_s=0.0), seed=1)
    dt = time.perf_counter() - t0
    assert not hybrid.collided
    assert longonly.collided
    assert longonly.label.label == "Collision"
    assert dt < 60.0
    report(f"criterion 5: hybrid {hybrid.label.label} "
           f"(clearance {hybrid.min_clearance.min():.2f} m), long-term-only "
           f"Collision, {dt:.1f}s < 60s")


# ---------------------------------------------------------------------------
# 6. speed-sweep table

def _contiguous_boundary(rows):
    """Overtake/LaneKeep boundary if the sweep splits at a single threshold."""
    rows = sorted(rows, key=lambda r: r["speed_mps"])
    labels = [r["behavior_label"] for r in rows]
    try:
        first_lk = labels.index("LaneKeep")
    except ValueError:
        return None
    if (all(l == "Overtake" for l in labels[:first_lk])
            and all(l == "LaneKeep" for l in labels[first_lk:])):
        return rows[first_lk - 1]["speed_mps"], rows[first_lk]["speed_mps"]
    return None


def test_criterion_6_speed_sweep_table():
    """70-point leader-speed sweep, 8.0-14.9 m/s in 0.1 steps, both modes.

    Adaptive: Transient count exactly 0 and a single contiguous
    Overtake->LaneKeep threshold within [13.0, 14.0] m/s. Fixed (weights
    tuned for the 8 m/s overtake): Transient count > 0, concentrated at the
    high-speed end (all Transients above the median speed).
    Budget: < 15 min.
    """
    t0 = time.perf_counter()
    base = sweep_base_scenario()
    speeds = [round(8.0 + 0.1 * i, 1) for i in range(70)]
    rows_a = sweep_speeds(base, speeds, "adaptive", seed=0)
    rows_f = sweep_speeds(base, speeds, "fixed", seed=0)
    dt = time.perf_counter() - t0

    labels_a = [r["behavior_label"] for r in rows_a]
    assert labels_a.count("Transient") == 0
    assert labels_a.count("Collision") == 0
    boundary = _contiguous_boundary(rows_a)
    assert boundary is not None, f"no single threshold: {labels_a}"
    assert 13.0 <= boundary[1] <= 14.0

    trans_f = [r["speed_mps"] for r in rows_f
               if r["behavior_label"] == "Transient"]
    assert len(trans_f) > 0
    assert all(s > 11.45 for s in trans_f)       # concentrated at high speeds
    assert not any(r["behavior_label"] == "Collision" for r in rows_f)

    assert dt < 900.0
    agg = aggregate_sweep(rows_a + rows_f)
    report(f"criterion 6: adaptive Transient=0, boundary "
           f"{boundary[0]:.1f}/{boundary[1]:.1f} m/s in [13.0, 14.0]; fixed "
           f"Transient={len(trans_f)} all above 11.45 m/s; "
           f"adaptive split {agg['adaptive']['Overtake']['occurrences']}/"
           f"{agg['adaptive']['LaneKeep']['occurrences']}; {dt:.0f}s < 900s")


# ---------------------------------------------------------------------------
# 7. solver properties

def test_criterion_7_solver_properties():
    """(a) cost trace nonincreasing on planner ticks with obstacles;
    (b) LQ solve matches the batch normal-equations oracle to 1e-8;
    (c) RLS parameter error <= 1e-6 after 50 updates on synthetic data.
    """
    # (a) solve a bicycle problem with obstacles from several start states
    ref = ReferencePath.straight(-20.0, 200.0, -3.0, 15.0)
    model = CilqrCostModel(ref, CostWeights(w_ref=0.5, w_vel=0.5), LIMITS,
                           GEOM, road_bounds=(-6.0, 6.0))
    obs = [EllipseObstacle(25.0 + 0.8 * t, -3.0, 0.0, 3.2, 1.4, active_step=t)
           for t in range(41)]
    model.set_obstacles(obs)
    rng = np.random.default_rng(5)
    for k in range(5):
        x0 = np.array([k * 2.0, -3.0 + 0.1 * k, 14.0, 0.0])
        U0 = np.zeros((40, 2))
        U0[:, 1] = 1e-4 * rng.standard_normal(40)
        res = solve_bicycle(x0, U0, model, 0.1, GEOM,
                            SolverSettings(max_iters=30), LIMITS)
        assert all(b <= a + 1e-9 for a, b in zip(res.trace, res.trace[1:]))

    # (b) batch LQ oracle
    rngb = np.random.default_rng(3)
    A = np.eye(4) + 0.1 * rngb.standard_normal((4, 4))
    B = 0.1 * rngb.standard_normal((4, 2))
    n = 12
    Q = np.diag([1.0, 2.0, 0.5, 1.5])
    R = np.diag([0.3, 0.7])
    Qf = 5.0 * np.eye(4)
    x0 = np.array([1.0, -2.0, 0.5, 0.3])
    from test_ilqr import QuadraticCost, lq_oracle, make_linear_fns
    step_fn, lin_fn = make_linear_fns(A, B)
    res = solve(x0, np.zeros((n, 2)), QuadraticCost(Q, R, Qf), step_fn,
                lin_fn, SolverSettings(max_iters=50, cost_tolerance=1e-12))
    U_star = lq_oracle(A, B, Q, R, Qf, x0, n)
    lq_err = float(np.abs(res.plan.controls - U_star).max())
    assert lq_err <= 1e-8

    # (c) RLS convergence
    A_true = np.array([[0.0, 0.3, 0.0], [-0.3, 0.0, 0.2], [0.1, -0.2, 0.0]])
    Abar = np.eye(3) + A_true * 0.1
    x = np.array([1.0, -2.0, 0.5])
    hist = []
    for k in range(51):
        hist.append(TargetObservation(0.1 * k, x[0], x[1], x[2], 0.0))
        x = Abar @ x
    s = RLSState.fresh(lam=1.0, p0=1e6)
    for prev, curr in zip(hist[:-1], hist[1:]):
        s = rls_update(s, prev, curr)
    rls_err = float(np.abs(s.A - A_true).max())
    assert rls_err <= 1e-6
    report(f"criterion 7: traces nonincreasing (5 ticks), LQ err "
           f"{lq_err:.1e} <= 1e-8, RLS err {rls_err:.1e} <= 1e-6")


# ---------------------------------------------------------------------------
# 8. timing (soft, reported)

def test_criterion_8_timing_soft_budget():
    """Mean replan wall time, 40-step horizon with 40 obstacle ellipses.

    Soft budget 100 ms (reported, not gated); a warning is emitted beyond
    2x. The run itself must complete and stay collision-free.
    """
    log = run_scenario(overtake_scenario(opposing=False, duration_s=10.0),
                       seed=0)
    assert not log.collided
    mean = float(log.solve_ms.mean())
    std = float(log.solve_ms.std())
    if mean > 200.0:
        import warnings
        warnings.warn(f"replan time {mean:.1f} ms exceeds 2x the 100 ms "
                      "soft budget")
    status = "within" if mean <= 100.0 else "OVER"
    report(f"criterion 8: mean replan {mean:.1f} ms (std {std:.1f}) -- "
           f"{status} the 100 ms soft budget (not gated)")


# ---------------------------------------------------------------------------
# 9. determinism

def test_criterion_9_determinism(tmp_path):
    """Two CLI runs of the same manifest + seed give byte-identical CSVs.

    The solve_ms column (wall-clock measurement) is masked; every
    planner-produced byte must match.
    """
    scen = tmp_path / "scen.cfg"
    scen.write_text("""\
[ego]
x0_m = 0.0
y0_m = -3.0
v0_mps = 15.0
[sim]
dt_s = 0.1
duration_s = 3.0
[target.lead]
x0_m = 25.0
y0_m = -3.0
v0_mps = 8.0
script = constant
""")
    from test_cli import mask_timing
    outs = []
    for d in ("a", "b"):
        out = tmp_path / d
        rc = main(["--scenario", str(scen), "--out", str(out), "--seed", "9"])
        assert rc == 0
        outs.append(mask_timing(out / "trajectory.csv"))
    assert outs[0] == outs[1]
    report("criterion 9: trajectory CSVs byte-identical across reruns "
           "(wall-clock column masked)")
