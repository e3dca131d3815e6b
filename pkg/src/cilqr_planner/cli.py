"""Command-line entry point: run scenarios, sweeps, ablations, and timing.

Scenario files are INI-style (configparser): sections with ``key = value``
pairs mirroring ScenarioConfig fields. See ``scenarios/*.cfg`` for the schema
in use. Outputs are CSV files (floats at 17 significant digits so identical
runs are byte-identical) plus optional SVG plots.
"""
from __future__ import annotations

import argparse
import configparser
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .constraints import AdaptiveWeightParams, CostWeights
from .dynamics import VehicleState
from .simulator import (ConstantSpeed, CutIn, LaneGeometry, ScenarioConfig,
                        SimLog, SuddenAccel, TargetSpec, aggregate_sweep,
                        run_scenario, sweep_speeds)


class ConfigError(Exception):
    """Scenario-file problem; message names the offending key."""


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# scenario file parsing

def _get(cp, section, key, cast, default=None):
    if not cp.has_option(section, key):
        if default is not None:
            return default
        raise ConfigError(f"missing required key `{section}.{key}`")
    raw = cp.get(section, key)
    try:
        return cast(raw)
    except ValueError:
        raise ConfigError(f"invalid value for `{section}.{key}`: {raw!r}")


def _parse_target(cp, section) -> TargetSpec:
    init = VehicleState(
        px=_get(cp, section, "x0_m", float),
        py=_get(cp, section, "y0_m", float),
        v=_get(cp, section, "v0_mps", float),
        theta=_get(cp, section, "theta0_rad", float, 0.0),
    )
    kind = _get(cp, section, "script", str, "constant")
    if kind == "constant":
        script = ConstantSpeed(v=init.v)
    elif kind == "cutin":
        script = CutIn(
            t_start=_get(cp, section, "cutin_start_s", float, 0.5),
            duration=_get(cp, section, "cutin_duration_s", float, 3.0),
            y_from=init.py,
            y_to=_get(cp, section, "cutin_y_to_m", float),
        )
    elif kind == "sudden_accel":
        script = SuddenAccel(
            trigger_gap=_get(cp, section, "trigger_gap_m", float, 5.0),
            accel=_get(cp, section, "accel_mps2", float, 6.0),
            v_cap=_get(cp, section, "v_cap_mps", float, 15.0),
        )
    else:
        raise ConfigError(f"invalid value for `{section}.script`: {kind!r}")
    return TargetSpec(init=init, script=script)


def load_scenario(path: str) -> tuple[ScenarioConfig, dict]:
    """Parse and validate a scenario file; returns (config, sweep options)."""
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ConfigError(f"cannot read scenario file: {path}")

    cfg = ScenarioConfig(targets=[])
    if cp.has_section("lane"):
        cfg.lane = LaneGeometry(
            y_min=_get(cp, "lane", "y_min_m", float, -6.0),
            y_max=_get(cp, "lane", "y_max_m", float, 6.0),
        )
    if cp.has_section("ego"):
        cfg.ego_init = VehicleState(
            px=_get(cp, "ego", "x0_m", float, 0.0),
            py=_get(cp, "ego", "y0_m", float, -3.0),
            v=_get(cp, "ego", "v0_mps", float, 15.0),
            theta=_get(cp, "ego", "theta0_rad", float, 0.0),
        )
    if cp.has_section("reference"):
        cfg.v_ref = _get(cp, "reference", "v_mps", float, 15.0)
        cfg.ref_y = _get(cp, "reference", "y_m", float, -3.0)
    if cp.has_section("sim"):
        cfg.dt = _get(cp, "sim", "dt_s", float, 0.1)
        cfg.duration_s = _get(cp, "sim", "duration_s", float, 25.0)
        cfg.horizon_steps = _get(cp, "sim", "horizon_steps", int, 40)
        cfg.r_safe = _get(cp, "sim", "r_safe_m", float, 0.0)
    if cp.has_section("prediction"):
        cfg.split_s = _get(cp, "prediction", "split_s", float, 0.5)
        cfg.rls_lam = _get(cp, "prediction", "rls_lambda", float, 0.95)
    if cp.has_section("weights"):
        mode = _get(cp, "weights", "mode", str, "adaptive")
        if mode not in ("fixed", "adaptive"):
            raise ConfigError(
                f"invalid value for `weights.mode`: {mode!r} "
                "(expected 'fixed' or 'adaptive')")
        cfg.weight_mode = mode
        cfg.fixed_weights = CostWeights(
            w_a=_get(cp, "weights", "w_a", float, cfg.fixed_weights.w_a),
            w_delta=_get(cp, "weights", "w_delta", float,
                         cfg.fixed_weights.w_delta),
            w_ref=_get(cp, "weights", "w_ref", float, cfg.fixed_weights.w_ref),
            w_vel=_get(cp, "weights", "w_vel", float, cfg.fixed_weights.w_vel),
        )
        cfg.adaptive_params = AdaptiveWeightParams(
            a1=_get(cp, "weights", "a1", float, cfg.adaptive_params.a1),
            a2=_get(cp, "weights", "a2", float, cfg.adaptive_params.a2),
            b1=_get(cp, "weights", "b1", float, cfg.adaptive_params.b1),
            b2=_get(cp, "weights", "b2", float, cfg.adaptive_params.b2),
        )
    for section in cp.sections():
        if section.startswith("target"):
            cfg.targets.append(_parse_target(cp, section))

    sweep = {}
    if cp.has_section("sweep"):
        sweep = {
            "speed_min": _get(cp, "sweep", "speed_min_mps", float, 8.0),
            "speed_max": _get(cp, "sweep", "speed_max_mps", float, 14.9),
            "speed_step": _get(cp, "sweep", "speed_step_mps", float, 0.1),
        }

    try:
        cfg.validate()
    except ValueError as e:
        key = {"dt": "sim.dt_s", "horizon_steps": "sim.horizon_steps",
               "duration_s": "sim.duration_s", "split_s": "prediction.split_s",
               "weight_mode": "weights.mode"}
        word = str(e).split()[0]
        raise ConfigError(f"invalid `{key.get(word, word)}`: {e}")
    return cfg, sweep


# ---------------------------------------------------------------------------
# CSV writers

def write_trajectory_csv(path: Path, log: SimLog):
    n_tgt = log.targets.shape[0]
    cols = ["tick", "t_s", "ego_px_m", "ego_py_m", "ego_v_mps",
            "ego_theta_rad", "a_mps2", "delta_rad"]
    for i in range(n_tgt):
        cols += [f"tgt{i}_px_m", f"tgt{i}_py_m", f"tgt{i}_v_mps"]
    cols += ["min_clearance_m", "solve_ms", "iters"]
    lines = [",".join(cols)]
    for k in range(len(log.t)):
        row = [str(k), _fmt(log.t[k]),
               _fmt(log.ego[k, 0]), _fmt(log.ego[k, 1]),
               _fmt(log.ego[k, 2]), _fmt(log.ego[k, 3]),
               _fmt(log.control[k, 0]), _fmt(log.control[k, 1])]
        for i in range(n_tgt):
            row += [_fmt(log.targets[i, k, 0]), _fmt(log.targets[i, k, 1]),
                    _fmt(log.targets[i, k, 2])]
        row += [_fmt(log.min_clearance[k]), _fmt(log.solve_ms[k]),
                str(int(log.iters[k]))]
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")


def write_metrics_csv(path: Path, log: SimLog):
    rows = [
        ("label", log.label.label),
        ("collided", _fmt(log.collided)),
        ("ticks", str(len(log.t))),
        ("min_clearance_m", _fmt(log.min_clearance.min()
                                 if len(log.min_clearance) else math.inf)),
        ("final_speed_mps", _fmt(log.ego[-1, 2])),
        ("max_lateral_dev_m", _fmt(log.label.max_lateral_dev)),
        ("lateral_crossings", str(log.label.crossings)),
        ("mean_solve_ms", _fmt(log.solve_ms.mean())),
        ("std_solve_ms", _fmt(log.solve_ms.std())),
        ("diverged_ticks", str(int(log.diverged.sum()))),
    ]
    path.write_text("metric,value\n"
                    + "\n".join(f"{k},{v}" for k, v in rows) + "\n")


def write_sweep_csv(path: Path, rows: list, agg: dict):
    lines = ["speed_mps,mode,behavior_label,max_lateral_dev_m,min_clearance_m"]
    for r in rows:
        lines.append(",".join([
            _fmt(r["speed_mps"]), r["mode"], r["behavior_label"],
            _fmt(r["max_lateral_dev_m"]), _fmt(r["min_clearance_m"])]))
    lines.append("")
    lines.append("mode,behavior_label,occurrences,percentage,speed_ranges")
    for mode, by_label in agg.items():
        for lbl, d in by_label.items():
            ranges = ";".join(f"{_fmt(a)}-{_fmt(b)}"
                              for a, b in d["speed_ranges"])
            lines.append(",".join([mode, lbl, str(d["occurrences"]),
                                   _fmt(d["percentage"]), ranges]))
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# plots (failures never affect exit status)

def plot_run(path: Path, log: SimLog, cfg: ScenarioConfig):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax0, ax1, ax2) = plt.subplots(
        3, 1, figsize=(10, 8), height_ratios=[2, 1, 1])
    for y in (cfg.lane.y_min, cfg.lane.y_max):
        ax0.axhline(y, color="k", lw=1.5)
    ax0.axhline(0.0, color="k", lw=0.8, ls="--")
    n = len(log.t)
    stride = max(n // 12, 1)
    for k in range(0, n, stride):
        age = k / max(n - 1, 1)
        ax0.plot(log.ego[k, 0], log.ego[k, 1], "o", color="tab:blue",
                 alpha=0.25 + 0.75 * age, ms=5)
        for i in range(log.targets.shape[0]):
            ax0.plot(log.targets[i, k, 0], log.targets[i, k, 1], "s",
                     color="tab:red", alpha=0.25 + 0.75 * age, ms=5)
    ax0.plot(log.ego[:, 0], log.ego[:, 1], color="tab:blue", lw=1,
             label="ego")
    for i in range(log.targets.shape[0]):
        ax0.plot(log.targets[i, :, 0], log.targets[i, :, 1], color="tab:red",
                 lw=1, label=f"target {i}" if i == 0 else None)
    ax0.set_xlabel("x (m)")
    ax0.set_ylabel("y (m)")
    ax0.legend(loc="upper left")
    ax1.plot(log.t, log.ego[:, 2], label="ego speed")
    ax1.axhline(cfg.v_ref, color="k", ls="--", lw=0.8)
    ax1.set_ylabel("v (m/s)")
    ax1.legend(loc="lower right")
    ax2.plot(log.t, log.control[:, 0], label="accel")
    ax2.plot(log.t, log.control[:, 1], label="steer")
    ax2.set_xlabel("t (s)")
    ax2.set_ylabel("control")
    ax2.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


# ---------------------------------------------------------------------------
# commands

def cmd_run(cfg: ScenarioConfig, out: Path, seed: int, plot: bool) -> int:
    log = run_scenario(cfg, seed=seed)
    write_trajectory_csv(out / "trajectory.csv", log)
    write_metrics_csv(out / "metrics.csv", log)
    if plot:
        try:
            plot_run(out / "plot.svg", log, cfg)
        except Exception as e:             # plotting is best-effort
            print(f"warning: plot failed: {e}", file=sys.stderr)
    print(f"label={log.label.label} ticks={len(log.t)} "
          f"min_clearance={log.min_clearance.min():.3f} m "
          f"final_v={log.ego[-1, 2]:.2f} m/s")
    return 2 if log.collided else 0


def cmd_sweep(cfg: ScenarioConfig, sweep_opts: dict, out: Path, seed: int,
              mode: str | None) -> int:
    if not cfg.targets:
        print("error: sweep requires at least one target", file=sys.stderr)
        return 1
    opts = {"speed_min": 8.0, "speed_max": 14.9, "speed_step": 0.1}
    opts.update(sweep_opts)
    n = int(round((opts["speed_max"] - opts["speed_min"])
                  / opts["speed_step"])) + 1
    if n < 1:
        print("error: empty speed list (`sweep.speed_min_mps` > "
              "`sweep.speed_max_mps`)", file=sys.stderr)
        return 1
    speeds = [round(opts["speed_min"] + i * opts["speed_step"], 10)
              for i in range(n)]
    modes = [mode] if mode else ["adaptive", "fixed"]
    rows = []
    for m in modes:
        rows.extend(sweep_speeds(cfg, speeds, m, seed=seed))
    agg = aggregate_sweep(rows)
    write_sweep_csv(out / "sweep_table.csv", rows, agg)
    for m, by_label in agg.items():
        print(f"mode={m}")
        for lbl, d in by_label.items():
            print(f"  {lbl:10s} occurrences={d['occurrences']:3d} "
                  f"pct={d['percentage']:6.2f} ranges={d['speed_ranges']}")
    return 0


def cmd_ablation(cfg: ScenarioConfig, out: Path, seed: int, plot: bool) -> int:
    """Run the scenario with hybrid and with long-term-only prediction."""
    results = {}
    for split in (cfg.split_s if cfg.split_s > 0 else 0.5, 0.0):
        sub = replace_split(cfg, split)
        log = run_scenario(sub, seed=seed)
        tag = f"split_{_fmt(split)}"
        d = out / tag
        d.mkdir(parents=True, exist_ok=True)
        write_trajectory_csv(d / "trajectory.csv", log)
        write_metrics_csv(d / "metrics.csv", log)
        if plot:
            try:
                plot_run(d / "plot.svg", log, sub)
            except Exception as e:
                print(f"warning: plot failed: {e}", file=sys.stderr)
        results[split] = log
        print(f"split_s={split:g}: label={log.label.label} "
              f"min_clearance={log.min_clearance.min():.3f} m")
    hybrid = max(results)
    return 2 if results[hybrid].collided else 0


def replace_split(cfg: ScenarioConfig, split: float) -> ScenarioConfig:
    import copy
    sub = copy.deepcopy(cfg)
    sub.split_s = split
    return sub


def cmd_timing(cfg: ScenarioConfig, out: Path, seed: int) -> int:
    log = run_scenario(cfg, seed=seed)
    lines = ["tick,solve_ms"]
    for k in range(len(log.t)):
        lines.append(f"{k},{_fmt(log.solve_ms[k])}")
    (out / "timing.csv").write_text("\n".join(lines) + "\n")
    mean = float(log.solve_ms.mean())
    std = float(log.solve_ms.std())
    print(f"replan wall time: mean {mean:.2f} ms, std {std:.2f} ms "
          f"over {len(log.t)} ticks")
    if mean > 100.0:
        print(f"warning: mean replan time {mean:.1f} ms exceeds the 100 ms "
              "soft budget", file=sys.stderr)
    return 2 if log.collided else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="cilqr-planner",
        description="Closed-loop CILQR planner: scenarios, sweeps, ablations.")
    p.add_argument("--scenario", required=True, help="scenario .cfg file")
    p.add_argument("--mode", choices=["single", "sweep", "ablation", "timing"],
                   default="single")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--plot", action="store_true", help="write SVG plots")
    p.add_argument("--split-s", type=float, default=None,
                   help="override prediction split (s)")
    p.add_argument("--weights", choices=["fixed", "adaptive"], default=None,
                   help="override weight mode (sweep: run only this mode)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg, sweep_opts = load_scenario(args.scenario)
        if args.split_s is not None:
            cfg.split_s = args.split_s
        if args.weights is not None:
            cfg.weight_mode = args.weights
        cfg.validate()
    except (ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.mode == "single":
        return cmd_run(cfg, out, args.seed, args.plot)
    if args.mode == "sweep":
        return cmd_sweep(cfg, sweep_opts, out, args.seed, args.weights)
    if args.mode == "ablation":
        return cmd_ablation(cfg, out, args.seed, args.plot)
    return cmd_timing(cfg, out, args.seed)


if __name__ == "__main__":
    sys.exit(main())
