"""Command-line front end: ``distflow profile|nose|discrete-check|sweep``.

Configuration is flat ``key = value`` text with dotted keys
(``feeder.p = -1``, ``control.type = voltage_feedback``); ``[section]``
headers prefix the keys that follow them. ``#`` and ``;`` start comments.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import analysis
from .bvp_shooting import ShootingProblem, find_branches
from .cauchy_scan import _fold_indices, critical_length, nose_curve, scan_feeder, solutions_at_length
from .discrete import convergence_study
from .model import (ConstantQ, DistflowError, FeederParams, LowVoltageRamp, UnsupportedControlError,
                    VoltageFeedback, ZeroPowerFactor, rescaled_params)
from .ode_core import DEFAULT_TOL, DEFAULT_V_FLOOR

log = logging.getLogger("distflow")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NO_SOLUTION = 2
EXIT_INAPPLICABLE = 3

SWEEP_AXES = ("p", "q", "x_over_r", "q0", "delta")


class ConfigError(DistflowError):
    pass


class NoSolution(DistflowError):
    pass


# --------------------------------------------------------------------------- config


@dataclass(frozen=True)
class RunConfig:
    params: FeederParams
    L: float | None = None
    s_max: float | None = None
    L_sweep: tuple[float, float, int] | None = None
    tol: float = DEFAULT_TOL
    v_floor: float = DEFAULT_V_FLOOR
    v_lo: float = 0.05
    v_hi: float = 2.0
    n: int = 400
    N_list: tuple[int, ...] = ()
    samples: int = 201
    sweep_axis: str | None = None
    sweep_values: tuple[float, ...] = ()
    raw: dict = field(default_factory=dict, compare=False)

    def shooting(self, length: float) -> ShootingProblem:
        return ShootingProblem(self.params.with_length(length), self.v_lo, self.v_hi, self.n,
                               self.tol, self.v_floor, samples=self.samples)


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    section = ""
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if section and "." not in key:
            key = f"{section}.{key}"
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value
    return out


def _float(raw, key, default=None):
    if key not in raw:
        return default
    try:
        return float(raw[key])
    except ValueError:
        raise ConfigError(f"{key}: not a number: {raw[key]!r}") from None


def _floats(text, key):
    try:
        return [float(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"{key}: not a list of numbers: {text!r}") from None


def _sweep_values(text: str, key: str) -> tuple[float, ...]:
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"{key}: range must be start:stop:count")
        start, stop, count = (float(p) for p in parts)
        if count < 1 or count != int(count):
            raise ConfigError(f"{key}: empty range")
        return tuple(float(v) for v in np.linspace(start, stop, int(count)))
    values = tuple(_floats(text, key))
    if not values:
        raise ConfigError(f"{key}: empty range")
    return values


def build_params(raw: dict[str, str]) -> FeederParams:
    ctype = raw.get("control.type", "constant_q").strip().lower()
    if ctype == "constant_q":
        control = ConstantQ(_float(raw, "control.q", 0.0))
    elif ctype in ("zero_pf", "zero_power_factor"):
        control = ZeroPowerFactor()
    elif ctype == "voltage_feedback":
        control = VoltageFeedback(_float(raw, "control.q0", 0.5), _float(raw, "control.delta", 0.1),
                                  int(_float(raw, "control.sign", 1)))
    else:
        raise ConfigError(f"control.type: unknown scheme {ctype!r}")
    ramp = None
    if "regularization.v_cut" in raw or "regularization.v_full" in raw:
        ramp = LowVoltageRamp(_float(raw, "regularization.v_cut"), _float(raw, "regularization.v_full"))
    return FeederParams(
        r=_float(raw, "feeder.r", 1.0), x=_float(raw, "feeder.x", 1.0), p=_float(raw, "feeder.p", -1.0),
        length=_float(raw, "feeder.L", 0.0), control=control, p_regularization=ramp,
    )


def load_config(raw: dict[str, str]) -> RunConfig:
    try:
        params = build_params(raw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    L_sweep = None
    if "feeder.L_sweep" in raw:
        vals = _floats(raw["feeder.L_sweep"], "feeder.L_sweep")
        if len(vals) != 3 or vals[2] < 1 or not 0 <= vals[0] <= vals[1]:
            raise ConfigError("feeder.L_sweep must be 'start, stop, count' with 0 <= start <= stop")
        L_sweep = (vals[0], vals[1], int(vals[2]))
    given = [k for k in ("feeder.L", "feeder.s_max", "feeder.L_sweep") if k in raw]
    if len(given) > 1:
        raise ConfigError(f"specify exactly one of feeder.L / feeder.s_max / feeder.L_sweep, got {given}")
    axes = [k for k in raw if k.startswith("sweep.")]
    if len(axes) > 1:
        raise ConfigError(f"conflicting sweep axes: {sorted(axes)}")
    axis, values = None, ()
    if axes:
        axis = axes[0].split(".", 1)[1]
        if axis not in SWEEP_AXES:
            raise ConfigError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
        values = _sweep_values(raw[axes[0]], axes[0])
    cfg = RunConfig(
        params=params,
        L=_float(raw, "feeder.L"),
        s_max=_float(raw, "feeder.s_max"),
        L_sweep=L_sweep,
        tol=_float(raw, "solver.tol", DEFAULT_TOL),
        v_floor=_float(raw, "solver.v_floor", DEFAULT_V_FLOOR),
        v_lo=_float(raw, "solver.v_lo", 0.05),
        v_hi=_float(raw, "solver.v_hi", 2.0),
        n=int(_float(raw, "solver.n", 400)),
        N_list=tuple(int(v) for v in _floats(raw["solver.N"], "solver.N")) if "solver.N" in raw else (),
        samples=int(_float(raw, "output.samples", 201)),
        sweep_axis=axis,
        sweep_values=values,
        raw=dict(raw),
    )
    if not (cfg.tol > 0 and cfg.v_floor > 0 and 0 < cfg.v_lo < cfg.v_hi and cfg.n >= 2 and cfg.samples >= 2):
        raise ConfigError("solver settings out of range (need tol, v_floor > 0, 0 < v_lo < v_hi, n >= 2)")
    if cfg.s_max is not None and not cfg.s_max > 0:
        raise ConfigError("feeder.s_max must be positive")
    if cfg.L is not None and not cfg.L >= 0:
        raise ConfigError("feeder.L must be non-negative")
    return cfg


def read_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return load_config(parse_config_text(text))


# --------------------------------------------------------------------------- output


def fmt(value) -> str:
    """Shortest round-trip decimal for floats; stable across runs."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        return "nan"
    if value == 0:
        return "0.0"
    return repr(value)


def write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    lines += [",".join(fmt(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", newline="\n")


def _json_clean(obj):
    if isinstance(obj, dict):
        return {k: _json_clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return None if not math.isfinite(v) else (0.0 if v == 0 else v)
    return obj


def write_json(path: Path, obj) -> None:
    text = json.dumps(_json_clean(obj), indent=2, sort_keys=True, allow_nan=False)
    path.write_text(text + "\n", newline="\n")


def _branch_record(pr, params: FeederParams) -> dict:
    _, util = analysis.losses_and_utilization(pr, params)
    return {
        "branch": pr.branch_id, "v_end": pr.v_end, "P0": pr.P0, "Q0": pr.Q0,
        "loss": pr.loss, "utilization": util, "reversals": pr.reversals,
        "stable": pr.stable, "min_voltage": pr.min_voltage,
    }


# --------------------------------------------------------------------------- commands


def _rescalable(params: FeederParams) -> bool:
    try:
        rescaled_params(params)
    except (UnsupportedControlError, ValueError):
        return False
    return True


def _critical_hint(cfg: RunConfig) -> str:
    if not _rescalable(cfg.params):
        return f"no solution with end voltage in [{cfg.v_lo}, {cfg.v_hi}]"
    s_max = 20.0
    crit = critical_length(scan_feeder(cfg.params, s_max, cfg.tol, cfg.v_floor))
    bound = "" if crit.converged else " (lower bound; scan horizon reached)"
    return f"feeder length exceeds the critical length {crit.length!r}{bound}"


def cmd_profile(cfg: RunConfig, out: Path) -> int:
    if cfg.L is None:
        raise ConfigError("profile needs feeder.L")
    params = cfg.params.with_length(cfg.L)
    branches = find_branches(cfg.shooting(cfg.L))
    if not len(branches):
        raise NoSolution(_critical_hint(cfg))
    out.mkdir(parents=True, exist_ok=True)
    for pr in branches:
        write_csv(out / f"profile_{pr.branch_id}.csv", ["z", "P", "Q", "v"],
                  zip(pr.z, pr.P, pr.Q, pr.v))
    write_json(out / "branches.json", {
        "L": cfg.L, "method": "shooting",
        "branches": [_branch_record(pr, params) for pr in branches],
    })
    return EXIT_OK


def _nose_rescaled(cfg: RunConfig):
    table = scan_feeder(cfg.params, cfg.s_max, cfg.tol, cfg.v_floor)
    curve = nose_curve(table)
    crit = critical_length(table)
    stable = curve.stable
    rows = [(s, L, v, P0, Q0, seg, st) for s, L, v, P0, Q0, seg, st in
            zip(curve.s, curve.L, curve.v_end, curve.P0, curve.Q0, curve.segment, stable)]
    summary = {
        "method": "rescaled-scan",
        "s_max": cfg.s_max,
        "termination": table.reason.value,
        "critical_length": crit.length,
        "critical_s_star": crit.s_star,
        "critical_converged": crit.converged,
        "folds": [{"index": i, "s_star": s, "L": L}
                  for i, s, L in zip(curve.folds, curve.fold_s, curve.fold_L)],
        "segment_stable": list(curve.stability.stable),
        "segment_dv_dP0": list(curve.stability.dv_dP0),
    }
    # largest coexisting set over the scanned lengths
    best_L, best = _max_multiplicity(table)
    branches = solutions_at_length(table, best_L, samples=cfg.samples) if best_L else None
    return rows, summary, crit.length, branches


def _max_multiplicity(table):
    """Length with the most valid crossings of ``L(s*)``, probed between fold levels."""
    L = table.L
    if len(L) < 2 or L.max() <= 0:
        return None, 0
    levels = np.unique(np.concatenate([[0.0, L.max()], L[_fold_indices(L)]]))
    probes = 0.5 * (levels[:-1] + levels[1:])
    best_L, best = None, 0
    for Lt in probes:
        g = L - Lt
        cross = np.flatnonzero((g[:-1] < 0) != (g[1:] < 0))
        valid = int(np.count_nonzero(table.v_min[cross + 1] >= table.v_floor))
        if valid > best:
            best_L, best = float(Lt), valid
    return best_L, best


def _nose_shooting(cfg: RunConfig):
    start, stop, count = cfg.L_sweep
    rows, counts = [], []
    best_L, best_set = None, None
    for L in np.linspace(start, stop, count):
        L = float(L)
        branches = find_branches(cfg.shooting(L))
        counts.append(len(branches))
        if best_set is None or len(branches) > len(best_set):
            best_L, best_set = L, branches
        for pr in branches:
            rows.append((math.nan, L, pr.v_end, pr.P0, pr.Q0, pr.branch_id, bool(pr.stable)))
    Ls = [float(v) for v in np.linspace(start, stop, count)]
    solvable = [L for L, c in zip(Ls, counts) if c > 0]
    changes = [{"L_before": Ls[i], "L_after": Ls[i + 1], "count_before": counts[i],
                "count_after": counts[i + 1]}
               for i in range(len(Ls) - 1) if counts[i] != counts[i + 1]]
    summary = {
        "method": "shooting-L-sweep",
        "L_sweep": list(cfg.L_sweep),
        "critical_length": max(solvable) if solvable else math.nan,
        "critical_converged": bool(solvable) and solvable[-1] != Ls[-1],
        "branch_counts": [{"L": L, "count": c} for L, c in zip(Ls, counts)],
        "folds": changes,
    }
    crit = max(solvable) if solvable else math.nan
    return rows, summary, crit, best_set


NOSE_HEADER = ["s_star", "L", "v_end", "P0", "Q0", "branch_id", "stable"]


def _nose(cfg: RunConfig):
    if cfg.s_max is not None:
        if not _rescalable(cfg.params):
            raise UnsupportedControlError(
                "the rescaled scan needs constant p and q; set feeder.L_sweep = start, stop, count "
                "to trace the curve by shooting instead"
            )
        return _nose_rescaled(cfg)
    if cfg.L_sweep is not None:
        return _nose_shooting(cfg)
    raise ConfigError("nose needs feeder.s_max or feeder.L_sweep")


def cmd_nose(cfg: RunConfig, out: Path) -> int:
    rows, summary, _, _ = _nose(cfg)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "nose.csv", NOSE_HEADER, rows)
    write_json(out / "nose.json", summary)
    return EXIT_OK


def cmd_discrete_check(cfg: RunConfig, out: Path) -> int:
    if not cfg.N_list:
        raise ConfigError("discrete-check needs solver.N = N1, N2, ...")
    if cfg.L is None:
        raise ConfigError("discrete-check needs feeder.L")
    params = cfg.params.with_length(cfg.L)
    rows = convergence_study(params, cfg.N_list, v_floor=cfg.v_floor)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "convergence.csv", ["N", "supnorm_P", "supnorm_Q", "supnorm_v"],
              [(r.N, r.sup_P, r.sup_Q, r.sup_v) for r in rows])
    return EXIT_OK


def _apply_axis(params: FeederParams, axis: str, value: float) -> FeederParams:
    if axis == "p":
        return replace(params, p=value)
    if axis == "q":
        return replace(params, control=ConstantQ(value))
    if axis == "x_over_r":
        return replace(params, x=value * params.r)
    ctl = params.control
    if not isinstance(ctl, VoltageFeedback):
        raise ConfigError(f"sweep axis {axis!r} needs control.type = voltage_feedback")
    q0 = value if axis == "q0" else ctl.q0
    delta = value if axis == "delta" else ctl.delta
    if q0 == 0:
        return replace(params, control=ZeroPowerFactor())
    return replace(params, control=VoltageFeedback(q0, delta, ctl.sign))


def _sweep_point(args):
    cfg, axis, value, out = args
    point_cfg = replace(cfg, params=_apply_axis(cfg.params, axis, value))
    rows, summary, crit, best = _nose(point_cfg)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "nose.csv", NOSE_HEADER, rows)
    params = point_cfg.params.with_length(best.length if best is not None else 0.0)
    branches = [] if best is None else [_branch_record(pr, params) for pr in best]
    write_json(out / "branches.json", {
        axis: value, "L": None if best is None else best.length,
        "max_branches": len(branches), "branches": branches,
        "critical_length": crit,
    })
    return value, crit, len(branches)


def cmd_sweep(cfg: RunConfig, out: Path, jobs: int = 1) -> int:
    if cfg.sweep_axis is None:
        raise ConfigError("sweep needs one sweep.<axis> entry")
    if cfg.s_max is None and cfg.L_sweep is None:
        raise ConfigError("sweep needs feeder.s_max or feeder.L_sweep")
    width = len(str(len(cfg.sweep_values) - 1))
    tasks = [(cfg, cfg.sweep_axis, v, out / f"point_{i:0{width}d}")
             for i, v in enumerate(cfg.sweep_values)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_point, tasks))
    else:
        results = [_sweep_point(t) for t in tasks]
    write_csv(out / "summary.csv", [cfg.sweep_axis, "critical_length", "max_branches"], results)
    return EXIT_OK


COMMANDS = {
    "profile": cmd_profile,
    "nose": cmd_nose,
    "discrete-check": cmd_discrete_check,
    "sweep": cmd_sweep,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def main(argv=None) -> int:
    parser = _Parser(prog="distflow", description="Homogenized DistFlow feeder solver")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="path to key = value config file")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--jobs", type=int, default=1, help="parallel sweep points")
    args = parser.parse_args(argv)

    logging.basicConfig(level=os.environ.get("DISTFLOW_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        cfg = read_config(args.config)
        log.info("running %s with %s", args.command, cfg.params)
        if args.command == "sweep":
            return cmd_sweep(cfg, out, max(1, args.jobs))
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"distflow: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoSolution as exc:
        print(f"distflow: no solution: {exc}", file=sys.stderr)
        return EXIT_NO_SOLUTION
    except UnsupportedControlError as exc:
        print(f"distflow: method not applicable: {exc}", file=sys.stderr)
        return EXIT_INAPPLICABLE
    except ValueError as exc:
        print(f"distflow: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
