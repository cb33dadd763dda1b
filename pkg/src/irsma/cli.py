"""Operational surface: scenario files, Monte-Carlo sweeps, result tables.

Scenario files are JSON; decibel fields are converted to linear values at
this boundary only.  Sweeps draw random disjoint target areas inside the
standard placement box per trial, run one command per (axis value, trial),
and emit CSV or a structured JSON document.  Identical (spec, seed) inputs
produce byte-identical output files.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import baselines
from .channel import build_channels
from .config import SolverConfig
from .costmin import run_costmin
from .feasibility import run_feasibility
from .pruning import run_pruning
from .scenario import (DeploymentSolution, Scenario, TargetArea, db_to_linear,
                       default_scenario, total_cost)

PLACEMENT_BOX = {"x": (50.0, 70.0), "y": (-40.0, 40.0)}
AREA_EXTENT = 5.0
MAX_PLACEMENT_RETRIES = 10_000

COMMANDS = ("feasibility", "costmin", "prune", "baseline:per-area-union",
            "baseline:all-irs", "baseline:fpa-irs", "budget", "budget-fpa")
SWEEP_AXES = ("c_MA", "A", "J", "gamma", "d", "budget")

PRESETS = {
    "step-size-feasibility": {"command": "feasibility", "axis": "d",
                              "values": [0.25, 1 / 3, 0.5, 2 / 3, 1.0], "trials": 20},
    "ma-unit-cost-joint": {"command": "costmin", "axis": "c_MA",
                           "values": [10, 20, 30, 40, 50], "trials": 20},
    "ma-unit-cost-pruned": {"command": "prune", "axis": "c_MA",
                            "values": [10, 20, 30, 40, 50], "trials": 20},
    "area-count-joint": {"command": "costmin", "axis": "J",
                         "values": [1, 2, 3, 4], "trials": 20},
    "snr-target-joint": {"command": "costmin", "axis": "gamma",
                         "values": [5, 10, 15, 20], "trials": 20},
    "aperture-joint": {"command": "costmin", "axis": "A",
                       "values": [0.5, 1.0, 2.0, 3.0, 4.0], "trials": 20},
    "budget-ma": {"command": "budget", "axis": "budget",
                  "values": [100, 200, 300, 450, 600, 840], "trials": 20},
    "budget-fpa": {"command": "budget-fpa", "axis": "budget",
                   "values": [100, 200, 300, 450, 600, 840], "trials": 20},
}


class ScenarioFormatError(ValueError):
    """A scenario file failed validation; the message names the field."""


@dataclass
class ExperimentSpec:
    scenario_path: str | None
    command: str
    sweep_axis: str | None = None
    sweep_values: list = field(default_factory=list)
    trials: int = 1
    seed: int = 0
    out: str | None = None
    fmt: str = "csv"
    budget: float | None = None
    kappa: float | None = None
    jobs: int = 1
    use_file_areas: bool = False
    include_timing: bool = False

    def __post_init__(self):
        if self.trials < 1:
            raise ScenarioFormatError("trials must be >= 1")
        if self.sweep_values:
            vals = [float(v) for v in self.sweep_values]
            if any(not math.isfinite(v) for v in vals):
                raise ScenarioFormatError("sweep values must be finite")
            self.sweep_values = sorted(vals)
        if self.command not in COMMANDS:
            raise ScenarioFormatError(f"unknown command {self.command!r}")
        if self.sweep_axis is not None and self.sweep_axis not in SWEEP_AXES:
            raise ScenarioFormatError(f"unknown sweep axis {self.sweep_axis!r}")


@dataclass
class ResultRow:
    axis_value: float
    trial_seed: int
    scheme: str
    cost: float
    worst_snr_db: float
    ma_count: int
    site_count: int
    element_count: int
    wall_time: float
    status: str


# ---------------------------------------------------------------------------
# scenario ingestion
# ---------------------------------------------------------------------------

def _check(cond, fieldname, msg):
    if not cond:
        raise ScenarioFormatError(f"{fieldname}: {msg}")


def load_scenario_config(path: str | None) -> dict:
    """Read and validate a scenario file into builder keyword arguments."""
    if path is None:
        return {}
    with open(path) as fh:
        text = fh.read().strip()
    doc = json.loads(text) if text else {}
    _check(isinstance(doc, dict), "<root>", "scenario file must hold a JSON object")

    kwargs = {}
    for key in ("wavelength", "aperture", "step", "min_spacing",
                "ma_unit", "element_unit", "fpa_ratio"):
        if key in doc:
            val = doc[key]
            _check(isinstance(val, (int, float)) and math.isfinite(val), key, "must be a finite number")
            _check(val > 0, key, "must be positive")
            kwargs[key] = float(val)
    for key in ("transmit_power_dbm", "noise_power_dbm", "snr_threshold_db"):
        if key in doc:
            val = doc[key]
            _check(isinstance(val, (int, float)) and math.isfinite(val), key, "must be a finite number")
            kwargs[key] = float(val)
    for key in ("panel_rows", "panel_cols"):
        if key in doc:
            _check(isinstance(doc[key], int) and doc[key] >= 1, key, "must be a positive integer")
            kwargs[key] = doc[key]

    if "sites" in doc:
        _check(isinstance(doc["sites"], list) and doc["sites"], "sites", "must be a non-empty list")
        positions, costs = [], []
        for i, site in enumerate(doc["sites"]):
            _check(isinstance(site, dict), f"sites[{i}]", "must be an object")
            pos = site.get("position")
            _check(isinstance(pos, list) and len(pos) == 3, f"sites[{i}].position",
                   "must be a 3-element list")
            positions.append([float(p) for p in pos])
            c = site.get("cost", 0.0)
            _check(isinstance(c, (int, float)) and c >= 0, f"sites[{i}].cost",
                   "must be a non-negative number")
            costs.append(float(c))
        kwargs["site_positions"] = tuple(map(tuple, positions))
        kwargs["site_costs"] = tuple(costs)

    if "areas" in doc:
        _check(isinstance(doc["areas"], list) and doc["areas"], "areas", "must be a non-empty list")
        areas = []
        default_thr = doc.get("snr_threshold_db", 10.0)
        for i, area in enumerate(doc["areas"]):
            _check(isinstance(area, dict), f"areas[{i}]", "must be an object")
            corner = area.get("corner")
            _check(isinstance(corner, list) and len(corner) == 2, f"areas[{i}].corner",
                   "must be a 2-element list")
            extent = float(area.get("extent", AREA_EXTENT))
            res = float(area.get("resolution", 1.0))
            _check(extent > 0, f"areas[{i}].extent", "must be positive")
            _check(res > 0, f"areas[{i}].resolution", "must be positive")
            thr_db = float(area.get("snr_threshold_db", default_thr))
            areas.append(TargetArea(index=i, corner=np.asarray(corner, dtype=float),
                                    extent=extent, resolution=res,
                                    snr_threshold=db_to_linear(thr_db)))
        kwargs["areas"] = areas
    return kwargs


def parse_scenario(path: str | None) -> Scenario:
    """Fully constructed scenario; unspecified fields take the standard defaults."""
    return default_scenario(**load_scenario_config(path))


# ---------------------------------------------------------------------------
# random area placement
# ---------------------------------------------------------------------------

def draw_areas(rng: np.random.Generator, count: int, snr_threshold: float,
               extent: float = AREA_EXTENT, resolution: float = 1.0) -> list:
    """Disjoint axis-aligned squares inside the placement box, by rejection."""
    xlo, xhi = PLACEMENT_BOX["x"]
    ylo, yhi = PLACEMENT_BOX["y"]
    corners = []
    attempts = 0
    while len(corners) < count:
        attempts += 1
        if attempts > MAX_PLACEMENT_RETRIES:
            raise RuntimeError(
                f"could not place {count} disjoint areas in {MAX_PLACEMENT_RETRIES} attempts")
        cx = rng.uniform(xlo, xhi - extent)
        cy = rng.uniform(ylo, yhi - extent)
        if all(abs(cx - ox) >= extent or abs(cy - oy) >= extent for ox, oy in corners):
            corners.append((cx, cy))
    return [TargetArea(index=j, corner=np.array(c), extent=extent,
                       resolution=resolution, snr_threshold=snr_threshold)
            for j, c in enumerate(corners)]


# ---------------------------------------------------------------------------
# command execution
# ---------------------------------------------------------------------------

def _config_cost_of(x, z, scenario):
    sol = DeploymentSolution(x=x, z=z, v=[])
    return total_cost(sol, scenario.cost, list(scenario.sites))


def _run_command(command: str, scenario: Scenario, config: SolverConfig,
                 budget: float | None, kappa: float | None, warm=None):
    """Run one command; returns (scheme, cost, worst dB, counts..., status, warm)."""
    if command == "feasibility":
        channels = build_channels(scenario)
        report = run_feasibility(scenario, config, channels=channels)
        cost = _config_cost_of(report.x, np.ones(len(scenario.sites)), scenario)
        status = "ok" if report.feasible else "infeasible"
        return ("feasibility", cost, float(report.worst_snr_db.min()),
                int(report.ma_counts.max()), len(scenario.sites),
                scenario.num_elements, status, None)
    if command == "costmin":
        res = baselines.joint_ma_irs(scenario, config)
    elif command == "prune":
        res = baselines.pruned_joint(scenario, config)
    elif command == "baseline:per-area-union":
        res = baselines.per_area_union(scenario, config)
    elif command == "baseline:all-irs":
        res = baselines.all_irs(scenario, config)
    elif command == "baseline:fpa-irs":
        res = baselines.fpa_irs(scenario, config, kappa=kappa)
    elif command in ("budget", "budget-fpa"):
        if budget is None:
            raise ScenarioFormatError("budget commands need --budget or a budget sweep axis")
        res = baselines.budget_snr_max(scenario, config, budget=budget,
                                       fixed_antennas=(command == "budget-fpa"),
                                       kappa=kappa, warm=warm)
        warm_out = (res.x, res.z, res.v) if res.feasible else warm
        return (res.scheme, res.cost, float(res.worst_snr_db.min()), res.ma_count,
                res.site_count, res.element_count,
                "ok" if res.feasible else "infeasible", warm_out)
    else:
        raise ScenarioFormatError(f"unknown command {command!r}")
    return (res.scheme, res.cost, float(res.worst_snr_db.min()), res.ma_count,
            res.site_count, res.element_count,
            "ok" if res.feasible else "infeasible", None)


def _trial_seed(seed: int, trial: int) -> int:
    return seed * 1_000_003 + trial


def _build_trial_scenario(base_kwargs: dict, spec: ExperimentSpec, axis_value,
                          trial: int) -> Scenario:
    kwargs = dict(base_kwargs)
    axis = spec.sweep_axis
    wavelength = kwargs.get("wavelength", 0.1)
    if axis == "c_MA":
        kwargs["ma_unit"] = axis_value
    elif axis == "A":
        kwargs["aperture"] = axis_value * wavelength
    elif axis == "d":
        kwargs["step"] = axis_value * wavelength
    elif axis == "gamma":
        kwargs["snr_threshold_db"] = axis_value
    if axis == "J":
        n_areas = int(axis_value)
    elif "areas" in kwargs:
        n_areas = len(kwargs["areas"])
    else:
        n_areas = 2
    if not spec.use_file_areas or "areas" not in kwargs:
        thr = db_to_linear(kwargs.get("snr_threshold_db", 10.0))
        rng = np.random.default_rng(_trial_seed(spec.seed, trial))
        kwargs["areas"] = draw_areas(rng, max(n_areas, 1), thr)
    return default_scenario(**kwargs)


def _run_cell(args):
    base_kwargs, spec_dict, axis_value, trial, warm = args
    spec = ExperimentSpec(**spec_dict)
    budget = axis_value if spec.sweep_axis == "budget" else spec.budget
    started = time.perf_counter()
    try:
        scenario = _build_trial_scenario(base_kwargs, spec, axis_value, trial)
        out = _run_command(spec.command, scenario, SolverConfig(),
                           budget, spec.kappa, warm=warm)
        scheme, cost, worst, ma, sites, elements, status, warm_out = out
        row = ResultRow(axis_value=float(axis_value) if axis_value is not None else float("nan"),
                        trial_seed=_trial_seed(spec.seed, trial), scheme=scheme,
                        cost=float(cost), worst_snr_db=worst, ma_count=ma,
                        site_count=sites, element_count=elements,
                        wall_time=time.perf_counter() - started, status=status)
        return row, warm_out
    except Exception as exc:  # recorded per row, never aborts the sweep
        row = ResultRow(axis_value=float(axis_value) if axis_value is not None else float("nan"),
                        trial_seed=_trial_seed(spec.seed, trial),
                        scheme=spec.command, cost=float("nan"),
                        worst_snr_db=float("nan"), ma_count=0, site_count=0,
                        element_count=0, wall_time=time.perf_counter() - started,
                        status=f"error: {exc}")
        return row, warm


def run_experiment(spec: ExperimentSpec) -> list:
    """All (axis value, trial) rows for the spec, order-stable by (axis, trial)."""
    base_kwargs = load_scenario_config(spec.scenario_path)
    axis_values = spec.sweep_values if spec.sweep_values else [float("nan")]
    spec_dict = asdict(spec)

    rows = []
    if spec.sweep_axis == "budget":
        # chain warm starts within a trial so larger budgets never lose ground
        def trial_rows(trial):
            warm = None
            out = []
            for value in axis_values:
                row, warm = _run_cell((base_kwargs, spec_dict, value, trial, warm))
                out.append(row)
            return out

        if spec.jobs > 1:
            with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
                for batch in pool.map(_trial_rows_entry,
                                      [(base_kwargs, spec_dict, axis_values, t)
                                       for t in range(spec.trials)]):
                    rows.extend(batch)
        else:
            for t in range(spec.trials):
                rows.extend(trial_rows(t))
    else:
        cells = [(base_kwargs, spec_dict, value, trial, None)
                 for value in axis_values for trial in range(spec.trials)]
        if spec.jobs > 1:
            with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
                for row, _ in pool.map(_run_cell, cells):
                    rows.append(row)
        else:
            for cell in cells:
                row, _ = _run_cell(cell)
                rows.append(row)
    rows.sort(key=lambda r: (r.axis_value if math.isfinite(r.axis_value) else -1,
                             r.trial_seed, r.scheme))
    return rows


def _trial_rows_entry(args):
    base_kwargs, spec_dict, axis_values, trial = args
    warm = None
    out = []
    for value in axis_values:
        row, warm = _run_cell((base_kwargs, spec_dict, value, trial, warm))
        out.append(row)
    return out


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

CSV_FIELDS = ("axis_value", "trial_seed", "scheme", "cost", "worst_snr_db",
              "ma_count", "site_count", "element_count", "wall_time", "status")


def _format_row(row: ResultRow, include_timing: bool) -> dict:
    doc = {
        "axis_value": f"{row.axis_value:.6g}" if math.isfinite(row.axis_value) else "",
        "trial_seed": row.trial_seed,
        "scheme": row.scheme,
        "cost": f"{row.cost:.2f}" if math.isfinite(row.cost) else "inf",
        "worst_snr_db": f"{row.worst_snr_db:.2f}" if math.isfinite(row.worst_snr_db) else "-inf",
        "ma_count": row.ma_count,
        "site_count": row.site_count,
        "element_count": row.element_count,
        "wall_time": f"{row.wall_time:.3f}" if include_timing else "",
        "status": row.status,
    }
    return doc


def emit(rows: list, path: str, fmt: str = "csv", metadata: dict | None = None,
         include_timing: bool = False) -> None:
    """Write rows as CSV or structured JSON (fixed numeric precision)."""
    if not rows:
        raise ValueError("no rows to emit")
    try:
        if fmt == "csv":
            with open(path, "w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
                writer.writeheader()
                for row in rows:
                    writer.writerow(_format_row(row, include_timing))
        elif fmt == "structured":
            doc = {"metadata": metadata or {},
                   "rows": [_format_row(r, include_timing) for r in rows]}
            with open(path, "w") as fh:
                json.dump(doc, fh, indent=1)
                fh.write("\n")
        else:
            raise ValueError(f"unknown format {fmt!r}")
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc


def parse_results(path: str) -> dict:
    """Round-trip loader for the structured format."""
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="irsma",
        description="Joint IRS-site / movable-antenna deployment planning")
    parser.add_argument("command", nargs="?", help=f"one of {', '.join(COMMANDS)}")
    parser.add_argument("--preset", choices=sorted(PRESETS),
                        help="named sweep recipe (overrides command/axis/values/trials)")
    parser.add_argument("--scenario", help="scenario JSON file")
    parser.add_argument("--sweep", help="axis=v1,v2,... over " + ", ".join(SWEEP_AXES))
    parser.add_argument("--trials", type=int, default=1)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", help="output file (default stdout CSV)")
    parser.add_argument("--format", choices=("csv", "structured"), default="csv")
    parser.add_argument("--budget", type=float)
    parser.add_argument("--kappa", type=float)
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--use-file-areas", action="store_true",
                        help="keep the scenario file's areas instead of random placement")
    parser.add_argument("--timing", action="store_true",
                        help="include wall-time measurements (breaks byte determinism)")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.preset:
            preset = PRESETS[args.preset]
            command = preset["command"]
            axis, values = preset["axis"], list(preset["values"])
            trials = args.trials if args.trials != 1 else preset["trials"]
        else:
            if not args.command:
                parser.error("a command or --preset is required")
            command = args.command
            axis, values = None, []
            if args.sweep:
                if "=" not in args.sweep:
                    raise ScenarioFormatError("--sweep expects axis=v1,v2,...")
                axis, vals = args.sweep.split("=", 1)
                values = [float(v) for v in vals.split(",") if v]
            trials = args.trials
        spec = ExperimentSpec(scenario_path=args.scenario, command=command,
                              sweep_axis=axis, sweep_values=values,
                              trials=trials, seed=args.seed, out=args.out,
                              fmt=args.format, budget=args.budget,
                              kappa=args.kappa, jobs=args.jobs,
                              use_file_areas=args.use_file_areas,
                              include_timing=args.timing)
    except (ScenarioFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    try:
        rows = run_experiment(spec)
    except (ScenarioFormatError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    metadata = {"command": spec.command, "axis": spec.sweep_axis,
                "values": spec.sweep_values, "trials": spec.trials,
                "seed": spec.seed}
    if spec.out:
        emit(rows, spec.out, spec.fmt, metadata, spec.include_timing)
    else:
        writer = csv.DictWriter(sys.stdout, fieldnames=CSV_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow(_format_row(row, spec.include_timing))
    failures = sum(1 for r in rows if r.status.startswith("error"))
    return 0 if failures == 0 else 2


if __name__ == "__main__":
    sys.exit(main())
