"""Command-line front end: run scenarios and sweeps, extract metric tables, write presets.

Exit codes: 0 success, 1 usage error, 2 scenario or input error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .engine import SimReport, SimulationError, run
from .metrics import METRIC_NAMES, UnknownMetric, compute_metrics, select
from .presets import PRESETS
from .scenario import ScenarioError, ParseError, scenario_from_dict

EXIT_OK, EXIT_USAGE, EXIT_SCENARIO, EXIT_RUNTIME = 0, 1, 2, 3

# Sweep shorthand for parameters that live in several places of a scenario.
SWEEP_ALIASES = {"vehicle_speed_kmh": "vehicles.*.profile.speed_kmh"}

SWEEP_COLUMNS = ["value", "mean_t_warning", "mean_t_warning_gt", "mean_probability", "mean_abs_warning_error",
                 "energy_savings", "mean_error_raw", "mean_error_calibrated", "viewing_accuracy", "alerts"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class RunConfig:
    scenario: Path
    out: Path
    seed: int | None = None
    sweep_param: str | None = None
    sweep_values: list[float] = field(default_factory=list)
    metrics: list[str] = field(default_factory=lambda: ["all"])

    def __post_init__(self):
        if self.sweep_param is not None and not self.sweep_values:
            raise UsageError("sweep needs at least one value")


def parse_sweep(spec: str) -> tuple[str, list[float]]:
    if "=" not in spec:
        raise UsageError(f"sweep must look like param=v1,v2,...: {spec!r}")
    name, _, values = spec.partition("=")
    try:
        vals = [float(v) for v in values.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"sweep values must be numbers: {values!r}") from None
    if not name or not vals:
        raise UsageError(f"sweep must name a parameter and at least one value: {spec!r}")
    return name.strip(), vals


def _set_path(doc: dict, path: str, value) -> None:
    """Assign into a nested document; ``*`` fans out over a list."""
    parts = path.split(".")

    def walk(node, i):
        key = parts[i]
        if key == "*":
            if not isinstance(node, list) or not node:
                raise UsageError(f"sweep path {path!r}: '*' needs a non-empty list")
            for item in node:
                walk(item, i + 1)
            return
        if i == len(parts) - 1:
            node[key] = value
            return
        if isinstance(node, list):
            node = node[int(key)]
            walk(node, i + 1)
            return
        if key not in node:
            raise UsageError(f"sweep path {path!r}: no key {key!r}")
        walk(node[key], i + 1)

    walk(doc, 0)


def _load_doc(path: Path) -> dict:
    if not path.exists():
        raise ParseError(f"{path}: scenario file not found")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from None


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _run_one(doc: dict, base: Path, out: Path, metrics: list[str]):
    report = run(scenario_from_dict(doc, base))
    _write(out / "report.json", report.to_json())
    m = compute_metrics(report)
    for name, text in select(m, metrics).items():
        _write(out / f"{name}.csv", text)
    return m


def _mean(vals):
    vals = [v for v in vals if v is not None]
    return sum(vals) / len(vals) if vals else None


def cmd_run(cfg: RunConfig) -> int:
    doc = _load_doc(cfg.scenario)
    if cfg.seed is not None:
        doc["seed"] = cfg.seed
    base = cfg.scenario.parent
    select_check = [n for n in cfg.metrics if n != "all" and n not in METRIC_NAMES]
    if select_check:
        raise UnknownMetric(f"unknown metric(s) {select_check}; valid names: {', '.join(METRIC_NAMES)}, all")
    if cfg.sweep_param is None:
        _run_one(doc, base, cfg.out, cfg.metrics)
        return EXIT_OK

    path = SWEEP_ALIASES.get(cfg.sweep_param, cfg.sweep_param)
    rows = []
    for v in cfg.sweep_values:
        d = copy.deepcopy(doc)
        _set_path(d, path, int(v) if path == "seed" else v)
        m = _run_one(d, base, cfg.out / f"{cfg.sweep_param}={v:g}", cfg.metrics)
        w = m.warnings
        rows.append([v, _mean(x["t_warning"] for x in w), _mean(x["t_warning_gt"] for x in w),
                     _mean(x["probability"] for x in w), m.mean_abs_warning_error, m.energy_savings,
                     m.mean_error_raw, m.mean_error_calibrated, m.viewing_accuracy, len(w)])
    out = cfg.out / "sweep.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow([cfg.sweep_param] + SWEEP_COLUMNS[1:])
        for r in rows:
            wr.writerow(["" if x is None else repr(x) if isinstance(x, float) else x for x in r])
    return EXIT_OK


def cmd_metrics(report_path: Path, names: list[str], out: Path | None = None) -> int:
    if not report_path.exists():
        raise FileNotFoundError(f"{report_path}: report not found")
    report = SimReport.from_dict(json.loads(report_path.read_text(encoding="utf-8")))
    tables = select(compute_metrics(report), names)
    for name, text in tables.items():
        if out is not None:
            _write(out / f"{name}.csv", text)
        else:
            if len(tables) > 1:
                sys.stdout.write(f"# {name}\n")
            sys.stdout.write(text)
    return EXIT_OK


def cmd_preset(name: str, out: Path, seed: int | None = None) -> int:
    if name not in PRESETS:
        raise UsageError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    doc = PRESETS[name]() if seed is None else PRESETS[name](seed=seed)
    _write(out, json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pedsafe", description="Pedestrian crossing-safety simulator.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run a scenario (optionally as a parameter sweep)")
    r.add_argument("--scenario", required=True, type=Path)
    r.add_argument("--seed", type=int)
    r.add_argument("--out", required=True, type=Path)
    r.add_argument("--sweep", help="param=v1,v2,... (dotted scenario path or vehicle_speed_kmh)")
    r.add_argument("--metrics", default="all", help="comma-separated metric names, or all")

    m = sub.add_parser("metrics", help="print or write metric tables from a saved report")
    m.add_argument("--report", required=True, type=Path)
    m.add_argument("--metrics", default="all")
    m.add_argument("--out", type=Path)

    pr = sub.add_parser("preset", help="write a built-in scenario file")
    pr.add_argument("name")
    pr.add_argument("--out", required=True, type=Path)
    pr.add_argument("--seed", type=int)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            sweep = parse_sweep(args.sweep) if args.sweep else (None, [])
            cfg = RunConfig(args.scenario, args.out, args.seed, sweep[0], sweep[1],
                            [n.strip() for n in args.metrics.split(",") if n.strip()])
            return cmd_run(cfg)
        if args.command == "metrics":
            return cmd_metrics(args.report, [n.strip() for n in args.metrics.split(",") if n.strip()], args.out)
        return cmd_preset(args.name, args.out, args.seed)
    except (UsageError, UnknownMetric) as e:
        print(f"error: {e.args[0] if e.args else e}", file=sys.stderr)
        return EXIT_USAGE
    except (ScenarioError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_SCENARIO
    except (SimulationError, OSError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
