"""Metrics derived from a simulation report, plus their flat CSV tables."""

from __future__ import annotations

import csv
import io
import statistics
from dataclasses import dataclass, field
from typing import Any

from .geo import GeoPoint, polyline_distance
from .powermgr import GpsMode, PowerModel, energy_consumed


class UnknownMetric(KeyError):
    pass


@dataclass
class Metrics:
    location_error_cdf: list[tuple[float, float]] = field(default_factory=list)
    location_error_cdf_raw: list[tuple[float, float]] = field(default_factory=list)
    mean_error_raw: float | None = None
    mean_error_calibrated: float | None = None
    energy_duty_cycled: float = 0.0
    energy_always_on: float = 0.0
    energy_savings: float = 0.0
    active_seconds: float = 0.0
    sleep_seconds: float = 0.0
    viewing_accuracy: float | None = None
    warnings: list[dict] = field(default_factory=list)
    mean_abs_warning_error: float | None = None
    warning_curve: list[dict] = field(default_factory=list)
    zone_entries: list[dict] = field(default_factory=list)
    zone_entry_active_fraction: float | None = None
    driver_alerts: int = 0

    def summary(self) -> dict[str, Any]:
        return {k: getattr(self, k) for k in (
            "mean_error_raw", "mean_error_calibrated", "energy_duty_cycled", "energy_always_on",
            "energy_savings", "active_seconds", "sleep_seconds", "viewing_accuracy",
            "mean_abs_warning_error", "zone_entry_active_fraction", "driver_alerts")}


def _cdf(values: list[float]) -> list[tuple[float, float]]:
    v = sorted(values)
    n = len(v)
    return [(x, (i + 1) / n) for i, x in enumerate(v)]


def _mean(values: list[float]) -> float | None:
    return statistics.fmean(values) if values else None


def compute_metrics(report) -> Metrics:
    """Accepts a SimReport or its dictionary form."""
    r = report if isinstance(report, dict) else report.to_dict()
    m = Metrics()
    tick = r["tick"]
    paths = {aid: [GeoPoint(lat, lon) for _, lat, lon in a["trajectory"]]
             for aid, a in r["actors"].items()}
    peds = sorted(aid for aid, a in r["actors"].items() if a["kind"] == "pedestrian")

    raw_err, cal_err = [], []
    modes: dict[str, list[GpsMode]] = {p: [] for p in peds}
    view_hits, view_total = 0, 0
    for rec in r["records"]:
        if rec["kind"] != "pedestrian":
            continue
        path = paths[rec["actor"]]
        if rec["fix"] is not None:
            raw_err.append(polyline_distance(GeoPoint(*rec["fix"]), path))
            # A rejected fix leaves the previous estimate in place; before any estimate, the raw fix stands.
            est = rec["estimate"] if rec["estimate"] is not None else rec["fix"]
            cal_err.append(polyline_distance(GeoPoint(*est), path))
        modes[rec["actor"]].append(GpsMode(rec["power"]))
        if rec["viewing"] is not None:
            view_total += 1
            view_hits += rec["viewing"] == rec["viewing_truth"]

    m.location_error_cdf = _cdf(cal_err)
    m.location_error_cdf_raw = _cdf(raw_err)
    m.mean_error_raw = _mean(raw_err)
    m.mean_error_calibrated = _mean(cal_err)

    pm = PowerModel(**r["power_model"])
    for p in peds:
        m.energy_duty_cycled += energy_consumed([(tick, mode) for mode in modes[p]], pm)
        m.energy_always_on += energy_consumed([(tick, GpsMode.ACTIVE) for _ in modes[p]], pm)
        m.active_seconds += tick * sum(mode is GpsMode.ACTIVE for mode in modes[p])
        m.sleep_seconds += tick * sum(mode is GpsMode.SLEEPING for mode in modes[p])
    if m.energy_always_on > 0:
        m.energy_savings = 1.0 - m.energy_duty_cycled / m.energy_always_on

    m.viewing_accuracy = view_hits / view_total if view_total else None

    for e in r["events"]:
        if e["event"] == "alert_pedestrian":
            v = r["actors"].get(e["vehicle"], {})
            cruise = v.get("cruise_speed")
            err = None if e["t_warning_gt"] is None else abs(e["t_warning"] - e["t_warning_gt"])
            m.warnings.append({"actor": e["actor"], "t": e["t"], "vehicle": e["vehicle"],
                               "t_warning": e["t_warning"], "t_warning_gt": e["t_warning_gt"],
                               "abs_error": err, "probability": e["probability"],
                               "speed_kmh": None if cruise is None else cruise * 3.6})
        elif e["event"] == "zone_entry":
            m.zone_entries.append({"actor": e["actor"], "t": e["t"], "gps_active": e["gps_active"],
                                   "wake_distance": e["wake_distance"]})
        elif e["event"] == "alert_driver":
            m.driver_alerts += 1
    m.mean_abs_warning_error = _mean([w["abs_error"] for w in m.warnings if w["abs_error"] is not None])
    if m.zone_entries:
        m.zone_entry_active_fraction = sum(z["gps_active"] for z in m.zone_entries) / len(m.zone_entries)

    by_speed: dict[float, list[dict]] = {}
    for w in m.warnings:
        if w["speed_kmh"] is not None:
            by_speed.setdefault(round(w["speed_kmh"], 6), []).append(w)
    m.warning_curve = [{"speed_kmh": s, "mean_t_warning": statistics.fmean(w["t_warning"] for w in ws),
                        "mean_probability": statistics.fmean(w["probability"] for w in ws), "n": len(ws)}
                       for s, ws in sorted(by_speed.items())]
    return m


def metric_tables(m: Metrics) -> dict[str, tuple[list[str], list[list]]]:
    warn_cols = ["actor", "t", "vehicle", "t_warning", "t_warning_gt", "abs_error", "probability", "speed_kmh"]
    curve_cols = ["speed_kmh", "mean_t_warning", "mean_probability", "n"]
    zone_cols = ["actor", "t", "gps_active", "wake_distance"]
    return {
        "location_error_cdf": (["error_m", "cumulative_fraction"], [list(r) for r in m.location_error_cdf]),
        "location_error_cdf_raw": (["error_m", "cumulative_fraction"],
                                   [list(r) for r in m.location_error_cdf_raw]),
        "summary": (["metric", "value"], [[k, v] for k, v in m.summary().items()]),
        "warnings": (warn_cols, [[w[c] for c in warn_cols] for w in m.warnings]),
        "warning_curve": (curve_cols, [[w[c] for c in curve_cols] for w in m.warning_curve]),
        "zone_entries": (zone_cols, [[z[c] for c in zone_cols] for z in m.zone_entries]),
    }


METRIC_NAMES = ("location_error_cdf", "location_error_cdf_raw", "summary", "warnings",
                "warning_curve", "zone_entries")


def to_csv(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if v is None else repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def select(m: Metrics, names: list[str]) -> dict[str, str]:
    """CSV text per selected metric; ``all`` picks every table."""
    tables = metric_tables(m)
    if "all" in names:
        names = list(METRIC_NAMES)
    bad = [n for n in names if n not in tables]
    if bad:
        raise UnknownMetric(f"unknown metric(s) {bad}; valid names: {', '.join(METRIC_NAMES)}, all")
    return {n: to_csv(*tables[n]) for n in names}
