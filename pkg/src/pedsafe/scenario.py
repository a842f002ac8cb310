"""Scenario files: parsing, validation and the trajectory model.

A scenario is a JSON document. Trace channels (GPS trajectories, raw
accelerometer rows) can be given inline or as CSV paths relative to the
scenario file.
"""

from __future__ import annotations

import bisect
import csv
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from .context import ViewingModel
from .geo import AlertZone, GeoPoint, SidewalkGraph, SidewalkSegment, bearing, geodetic_distance, interpolate
from .mapmatch import HmmModel
from .p2p import DEFAULT_CHANNEL, FormationMode, LinkModel
from .powermgr import PowerModel
from .risk import (DEFAULT_AREA, DEFAULT_CD, DEFAULT_MASS, DEFAULT_MU_K, DEFAULT_RHO,
                   ReactionModel, RiskConfig)


class ScenarioError(Exception):
    pass


class ParseError(ScenarioError):
    pass


class ValidationError(ScenarioError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid scenario:\n  " + "\n  ".join(problems))


class Trajectory:
    """Piecewise-linear timed path. Before the first and after the last point the actor stands still."""

    def __init__(self, times: list[float], points: list[GeoPoint]):
        if len(times) != len(points) or not times:
            raise ValueError("trajectory needs matching, non-empty times and points")
        self.times = list(times)
        self.points = list(points)
        lengths = [geodetic_distance(a, b) for a, b in zip(points, points[1:])]
        self.cum = [0.0]
        for d in lengths:
            self.cum.append(self.cum[-1] + d)

    @property
    def start(self) -> float:
        return self.times[0]

    @property
    def end(self) -> float:
        return self.times[-1]

    def _piece(self, t: float) -> int:
        return min(max(bisect.bisect_right(self.times, t) - 1, 0), len(self.times) - 2)

    def position(self, t: float) -> GeoPoint:
        if len(self.points) == 1 or t <= self.times[0]:
            return self.points[0]
        if t >= self.times[-1]:
            return self.points[-1]
        i = self._piece(t)
        return interpolate(self.points[i], self.points[i + 1],
                           (t - self.times[i]) / (self.times[i + 1] - self.times[i]))

    def arclength(self, t: float) -> float:
        if len(self.points) == 1 or t <= self.times[0]:
            return 0.0
        if t >= self.times[-1]:
            return self.cum[-1]
        i = self._piece(t)
        f = (t - self.times[i]) / (self.times[i + 1] - self.times[i])
        return self.cum[i] + f * (self.cum[i + 1] - self.cum[i])

    def speed(self, t: float) -> float:
        if len(self.points) == 1 or t < self.times[0] or t >= self.times[-1]:
            return 0.0
        i = self._piece(t)
        return (self.cum[i + 1] - self.cum[i]) / (self.times[i + 1] - self.times[i])

    def heading(self, t: float) -> float:
        """Heading of the current (or last moving) piece, degrees in [0, 360)."""
        if len(self.points) == 1:
            return 0.0
        i = self._piece(t) if t < self.times[-1] else len(self.points) - 2
        while i > 0 and self.points[i] == self.points[i + 1]:
            i -= 1
        if self.points[i] == self.points[i + 1]:
            return 0.0
        return bearing(self.points[i], self.points[i + 1])

    def time_at_arclength(self, s: float) -> float:
        """First time the path has covered ``s`` metres."""
        if s <= 0:
            return self.times[0]
        if s > self.cum[-1] + 1e-9:
            return math.inf
        i = max(0, bisect.bisect_left(self.cum, s) - 1)
        while i < len(self.cum) - 2 and self.cum[i + 1] < s:
            i += 1
        span = self.cum[i + 1] - self.cum[i]
        f = 1.0 if span == 0 else (s - self.cum[i]) / span
        return self.times[i] + f * (self.times[i + 1] - self.times[i])

    def closest_arclength(self, p: GeoPoint, tol: float = 0.01) -> float:
        """Arc length of the first point where the path comes closest to ``p``."""
        best, best_s = math.inf, 0.0
        cands = []
        for i, (a, b) in enumerate(zip(self.points, self.points[1:])):
            if a == b:
                d, f = geodetic_distance(p, a), 0.0
            else:
                seg = SidewalkSegment("_", a, b)
                f = seg.locate(p)
                d = geodetic_distance(p, seg.point_at(f))
            cands.append((d, self.cum[i] + f * (self.cum[i + 1] - self.cum[i])))
            best = min(best, d)
        if not cands:
            return 0.0
        for d, s in cands:
            if d <= best + tol:
                best_s = s
                break
        return best_s

    def arrival_time(self, p: GeoPoint) -> float:
        return self.time_at_arclength(self.closest_arclength(p))


@dataclass
class Noise:
    gps_sigma: float = 1.0
    accel_noise: float = 0.05
    gait_amplitude: float = 1.0
    gait_freq: float = 2.0


@dataclass
class Comms:
    enabled: bool = True
    formation_mode: FormationMode = FormationMode.AUTONOMOUS
    req_interval: float = 1.0
    channel: str = DEFAULT_CHANNEL
    link: LinkModel = field(default_factory=LinkModel)


@dataclass
class RiskSettings:
    config: RiskConfig = field(default_factory=RiskConfig)
    reaction: ReactionModel = field(default_factory=ReactionModel)
    realert_interval: float = 2.0
    t_delay_default: float = 0.04
    stale_after: float = 3.0


@dataclass
class PowerSettings:
    model: PowerModel = field(default_factory=PowerModel)
    duty_cycling: bool = True
    margin_sigmas: float = 3.0


@dataclass
class HmmSettings:
    model: HmmModel = field(default_factory=HmmModel)
    estimate_beta: bool = True
    adapt_sigma: bool = True


@dataclass
class ContextSettings:
    model: ViewingModel = field(default_factory=ViewingModel)
    training_windows: int = 50
    walk_min: float = 0.3
    run_min: float = 2.5


@dataclass
class PedestrianSpec:
    id: str
    trajectory: Trajectory
    accel: np.ndarray | None = None
    viewing: list[tuple[float, float]] = field(default_factory=list)
    screen_on: list[tuple[float, float]] | bool = True
    safety_level: int | None = None
    ignore_alerts: int = 0
    is_driver: bool = False

    def viewing_at(self, t: float) -> bool:
        return any(a <= t < b for a, b in self.viewing)

    def screen_at(self, t: float) -> bool:
        if isinstance(self.screen_on, bool):
            return self.screen_on
        return any(a <= t < b for a, b in self.screen_on)


@dataclass
class VehicleSpec:
    id: str
    trajectory: Trajectory
    crossing: GeoPoint
    mass: float = DEFAULT_MASS
    area: float = DEFAULT_AREA
    drag: float = DEFAULT_CD
    mu_k: float = DEFAULT_MU_K
    f0: float = 0.0
    rho: float = DEFAULT_RHO
    cruise_speed: float | None = None


@dataclass
class Scenario:
    name: str
    map: SidewalkGraph
    pedestrians: list[PedestrianSpec]
    vehicles: list[VehicleSpec] = field(default_factory=list)
    noise: Noise = field(default_factory=Noise)
    comms: Comms = field(default_factory=Comms)
    risk: RiskSettings = field(default_factory=RiskSettings)
    power: PowerSettings = field(default_factory=PowerSettings)
    hmm: HmmSettings = field(default_factory=HmmSettings)
    context: ContextSettings = field(default_factory=ContextSettings)
    tick: float = 0.1
    duration: float = 60.0
    seed: int = 0
    accel_rate: float = 50.0


# ---------------------------------------------------------------- loading

def _point(v: Any, where: str) -> GeoPoint:
    if not (isinstance(v, (list, tuple)) and len(v) == 2):
        raise ValidationError([f"{where}: expected [lat, lon], got {v!r}"])
    try:
        return GeoPoint(float(v[0]), float(v[1]))
    except (TypeError, ValueError) as e:
        raise ValidationError([f"{where}: {e}"]) from None


def _read_csv(path: Path, columns: int, where: str) -> list[list[float]]:
    if not path.exists():
        raise ParseError(f"{where}: CSV file not found: {path}")
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                vals = [float(x) for x in row[:columns]]
            except ValueError:
                if lineno == 1:
                    continue  # header
                raise ParseError(f"{path}:{lineno}: non-numeric value in {row!r}") from None
            if len(vals) != columns:
                raise ParseError(f"{path}:{lineno}: expected {columns} columns, got {len(row)}")
            rows.append(vals)
    return rows


def _timed_points(raw: Any, base: Path, where: str, problems: list[str]) -> Trajectory | None:
    if isinstance(raw, dict) and "csv" in raw:
        rows = _read_csv(base / raw["csv"], 3, where)
    elif isinstance(raw, list):
        rows = raw
    else:
        problems.append(f"{where}: trajectory must be a list of [t, lat, lon] or {{'csv': path}}")
        return None
    if not rows:
        problems.append(f"{where}: trajectory is empty")
        return None
    times, pts = [], []
    for i, r in enumerate(rows):
        if not (isinstance(r, (list, tuple)) and len(r) == 3):
            problems.append(f"{where}[{i}]: expected [t, lat, lon]")
            return None
        try:
            pts.append(GeoPoint(float(r[1]), float(r[2])))
        except ValueError as e:
            problems.append(f"{where}[{i}]: {e}")
            return None
        times.append(float(r[0]))
    if any(b <= a for a, b in zip(times, times[1:])):
        problems.append(f"{where}: trajectory timestamps are not strictly increasing")
        return None
    return Trajectory(times, pts)


def vehicle_profile(path: list[GeoPoint], speed: float, accel_distance: float = 20.0,
                    start_time: float | None = None, cruise_at: float | None = None,
                    step: float = 0.1) -> Trajectory:
    """Uniform acceleration from rest over ``accel_distance``, then constant speed.

    Give either the departure time or the time the cruise phase begins.
    """
    if not speed > 0:
        raise ValueError("profile speed must be positive")
    t_acc = 2 * accel_distance / speed
    if start_time is None:
        start_time = (cruise_at if cruise_at is not None else t_acc) - t_acc
    probe = Trajectory(list(range(len(path))), path)
    total = probe.cum[-1]
    if accel_distance > total:
        raise ValueError("acceleration distance exceeds the path length")

    def at(s: float) -> GeoPoint:
        return probe.position(probe.time_at_arclength(s))

    times, pts = [start_time], [path[0]]
    a = speed / t_acc
    n = max(1, int(math.ceil(t_acc / step)))
    for k in range(1, n + 1):
        tau = t_acc * k / n
        times.append(start_time + tau)
        pts.append(at(0.5 * a * tau * tau))
    s_done = accel_distance
    # Cruise through every remaining path vertex.
    for i, c in enumerate(probe.cum):
        if c > s_done + 1e-9:
            times.append(start_time + t_acc + (c - accel_distance) / speed)
            pts.append(path[i])
    return Trajectory(times, pts)


def _dataclass_from(cls, raw: dict | None, where: str, problems: list[str], **convert):
    raw = dict(raw or {})
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        problems.append(f"{where}: unknown keys {unknown}")
        raw = {k: v for k, v in raw.items() if k in names}
    for k, fn in convert.items():
        if k in raw:
            raw[k] = fn(raw[k])
    try:
        return cls(**raw)
    except (TypeError, ValueError) as e:
        problems.append(f"{where}: {e}")
        return cls()


def scenario_from_dict(doc: dict, base: Path | str = ".") -> Scenario:
    """Build and validate a scenario; raises ValidationError listing every problem found."""
    base = Path(base)
    problems: list[str] = []
    if not isinstance(doc, dict):
        raise ValidationError(["top level must be an object"])

    # map
    m = doc.get("map") or {}
    segments = []
    for i, s in enumerate(m.get("segments", [])):
        try:
            segments.append(SidewalkSegment(str(s["id"]), _point(s["a"], f"map.segments[{i}].a"),
                                            _point(s["b"], f"map.segments[{i}].b"), float(s.get("width", 2.0))))
        except KeyError as e:
            problems.append(f"map.segments[{i}]: missing {e}")
        except ValueError as e:
            problems.append(f"map.segments[{i}]: {e}")
    if not segments:
        problems.append("map.segments: at least one segment is required")
    crossings = [_point(c, f"map.crossings[{i}]") for i, c in enumerate(m.get("crossings", []))]
    zones = []
    for i, z in enumerate(m.get("zones", [])):
        try:
            zones.append(AlertZone(_point(z["crossing"], f"map.zones[{i}].crossing"), float(z["radius"])))
        except (KeyError, ValueError) as e:
            problems.append(f"map.zones[{i}]: {e}")
    if "zone_radius" in m:
        try:
            zones.extend(AlertZone(c, float(m["zone_radius"])) for c in crossings)
        except ValueError as e:
            problems.append(f"map.zone_radius: {e}")
    graph = None
    if segments:
        try:
            graph = SidewalkGraph(segments, crossings, zones)
        except ValueError as e:
            problems.append(f"map: {e}")

    tick = doc.get("tick", 0.1)
    duration = doc.get("duration", 60.0)
    if not (isinstance(tick, (int, float)) and tick > 0):
        problems.append(f"tick must be positive, got {tick!r}")
    if not (isinstance(duration, (int, float)) and duration > 0):
        problems.append(f"duration must be positive, got {duration!r}")

    peds = []
    for i, p in enumerate(doc.get("pedestrians", [])):
        where = f"pedestrians[{i}]"
        traj = _timed_points(p.get("trajectory"), base, f"{where}.trajectory", problems)
        accel = None
        if p.get("accel"):
            rows = _read_csv(base / p["accel"]["csv"], 4, f"{where}.accel") if "csv" in p["accel"] \
                else p["accel"].get("rows", [])
            accel = np.asarray(rows, dtype=float).reshape(-1, 4)
            if np.any(np.diff(accel[:, 0]) <= 0):
                problems.append(f"{where}.accel: timestamps are not strictly increasing")
        level = p.get("safety_level")
        if level is not None and level not in (1, 2, 3):
            problems.append(f"{where}.safety_level must be 1, 2 or 3")
        screen = p.get("screen_on", True)
        if not isinstance(screen, bool):
            screen = [tuple(x) for x in screen]
        if traj is not None:
            peds.append(PedestrianSpec(
                id=str(p.get("id", f"ped{i}")), trajectory=traj, accel=accel,
                viewing=[tuple(x) for x in p.get("viewing", [])], screen_on=screen,
                safety_level=level, ignore_alerts=int(p.get("ignore_alerts", 0)),
                is_driver=bool(p.get("is_driver", False))))

    vehicles = []
    for i, v in enumerate(doc.get("vehicles", [])):
        where = f"vehicles[{i}]"
        traj, cruise = None, None
        if "profile" in v:
            prof = v["profile"]
            try:
                cruise = float(prof["speed_kmh"]) / 3.6
                traj = vehicle_profile([_point(q, f"{where}.profile.path") for q in prof["path"]], cruise,
                                       float(prof.get("accel_distance", 20.0)), prof.get("start_time"),
                                       prof.get("cruise_at"))
            except (KeyError, ValueError) as e:
                problems.append(f"{where}.profile: {e}")
        else:
            traj = _timed_points(v.get("trajectory"), base, f"{where}.trajectory", problems)
        if "crossing" not in v:
            problems.append(f"{where}: missing crossing")
            continue
        consts = {k: float(v[k]) for k in ("mass", "area", "drag", "mu_k", "f0", "rho") if k in v}
        bad = [k for k, x in consts.items() if x < 0 or (k in ("mass", "area") and x == 0)]
        if bad:
            problems.append(f"{where}: invalid vehicle constants {bad}")
        if traj is not None:
            vehicles.append(VehicleSpec(str(v.get("id", f"veh{i}")), traj,
                                        _point(v["crossing"], f"{where}.crossing"),
                                        cruise_speed=cruise, **consts))

    ids = [p.id for p in peds] + [v.id for v in vehicles]
    if len(set(ids)) != len(ids):
        problems.append("actor ids must be unique")

    noise = _dataclass_from(Noise, doc.get("noise"), "noise", problems)
    if noise.gps_sigma < 0:
        problems.append("noise.gps_sigma must be non-negative")

    c = dict(doc.get("comms") or {})
    link = _dataclass_from(LinkModel, c.pop("link", None), "comms.link", problems,
                           negotiated_range=tuple)
    comms = _dataclass_from(Comms, c, "comms", problems, formation_mode=FormationMode)
    comms.link = link

    r = dict(doc.get("risk") or {})
    reaction = ReactionModel(float(r.pop("mu", 1.14)), float(r.pop("sigma", 0.32))) \
        if r.get("sigma", 0.32) > 0 else None
    if reaction is None:
        problems.append("risk.sigma must be positive")
        reaction = ReactionModel()
    extra = {k: r.pop(k) for k in ("realert_interval", "t_delay_default", "stale_after") if k in r}
    risk = RiskSettings(_dataclass_from(RiskConfig, r, "risk", problems), reaction, **extra)

    pw = dict(doc.get("power") or {})
    pextra = {k: pw.pop(k) for k in ("duty_cycling", "margin_sigmas") if k in pw}
    power = PowerSettings(_dataclass_from(PowerModel, pw, "power", problems), **pextra)

    h = dict(doc.get("hmm") or {})
    hextra = {k: h.pop(k) for k in ("estimate_beta", "adapt_sigma") if k in h}
    hmm_model = _dataclass_from(HmmModel, h, "hmm", problems)
    hmm = HmmSettings(hmm_model, **hextra)

    cx = dict(doc.get("context") or {})
    cextra = {k: cx.pop(k) for k in ("training_windows", "walk_min", "run_min") if k in cx}
    context = ContextSettings(_dataclass_from(ViewingModel, cx, "context", problems), **cextra)

    seed = doc.get("seed", 0)
    if not isinstance(seed, int):
        problems.append("seed must be an integer")
    if problems:
        raise ValidationError(problems)
    return Scenario(name=str(doc.get("name", "scenario")), map=graph, pedestrians=peds, vehicles=vehicles,
                    noise=noise, comms=comms, risk=risk, power=power, hmm=hmm, context=context,
                    tick=float(tick), duration=float(duration), seed=seed,
                    accel_rate=float(doc.get("accel_rate", 50.0)))


def load_scenario(path: str | Path, seed: int | None = None) -> Scenario:
    path = Path(path)
    if not path.exists():
        raise ParseError(f"{path}: scenario file not found")
    text = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from None
    if seed is not None:
        doc["seed"] = seed
    return scenario_from_dict(doc, path.parent)
