"""Deterministic discrete-time simulation of pedestrians and scripted vehicles.

Every pedestrian tick runs the full pipeline in a fixed order: location fix,
map matching, GPS power step, zone check, viewing detection, device-to-device
exchange and the risk decision. Vehicles follow their scripted trajectories
and answer requests with their current kinematics.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from .context import GRAVITY, Motion, ViewingDetector, AccelSample, classify_motion, train_threshold, training_corpus
from .geo import GeoPoint, bearing, geodetic_distance, in_alert_zone, offset
from .mapmatch import CalibratedFix, MapMatcher
from .p2p import (AckMsg, DriverAlert, Envelope, NoGroupFound, Network, RepMsg, ReqMsg, Role,
                  measure_t_delay)
from .powermgr import GpsMode, GpsPowerState, angular_difference, step_power_state
from .risk import (Action, AlertDecision, NO_ALERT, PedestrianRiskState, VehicleKinematics, decide,
                   decide_standalone)
from .scenario import PedestrianSpec, Scenario, VehicleSpec

GPS_INTERVAL = 1.0  # s


class SimulationError(RuntimeError):
    def __init__(self, t: float, actor: str, cause: Exception):
        self.t, self.actor, self.cause = t, actor, cause
        super().__init__(f"t={t:.3f}s actor={actor}: {type(cause).__name__}: {cause}")


def _pt(p: GeoPoint | None) -> list[float] | None:
    return None if p is None else p.as_list()


class _SyntheticAccel:
    """Per-pedestrian raw accelerometer stream following the scripted viewing schedule."""

    def __init__(self, spec: PedestrianSpec, rng: np.random.Generator, s: Scenario):
        self.spec, self.rng = spec, rng
        self.rate = s.accel_rate
        self.noise = s.noise
        self.walk_min = s.context.walk_min
        self.phase = float(rng.uniform(0, 2 * np.pi))
        tilt = rng.normal(0.0, 0.05, size=2)
        d = np.array([tilt[0], tilt[1], 1.0])
        self.direction = d / np.linalg.norm(d)
        self.next_k = 0

    def samples(self, until: float) -> list[AccelSample]:
        out = []
        n = self.noise
        while self.next_k / self.rate <= until + 1e-9:
            ts = self.next_k / self.rate
            self.next_k += 1
            mag = GRAVITY + n.accel_noise * self.rng.standard_normal()
            traj = self.spec.trajectory
            if not self.spec.viewing_at(ts) and traj.speed(ts) >= self.walk_min:
                mag += n.gait_amplitude * math.sin(2 * math.pi * n.gait_freq * ts + self.phase)
            out.append(AccelSample(ts, *(mag * self.direction)))
        return out


class _RecordedAccel:
    def __init__(self, rows: np.ndarray):
        self.rows = rows
        self.i = 0

    def samples(self, until: float) -> list[AccelSample]:
        out = []
        while self.i < len(self.rows) and self.rows[self.i, 0] <= until + 1e-9:
            out.append(AccelSample(*map(float, self.rows[self.i])))
            self.i += 1
        return out


@dataclass
class _Ped:
    spec: PedestrianSpec
    matcher: MapMatcher
    detector: ViewingDetector
    accel: Any
    gps_rng: np.random.Generator
    power: GpsPowerState = field(default_factory=GpsPowerState)
    last_fix: float | None = None
    estimate: GeoPoint | None = None
    in_zone: bool = False
    true_in_zone: bool = False
    role: str | None = None          # "owner" / "member" / None
    overhearing: bool = False
    next_req: float = 0.0
    pending: dict[int, float] = field(default_factory=dict)
    rtts: list[float] = field(default_factory=list)
    reps: dict[str, tuple[RepMsg, int]] = field(default_factory=dict)
    last_alert: float | None = None
    ignored: int = 0
    complied: bool = False
    driver_alerted: bool = False
    last_wake_distance: float | None = None
    known: set[str] = field(default_factory=set)


@dataclass
class _Veh:
    spec: VehicleSpec
    s_cross: float
    arrival: float


@dataclass
class SimReport:
    scenario: str
    seed: int
    tick: float
    duration: float
    actors: dict[str, dict]
    zones: list[dict]
    crossings: list[list[float]]
    power_model: dict
    records: list[dict]
    events: list[dict]
    messages: list[dict]
    gamma: float

    def to_dict(self) -> dict:
        return {"scenario": self.scenario, "seed": self.seed, "tick": self.tick, "duration": self.duration,
                "actors": self.actors, "zones": self.zones, "crossings": self.crossings,
                "power_model": self.power_model, "gamma": self.gamma,
                "records": self.records, "events": self.events, "messages": self.messages}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), allow_nan=False)

    @classmethod
    def from_dict(cls, d: dict) -> "SimReport":
        return cls(**{k: d[k] for k in ("scenario", "seed", "tick", "duration", "actors", "zones",
                                        "crossings", "power_model", "records", "events", "messages",
                                        "gamma")})


def _child(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *key]))


def train_gamma(s: Scenario) -> float:
    """Viewing threshold from a synthetic training corpus under the scenario's noise settings."""
    x, y = training_corpus(_child(s.seed, 0), s.context.training_windows, s.context.model.window_span,
                           s.context.model.filter_alpha, sample_rate=s.accel_rate,
                           noise=s.noise.accel_noise, gait_amplitude=s.noise.gait_amplitude,
                           gait_freq=s.noise.gait_freq)
    return train_threshold(x, y)


class Simulation:
    """One run of a scenario. Use :func:`run` unless you need to inspect state mid-run."""

    def __init__(self, s: Scenario):
        self.s = s
        self.g = s.map
        gamma = s.context.model.gamma if s.context.model.gamma is not None else train_gamma(s)
        self.view_model = replace(s.context.model, gamma=gamma)
        self.peds: dict[str, _Ped] = {}
        for i, p in enumerate(sorted(s.pedestrians, key=lambda p: p.id)):
            if p.is_driver:
                continue  # a phone riding in a car plays no pedestrian role
            accel = _RecordedAccel(p.accel) if p.accel is not None else _SyntheticAccel(p, _child(s.seed, 2, i), s)
            self.peds[p.id] = _Ped(
                spec=p,
                matcher=MapMatcher(self.g, replace(s.hmm.model), s.hmm.estimate_beta, s.hmm.adapt_sigma),
                detector=ViewingDetector(self.view_model, s.accel_rate),
                accel=accel, gps_rng=_child(s.seed, 1, i))
        self.vehs: dict[str, _Veh] = {}
        for v in sorted(s.vehicles, key=lambda v: v.id):
            s_c = v.trajectory.closest_arclength(v.crossing)
            self.vehs[v.id] = _Veh(v, s_c, v.trajectory.time_at_arclength(s_c))
        self.net = Network(s.comms.link, _child(s.seed, 3), self._locate)
        for pid in self.peds:
            self.net.register(pid, Role.PEDESTRIAN)
        for vid in self.vehs:
            self.net.register(vid, Role.VEHICLE)
        self.records: list[dict] = []
        self.events: list[dict] = []
        self.gamma = gamma

    # ------------------------------------------------------------ helpers

    def _locate(self, device: str, t: float) -> GeoPoint:
        if device in self.peds:
            return self.peds[device].spec.trajectory.position(t)
        return self.vehs[device].spec.trajectory.position(t)

    def _event(self, t: float, kind: str, actor: str, **data) -> None:
        self.events.append({"t": t, "event": kind, "actor": actor, **data})

    def _zone_of(self, p: GeoPoint):
        inside = [z for z in self.g.zones if in_alert_zone(p, z)]
        return min(inside, key=lambda z: geodetic_distance(p, z.crossing)) if inside else None

    def _vehicle_rep(self, v: _Veh, now: float) -> RepMsg | None:
        traj = v.spec.trajectory
        speed = traj.speed(now)
        remaining = v.s_cross - traj.arclength(now)
        if speed <= 0 or remaining <= 0:
            return None  # parked or already past the crossing
        return RepMsg(v.spec.id, speed, v.spec.mass, v.spec.area, remaining / speed, now)

    def _gt_warning(self, ped: _Ped, crossing: GeoPoint, now: float) -> float | None:
        t_p = ped.spec.trajectory.arrival_time(crossing) - now
        arrivals = [v.arrival - now for v in self.vehs.values()
                    if v.arrival > now and geodetic_distance(v.spec.crossing, crossing) < 1.0]
        if not arrivals:
            return None
        return min(arrivals) - t_p

    # ------------------------------------------------------------ messages

    def _handle(self, env: Envelope) -> None:
        msg, now = env.payload, env.deliver_at
        if env.dst in self.vehs:
            if isinstance(msg, ReqMsg):
                rep = self._vehicle_rep(self.vehs[env.dst], now)
                if rep is not None:
                    self.net.send(rep, env.dst, env.src, now, in_reply_to=env.seq)
            elif isinstance(msg, DriverAlert):
                self._event(now, "driver_alert_received", env.dst, pedestrian=msg.pedestrian,
                            probability=msg.probability)
            return
        ped = self.peds[env.dst]
        if isinstance(msg, ReqMsg):
            self.net.send(AckMsg(env.dst, now), env.dst, env.src, now, in_reply_to=env.seq)
            return
        if env.in_reply_to is not None and env.in_reply_to in ped.pending:
            ped.rtts.append(now - ped.pending.pop(env.in_reply_to))
        if isinstance(msg, RepMsg):
            ped.known.add(msg.vehicle)
            old = ped.reps.get(msg.vehicle)
            if old is None or old[0].timestamp <= msg.timestamp:
                ped.reps[msg.vehicle] = (msg, env.seq)

    # ------------------------------------------------------------ stepping

    def _step_vehicles(self, t: float) -> None:
        for vid, v in self.vehs.items():
            grp = self.net.group_of(vid)
            if grp is None:
                g = self.net.find_group(self.s.comms.channel, t)
                if g is not None and self.net.roles.get(g.owner) is Role.PEDESTRIAN and \
                        geodetic_distance(self._locate(vid, t), self._locate(g.owner, t)) <= self.s.comms.link.cutoff:
                    self.net.join_group(vid, g, t)
                    grp = g
            rep = self._vehicle_rep(v, t)
            self.records.append({
                "t": t, "actor": vid, "kind": "vehicle", "truth": _pt(v.spec.trajectory.position(t)),
                "speed": v.spec.trajectory.speed(t), "t_c": None if rep is None else rep.t_c,
                "in_group": grp is not None})

    def _gps_fix(self, ped: _Ped, t: float, truth: GeoPoint) -> tuple[GeoPoint, CalibratedFix]:
        sigma = self.s.noise.gps_sigma
        e, n = ped.gps_rng.normal(0.0, 1.0, size=2) * sigma
        raw = offset(truth, float(e), float(n)) if sigma > 0 else truth
        fix = ped.matcher.step(t, raw, suppress_segment=ped.in_zone)
        if fix.point is not None:
            ped.estimate = fix.point
        ped.last_fix = t
        return raw, fix

    def _step_pedestrian(self, pid: str, ped: _Ped, t: float) -> None:
        s = self.s
        traj = ped.spec.trajectory
        truth, heading, speed = traj.position(t), traj.heading(t), traj.speed(t)
        duty = s.power.duty_cycling and bool(self.g.zones)
        v_max = s.hmm.model.v_max

        # Wake check while sleeping.
        if duty and not ped.power.active:
            ped.power = step_power_state(ped.power, t, heading, ped.estimate or truth, self.g.zones, v_max)
            if ped.power.active:
                d = min(z.boundary_distance(truth) for z in self.g.zones)
                ped.last_wake_distance = d
                self._event(t, "gps_wake", pid, boundary_distance=d)

        raw, fix = None, None
        if ped.power.active and (ped.last_fix is None or t - ped.last_fix >= GPS_INTERVAL - 1e-9):
            raw, fix = self._gps_fix(ped, t, truth)
            if duty and ped.estimate is not None:
                margin = s.power.margin_sigmas * ped.matcher.model.sigma_z
                ped.power = step_power_state(ped.power, t, heading, ped.estimate, self.g.zones, v_max, margin)
                if not ped.power.active:
                    self._event(t, "gps_sleep", pid, wake_at=ped.power.wake_at)

        zone = self._zone_of(ped.estimate) if ped.estimate is not None else None
        was_in_zone, ped.in_zone = ped.in_zone, zone is not None

        # Ground-truth zone entries, for the early-wake check.
        true_in = any(in_alert_zone(truth, z) for z in self.g.zones)
        if true_in and not ped.true_in_zone:
            self._event(t, "zone_entry", pid, gps_active=ped.power.active,
                        wake_distance=ped.last_wake_distance)
            ped.last_wake_distance = None
        ped.true_in_zone = true_in

        for sample in ped.accel.samples(t):
            ped.detector.push(sample)
        viewing = ped.detector.viewing()
        motion = classify_motion(speed, s.context.walk_min, s.context.run_min)
        moving = motion is not Motion.STATIONARY

        if was_in_zone and not ped.in_zone:
            self._leave(pid, ped, t)

        decision, used = NO_ALERT, []
        standalone = ped.spec.safety_level is not None or not s.comms.enabled
        if ped.spec.safety_level is not None:
            toward = False
            if zone is not None and moving:
                toward = angular_difference(heading, bearing(ped.estimate, zone.crossing)) < 90.0
            decision = decide_standalone(ped.spec.safety_level, ped.in_zone, ped.spec.screen_at(t),
                                         bool(viewing), toward)
        elif not standalone:
            if ped.in_zone and viewing and moving:
                self._join(pid, ped, t)
            if ped.role is not None:
                self._request(pid, ped, t)
            if ped.in_zone:
                decision, used = self._decide(ped, zone, motion, bool(viewing), t)

        self._apply(pid, ped, decision, zone, t)

        self.records.append({
            "t": t, "actor": pid, "kind": "pedestrian", "truth": _pt(truth),
            "fix": _pt(raw), "calibrated": None if fix is None else fix.to_dict(),
            "estimate": _pt(ped.estimate), "power": ped.power.mode.value, "in_zone": ped.in_zone,
            "true_in_zone": true_in, "viewing": viewing, "viewing_truth": ped.spec.viewing_at(t),
            "motion": motion.value, "role": ped.role, "decision": decision.to_dict(), "vehicles": used})

    def _join(self, pid: str, ped: _Ped, t: float) -> None:
        if ped.role is not None:
            return
        if not ped.overhearing:
            ped.overhearing = True  # listen on the channel for one tick first
            return
        ch = self.s.comms.channel
        try:
            self.net.overhear_and_join(pid, ch, t)
            ped.role = "member"
        except NoGroupFound:
            if ch in self.net.groups:
                return  # a group is still forming; keep listening
            self.net.form_group(pid, ch, self.s.comms.formation_mode, t)
            ped.role = "owner"
        ped.overhearing = False
        ped.next_req = t
        self._event(t, "group_role", pid, role=ped.role)

    def _leave(self, pid: str, ped: _Ped, t: float) -> None:
        if ped.role is not None:
            for orphan in self.net.leave(pid, t):
                if orphan in self.peds:
                    self.peds[orphan].role = None
                    self.peds[orphan].reps.clear()
        ped.role, ped.overhearing = None, False
        ped.reps.clear()
        ped.pending.clear()
        ped.last_alert, ped.ignored, ped.complied, ped.driver_alerted = None, 0, False, False

    def _request(self, pid: str, ped: _Ped, t: float) -> None:
        g = self.net.group_of(pid)
        if g is None:
            ped.role = None
            return
        if not g.active(t) or t < ped.next_req - 1e-9:
            return
        ped.next_req = t + self.s.comms.req_interval
        targets = sorted(m for m in g.members if m in self.vehs) if ped.role == "owner" else [g.owner]
        for dst in targets:
            env = self.net.send(ReqMsg(pid, t), pid, dst, t)
            if env is not None:
                ped.pending[env.seq] = t

    def _decide(self, ped: _Ped, zone, motion: Motion, viewing: bool, t: float
                ) -> tuple[AlertDecision, list[dict]]:
        cfg = self.s.risk
        kin, used = [], []
        for vid in sorted(ped.reps):
            rep, seq = ped.reps[vid]
            age = t - rep.timestamp
            if age > cfg.stale_after or rep.t_c - age <= 0:
                continue
            v = self.vehs[vid].spec
            kin.append(VehicleKinematics(vid, rep.v_c, rep.t_c - age, rep.m_v, rep.a_v, v.drag, v.mu_k,
                                         v.f0, v.rho))
            used.append({"vehicle": vid, "seq": seq, "timestamp": rep.timestamp, "v_c": rep.v_c,
                         "t_c": rep.t_c - age})
        if not kin:
            return NO_ALERT, used
        t_delay = measure_t_delay(ped.rtts) if ped.rtts else cfg.t_delay_default
        state = PedestrianRiskState(geodetic_distance(ped.estimate, zone.crossing), motion, viewing,
                                    ignored_alert_count=ped.ignored)
        return decide(state, kin, t_delay, cfg.reaction, cfg.config), used

    def _apply(self, pid: str, ped: _Ped, d: AlertDecision, zone, t: float) -> None:
        if d.action is Action.ALERT_PEDESTRIAN:
            if ped.complied:
                return
            if ped.last_alert is not None and t - ped.last_alert < self.s.risk.realert_interval - 1e-9:
                return
            ped.last_alert = t
            gt = self._gt_warning(ped, zone.crossing, t) if zone is not None and d.t_warning is not None else None
            self._event(t, "alert_pedestrian", pid, vehicle=d.vehicle, t_warning=d.t_warning,
                        t_warning_gt=gt, probability=d.probability)
            if ped.ignored < ped.spec.ignore_alerts:
                ped.ignored += 1
            else:
                ped.complied = True
        elif d.action is Action.ALERT_DRIVER and not ped.driver_alerted:
            ped.driver_alerted = True
            self.net.send(DriverAlert(pid, d.vehicle, d.probability, t), pid, d.vehicle, t)
            self._event(t, "alert_driver", pid, vehicle=d.vehicle, probability=d.probability)

    # ------------------------------------------------------------ main loop

    def run(self) -> SimReport:
        s = self.s
        n = int(round(s.duration / s.tick))
        for k in range(n):
            t = round(k * s.tick, 9)
            for env in self.net.due(t):
                self._handle(env)
            self._step_vehicles(t)
            for pid, ped in self.peds.items():
                try:
                    self._step_pedestrian(pid, ped, t)
                except Exception as e:  # noqa: BLE001 - annotate and re-raise
                    raise SimulationError(t, pid, e) from e
        return self._report()

    def _report(self) -> SimReport:
        s = self.s
        actors = {}
        for pid, ped in self.peds.items():
            tr = ped.spec.trajectory
            actors[pid] = {"kind": "pedestrian", "ignore_alerts": ped.spec.ignore_alerts,
                           "known_vehicles": sorted(ped.known),
                           "trajectory": [[t, *p.as_list()] for t, p in zip(tr.times, tr.points)]}
        for vid, v in self.vehs.items():
            tr = v.spec.trajectory
            actors[vid] = {"kind": "vehicle", "cruise_speed": v.spec.cruise_speed,
                           "arrival": None if math.isinf(v.arrival) else v.arrival,
                           "trajectory": [[t, *p.as_list()] for t, p in zip(tr.times, tr.points)]}
        pm = s.power.model
        return SimReport(
            scenario=s.name, seed=s.seed, tick=s.tick, duration=s.duration, actors=actors,
            zones=[{"crossing": z.crossing.as_list(), "radius": z.radius} for z in self.g.zones],
            crossings=[c.as_list() for c in self.g.crossings],
            power_model={"active_watts": pm.active_watts, "sleep_watts": pm.sleep_watts,
                         "startup_surge_joules": pm.startup_surge_joules},
            records=self.records, events=self.events, messages=self.net.log, gamma=self.gamma)


def run(s: Scenario) -> SimReport:
    return Simulation(s).run()
