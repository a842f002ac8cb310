"""Simulated WiFi-Direct-style device-to-device layer.

Pedestrians own groups (GO); vehicles join as members (GM). A second
pedestrian who finds an existing group joins it as a member as well, and the
owner forwards every vehicle reply to it, giving n-to-n reach over a single
group.

Everything advances on the simulation clock. Messages sit in a priority queue
ordered by delivery time, ties broken by send order.
"""

from __future__ import annotations

import enum
import heapq
import itertools
import statistics
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

import numpy as np

from .geo import GeoPoint, geodetic_distance

DEFAULT_CHANNEL = "p2p-6"


class P2PError(Exception):
    pass


class AlreadyOwner(P2PError):
    pass


class AlreadyMember(P2PError):
    pass


class NoGroupFound(P2PError):
    pass


class NoSamples(P2PError):
    pass


class FormationMode(enum.Enum):
    AUTONOMOUS = "autonomous"
    NEGOTIATED = "negotiated"


class Role(enum.Enum):
    PEDESTRIAN = "pedestrian"
    VEHICLE = "vehicle"


@dataclass(frozen=True)
class LinkModel:
    pdr_near: float = 0.9
    pdr_range: float = 60.0         # m, flat-PDR range
    pdr_far_slope: float = 0.02     # PDR lost per metre beyond the range
    delay_mean: float = 0.04        # s, mean round trip of one hop
    delay_jitter: float = 0.01      # s, half-width of the one-way delay spread
    formation_mean: float = 2.8     # s, autonomous group formation
    formation_std: float = 0.3
    negotiated_range: tuple[float, float] = (8.0, 9.0)

    def __post_init__(self):
        if not 0.0 <= self.pdr_near <= 1.0:
            raise ValueError("pdr_near must be a probability")
        if self.pdr_range < 0 or self.pdr_far_slope < 0 or self.delay_mean < 0 or self.delay_jitter < 0:
            raise ValueError("link parameters must be non-negative")

    def pdr(self, distance: float) -> float:
        if distance <= self.pdr_range:
            return self.pdr_near
        return max(0.0, self.pdr_near - self.pdr_far_slope * (distance - self.pdr_range))

    @property
    def cutoff(self) -> float:
        """Distance beyond which nothing gets through."""
        if self.pdr_far_slope == 0:
            return float("inf") if self.pdr_near > 0 else 0.0
        return self.pdr_range + self.pdr_near / self.pdr_far_slope


@dataclass(frozen=True)
class ReqMsg:
    sender: str
    timestamp: float


@dataclass(frozen=True)
class RepMsg:
    vehicle: str
    v_c: float
    m_v: float
    a_v: float
    t_c: float
    timestamp: float

    def to_dict(self) -> dict:
        return {"vehicle": self.vehicle, "v_c": self.v_c, "m_v": self.m_v,
                "a_v": self.a_v, "t_c": self.t_c, "timestamp": self.timestamp}


@dataclass(frozen=True)
class AckMsg:
    """Owner's answer to a member pedestrian's REQ; only used to time the round trip."""
    sender: str
    timestamp: float


@dataclass(frozen=True)
class DriverAlert:
    pedestrian: str
    vehicle: str
    probability: float
    timestamp: float


@dataclass
class Group:
    owner: str
    channel: str
    formed_at: float
    members: set[str] = field(default_factory=set)

    def active(self, now: float) -> bool:
        return now >= self.formed_at


@dataclass(frozen=True)
class ForwardingRoute:
    owner: str
    member: str
    channel: str


@dataclass(frozen=True)
class Envelope:
    seq: int
    src: str
    dst: str
    payload: object
    sent_at: float
    deliver_at: float
    in_reply_to: int | None = None
    forwarded: bool = False


def formation_delay(mode: FormationMode, rng: np.random.Generator, lm: LinkModel = LinkModel()) -> float:
    if mode is FormationMode.AUTONOMOUS:
        return max(0.0, float(rng.normal(lm.formation_mean, lm.formation_std)))
    lo, hi = lm.negotiated_range
    return float(rng.uniform(lo, hi))


def deliver(msg: object, src: GeoPoint, dst: GeoPoint, lm: LinkModel,
            rng: np.random.Generator) -> float | None:
    """One-way delay in seconds if the message gets through, None if dropped."""
    p = lm.pdr(geodetic_distance(src, dst))
    # Always draw both numbers so the random stream does not depend on the outcome.
    u = rng.random()
    jitter = rng.uniform(-lm.delay_jitter, lm.delay_jitter) if lm.delay_jitter > 0 else 0.0
    if u >= p:
        return None
    return max(0.0, lm.delay_mean / 2 + jitter)


def measure_t_delay(round_trips: Iterable[float]) -> float:
    rtts = list(round_trips)
    if not rtts:
        raise NoSamples("no completed round trips")
    return statistics.fmean(rtts)


class Network:
    """Group registry plus the in-flight message queue for one simulation."""

    def __init__(self, link: LinkModel, rng: np.random.Generator,
                 locate: Callable[[str, float], GeoPoint]):
        self.link = link
        self.rng = rng
        self.locate = locate
        self.groups: dict[str, Group] = {}
        self.routes: list[ForwardingRoute] = []
        self.roles: dict[str, Role] = {}
        self.log: list[dict] = []
        self._queue: list[tuple[float, int, Envelope]] = []
        self._seq = itertools.count()

    def register(self, device: str, role: Role) -> None:
        self.roles[device] = role

    def group_of(self, device: str) -> Group | None:
        for g in self.groups.values():
            if g.owner == device or device in g.members:
                return g
        return None

    def form_group(self, owner: str, channel: str = DEFAULT_CHANNEL,
                   mode: FormationMode = FormationMode.AUTONOMOUS, now: float = 0.0) -> tuple[Group, float]:
        existing = self.groups.get(channel)
        if existing is not None and existing.owner == owner:
            raise AlreadyOwner(f"{owner} already owns the group on {channel}")
        if existing is not None:
            raise P2PError(f"channel {channel} already carries a group owned by {existing.owner}")
        delay = formation_delay(mode, self.rng, self.link)
        group = Group(owner, channel, now + delay)
        self.groups[channel] = group
        self.log.append({"t": now, "event": "group_formed", "owner": owner, "channel": channel,
                         "ready_at": group.formed_at, "mode": mode.value})
        return group, delay

    def join_group(self, device: str, group: Group, now: float = 0.0) -> None:
        if device == group.owner or device in group.members:
            raise AlreadyMember(f"{device} is already in the group of {group.owner}")
        group.members.add(device)
        self.log.append({"t": now, "event": "joined", "device": device, "owner": group.owner})

    def find_group(self, channel: str, now: float) -> Group | None:
        g = self.groups.get(channel)
        return g if g is not None and g.active(now) else None

    def overhear_and_join(self, ped: str, channel: str = DEFAULT_CHANNEL, now: float = 0.0) -> ForwardingRoute:
        g = self.find_group(channel, now)
        if g is None or self.roles.get(g.owner) is not Role.PEDESTRIAN:
            raise NoGroupFound(f"no pedestrian-owned group on {channel}")
        self.join_group(ped, g, now)
        route = ForwardingRoute(g.owner, ped, channel)
        self.routes.append(route)
        return route

    def leave(self, device: str, now: float = 0.0) -> list[str]:
        """Remove a device. An owner leaving dissolves its group; returns the orphaned members."""
        g = self.group_of(device)
        if g is None:
            return []
        if g.owner == device:
            del self.groups[g.channel]
            self.routes = [r for r in self.routes if r.owner != device]
            self.log.append({"t": now, "event": "group_dissolved", "owner": device})
            return sorted(g.members)
        g.members.discard(device)
        self.routes = [r for r in self.routes if r.member != device]
        self.log.append({"t": now, "event": "left", "device": device, "owner": g.owner})
        return []

    def send(self, payload: object, src: str, dst: str, now: float,
             in_reply_to: int | None = None, forwarded: bool = False) -> Envelope | None:
        delay = deliver(payload, self.locate(src, now), self.locate(dst, now), self.link, self.rng)
        seq = next(self._seq)
        entry = {"t": now, "event": "send", "seq": seq, "src": src, "dst": dst,
                 "type": type(payload).__name__, "delivered": delay is not None,
                 "deliver_at": None if delay is None else now + delay}
        if isinstance(payload, RepMsg):
            entry["payload"] = payload.to_dict()
        self.log.append(entry)
        if delay is None:
            return None
        env = Envelope(seq, src, dst, payload, now, now + delay, in_reply_to, forwarded)
        heapq.heappush(self._queue, (env.deliver_at, seq, env))
        return env

    def due(self, now: float) -> Iterator[Envelope]:
        """Pop every message delivered by ``now``; owners forward vehicle replies as they land."""
        while self._queue and self._queue[0][0] <= now:
            _, _, env = heapq.heappop(self._queue)
            if self.group_of(env.dst) is None and not isinstance(env.payload, DriverAlert):
                continue  # receiver left the group while the message was in flight
            if isinstance(env.payload, RepMsg) and not env.forwarded:
                for r in self.routes:
                    if r.owner == env.dst:
                        self.send(env.payload, r.owner, r.member, env.deliver_at, forwarded=True)
            yield env

    def pending(self) -> int:
        return len(self._queue)
