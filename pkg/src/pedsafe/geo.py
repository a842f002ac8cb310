"""Geographic primitives shared by every other module.

Distances are great-circle (haversine) on a sphere of radius 6 371 000 m.
Segment projection works in a local tangent plane around the segment, which
is accurate to well below a centimetre at the sub-kilometre scales used here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

import networkx as nx

EARTH_RADIUS = 6_371_000.0  # m
DEFAULT_SNAP_RADIUS = 50.0  # m


class GeoError(Exception):
    pass


class SnapFailure(GeoError):
    """No sidewalk segment lies within the snap radius of a point."""


class Unreachable(GeoError):
    """Two points snap onto disconnected parts of the sidewalk graph."""


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0) or not math.isfinite(self.lat):
            raise ValueError(f"latitude out of range: {self.lat}")
        if not (-180.0 <= self.lon <= 180.0) or not math.isfinite(self.lon):
            raise ValueError(f"longitude out of range: {self.lon}")

    def as_list(self) -> list[float]:
        return [self.lat, self.lon]


def geodetic_distance(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in metres (haversine formula)."""
    phi1, phi2 = math.radians(a.lat), math.radians(b.lat)
    dphi = phi2 - phi1
    dlmb = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS * math.asin(min(1.0, math.sqrt(h)))


def bearing(a: GeoPoint, b: GeoPoint) -> float:
    """Initial bearing from a to b in degrees clockwise from north, in [0, 360)."""
    phi1, phi2 = math.radians(a.lat), math.radians(b.lat)
    dlmb = math.radians(b.lon - a.lon)
    x = math.sin(dlmb) * math.cos(phi2)
    y = math.cos(phi1) * math.sin(phi2) - math.sin(phi1) * math.cos(phi2) * math.cos(dlmb)
    return math.degrees(math.atan2(x, y)) % 360.0


def to_local(origin: GeoPoint, p: GeoPoint) -> tuple[float, float]:
    """Equirectangular (east, north) offset of p from origin, in metres."""
    x = EARTH_RADIUS * math.radians(p.lon - origin.lon) * math.cos(math.radians(origin.lat))
    y = EARTH_RADIUS * math.radians(p.lat - origin.lat)
    return x, y


def from_local(origin: GeoPoint, x: float, y: float) -> GeoPoint:
    lat = origin.lat + math.degrees(y / EARTH_RADIUS)
    lon = origin.lon + math.degrees(x / (EARTH_RADIUS * math.cos(math.radians(origin.lat))))
    return GeoPoint(lat, lon)


def offset(origin: GeoPoint, east: float, north: float) -> GeoPoint:
    """Point displaced by (east, north) metres. Convenience for building maps."""
    return from_local(origin, east, north)


def interpolate(a: GeoPoint, b: GeoPoint, frac: float) -> GeoPoint:
    return GeoPoint(a.lat + (b.lat - a.lat) * frac, a.lon + (b.lon - a.lon) * frac)


@dataclass(frozen=True)
class SidewalkSegment:
    id: str
    a: GeoPoint
    b: GeoPoint
    width: float = 2.0

    def __post_init__(self):
        if self.a == self.b:
            raise ValueError(f"segment {self.id}: endpoints must be distinct")
        if not self.width > 0:
            raise ValueError(f"segment {self.id}: width must be positive")

    @cached_property
    def midpoint(self) -> GeoPoint:
        return interpolate(self.a, self.b, 0.5)

    @cached_property
    def length(self) -> float:
        return geodetic_distance(self.a, self.b)

    @cached_property
    def _frame(self) -> tuple[float, float, float, float]:
        ax, ay = to_local(self.midpoint, self.a)
        bx, by = to_local(self.midpoint, self.b)
        return ax, ay, bx - ax, by - ay

    def locate(self, z: GeoPoint) -> float:
        """Parameter in [0, 1] of the closest point of the segment to z."""
        ax, ay, dx, dy = self._frame
        px, py = to_local(self.midpoint, z)
        t = ((px - ax) * dx + (py - ay) * dy) / (dx * dx + dy * dy)
        return min(1.0, max(0.0, t))

    def point_at(self, t: float) -> GeoPoint:
        ax, ay, dx, dy = self._frame
        return from_local(self.midpoint, ax + t * dx, ay + t * dy)

    def direction(self) -> tuple[float, float]:
        """Unit (east, north) vector from a to b."""
        _, _, dx, dy = self._frame
        n = math.hypot(dx, dy)
        return dx / n, dy / n


def project_to_segment(z: GeoPoint, r: SidewalkSegment) -> tuple[GeoPoint, float]:
    """Closest point of r to z and its geodetic distance from z."""
    t = r.locate(z)
    p = r.point_at(t)
    d = geodetic_distance(z, p)
    # Guard the endpoint bound against planar-vs-spherical rounding.
    for end in (r.a, r.b):
        de = geodetic_distance(z, end)
        if de < d:
            p, d = end, de
    return p, d


@dataclass(frozen=True)
class AlertZone:
    crossing: GeoPoint
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("alert zone radius must be positive")

    def boundary_distance(self, p: GeoPoint) -> float:
        """Distance from p to the zone boundary, 0 inside the zone."""
        return max(0.0, geodetic_distance(p, self.crossing) - self.radius)


def in_alert_zone(p: GeoPoint, zone: AlertZone) -> bool:
    # Boundary inclusive: sensing switches on at the edge.
    return geodetic_distance(p, zone.crossing) <= zone.radius


def _node_key(p: GeoPoint) -> tuple[int, int]:
    # ~1 cm grid so that endpoints typed twice still coincide.
    return round(p.lat * 1e7), round(p.lon * 1e7)


@dataclass(frozen=True)
class Snap:
    segment: SidewalkSegment
    t: float
    point: GeoPoint
    distance: float


@dataclass(frozen=True, eq=False)
class SidewalkGraph:
    """Sidewalk segments joined at shared endpoints, plus crossings and alert zones."""

    segments: tuple[SidewalkSegment, ...]
    crossings: tuple[GeoPoint, ...] = ()
    zones: tuple[AlertZone, ...] = ()
    by_id: dict[str, SidewalkSegment] = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        object.__setattr__(self, "crossings", tuple(self.crossings))
        object.__setattr__(self, "zones", tuple(self.zones))
        ids = [s.id for s in self.segments]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate segment ids")
        object.__setattr__(self, "by_id", {s.id: s for s in self.segments})
        for c in self.crossings:
            if not self.segments or min(project_to_segment(c, s)[1] for s in self.segments) > 0.05:
                raise ValueError(f"crossing {c} does not lie on any segment")

    def __getitem__(self, seg_id: str) -> SidewalkSegment:
        return self.by_id[seg_id]

    @cached_property
    def network(self) -> nx.Graph:
        g = nx.Graph()
        for s in self.segments:
            u, v = _node_key(s.a), _node_key(s.b)
            if g.has_edge(u, v) and g[u][v]["weight"] <= s.length:
                continue
            g.add_edge(u, v, weight=s.length)
        return g

    @cached_property
    def _node_distances(self) -> dict:
        return dict(nx.all_pairs_dijkstra_path_length(self.network, weight="weight"))

    def node_distance(self, u: tuple[int, int], v: tuple[int, int]) -> float:
        return self._node_distances.get(u, {}).get(v, math.inf)

    def neighbors_of(self, seg_id: str) -> set[str]:
        s = self.by_id[seg_id]
        ends = {_node_key(s.a), _node_key(s.b)}
        return {o.id for o in self.segments
                if o.id != seg_id and ends & {_node_key(o.a), _node_key(o.b)}}

    def snap(self, p: GeoPoint, segment: SidewalkSegment | None = None) -> Snap:
        if segment is not None:
            t = segment.locate(p)
            q = segment.point_at(t)
            return Snap(segment, t, q, geodetic_distance(p, q))
        best = None
        for s in self.segments:
            t = s.locate(p)
            q = s.point_at(t)
            d = geodetic_distance(p, q)
            if best is None or d < best.distance:
                best = Snap(s, t, q, d)
        if best is None:
            raise SnapFailure("graph has no segments")
        return best

    def within(self, p: GeoPoint, radius: float) -> list[SidewalkSegment]:
        return [s for s in self.segments if project_to_segment(p, s)[1] <= radius]

    def route_length(self, sa: Snap, sb: Snap) -> float:
        """Shortest along-sidewalk distance between two snapped positions."""
        if sa.segment.id == sb.segment.id:
            return abs(sa.t - sb.t) * sa.segment.length
        la, lb = sa.segment.length, sb.segment.length
        a_ends = ((_node_key(sa.segment.a), sa.t * la), (_node_key(sa.segment.b), (1 - sa.t) * la))
        b_ends = ((_node_key(sb.segment.a), sb.t * lb), (_node_key(sb.segment.b), (1 - sb.t) * lb))
        best = math.inf
        for u, du in a_ends:
            for v, dv in b_ends:
                best = min(best, du + self.node_distance(u, v) + dv)
        return best


def moving_distance(a: GeoPoint, b: GeoPoint, g: SidewalkGraph,
                    snap_radius: float = DEFAULT_SNAP_RADIUS) -> float:
    """Shortest distance along the sidewalk graph between a and b.

    Both points are snapped onto their nearest segment first.
    """
    sa, sb = g.snap(a), g.snap(b)
    for p, s in ((a, sa), (b, sb)):
        if s.distance > snap_radius:
            raise SnapFailure(f"no segment within {snap_radius} m of {p}")
    d = g.route_length(sa, sb)
    if math.isinf(d):
        raise Unreachable(f"{sa.segment.id} and {sb.segment.id} are not connected")
    return d


def polyline_distance(p: GeoPoint, vertices: Iterable[GeoPoint]) -> float:
    """Shortest geodetic distance from p to a polyline."""
    pts = list(vertices)
    if len(pts) == 1:
        return geodetic_distance(p, pts[0])
    best = math.inf
    for a, b in zip(pts, pts[1:]):
        if a == b:
            best = min(best, geodetic_distance(p, a))
            continue
        best = min(best, project_to_segment(p, SidewalkSegment("_", a, b))[1])
    return best
