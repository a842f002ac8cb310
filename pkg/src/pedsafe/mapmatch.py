"""HMM map matching on a sidewalk graph.

The matcher identifies the current sidewalk segment from a sliding window of
GPS fixes and then accepts, projects or rejects the newest fix against a
rectangular valid region laid along that segment.

Inference is online: one forward (filtering) step per fix.  Observation
likelihoods average a per-fix Gaussian over the window; the transition
density is exponential in the gap between along-sidewalk and straight-line
distance, measured against the fix ``epsilon`` fixes back rather than the
immediately preceding one, which is too close for a slow walker.
"""

from __future__ import annotations

import enum
import math
import statistics
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .geo import (
    GeoError,
    GeoPoint,
    SidewalkGraph,
    SidewalkSegment,
    from_local,
    geodetic_distance,
    moving_distance,
    project_to_segment,
    to_local,
)

SQRT_2PI = math.sqrt(2 * math.pi)
SIGMA_FLOOR, SIGMA_CEIL = 1.0, 50.0
SIGMA_MIN_SAMPLES, SIGMA_RECENT = 10, 30
BETA_WARMUP, BETA_FLOOR = 20, 0.5
FREEZE_SIGMAS = 3.0  # a frozen segment is released once a fix strays this far from it


class MapMatchError(Exception):
    pass


class EmptyWindow(MapMatchError):
    pass


class NoCandidates(MapMatchError):
    pass


class InsufficientSamples(MapMatchError):
    pass


@dataclass
class HmmModel:
    sigma_z: float = 5.0          # m, GPS error std-dev
    beta: float = 5.0             # m, exponential scale of the transition density
    omega: int = 5                # fixes in the observation window
    epsilon: int = 3              # look-back, in fixes, for the transition term
    alpha: float = 2.0            # valid-region tolerance
    v_max: float = 2.0            # m/s, brisk walking speed
    gps_interval: float = 1.0     # s
    reject_threshold: float = 15.0  # m

    def __post_init__(self):
        for name in ("sigma_z", "beta", "alpha", "v_max", "gps_interval"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.omega < 1 or self.epsilon < 1:
            raise ValueError("omega and epsilon must be >= 1")
        if self.reject_threshold < 0:
            raise ValueError("reject_threshold must be non-negative")

    @property
    def search_radius(self) -> float:
        return 3 * self.sigma_z + 30.0


class GpsWindow:
    """The last ``size`` timestamped fixes, oldest first."""

    def __init__(self, size: int, fixes: Iterable[tuple[float, GeoPoint]] = ()):
        self.fixes: deque[tuple[float, GeoPoint]] = deque(maxlen=size)
        for t, p in fixes:
            self.append(t, p)

    def append(self, t: float, p: GeoPoint) -> None:
        if self.fixes and t <= self.fixes[-1][0]:
            raise ValueError("fix timestamps must be strictly increasing")
        self.fixes.append((t, p))

    def __len__(self) -> int:
        return len(self.fixes)

    @property
    def points(self) -> list[GeoPoint]:
        return [p for _, p in self.fixes]

    def back(self, k: int) -> GeoPoint:
        """Fix k positions before the newest; the oldest one if the window is shorter."""
        return self.fixes[max(0, len(self.fixes) - 1 - k)][1]


class FixResult(enum.Enum):
    ACCEPTED = "accepted"
    PROJECTED = "projected"
    REJECTED = "rejected"


@dataclass(frozen=True)
class CalibratedFix:
    raw: GeoPoint
    result: FixResult
    point: GeoPoint | None
    segment: str | None
    error_estimate: float

    def to_dict(self) -> dict:
        return {
            "raw": self.raw.as_list(),
            "result": self.result.value,
            "point": self.point.as_list() if self.point else None,
            "segment": self.segment,
            "error_estimate": self.error_estimate,
        }


def observation_prob_point(z: GeoPoint, r: SidewalkSegment, sigma_z: float) -> float:
    d = project_to_segment(z, r)[1]
    return math.exp(-0.5 * (d / sigma_z) ** 2) / (SQRT_2PI * sigma_z)


def observation_prob_window(w: GpsWindow | Iterable[GeoPoint], r: SidewalkSegment,
                            sigma_z: float) -> float:
    points = w.points if isinstance(w, GpsWindow) else list(w)
    if not points:
        raise EmptyWindow("observation window is empty")
    return sum(observation_prob_point(z, r, sigma_z) for z in points) / len(points)


def exp_density(delta: float, beta: float) -> float:
    return math.exp(-delta / beta) / beta


def transition_delta(z_now: GeoPoint, z_past: GeoPoint, g: SidewalkGraph,
                     from_seg: SidewalkSegment | None = None,
                     to_seg: SidewalkSegment | None = None) -> float:
    """|moving distance - geodetic distance| between two fixes.

    With segments given, each fix is matched onto that segment instead of its
    nearest one. Returns inf when the two matched positions are disconnected.
    """
    if from_seg is None and to_seg is None:
        mov = moving_distance(z_past, z_now, g)
    else:
        mov = g.route_length(g.snap(z_past, from_seg), g.snap(z_now, to_seg))
    return abs(mov - geodetic_distance(z_now, z_past))


def transition_prob(z_now: GeoPoint, z_past: GeoPoint, g: SidewalkGraph, beta: float) -> float:
    return exp_density(transition_delta(z_now, z_past, g), beta)


def _logsumexp(values: list[float]) -> float:
    m = max(values)
    if m == -math.inf:
        return -math.inf
    return m + math.log(sum(math.exp(v - m) for v in values))


def _log_observation(window_points: list[GeoPoint], seg: SidewalkSegment, sigma_z: float) -> float:
    # Log of the window-averaged Gaussian, computed without underflow.
    logs = [-0.5 * (project_to_segment(z, seg)[1] / sigma_z) ** 2 for z in window_points]
    return _logsumexp(logs) - math.log(len(logs)) - math.log(SQRT_2PI * sigma_z)


def estimate_segment(w: GpsWindow, history: Mapping[str, float] | None, g: SidewalkGraph,
                     m: HmmModel, z_past: GeoPoint | None = None) -> tuple[str, dict[str, float]]:
    """One forward step of the HMM.

    ``history`` maps segment id to the previous posterior (None or empty on the
    first call). ``z_past`` is the fix epsilon steps back; it defaults to the
    window's own. Returns the arg-max segment id and the renormalised
    posterior over the candidate set.
    """
    if len(w) == 0:
        raise EmptyWindow("observation window is empty")
    z_now = w.back(0)
    candidates = g.within(z_now, m.search_radius)
    if not candidates:
        raise NoCandidates(f"no segment within {m.search_radius:.1f} m of {z_now}")
    points = w.points
    log_obs = {c.id: _log_observation(points, c, m.sigma_z) for c in candidates}

    log_post: dict[str, float] = {}
    prior = {k: v for k, v in (history or {}).items() if v > 0 and k in g.by_id}
    if prior:
        if z_past is None:
            z_past = w.back(m.epsilon)
        for c in candidates:
            terms = []
            for sid, belief in prior.items():
                delta = transition_delta(z_now, z_past, g, g[sid], c)
                if math.isinf(delta):
                    continue
                terms.append(math.log(belief) - delta / m.beta - math.log(m.beta))
            log_post[c.id] = (_logsumexp(terms) if terms else -math.inf) + log_obs[c.id]
    if not prior or all(v == -math.inf for v in log_post.values()):
        # Initial state probabilities come from the same window likelihood.
        log_post = {cid: 2 * lo for cid, lo in log_obs.items()}

    norm = _logsumexp(list(log_post.values()))
    posterior = {cid: math.exp(v - norm) for cid, v in log_post.items()}
    best = min(posterior, key=lambda cid: (-posterior[cid], cid))
    return best, posterior


def calibrate(z: GeoPoint, seg: SidewalkSegment, m: HmmModel, anchor: GeoPoint | None = None,
              elapsed: float | None = None) -> CalibratedFix:
    """Accept, project or reject a fix against the valid region of ``seg``.

    The region is a rectangle on the segment's centre line, centred along-track
    on ``anchor`` (the last calibrated position, projected onto the segment).
    Its along-track extent is alpha * v_max * elapsed, where elapsed defaults to
    one GPS interval, and its cross-track extent is alpha * segment width.
    """
    elapsed = m.gps_interval if elapsed is None else max(elapsed, m.gps_interval)
    centre = seg.point_at(seg.locate(anchor if anchor is not None else z))
    ux, uy = seg.direction()
    vx, vy = -uy, ux
    half_along = m.alpha * m.v_max * elapsed / 2
    half_cross = m.alpha * seg.width / 2

    px, py = to_local(centre, z)
    along, cross = px * ux + py * uy, px * vx + py * vy
    ca = min(half_along, max(-half_along, along))
    cc = min(half_cross, max(-half_cross, cross))
    gap = math.hypot(along - ca, cross - cc)
    if gap == 0.0:
        return CalibratedFix(z, FixResult.ACCEPTED, z, seg.id, 0.0)
    if gap > m.reject_threshold:
        return CalibratedFix(z, FixResult.REJECTED, None, seg.id, gap)
    q = from_local(centre, ca * ux + cc * vx, ca * uy + cc * vy)
    return CalibratedFix(z, FixResult.PROJECTED, q, seg.id, gap)


def update_sigma(recent_errors: Iterable[float]) -> float:
    errs = list(recent_errors)[-SIGMA_RECENT:]
    if len(errs) < SIGMA_MIN_SAMPLES:
        raise InsufficientSamples(f"need {SIGMA_MIN_SAMPLES} samples, got {len(errs)}")
    return min(SIGMA_CEIL, max(SIGMA_FLOOR, statistics.stdev(errs)))


@dataclass
class MapMatcher:
    """Stateful per-pedestrian matcher. Owned and mutated by a single actor."""

    graph: SidewalkGraph
    model: HmmModel = field(default_factory=HmmModel)
    estimate_beta: bool = True
    adapt_sigma: bool = True

    def __post_init__(self):
        self.window = GpsWindow(self.model.omega)
        # The look-back fix may be older than the observation window.
        self._history: deque[GeoPoint] = deque(maxlen=self.model.epsilon + 1)
        self.beliefs: dict[str, float] = {}
        self.segment: str | None = None
        self.last_position: GeoPoint | None = None
        self.last_time: float | None = None
        self._errors: deque[float] = deque(maxlen=SIGMA_RECENT)
        self._deltas: list[float] = []

    def _warm_up_beta(self, z: GeoPoint) -> None:
        if len(self._deltas) >= BETA_WARMUP or len(self._history) <= self.model.epsilon:
            return
        try:
            self._deltas.append(transition_delta(z, self._history[0], self.graph))
        except GeoError:
            return
        if len(self._deltas) == BETA_WARMUP:
            self.model.beta = max(BETA_FLOOR, statistics.fmean(self._deltas))

    def step(self, t: float, z: GeoPoint, suppress_segment: bool = False) -> CalibratedFix:
        self.window.append(t, z)
        self._history.append(z)
        if self.estimate_beta:
            self._warm_up_beta(z)

        # Suppression holds the segment only while the fix stays consistent with it.
        frozen = suppress_segment and self.segment is not None
        if frozen:
            seg = self.graph[self.segment]
            frozen = project_to_segment(z, seg)[1] <= seg.width / 2 + FREEZE_SIGMAS * self.model.sigma_z
        if not frozen:
            try:
                self.segment, self.beliefs = estimate_segment(
                    self.window, self.beliefs, self.graph, self.model, z_past=self._history[0])
            except NoCandidates:
                self.segment, self.beliefs = None, {}
        if self.segment is None:
            return CalibratedFix(z, FixResult.ACCEPTED, z, None, 0.0)

        seg = self.graph[self.segment]
        elapsed = None if self.last_time is None else t - self.last_time
        fix = calibrate(z, seg, self.model, self.last_position, elapsed)
        self._errors.append(project_to_segment(z, seg)[1])
        if self.adapt_sigma and len(self._errors) >= SIGMA_MIN_SAMPLES:
            self.model.sigma_z = update_sigma(self._errors)
        if fix.point is not None:
            self.last_position = fix.point
            self.last_time = t
        return fix
