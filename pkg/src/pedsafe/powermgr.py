"""GPS duty cycling.

Outside every alert zone the GPS sleeps for the time the walker would need,
at brisk walking speed, to reach the nearest zone boundary. It wakes when that
timer runs out or when the walking direction flips.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

from .geo import AlertZone, GeoPoint, bearing, in_alert_zone

REVERSAL_DEGREES = 120.0
REVERSAL_TICKS = 2


class NoZones(ValueError):
    pass


class GpsMode(enum.Enum):
    ACTIVE = "active"
    SLEEPING = "sleeping"


@dataclass(frozen=True)
class GpsPowerState:
    mode: GpsMode = GpsMode.ACTIVE
    wake_at: float | None = None
    last_direction: float | None = None
    reversal_ticks: int = 0

    @property
    def active(self) -> bool:
        return self.mode is GpsMode.ACTIVE


@dataclass(frozen=True)
class PowerModel:
    active_watts: float = 1.5
    sleep_watts: float = 0.2
    startup_surge_joules: float = 0.0

    def __post_init__(self):
        if not self.active_watts > self.sleep_watts >= 0:
            raise ValueError("need active_watts > sleep_watts >= 0")
        if self.startup_surge_joules < 0:
            raise ValueError("startup surge must be non-negative")

    def watts(self, mode: GpsMode) -> float:
        return self.active_watts if mode is GpsMode.ACTIVE else self.sleep_watts


def angular_difference(a: float, b: float) -> float:
    """Smallest absolute difference between two headings, in [0, 180]."""
    d = abs(a - b) % 360.0
    return 360.0 - d if d > 180.0 else d


def zones_ahead(p: GeoPoint, zones: Sequence[AlertZone], heading: float) -> list[AlertZone]:
    """Zones whose crossing lies within 90 degrees of the walking direction, or that contain p."""
    return [z for z in zones
            if in_alert_zone(p, z) or angular_difference(bearing(p, z.crossing), heading) < 90.0]


def next_wake_delay(p: GeoPoint, zones: Iterable[AlertZone], v_max: float,
                    margin: float = 0.0, heading: float | None = None) -> float:
    """Seconds until the walker could first reach an alert zone.

    ``margin`` is subtracted from the boundary distance to absorb position
    error. With a ``heading``, zones behind the walker are ignored (a reversal
    wakes the GPS instead); if none lie ahead, every zone counts.
    """
    zones = list(zones)
    if not zones:
        raise NoZones("no alert zones")
    if not v_max > 0:
        raise ValueError("v_max must be positive")
    if heading is not None:
        zones = zones_ahead(p, zones, heading) or zones
    d = min(z.boundary_distance(p) for z in zones)
    return max(0.0, d - margin) / v_max


def step_power_state(s: GpsPowerState, now: float, heading: float, p: GeoPoint,
                     zones: Sequence[AlertZone], v_max: float, margin: float = 0.0,
                     reversal_degrees: float = REVERSAL_DEGREES,
                     reversal_ticks: int = REVERSAL_TICKS, direction_aware: bool = True) -> GpsPowerState:
    """Advance the GPS power state by one tick.

    ``p`` is the latest position estimate; it only matters while Active.
    """
    if not 0.0 <= heading < 360.0:
        raise ValueError(f"heading must be in [0, 360): {heading}")

    if s.mode is GpsMode.SLEEPING:
        if now >= s.wake_at:
            return GpsPowerState(GpsMode.ACTIVE, None, s.last_direction)
        if s.last_direction is not None and angular_difference(heading, s.last_direction) > reversal_degrees:
            ticks = s.reversal_ticks + 1
            if ticks >= reversal_ticks:
                return GpsPowerState(GpsMode.ACTIVE, None, s.last_direction)
            return replace(s, reversal_ticks=ticks)
        return replace(s, reversal_ticks=0)

    if any(in_alert_zone(p, z) for z in zones):
        return GpsPowerState(GpsMode.ACTIVE, None, heading)
    delay = next_wake_delay(p, zones, v_max, margin, heading if direction_aware else None)
    if delay <= 0.0:
        return GpsPowerState(GpsMode.ACTIVE, None, heading)
    return GpsPowerState(GpsMode.SLEEPING, now + delay, heading)


def energy_consumed(timeline: Iterable[tuple[float, GpsMode]], model: PowerModel) -> float:
    """Joules spent over a sequence of (duration, mode) intervals."""
    total, any_interval = 0.0, False
    for duration, mode in timeline:
        if duration < 0:
            raise ValueError("durations must be non-negative")
        total += duration * model.watts(mode)
        any_interval = True
    return total + (model.startup_surge_joules if any_interval else 0.0)
