"""Built-in scenario layouts, returned as plain scenario documents."""

from __future__ import annotations

from typing import Callable

from .geo import GeoPoint, offset

ORIGIN = GeoPoint(37.5665, 126.9780)
WALK_SPEED = 1.4  # m/s


def _ll(east: float, north: float) -> list[float]:
    return offset(ORIGIN, east, north).as_list()


def _segments(corners: list[tuple[float, float]], piece: float, prefix: str = "s",
              width: float = 2.0) -> list[dict]:
    """Split a local-frame polyline into sidewalk segments of at most ``piece`` metres."""
    out = []
    for (x0, y0), (x1, y1) in zip(corners, corners[1:]):
        length = ((x1 - x0) ** 2 + (y1 - y0) ** 2) ** 0.5
        n = max(1, round(length / piece))
        for k in range(n):
            a = (x0 + (x1 - x0) * k / n, y0 + (y1 - y0) * k / n)
            b = (x0 + (x1 - x0) * (k + 1) / n, y0 + (y1 - y0) * (k + 1) / n)
            out.append({"id": f"{prefix}{len(out):03d}", "a": _ll(*a), "b": _ll(*b), "width": width})
    return out


def _walk(corners: list[tuple[float, float]], speed: float = WALK_SPEED, t0: float = 0.0) -> list[list[float]]:
    rows, t = [[t0, *_ll(*corners[0])]], t0
    for (x0, y0), (x1, y1) in zip(corners, corners[1:]):
        t += ((x1 - x0) ** 2 + (y1 - y0) ** 2) ** 0.5 / speed
        rows.append([round(t, 6), *_ll(x1, y1)])
    return rows


def straight_corner(gps_sigma: float = 13.0, seed: int = 1, fixes: int = 500) -> dict:
    """500 m sidewalk, 300 m east then 200 m north, walked out and partly back."""
    path = [(0.0, 0.0), (300.0, 0.0), (300.0, 200.0)]
    return {
        "name": "straight_corner", "seed": seed, "tick": 1.0, "duration": float(fixes),
        "map": {"segments": _segments(path, 50.0)},
        "pedestrians": [{"id": "walker", "trajectory": _walk(path + path[-2::-1])}],
        "noise": {"gps_sigma": gps_sigma},
        "power": {"duty_cycling": False},
        "comms": {"enabled": False},
        "context": {"training_windows": 10},
    }


def energy_loop(gps_sigma: float = 0.0, seed: int = 1, laps: int = 5, zone_radius: float = 25.0) -> dict:
    """850 m rectangular loop with alert zones at the four corners and four mid-sides."""
    w, h = 250.0, 175.0
    loop = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h), (0.0, 0.0)]
    crossings = [(0.0, 0.0), (w / 2, 0.0), (w, 0.0), (w, h / 2), (w, h), (w / 2, h), (0.0, h), (0.0, h / 2)]
    walk = loop + loop[1:] * (laps - 1)
    return {
        "name": "energy_loop", "seed": seed, "tick": 0.1, "duration": round(laps * 2 * (w + h) / WALK_SPEED, 1),
        "map": {"segments": _segments(loop, 25.0), "crossings": [_ll(*c) for c in crossings],
                "zone_radius": zone_radius},
        "pedestrians": [{"id": "walker", "trajectory": _walk(walk)}],
        "noise": {"gps_sigma": gps_sigma},
        "context": {"training_windows": 10},
    }


def road75(speed_kmh: float = 30.0, seed: int = 1, gps_sigma: float = 1.0) -> dict:
    """A vehicle on a 75 m road segment, 20 m of it to accelerate, and a viewing walker heading for the crossing.

    Every speed reaches cruise at the same instant, just before the walker's
    first exchange, so faster cars arrive earlier.
    """
    return {
        "name": "road75", "seed": seed, "tick": 0.1, "duration": 20.0,
        "map": {"segments": _segments([(-60.0, 0.0), (0.0, 0.0), (40.0, 0.0)], 20.0),
                "crossings": [_ll(0.0, 0.0)], "zone_radius": 8.0},
        "pedestrians": [{"id": "ped", "trajectory": _walk([(-14.0, 0.0), (0.0, 0.0)]),
                         "viewing": [[0.0, 1e9]]}],
        "vehicles": [{"id": "car", "crossing": _ll(0.0, 0.0),
                      "profile": {"path": [_ll(1.5, -75.0), _ll(1.5, 0.0), _ll(1.5, 30.0)],
                                  "speed_kmh": speed_kmh, "accel_distance": 20.0, "cruise_at": 7.0}}],
        "noise": {"gps_sigma": gps_sigma},
        # Alert on any non-zero risk so every speed yields a warning time to compare.
        "risk": {"threshold": 0.0},
    }


def n2n(seed: int = 1, gps_sigma: float = 1.0) -> dict:
    """Two viewing walkers and two cars at one crossing; the later walker overhears the first one's group."""
    return {
        "name": "n2n", "seed": seed, "tick": 0.1, "duration": 30.0,
        "map": {"segments": _segments([(-60.0, 0.0), (0.0, 0.0), (40.0, 0.0)], 20.0),
                "crossings": [_ll(0.0, 0.0)], "zone_radius": 12.0},
        "pedestrians": [
            {"id": "ped_a", "trajectory": _walk([(-17.0, 0.0), (0.0, 0.0)]), "viewing": [[0.0, 1e9]]},
            {"id": "ped_b", "trajectory": _walk([(-30.0, 0.0), (0.0, 0.0)]), "viewing": [[0.0, 1e9]]},
        ],
        "vehicles": [
            {"id": "car_a", "crossing": _ll(0.0, 0.0),
             "profile": {"path": [_ll(1.5, -75.0), _ll(1.5, 0.0), _ll(1.5, 30.0)],
                         "speed_kmh": 30.0, "accel_distance": 20.0, "cruise_at": 12.0}},
            {"id": "car_b", "crossing": _ll(0.0, 0.0),
             "profile": {"path": [_ll(-1.5, 75.0), _ll(-1.5, 0.0), _ll(-1.5, -30.0)],
                         "speed_kmh": 40.0, "accel_distance": 20.0, "cruise_at": 14.0}},
        ],
        "noise": {"gps_sigma": gps_sigma},
        "risk": {"threshold": 0.05},
    }


PRESETS: dict[str, Callable[..., dict]] = {
    "straight_corner": straight_corner,
    "rural_straight": lambda seed=1: straight_corner(gps_sigma=1.0, seed=seed),
    "energy_loop": energy_loop,
    "road75": road75,
    "n2n": n2n,
}
