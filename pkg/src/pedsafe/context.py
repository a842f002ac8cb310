"""Phone-viewing detection from the accelerometer, and gross motion class.

A walker who reads the phone steadies it, so the acceleration magnitude
varies less. The detector low-pass filters each axis, takes the magnitude,
and compares its mean absolute deviation over a sliding window with a trained
threshold.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

GRAVITY = 9.81
SAMPLE_RATE = 50.0  # Hz


class ContextError(ValueError):
    pass


class EmptyWindow(ContextError):
    pass


class LengthMismatch(ContextError):
    pass


class Untrained(ContextError):
    pass


@dataclass(frozen=True)
class AccelSample:
    t: float
    ax: float
    ay: float
    az: float


@dataclass
class ViewingModel:
    gamma: float | None = None
    filter_alpha: float = 0.2
    window_span: float = 3.0

    def __post_init__(self):
        if not 0.0 < self.filter_alpha <= 1.0:
            raise ValueError("filter_alpha must be in (0, 1]")
        if not self.window_span > 0:
            raise ValueError("window_span must be positive")


class Motion(enum.Enum):
    STATIONARY = "stationary"
    WALKING = "walking"
    RUNNING = "running"


def low_pass(samples: Iterable[AccelSample], filter_alpha: float) -> list[AccelSample]:
    """First-order exponential smoothing on each axis, seeded with the first sample."""
    if not 0.0 < filter_alpha <= 1.0:
        raise ValueError("filter_alpha must be in (0, 1]")
    out: list[AccelSample] = []
    prev = None
    for s in samples:
        if prev is None:
            prev = (s.ax, s.ay, s.az)
        else:
            prev = tuple(filter_alpha * x + (1 - filter_alpha) * y
                         for x, y in zip((s.ax, s.ay, s.az), prev))
        out.append(AccelSample(s.t, *prev))
    return out


def magnitude(a: AccelSample | Sequence[float]) -> float:
    if isinstance(a, AccelSample):
        a = (a.ax, a.ay, a.az)
    return math.sqrt(sum(v * v for v in a))


def mad(w: Sequence[float]) -> float:
    """Mean absolute deviation about the mean."""
    arr = np.asarray(w, dtype=float)
    if arr.size == 0:
        raise EmptyWindow("window is empty")
    return float(np.mean(np.abs(arr - arr.mean())))


def _paired(x: Sequence[float], y: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    if len(x) != len(y):
        raise LengthMismatch(f"{len(x)} viewing vs {len(y)} non-viewing values")
    if len(x) == 0:
        raise EmptyWindow("no training values")
    return np.asarray(x, dtype=float), np.asarray(y, dtype=float)


def train_threshold(x: Sequence[float], y: Sequence[float], truncate: bool = False) -> float:
    """Mean of the pairwise midpoints of viewing (x) and non-viewing (y) MADs.

    With ``truncate`` the longer list is cut to the shorter one instead of raising.
    """
    if truncate:
        n = min(len(x), len(y))
        x, y = list(x)[:n], list(y)[:n]
    xa, ya = _paired(x, y)
    return float(np.mean((xa + ya) / 2))


def delta_metric(x: Sequence[float], y: Sequence[float]) -> float:
    """Mean absolute pairwise gap between viewing and non-viewing MADs."""
    xa, ya = _paired(x, y)
    return float(np.mean(np.abs(ya - xa)))


def detect_viewing(current_mad: float, gamma: float | None) -> bool:
    if gamma is None or not gamma > 0:
        raise Untrained("viewing threshold has not been trained")
    return current_mad < gamma


def classify_motion(speed: float, walk_min: float = 0.3, run_min: float = 2.5) -> Motion:
    if speed < 0:
        raise ValueError("speed must be non-negative")
    if speed < walk_min:
        return Motion.STATIONARY
    if speed < run_min:
        return Motion.WALKING
    return Motion.RUNNING


class ViewingDetector:
    """Per-pedestrian streaming detector over an overlapping sliding window."""

    def __init__(self, model: ViewingModel, sample_rate: float = SAMPLE_RATE):
        self.model = model
        self.size = max(1, round(model.window_span * sample_rate))
        self.mags: deque[float] = deque(maxlen=self.size)
        self._filtered: tuple[float, float, float] | None = None

    def push(self, s: AccelSample) -> None:
        a = self.model.filter_alpha
        raw = (s.ax, s.ay, s.az)
        if self._filtered is None:
            self._filtered = raw
        else:
            self._filtered = tuple(a * x + (1 - a) * y for x, y in zip(raw, self._filtered))
        self.mags.append(magnitude(self._filtered))

    @property
    def full(self) -> bool:
        return len(self.mags) == self.size

    def current_mad(self) -> float:
        return mad(self.mags)

    def viewing(self) -> bool | None:
        """Detector output, or None while the window is still filling."""
        if not self.full:
            return None
        return detect_viewing(self.current_mad(), self.model.gamma)


def synthetic_accel(rng: np.random.Generator, duration: float, viewing: bool,
                    sample_rate: float = SAMPLE_RATE, noise: float = 0.05,
                    gait_amplitude: float = 1.0, gait_freq: float = 2.0,
                    t0: float = 0.0) -> np.ndarray:
    """Raw (t, ax, ay, az) rows for a walker holding the phone.

    The phone lies roughly flat, so gravity sits on z. Without viewing, the
    gait adds a sinusoid on z; in both cases the magnitude carries Gaussian noise.
    """
    n = int(round(duration * sample_rate))
    t = t0 + np.arange(n) / sample_rate
    mag = GRAVITY + noise * rng.standard_normal(n)
    if not viewing:
        phase = rng.uniform(0, 2 * np.pi)
        mag = mag + gait_amplitude * np.sin(2 * np.pi * gait_freq * (t - t0) + phase)
    tilt = rng.normal(0.0, 0.05, size=2)
    direction = np.array([tilt[0], tilt[1], 1.0])
    direction /= np.linalg.norm(direction)
    return np.column_stack([t, np.outer(mag, direction)])


def window_mads(rows: np.ndarray, span: float, filter_alpha: float,
                sample_rate: float = SAMPLE_RATE) -> list[float]:
    """MADs over consecutive non-overlapping windows of a raw trace."""
    samples = [AccelSample(*r) for r in rows]
    mags = [magnitude(s) for s in low_pass(samples, filter_alpha)]
    size = max(1, round(span * sample_rate))
    return [mad(mags[i:i + size]) for i in range(0, len(mags) - size + 1, size)]


def training_corpus(rng: np.random.Generator, n_windows: int, span: float = 3.0,
                    filter_alpha: float = 0.2, **accel) -> tuple[list[float], list[float]]:
    """Viewing and non-viewing MADs from ``n_windows`` independent windows each."""
    x, y = [], []
    for _ in range(n_windows):
        x.extend(window_mads(synthetic_accel(rng, span, True, **accel), span, filter_alpha))
        y.extend(window_mads(synthetic_accel(rng, span, False, **accel), span, filter_alpha))
    return x, y
