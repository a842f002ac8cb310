"""Collision-risk assessment and alert policy.

Warning time is the earliest vehicle arrival minus the pedestrian's arrival.
A collision is likely when message delay + driver reaction + skid time
exceed it; driver reaction time is log-normal, so the probability is a
normal tail in log space.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

from .context import Motion

G = 9.81  # m/s^2

# Passenger-sedan constants, dry road.
DEFAULT_MASS = 1400.0   # kg
DEFAULT_MU_K = 0.8
DEFAULT_AREA = 2.7      # m^2
DEFAULT_CD = 0.25
DEFAULT_RHO = 1.23      # kg/m^3


class ZeroSpeed(ValueError):
    pass


class NoVehicles(ValueError):
    pass


@dataclass(frozen=True)
class VehicleKinematics:
    id: str
    speed: float
    t_c: float
    mass: float = DEFAULT_MASS
    area: float = DEFAULT_AREA
    drag: float = DEFAULT_CD
    mu_k: float = DEFAULT_MU_K
    f0: float = 0.0
    rho: float = DEFAULT_RHO

    def __post_init__(self):
        for name in ("speed", "mass", "area", "drag", "mu_k", "f0", "rho"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class ReactionModel:
    mu: float = 1.14     # log-scale mean
    sigma: float = 0.32  # log-scale std

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    def density(self, x: float) -> float:
        if x <= 0:
            return 0.0
        z = (math.log(x) - self.mu) / self.sigma
        return math.exp(-0.5 * z * z) / (x * self.sigma * math.sqrt(2 * math.pi))


@dataclass(frozen=True)
class RiskConfig:
    threshold: float = 0.5
    margin: float = 5.0          # s, slack on "t_p much larger than every t_c"
    escalation: int = 3          # ignored pedestrian alerts before the driver is told
    brisk_speed: float = 2.0     # m/s
    running_speed: float = 3.0   # m/s


@dataclass(frozen=True)
class PedestrianRiskState:
    d_p: float
    motion: Motion
    viewing: bool
    v_p: float = 0.0
    ignored_alert_count: int = 0

    def __post_init__(self):
        if self.d_p < 0 or self.v_p < 0:
            raise ValueError("d_p and v_p must be non-negative")


class Action(enum.Enum):
    NONE = "none"
    ALERT_PEDESTRIAN = "alert_pedestrian"
    ALERT_DRIVER = "alert_driver"


@dataclass(frozen=True)
class AlertDecision:
    action: Action
    t_warning: float | None = None
    probability: float | None = None
    vehicle: str | None = None

    def to_dict(self) -> dict:
        return {"action": self.action.value, "t_warning": self.t_warning,
                "probability": self.probability, "vehicle": self.vehicle}


NO_ALERT = AlertDecision(Action.NONE)


def time_to_cross_ped(d_p: float, v_p: float) -> float:
    if not v_p > 0:
        raise ZeroSpeed("pedestrian speed must be positive")
    return d_p / v_p


def user_warning_time(t_c_list: Sequence[float], t_p: float) -> float:
    if len(t_c_list) == 0:
        raise NoVehicles("no approaching vehicles")
    return min(t_c_list) - t_p


def resistance_force(k: VehicleKinematics, v_r: float) -> float:
    """Rolling friction + aerodynamic drag + residual resistance, in newtons."""
    return k.mu_k * k.mass * G + k.rho * k.area * k.drag * v_r ** 2 / 2 + k.f0


def skid_distance(k: VehicleKinematics) -> float:
    if not k.speed > 0:
        raise ZeroSpeed("vehicle speed must be positive")
    # Wind is negligible: air-relative speed is the vehicle speed.
    return k.mass * k.speed ** 2 / (2 * resistance_force(k, k.speed))


def skid_time(k: VehicleKinematics) -> float:
    return skid_distance(k) / k.speed


def reaction_exceedance(x: float, rm: ReactionModel = ReactionModel()) -> float:
    """P(reaction time > x)."""
    if x <= 0:
        return 1.0
    z = (math.log(x) - rm.mu) / rm.sigma
    return 0.5 * math.erfc(z / math.sqrt(2))


def collision_probability(t_warning: float, t_delay: float, t_skid: float,
                          rm: ReactionModel = ReactionModel()) -> float:
    return reaction_exceedance(t_warning - t_delay - t_skid, rm)


def pedestrian_speed(motion: Motion, cfg: RiskConfig) -> float | None:
    if motion is Motion.WALKING:
        return cfg.brisk_speed
    if motion is Motion.RUNNING:
        return cfg.running_speed
    return None


def assess(ped: PedestrianRiskState, vehicles: Sequence[VehicleKinematics], t_delay: float,
           rm: ReactionModel = ReactionModel(), cfg: RiskConfig = RiskConfig()
           ) -> tuple[float, float, VehicleKinematics] | None:
    """Warning time, collision probability and the earliest-arriving vehicle.

    None when the pedestrian is not moving or would reach the crossing long
    after every vehicle has passed.
    """
    if not vehicles:
        raise NoVehicles("no approaching vehicles")
    v_p = pedestrian_speed(ped.motion, cfg)
    if v_p is None:
        return None
    t_p = time_to_cross_ped(ped.d_p, v_p)
    if t_p > max(v.t_c for v in vehicles) + cfg.margin:
        return None
    first = min(vehicles, key=lambda v: (v.t_c, v.id))
    t_warning = user_warning_time([v.t_c for v in vehicles], t_p)
    prob = collision_probability(t_warning, t_delay, skid_time(first), rm)
    return t_warning, prob, first


def decide(ped: PedestrianRiskState, vehicles: Sequence[VehicleKinematics], t_delay: float,
           rm: ReactionModel = ReactionModel(), cfg: RiskConfig = RiskConfig()) -> AlertDecision:
    """Connected-mode decision from the vehicles' reported kinematics."""
    if ped.motion not in (Motion.WALKING, Motion.RUNNING) or not ped.viewing:
        return NO_ALERT
    if not vehicles:
        return NO_ALERT
    result = assess(ped, vehicles, t_delay, rm, cfg)
    if result is None:
        return NO_ALERT
    t_warning, prob, first = result
    if prob <= cfg.threshold:
        return AlertDecision(Action.NONE, t_warning, prob, first.id)
    action = Action.ALERT_DRIVER if ped.ignored_alert_count >= cfg.escalation else Action.ALERT_PEDESTRIAN
    return AlertDecision(action, t_warning, prob, first.id)


def decide_standalone(level: int, in_zone: bool, screen_on: bool, viewing: bool,
                      walking_toward_crossing: bool) -> AlertDecision:
    """Alert without vehicle data. Level 3 is the most permissive, level 1 the strictest."""
    if level not in (1, 2, 3):
        raise ValueError(f"safety level must be 1, 2 or 3, got {level}")
    alert = in_zone and screen_on
    if level <= 2:
        alert = alert and viewing
    if level == 1:
        alert = alert and walking_toward_crossing
    return AlertDecision(Action.ALERT_PEDESTRIAN if alert else Action.NONE)
