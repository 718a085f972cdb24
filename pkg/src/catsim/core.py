"""Shared domain types: planar pose, vehicle state/parameters, commands, sim time.

All angles are radians, counterclockwise positive; a positive steering
angle is a left turn. Degrees never appear outside file-format boundaries.
Every type here is an immutable value type and safe to share across threads.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .errors import DomainError

TWO_PI = 2.0 * math.pi


def normalize_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]. Idempotent for values already in range."""
    if not math.isfinite(a):
        raise DomainError(f"angle must be finite, got {a!r}")
    r = math.fmod(a, TWO_PI)
    if r <= -math.pi:
        r += TWO_PI
    elif r > math.pi:
        r -= TWO_PI
    return r


@dataclass(frozen=True, slots=True)
class SimTime:
    """Pure simulation time: a count of fixed steps. No wall clock anywhere."""

    ticks: int = 0
    step: float = 0.001  # s per tick

    def __post_init__(self):
        if self.ticks < 0:
            raise DomainError(f"ticks must be >= 0, got {self.ticks}")
        if not (self.step > 0.0):
            raise DomainError(f"step must be > 0, got {self.step}")

    @property
    def seconds(self) -> float:
        return self.ticks * self.step

    def advanced(self, n: int = 1) -> "SimTime":
        return SimTime(self.ticks + n, self.step)


def sim_time_seconds(t: SimTime) -> float:
    """Seconds since simulation start: ticks x step."""
    return t.seconds


@dataclass(frozen=True, slots=True)
class Pose2D:
    x: float = 0.0  # m
    y: float = 0.0  # m
    theta: float = 0.0  # rad, ccw from +x, kept in (-pi, pi]

    def normalized(self) -> "Pose2D":
        return Pose2D(self.x, self.y, normalize_angle(self.theta))


@dataclass(frozen=True, slots=True)
class PidGains:
    kp: float = 2.0
    ki: float = 0.5
    kd: float = 0.0


@dataclass(frozen=True, slots=True)
class VehicleParams:
    """Geometry and actuator limits of one vehicle.

    Defaults are placeholders for a mid-size SUV and carry no authority;
    scenarios override them through the world file.
    """

    l: float = 2.62  # wheelbase, m
    w: float = 1.57  # track width, m
    r_wheel: float = 0.36  # rear wheel radius, m
    v_max: float = 15.0  # m/s
    a_max: float = 3.0  # m/s^2, accel and decel clamp
    delta_max: float = 0.5236  # rad
    delta_rate_max: float = 0.5  # rad/s
    pid: PidGains = field(default_factory=PidGains)
    # Collision footprint: body box = wheelbase + overhangs, width + margin.
    overhang_front: float = 0.9  # m beyond the front axle
    overhang_rear: float = 0.9  # m behind the rear axle
    body_width_margin: float = 0.3  # m added to track width
    body_height: float = 1.5  # m

    def __post_init__(self):
        for name in ("l", "w", "r_wheel", "v_max", "a_max", "delta_max", "delta_rate_max"):
            if not (getattr(self, name) > 0.0):
                raise DomainError(f"VehicleParams.{name} must be > 0")
        if self.delta_max >= math.pi / 2:
            raise DomainError("delta_max must be < pi/2")

    def override(self, **kwargs) -> "VehicleParams":
        if "pid" in kwargs and isinstance(kwargs["pid"], dict):
            kwargs["pid"] = replace(self.pid, **kwargs["pid"])
        return replace(self, **kwargs)


@dataclass(frozen=True, slots=True)
class VelocityCommand:
    """The uniform control interface: one velocity and one steering setpoint.

    Reverse is out of scope, so v_set >= 0.
    """

    v_set: float = 0.0  # m/s
    delta_set: float = 0.0  # rad

    def __post_init__(self):
        if not (math.isfinite(self.v_set) and math.isfinite(self.delta_set)):
            raise DomainError("command fields must be finite")
        if self.v_set < 0.0:
            raise DomainError(f"v_set must be >= 0 (reverse unsupported), got {self.v_set}")


@dataclass(frozen=True, slots=True)
class VehicleState:
    """Full kinematic state of one vehicle at a simulation instant."""

    pose: Pose2D = field(default_factory=Pose2D)
    v: float = 0.0  # m/s at rear axle
    delta: float = 0.0  # effective bicycle steering angle, rad
    delta_left: float = 0.0  # front wheel angles, rad
    delta_right: float = 0.0
    omega_left: float = 0.0  # rear wheel angular velocities, rad/s
    omega_right: float = 0.0
    t: SimTime = field(default_factory=SimTime)
