"""catsim: a deterministic multi-vehicle driving testbed.

Ackermann kinematic plants, raycast range sensors, an in-process pub/sub
bus, follower and safety controllers, and bit-exact bag record/replay, all
scheduled on one fixed-step tick grid.
"""

__version__ = "0.1.0"

from .core import (  # noqa: F401
    Pose2D,
    SimTime,
    VehicleParams,
    VehicleState,
    VelocityCommand,
    normalize_angle,
    sim_time_seconds,
)
