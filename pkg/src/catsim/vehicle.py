"""Kinematic Ackermann vehicle plant.

Steering geometry splits the single commanded angle into per-wheel front
angles; rear wheel speeds follow the circle of curvature; actuators apply
a rate limit on steering and a PID-with-slew-clamp on velocity; the pose
integrates along exact circular arcs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .core import Pose2D, SimTime, VehicleParams, VehicleState, VelocityCommand, normalize_angle
from .errors import CommandRejected


@dataclass(frozen=True, slots=True)
class ActuatorState:
    """Achieved actuator values after limits, plus PID bookkeeping."""

    v_applied: float = 0.0  # m/s
    delta_applied: float = 0.0  # rad
    pid_integral: float = 0.0  # accumulated velocity error x time, m
    pid_prev_error: float = 0.0  # m/s, for the derivative term


def ackermann_split(delta: float, params: VehicleParams) -> tuple[float, float]:
    """Split the commanded steering angle into (inner, outer) wheel angles.

    Solves cot(inner) = cot(delta) - w/(2l) and cot(outer) = cot(delta) + w/(2l),
    so that cot(outer) - cot(inner) = w/l and cot(delta) is the mean of the
    two cotangents. Both results carry the sign of delta; inner is the wheel
    on the turn side.
    """
    if abs(delta) > params.delta_max:
        raise CommandRejected(f"|delta|={abs(delta):.4f} exceeds delta_max={params.delta_max:.4f}")
    if delta == 0.0:
        return (0.0, 0.0)
    half = params.w / (2.0 * params.l)
    cot_mag = 1.0 / math.tan(abs(delta))
    inner = math.atan(1.0 / (cot_mag - half))
    outer = math.atan(1.0 / (cot_mag + half))
    if delta < 0.0:
        return (-inner, -outer)
    return (inner, outer)


def wheel_angles(delta: float, params: VehicleParams) -> tuple[float, float]:
    """Front (left, right) wheel angles for a commanded steering angle."""
    inner, outer = ackermann_split(delta, params)
    if delta > 0.0:  # left turn: left wheel is inner
        return (inner, outer)
    return (outer, inner)


def wheel_speed_modifiers(delta: float, v: float, params: VehicleParams) -> tuple[float, float]:
    """Rear wheel angular velocities (left, right) on the circle of curvature.

    Each rear wheel's linear speed is scaled by its own turning radius
    R -+ w/2 about the common center, the unique slip-free assignment.
    Straight line (delta = 0) degenerates to equal wheels.
    """
    if delta == 0.0:
        omega = v / params.r_wheel
        return (omega, omega)
    radius = params.l / math.tan(delta)  # signed: > 0 for a left turn
    v_left = v * (radius - params.w / 2.0) / radius
    v_right = v * (radius + params.w / 2.0) / radius
    return (v_left / params.r_wheel, v_right / params.r_wheel)


def _clamp(x: float, lo: float, hi: float) -> float:
    return lo if x < lo else hi if x > hi else x


def step_actuators(
    state: ActuatorState,
    cmd: VelocityCommand,
    params: VehicleParams,
    step: float,
) -> ActuatorState:
    """Advance actuators one step toward the commanded setpoints.

    Steering moves toward the clamped setpoint at most delta_rate_max*step.
    The PID output on velocity error is an acceleration request; the
    resulting change is slew-clamped to a_max*step and the speed saturated
    to [0, v_max]. The integral freezes on any step where the output was
    slew- or saturation-clamped (conditional anti-windup).
    """
    if cmd.v_set < 0.0:
        raise CommandRejected(f"reverse command v_set={cmd.v_set}")

    delta_target = _clamp(cmd.delta_set, -params.delta_max, params.delta_max)
    max_dd = params.delta_rate_max * step
    delta_new = state.delta_applied + _clamp(delta_target - state.delta_applied, -max_dd, max_dd)

    gains = params.pid
    error = cmd.v_set - state.v_applied
    integral_cand = state.pid_integral + error * step
    derivative = (error - state.pid_prev_error) / step
    accel_request = gains.kp * error + gains.ki * integral_cand + gains.kd * derivative

    max_dv = params.a_max * step
    dv = accel_request * step
    clamped = abs(dv) > max_dv
    dv = _clamp(dv, -max_dv, max_dv)
    v_new = state.v_applied + dv
    if v_new < 0.0 or v_new > params.v_max:
        clamped = True
        v_new = _clamp(v_new, 0.0, params.v_max)

    integral = state.pid_integral if clamped else integral_cand
    return ActuatorState(
        v_applied=v_new,
        delta_applied=delta_new,
        pid_integral=integral,
        pid_prev_error=error,
    )


def integrate_pose(
    state: VehicleState,
    actuators: ActuatorState,
    params: VehicleParams,
    step: float,
) -> VehicleState:
    """Advance the pose one step with exact-arc rear-axle bicycle kinematics.

    With steering held, the rear axle moves along the circle of radius
    l/tan(delta) about the instantaneous center; delta = 0 is the straight
    line limit. Wheel angles and speeds are refreshed from the applied
    steering and speed.
    """
    v = actuators.v_applied
    delta = actuators.delta_applied
    x, y, theta = state.pose.x, state.pose.y, state.pose.theta

    tan_d = math.tan(delta)
    if tan_d == 0.0 or v == 0.0:
        if v != 0.0:
            x += v * math.cos(theta) * step
            y += v * math.sin(theta) * step
        theta_new = theta
    else:
        radius = params.l / tan_d
        dtheta = v * step / radius
        theta_new = theta + dtheta
        x += radius * (math.sin(theta_new) - math.sin(theta))
        y -= radius * (math.cos(theta_new) - math.cos(theta))

    d_left, d_right = wheel_angles(delta, params)
    o_left, o_right = wheel_speed_modifiers(delta, v, params)
    return VehicleState(
        pose=Pose2D(x, y, normalize_angle(theta_new)),
        v=v,
        delta=delta,
        delta_left=d_left,
        delta_right=d_right,
        omega_left=o_left,
        omega_right=o_right,
        t=state.t.advanced(),
    )
