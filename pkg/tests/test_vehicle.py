import math
import random

import pytest

from catsim.core import Pose2D, SimTime, VehicleParams, VehicleState, VelocityCommand
from catsim.errors import CommandRejected
from catsim.vehicle import (
    ActuatorState,
    ackermann_split,
    integrate_pose,
    step_actuators,
    wheel_angles,
    wheel_speed_modifiers,
)

PARAMS = VehicleParams()


def cot(a):
    return 1.0 / math.tan(a)


class TestAckermannSplit:
    def test_straight_ahead(self):
        assert ackermann_split(0.0, PARAMS) == (0.0, 0.0)

    def test_example_left_turn(self):
        # oracle: solve the two steering equations algebraically
        delta = 0.2
        expected_inner = math.atan(1.0 / (cot(delta) - PARAMS.w / (2 * PARAMS.l)))
        expected_outer = math.atan(1.0 / (cot(delta) + PARAMS.w / (2 * PARAMS.l)))
        inner, outer = ackermann_split(delta, PARAMS)
        assert inner == pytest.approx(expected_inner, abs=1e-12)
        assert outer == pytest.approx(expected_outer, abs=1e-12)
        # both defining equations hold numerically
        assert cot(outer) - cot(inner) == pytest.approx(PARAMS.w / PARAMS.l, abs=1e-9)
        assert (cot(outer) + cot(inner)) / 2 == pytest.approx(cot(delta), abs=1e-9)

    def test_identity_over_random_deltas(self):
        rng = random.Random(7)
        for _ in range(1000):
            delta = 0.0
            while delta == 0.0:
                delta = rng.uniform(-0.5, 0.5)
            inner, outer = ackermann_split(delta, PARAMS)
            diff = cot(outer) - cot(inner)
            assert abs(abs(diff) - PARAMS.w / PARAMS.l) < 1e-9
            assert abs((cot(outer) + cot(inner)) / 2 - cot(delta)) < 1e-9
            # inner wheel always turns harder
            assert abs(inner) > abs(outer)

    def test_rejects_over_limit(self):
        with pytest.raises(CommandRejected):
            ackermann_split(PARAMS.delta_max + 0.01, PARAMS)

    def test_wheel_assignment(self):
        left, right = wheel_angles(0.2, PARAMS)
        assert left > right > 0  # left turn: left wheel is inner
        left, right = wheel_angles(-0.2, PARAMS)
        assert left < 0 and right < 0 and abs(right) > abs(left)


class TestWheelSpeeds:
    def test_straight_line(self):
        wl, wr = wheel_speed_modifiers(0.0, 5.0, PARAMS)
        assert wl == wr == pytest.approx(5.0 / 0.36, abs=1e-12)

    def test_left_turn_inner_slower(self):
        wl, wr = wheel_speed_modifiers(0.2, 5.0, PARAMS)
        assert wl < wr

    def test_ratio_matches_radii(self):
        radius = PARAMS.l / math.tan(0.2)
        wl, wr = wheel_speed_modifiers(0.2, 5.0, PARAMS)
        assert wl / wr == pytest.approx((radius - PARAMS.w / 2) / (radius + PARAMS.w / 2), abs=1e-12)

    def test_mean_linear_speed_is_v(self):
        rng = random.Random(3)
        for _ in range(200):
            delta = rng.uniform(-0.5, 0.5)
            v = rng.uniform(0.0, 15.0)
            wl, wr = wheel_speed_modifiers(delta, v, PARAMS)
            assert (wl + wr) / 2 * PARAMS.r_wheel == pytest.approx(v, abs=1e-9)


class TestStepActuators:
    def test_at_setpoint_unchanged(self):
        state = ActuatorState(v_applied=5.0, delta_applied=0.1, pid_integral=0.0)
        cmd = VelocityCommand(5.0, 0.1)
        out = step_actuators(state, cmd, PARAMS, 0.001)
        assert out.v_applied == 5.0
        assert out.delta_applied == 0.1

    def test_accel_clamp_over_one_second(self):
        # oracle: slew clamp caps speed gain at a_max * t
        params = PARAMS.override(a_max=2.0)
        state = ActuatorState()
        cmd = VelocityCommand(10.0, 0.0)
        for _ in range(1000):
            state = step_actuators(state, cmd, params, 0.001)
        assert state.v_applied <= 2.0 + 1e-9
        assert state.v_applied > 1.0  # and it actually moves

    def test_steering_rate_limit(self):
        state = ActuatorState()
        cmd = VelocityCommand(0.0, 0.5)
        ticks_to_target = None
        for k in range(1, 1201):
            state = step_actuators(state, cmd, PARAMS, 0.001)
            if ticks_to_target is None and state.delta_applied >= 0.5 - 1e-12:
                ticks_to_target = k
        # 0.5 rad at 0.5 rad/s cannot complete before 1.0 s
        assert ticks_to_target is not None and ticks_to_target >= 1000

    def test_slew_bounds_random_commands(self):
        rng = random.Random(11)
        state = ActuatorState()
        step = 0.001
        for _ in range(2000):
            cmd = VelocityCommand(rng.uniform(0, 15), rng.uniform(-0.6, 0.6))
            nxt = step_actuators(state, cmd, PARAMS, step)
            assert abs(nxt.v_applied - state.v_applied) <= PARAMS.a_max * step + 1e-12
            assert abs(nxt.delta_applied - state.delta_applied) <= PARAMS.delta_rate_max * step + 1e-12
            assert abs(nxt.delta_applied) <= PARAMS.delta_max
            assert 0.0 <= nxt.v_applied <= PARAMS.v_max
            state = nxt

    def test_converges_to_setpoint(self):
        # default gains put the slow closed-loop pole near -0.3/s; give it 20 s
        state = ActuatorState()
        cmd = VelocityCommand(5.0, 0.0)
        for _ in range(20000):
            state = step_actuators(state, cmd, PARAMS, 0.001)
        assert state.v_applied == pytest.approx(5.0, abs=5e-3)

    def test_reverse_rejected(self):
        cmd = VelocityCommand(0.0, 0.0)
        object.__setattr__(cmd, "v_set", -1.0)  # bypass constructor check
        with pytest.raises(CommandRejected):
            step_actuators(ActuatorState(), cmd, PARAMS, 0.001)


class TestIntegratePose:
    def test_zero_speed_holds_pose(self):
        state = VehicleState(pose=Pose2D(1.0, 2.0, 0.3))
        out = integrate_pose(state, ActuatorState(v_applied=0.0, delta_applied=0.2), PARAMS, 0.001)
        assert (out.pose.x, out.pose.y, out.pose.theta) == (1.0, 2.0, 0.3)
        assert out.t.ticks == 1

    def test_straight_line_exact(self):
        state = VehicleState()
        out = integrate_pose(state, ActuatorState(v_applied=5.0), PARAMS, 0.001)
        assert out.pose.x == 0.005
        assert out.pose.y == 0.0

    def test_circle_closure_and_radius(self):
        # one full lap: choose the step so the lap is an integer tick count
        v, delta = 5.0, 0.2
        radius = PARAMS.l / math.tan(delta)
        n = 16384
        step = (2 * math.pi * radius / v) / n
        state = VehicleState(pose=Pose2D(0.0, 0.0, 0.0))
        act = ActuatorState(v_applied=v, delta_applied=delta)
        xs, ys = [], []
        for _ in range(n):
            state = integrate_pose(state, act, PARAMS, step)
            xs.append(state.pose.x)
            ys.append(state.pose.y)
        assert math.hypot(state.pose.x, state.pose.y) < 1e-6
        cx = sum(xs) / n
        cy = sum(ys) / n
        radii = [math.hypot(x - cx, y - cy) for x, y in zip(xs, ys)]
        assert sum(radii) / n == pytest.approx(radius, abs=1e-6)
        assert max(radii) - min(radii) < 1e-6

    def test_matches_dense_euler_oracle(self):
        # oracle: naive Euler at a 100x finer step over a short arc
        v, delta, duration = 5.0, 0.2, 0.5
        x = y = theta = 0.0
        fine = 1e-5
        for _ in range(int(duration / fine)):
            x += v * math.cos(theta) * fine
            y += v * math.sin(theta) * fine
            theta += v * math.tan(delta) / PARAMS.l * fine
        state = VehicleState()
        act = ActuatorState(v_applied=v, delta_applied=delta)
        coarse = 0.001
        for _ in range(int(duration / coarse)):
            state = integrate_pose(state, act, PARAMS, coarse)
        assert state.pose.x == pytest.approx(x, abs=1e-4)
        assert state.pose.y == pytest.approx(y, abs=1e-4)
        assert state.pose.theta == pytest.approx(theta, abs=1e-4)

    def test_wheel_fields_refreshed(self):
        state = VehicleState()
        out = integrate_pose(state, ActuatorState(v_applied=5.0, delta_applied=0.2), PARAMS, 0.001)
        assert out.delta == 0.2
        assert out.delta_left > out.delta_right  # left turn: inner wheel harder
        assert out.omega_left < out.omega_right

    def test_determinism_bit_identical(self):
        def run():
            rng = random.Random(99)
            state = VehicleState()
            act = ActuatorState()
            for _ in range(500):
                cmd = VelocityCommand(rng.uniform(0, 10), rng.uniform(-0.5, 0.5))
                act = step_actuators(act, cmd, PARAMS, 0.001)
                state = integrate_pose(state, act, PARAMS, 0.001)
            return state

        assert run() == run()
