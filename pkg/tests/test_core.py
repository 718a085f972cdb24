import math

import pytest
from hypothesis import given, strategies as st

from catsim.core import (
    Pose2D,
    SimTime,
    VehicleParams,
    VelocityCommand,
    normalize_angle,
    sim_time_seconds,
)
from catsim.errors import DomainError


def naive_wrap(a):
    # independent oracle: shift by 2*pi until inside (-pi, pi]
    while a > math.pi:
        a -= 2 * math.pi
    while a <= -math.pi:
        a += 2 * math.pi
    return a


def test_normalize_identity():
    assert normalize_angle(0.0) == 0.0


def test_normalize_three_pi():
    assert normalize_angle(3 * math.pi) == pytest.approx(math.pi, abs=1e-12)


def test_normalize_negative_three_halves_pi():
    expected = naive_wrap(-3 * math.pi / 2)
    assert expected == pytest.approx(math.pi / 2, abs=1e-12)
    assert normalize_angle(-3 * math.pi / 2) == pytest.approx(expected, abs=1e-12)


@given(st.floats(min_value=-50.0, max_value=50.0))
def test_normalize_matches_oracle_and_range(a):
    r = normalize_angle(a)
    assert -math.pi < r <= math.pi
    assert r == pytest.approx(naive_wrap(a), abs=1e-9)
    # congruent mod 2*pi
    assert math.remainder(r - a, 2 * math.pi) == pytest.approx(0.0, abs=1e-9)


@given(st.floats(min_value=-1e6, max_value=1e6))
def test_normalize_idempotent(a):
    once = normalize_angle(a)
    assert normalize_angle(once) == once


def test_normalize_rejects_non_finite():
    with pytest.raises(DomainError):
        normalize_angle(math.inf)
    with pytest.raises(DomainError):
        normalize_angle(math.nan)


def test_sim_time_zero():
    assert sim_time_seconds(SimTime(0, 0.001)) == 0.0


def test_sim_time_one_second():
    assert sim_time_seconds(SimTime(1000, 0.001)) == 1.0


def test_sim_time_rangefinder_period():
    # 75 ticks of 1/75 s each: one second of scan periods
    assert sim_time_seconds(SimTime(75, 1.0 / 75.0)) == 75 * (1.0 / 75.0)
    assert sim_time_seconds(SimTime(75, 1.0 / 75.0)) == pytest.approx(1.0, abs=1e-12)


def test_sim_time_validation():
    with pytest.raises(DomainError):
        SimTime(-1, 0.001)
    with pytest.raises(DomainError):
        SimTime(0, 0.0)


def test_pose_normalized():
    p = Pose2D(1.0, 2.0, 3 * math.pi).normalized()
    assert p.theta == pytest.approx(math.pi, abs=1e-12)
    assert (p.x, p.y) == (1.0, 2.0)


def test_params_positive_validation():
    with pytest.raises(DomainError):
        VehicleParams(l=0.0)
    with pytest.raises(DomainError):
        VehicleParams(delta_max=math.pi / 2)


def test_params_override_nested_pid():
    p = VehicleParams().override(v_max=20.0, pid={"kp": 10.0})
    assert p.v_max == 20.0
    assert p.pid.kp == 10.0
    assert p.pid.ki == VehicleParams().pid.ki


def test_command_rejects_reverse_and_nonfinite():
    with pytest.raises(DomainError):
        VelocityCommand(v_set=-1.0)
    with pytest.raises(DomainError):
        VelocityCommand(v_set=math.nan)
    VelocityCommand(v_set=0.0, delta_set=-0.2)  # valid
