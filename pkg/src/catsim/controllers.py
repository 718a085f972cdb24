"""Control nodes with a uniform interface: latest sensor inputs in,
VelocityCommand out.

Five kinds ship: a constant-profile leader, a distance follower, a fuzzy
time-headway follower, a teleoperation sink, and the obstaclestopper
velocity filter the engine applies between a controller's output and the
plant. Nodes are pure functions of their input trace plus explicit internal
state, so replaying the same inputs reproduces the same commands bit for bit.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources

from .core import SimTime, VehicleParams, VelocityCommand
from .errors import BindingError
from .sensors import LaserScan
from .world import ControllerBinding, StopperConfig  # noqa: F401  (re-export)


@dataclass(frozen=True, slots=True)
class HeadwayEstimate:
    d: float  # m, meaningful only when valid
    valid: bool

    @staticmethod
    def none() -> "HeadwayEstimate":
        return HeadwayEstimate(d=math.inf, valid=False)


def headway_from_scan(scan: LaserScan, cone_half_angle: float) -> HeadwayEstimate:
    """Minimum range among beams within the forward cone; invalid when every
    such beam reports no return."""
    if not (0.0 < cone_half_angle <= math.pi / 2):
        raise BindingError(f"cone_half_angle must be in (0, pi/2], got {cone_half_angle}")
    forward = math.pi / 2  # straight ahead in sweep coordinates
    best = math.inf
    for k, r in enumerate(scan.ranges):
        if abs(scan.angle_min + k * scan.angle_increment - forward) <= cone_half_angle:
            if r < best:
                best = r
    if math.isinf(best):
        return HeadwayEstimate.none()
    return HeadwayEstimate(d=best, valid=True)


def constant_profile(schedule: list[tuple[float, float]], t_seconds: float,
                     delta_schedule: list[tuple[float, float]] | None = None) -> VelocityCommand:
    """Piecewise-constant profile: the entry with the largest time <= t wins;
    before the first entry the command is zero."""
    if not schedule:
        raise BindingError("constant profile needs a non-empty schedule")

    def lookup(entries, t):
        value = 0.0
        for t_i, v_i in entries:
            if t_i <= t:
                value = v_i
            else:
                break
        return value

    v = lookup(schedule, t_seconds)
    delta = lookup(delta_schedule, t_seconds) if delta_schedule else 0.0
    return VelocityCommand(v_set=max(v, 0.0), delta_set=delta)


def follower_step(headway: HeadwayEstimate, self_v: float, d_target: float,
                  k_gain: float, v_cap: float, step_scale: float = 1.0) -> VelocityCommand:
    """Proportional distance follower: speed up when the gap exceeds the
    target, slow down when inside it; stop when there is no target."""
    if not headway.valid:
        return VelocityCommand(0.0, 0.0)
    v = self_v + k_gain * (headway.d - d_target) * step_scale
    return VelocityCommand(v_set=min(max(v, 0.0), v_cap), delta_set=0.0)


def fuzzy_distance_error(headway: float | None, v: float, tau_target: float,
                         v_floor: float = 0.1) -> float:
    """Headway expressed as seconds ahead of the target time gap; the speed
    floor guards the division at standstill. Missing headway maps to the
    "far" sentinel (+inf), which downstream clamping treats as maximal."""
    if headway is None or math.isinf(headway):
        return math.inf
    return headway / max(v, v_floor) - tau_target


class FuzzyTable:
    """Triangular-membership rule base over (distance error, error rate),
    loaded from data so scenarios can swap it without touching code."""

    def __init__(self, doc: dict):
        self.error_sets = doc["error_sets"]
        self.error_half_width = float(doc["error_half_width"])
        self.rate_sets = doc["rate_sets"]
        self.rate_half_width = float(doc["rate_half_width"])
        self.output_centers = doc["output_centers"]
        self.rules = doc["rules"]

    @staticmethod
    def _memberships(x: float, sets: dict[str, float], half_width: float) -> dict[str, float]:
        x = min(max(x, -1.0), 1.0)
        return {label: max(0.0, 1.0 - abs(x - center) / half_width)
                for label, center in sets.items()}

    def decide(self, error_norm: float, rate_norm: float) -> float:
        """Centroid of the fired singleton outputs, in [-1, 1]."""
        mu_e = self._memberships(error_norm, self.error_sets, self.error_half_width)
        mu_r = self._memberships(rate_norm, self.rate_sets, self.rate_half_width)
        num = 0.0
        den = 0.0
        for e_label, row in self.rules.items():
            for r_label, out_label in row.items():
                w = min(mu_e[e_label], mu_r[r_label])
                if w > 0.0:
                    num += w * self.output_centers[out_label]
                    den += w
        return num / den if den > 0.0 else 0.0


_DEFAULT_TABLE: FuzzyTable | None = None


def load_default_table() -> FuzzyTable:
    global _DEFAULT_TABLE
    if _DEFAULT_TABLE is None:
        doc = json.loads(resources.files("catsim.data").joinpath("fuzzy_rules.json").read_text())
        _DEFAULT_TABLE = FuzzyTable(doc)
    return _DEFAULT_TABLE


def fuzzy_decide(error_seconds: float, error_rate: float, delta_v_max: float,
                 error_max: float = 4.0, rate_max: float = 1.0,
                 table: FuzzyTable | None = None) -> float:
    """Velocity delta in [-delta_v_max, +delta_v_max] from the rule base.
    Inputs saturate at error_max seconds and rate_max seconds/second."""
    table = table or load_default_table()
    e = min(max(error_seconds / error_max, -1.0), 1.0) if math.isfinite(error_seconds) else 1.0
    r = min(max(error_rate / rate_max, -1.0), 1.0)
    return table.decide(e, r) * delta_v_max


def obstaclestopper_filter(cmd_in: VelocityCommand, headway: HeadwayEstimate,
                           cfg: StopperConfig) -> VelocityCommand:
    """Cap commanded speed by the braking envelope sqrt(2 a (d - d_safe)).

    Never raises the command. Without a detection the command passes
    through unchanged (strict mode stops instead). Steering is untouched.
    """
    if not headway.valid:
        if cfg.strict:
            return VelocityCommand(0.0, cmd_in.delta_set)
        return cmd_in
    v_env = math.sqrt(2.0 * cfg.a_brake * max(headway.d - cfg.d_safe, 0.0))
    return VelocityCommand(v_set=min(cmd_in.v_set, v_env), delta_set=cmd_in.delta_set)


# --- controller nodes ---------------------------------------------------------

class Node:
    """Base: subscribes to its inputs at attach time, consumes deliveries
    every tick, and produces a command on its period ticks."""

    def attach(self, bus, vehicle: str):
        pass

    def poll(self):
        pass

    def compute(self, t: SimTime) -> VelocityCommand:
        raise NotImplementedError


class ConstantNode(Node):
    def __init__(self, params: dict):
        schedule = params.get("schedule")
        if not schedule:
            raise BindingError("constant controller needs a non-empty 'schedule'")
        self.schedule = [(float(a), float(b)) for a, b in schedule]
        raw_delta = params.get("delta_schedule")
        self.delta_schedule = [(float(a), float(b)) for a, b in raw_delta] if raw_delta else None

    def compute(self, t: SimTime) -> VelocityCommand:
        return constant_profile(self.schedule, t.seconds, self.delta_schedule)


class _ScanFeedNode(Node):
    """Shared plumbing for nodes that consume own scan + own ground truth."""

    def __init__(self, cone_half_angle: float):
        self.cone = cone_half_angle
        self.headway = HeadwayEstimate.none()
        self.self_v = 0.0
        self._scan_sub = None
        self._state_sub = None
        self._last_scan_t: SimTime | None = None

    def attach(self, bus, vehicle: str):
        self._scan_sub = bus.subscribe(f"/{vehicle}/scan")
        self._state_sub = bus.subscribe(f"/{vehicle}/state")

    def poll(self):
        for env in self._scan_sub.poll():
            self._on_scan(env.payload)
        for env in self._state_sub.poll():
            self.self_v = env.payload.v

    def _on_scan(self, scan: LaserScan):
        previous = self.headway
        self.headway = headway_from_scan(scan, self.cone)
        dt = None
        if self._last_scan_t is not None:
            dt = (scan.t.ticks - self._last_scan_t.ticks) * scan.t.step
        self._last_scan_t = scan.t
        self._on_headway(previous, self.headway, dt)

    def _on_headway(self, previous: HeadwayEstimate, current: HeadwayEstimate, dt: float | None):
        pass


class FollowerNode(_ScanFeedNode):
    """Distance follower with a first-order headway-rate lead term.

    The proportional law alone is marginally stable (a velocity integrator
    wrapped in distance feedback has no damping), so the node predicts the
    gap lead_time seconds ahead using a smoothed headway rate before
    applying the proportional step. lead_time = 0 recovers the raw law.
    """

    def __init__(self, params: dict):
        super().__init__(float(params.get("cone_half_angle", math.pi / 6)))
        self.d_target = float(params.get("d_target", 20.0))
        self.k_gain = float(params.get("k_gain", 0.2))
        self.v_cap = float(params.get("v_cap", 15.0))
        self.step_scale = float(params.get("step_scale", 1.0))
        self.lead_time = float(params.get("lead_time", 2.0))
        self.rate_smoothing = float(params.get("rate_smoothing", 0.3))
        self.rate = 0.0

    def _on_headway(self, previous, current, dt):
        if previous.valid and current.valid and dt:
            raw = (current.d - previous.d) / dt
            a = self.rate_smoothing
            self.rate = a * raw + (1.0 - a) * self.rate
        elif not current.valid:
            self.rate = 0.0

    def compute(self, t: SimTime) -> VelocityCommand:
        estimate = self.headway
        if estimate.valid and self.lead_time > 0.0:
            predicted = max(estimate.d + self.lead_time * self.rate, 0.0)
            estimate = HeadwayEstimate(d=predicted, valid=True)
        return follower_step(estimate, self.self_v, self.d_target, self.k_gain,
                             self.v_cap, self.step_scale)


class FuzzyFollowerNode(_ScanFeedNode):
    """Time-headway follower: distance error in seconds drives the rule base."""

    def __init__(self, params: dict, period: float, a_max: float):
        super().__init__(float(params.get("cone_half_angle", math.pi / 6)))
        self.tau_target = float(params.get("tau_target", 2.0))
        self.v_cap = float(params.get("v_cap", 15.0))
        self.error_max = float(params.get("error_max", 4.0))
        self.rate_max = float(params.get("rate_max", 1.0))
        self.rate_smoothing = float(params.get("rate_smoothing", 0.3))
        self.delta_v_max = a_max * period
        self.error = math.inf
        self.error_rate = 0.0
        self._last_error: float | None = None

    def _on_headway(self, previous, current, dt):
        d = current.d if current.valid else None
        error = fuzzy_distance_error(d, self.self_v, self.tau_target)
        if (self._last_error is not None and dt and math.isfinite(error)
                and math.isfinite(self._last_error)):
            raw = (error - self._last_error) / dt
            a = self.rate_smoothing
            self.error_rate = a * raw + (1.0 - a) * self.error_rate
        self._last_error = error
        self.error = error

    def compute(self, t: SimTime) -> VelocityCommand:
        dv = fuzzy_decide(self.error, self.error_rate, self.delta_v_max,
                          self.error_max, self.rate_max)
        return VelocityCommand(v_set=min(max(self.self_v + dv, 0.0), self.v_cap), delta_set=0.0)


class TeleopNode(Node):
    """Sink for operator input: holds the latest request, clamped to the
    vehicle's limits, until a new one arrives."""

    def __init__(self, params: VehicleParams):
        self.v_max = params.v_max
        self.delta_max = params.delta_max
        self._latest = VelocityCommand(0.0, 0.0)

    def set_input(self, v_set: float, delta_set: float):
        v = min(max(v_set, 0.0), self.v_max)
        d = min(max(delta_set, -self.delta_max), self.delta_max)
        self._latest = VelocityCommand(v, d)

    def compute(self, t: SimTime) -> VelocityCommand:
        return self._latest


def build_controller(binding: ControllerBinding, params: VehicleParams) -> Node:
    if binding.kind == "constant":
        return ConstantNode(binding.params)
    if binding.kind == "follower":
        return FollowerNode(binding.params)
    if binding.kind == "fuzzy_follower":
        return FuzzyFollowerNode(binding.params, binding.period, params.a_max)
    if binding.kind == "teleop":
        return TeleopNode(params)
    raise BindingError(f"unknown controller kind {binding.kind!r}")
