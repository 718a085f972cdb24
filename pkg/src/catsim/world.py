"""World files, static obstacles, vehicle footprints, and the raycast kernel.

The world file is a versioned JSON document (see docs/world-format.md):
simulation timing, box/cylinder obstacles, and vehicle spawn entries with
parameter overrides, sensor configuration, and a controller binding.
Parsing is strict: unknown keys are rejected with their JSON path.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence, Union

import numpy as np

from .core import Pose2D, VehicleParams, VehicleState
from .errors import DomainError, WorldFormatError

SCHEMA_VERSION = 1
_NAME_SEGMENT = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_"


@dataclass(frozen=True, slots=True)
class Box:
    cx: float = 0.0  # m
    cy: float = 0.0
    yaw: float = 0.0  # rad
    sx: float = 1.0  # full extents, m
    sy: float = 1.0
    height: float = 1.0  # z spans [0, height]


@dataclass(frozen=True, slots=True)
class Cylinder:
    cx: float = 0.0
    cy: float = 0.0
    radius: float = 1.0
    height: float = 1.0


Shape = Union[Box, Cylinder]


@dataclass(frozen=True, slots=True)
class Obstacle:
    id: str
    shape: Shape


@dataclass(frozen=True, slots=True)
class Ray:
    origin: tuple[float, float, float]
    direction: tuple[float, float, float]  # unit vector

    def __post_init__(self):
        norm = math.sqrt(sum(c * c for c in self.direction))
        if abs(norm - 1.0) > 1e-12:
            raise DomainError(f"ray direction must be unit length, |d|={norm!r}")


@dataclass(frozen=True, slots=True)
class SensorSuite:
    """Per-vehicle sensor configuration; mounts default from vehicle geometry."""

    rangefinder_enabled: bool = True
    rangefinder_rate: float = 75.0  # Hz
    lidar_enabled: bool = True
    lidar_rate: float = 5.0
    gps_enabled: bool = True
    gps_rate: float = 10.0
    gps_sigma: float = 0.4  # m, DGPS-grade by default
    range_noise_sigma: float = 0.0  # m, optional hook, off by default


@dataclass(frozen=True, slots=True)
class ControllerBinding:
    """Which controller drives a vehicle, at what period, with what knobs."""

    kind: str  # constant | follower | fuzzy_follower | teleop
    period: float = 0.02  # s
    params: dict = field(default_factory=dict)
    stopper: "StopperConfig | None" = None


@dataclass(frozen=True, slots=True)
class StopperConfig:
    """Velocity-envelope safety filter parameters."""

    d_safe: float = 3.0  # m
    a_brake: float = 3.0  # m/s^2
    cone_half_angle: float = math.pi / 6
    strict: bool = False  # stop (instead of passthrough) when headway is invalid


@dataclass(frozen=True, slots=True)
class VehicleSpawn:
    name: str
    pose: Pose2D
    params: VehicleParams
    sensors: SensorSuite
    binding: ControllerBinding


@dataclass(frozen=True, slots=True)
class WorldModel:
    step: float = 0.001  # s
    real_time_factor: float = 0.0  # 0 = as fast as possible
    obstacles: tuple[Obstacle, ...] = ()
    spawns: tuple[VehicleSpawn, ...] = ()


def footprint_box(pose: Pose2D, params: VehicleParams) -> Box:
    """Oriented collision box of a vehicle: wheelbase plus overhangs."""
    length = params.l + params.overhang_front + params.overhang_rear
    forward = (params.l + params.overhang_front - params.overhang_rear) / 2.0
    return Box(
        cx=pose.x + forward * math.cos(pose.theta),
        cy=pose.y + forward * math.sin(pose.theta),
        yaw=pose.theta,
        sx=length,
        sy=params.w + params.body_width_margin,
        height=params.body_height,
    )


# --- ray intersection kernel -------------------------------------------------

def _box_distances(box: Box, o: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Nearest positive hit per ray against one oriented box; inf for miss."""
    cos_y, sin_y = math.cos(box.yaw), math.sin(box.yaw)
    ox = o[:, 0] - box.cx
    oy = o[:, 1] - box.cy
    # rotate into box frame (by -yaw)
    lox = ox * cos_y + oy * sin_y
    loy = -ox * sin_y + oy * cos_y
    ldx = d[:, 0] * cos_y + d[:, 1] * sin_y
    ldy = -d[:, 0] * sin_y + d[:, 1] * cos_y
    lo = np.stack([lox, loy, o[:, 2]], axis=1)
    ld = np.stack([ldx, ldy, d[:, 2]], axis=1)
    bounds_lo = np.array([-box.sx / 2.0, -box.sy / 2.0, 0.0])
    bounds_hi = np.array([box.sx / 2.0, box.sy / 2.0, box.height])

    t_enter = np.full(lo.shape[0], -np.inf)
    t_exit = np.full(lo.shape[0], np.inf)
    for axis in range(3):
        da = ld[:, axis]
        oa = lo[:, axis]
        parallel = np.abs(da) < 1e-300
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (bounds_lo[axis] - oa) / da
            t2 = (bounds_hi[axis] - oa) / da
        near = np.minimum(t1, t2)
        far = np.maximum(t1, t2)
        inside = (oa >= bounds_lo[axis]) & (oa <= bounds_hi[axis])
        near = np.where(parallel, np.where(inside, -np.inf, np.inf), near)
        far = np.where(parallel, np.where(inside, np.inf, -np.inf), far)
        t_enter = np.maximum(t_enter, near)
        t_exit = np.minimum(t_exit, far)

    hit = t_exit >= np.maximum(t_enter, 0.0)
    t = np.where(t_enter > 0.0, t_enter, t_exit)
    return np.where(hit & (t > 0.0), t, np.inf)


def _cylinder_distances(cyl: Cylinder, o: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Nearest positive hit per ray against one vertical cylinder (solid)."""
    ox = o[:, 0] - cyl.cx
    oy = o[:, 1] - cyl.cy
    oz = o[:, 2]
    dx, dy, dz = d[:, 0], d[:, 1], d[:, 2]
    r2 = cyl.radius * cyl.radius

    best = np.full(o.shape[0], np.inf)

    # side wall
    a = dx * dx + dy * dy
    b = 2.0 * (ox * dx + oy * dy)
    c = ox * ox + oy * oy - r2
    disc = b * b - 4.0 * a * c
    ok = (a > 0.0) & (disc >= 0.0)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        for sign in (-1.0, 1.0):
            t = (-b + sign * sq) / (2.0 * a)
            z = oz + t * dz
            good = ok & (t > 0.0) & (z >= 0.0) & (z <= cyl.height)
            best = np.where(good & (t < best), t, best)

    # caps
    with np.errstate(divide="ignore", invalid="ignore"):
        for z_plane in (0.0, cyl.height):
            t = (z_plane - oz) / dz
            px = ox + t * dx
            py = oy + t * dy
            good = (np.abs(dz) > 1e-300) & (t > 0.0) & (px * px + py * py <= r2)
            best = np.where(good & (t < best), t, best)

    return best


def raycast_batch(
    shapes: Sequence[Shape],
    origins: np.ndarray,
    directions: np.ndarray,
    max_range: float,
) -> np.ndarray:
    """Distances for a batch of rays against a shape list; inf where nothing
    lies within max_range. The result is independent of shape order."""
    best = np.full(origins.shape[0], np.inf)
    for shape in shapes:
        if isinstance(shape, Box):
            t = _box_distances(shape, origins, directions)
        else:
            t = _cylinder_distances(shape, origins, directions)
        best = np.minimum(best, t)
    return np.where(best <= max_range, best, np.inf)


def world_shapes(
    world: WorldModel,
    vehicles: Sequence[tuple[VehicleState, VehicleParams]] = (),
) -> list[Shape]:
    """Obstacle shapes plus the footprints of the given vehicles."""
    shapes: list[Shape] = [o.shape for o in world.obstacles]
    shapes.extend(footprint_box(state.pose, params) for state, params in vehicles)
    return shapes


def raycast(
    world: WorldModel,
    vehicles: Sequence[tuple[VehicleState, VehicleParams]],
    ray: Ray,
    max_range: float,
) -> float | None:
    """Smallest positive hit distance against obstacles and vehicle footprints,
    or None when nothing lies within max_range. The caller excludes the
    sensing vehicle from ``vehicles``."""
    if not (max_range > 0.0):
        raise WorldFormatError(f"max_range must be > 0, got {max_range}")
    o = np.array([ray.origin], dtype=float)
    d = np.array([ray.direction], dtype=float)
    dist = float(raycast_batch(world_shapes(world, vehicles), o, d, max_range)[0])
    return None if math.isinf(dist) else dist


# --- parsing -----------------------------------------------------------------

def _fail(message: str, path: str):
    raise WorldFormatError(message, path)


def _check_keys(obj: dict, allowed: set[str], path: str):
    for key in obj:
        if key not in allowed:
            _fail(f"unknown key {key!r}", f"{path}.{key}" if path else key)


def _number(obj: dict, key: str, path: str, default=None, positive=False, nonneg=False):
    if key not in obj:
        if default is None:
            _fail(f"missing required key {key!r}", path)
        return default
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(f"{key!r} must be a number", f"{path}.{key}")
    value = float(value)
    if not math.isfinite(value):
        _fail(f"{key!r} must be finite", f"{path}.{key}")
    if positive and not value > 0.0:
        _fail(f"{key!r} must be > 0", f"{path}.{key}")
    if nonneg and value < 0.0:
        _fail(f"{key!r} must be >= 0", f"{path}.{key}")
    return value


def _parse_obstacle(entry: dict, index: int) -> Obstacle:
    path = f"obstacles[{index}]"
    if not isinstance(entry, dict):
        _fail("obstacle must be an object", path)
    oid = entry.get("id")
    if not isinstance(oid, str) or not oid:
        _fail("obstacle needs a nonempty string 'id'", path)
    kind = entry.get("type")
    if kind == "box":
        _check_keys(entry, {"id", "type", "cx", "cy", "yaw", "sx", "sy", "height"}, path)
        shape: Shape = Box(
            cx=_number(entry, "cx", path, 0.0),
            cy=_number(entry, "cy", path, 0.0),
            yaw=_number(entry, "yaw", path, 0.0),
            sx=_number(entry, "sx", path, positive=True),
            sy=_number(entry, "sy", path, positive=True),
            height=_number(entry, "height", path, positive=True),
        )
    elif kind == "cylinder":
        _check_keys(entry, {"id", "type", "cx", "cy", "radius", "height"}, path)
        shape = Cylinder(
            cx=_number(entry, "cx", path, 0.0),
            cy=_number(entry, "cy", path, 0.0),
            radius=_number(entry, "radius", path, positive=True),
            height=_number(entry, "height", path, positive=True),
        )
    else:
        _fail(f"obstacle type must be 'box' or 'cylinder', got {kind!r}", f"{path}.type")
    return Obstacle(id=oid, shape=shape)


_PARAM_KEYS_POSITIVE = {
    "l", "w", "r_wheel", "v_max", "a_max", "delta_max", "delta_rate_max", "body_height",
}
_PARAM_KEYS_NONNEG = {"overhang_front", "overhang_rear", "body_width_margin"}
_PARAM_KEYS = _PARAM_KEYS_POSITIVE | _PARAM_KEYS_NONNEG

_CONTROLLER_KINDS = {
    "constant": {"schedule", "delta_schedule"},
    "follower": {"d_target", "k_gain", "v_cap", "step_scale", "cone_half_angle",
                 "lead_time", "rate_smoothing"},
    "fuzzy_follower": {"tau_target", "v_cap", "cone_half_angle", "error_max",
                       "rate_max", "rate_smoothing"},
    "teleop": set(),
}


def _parse_params(entry: dict, path: str) -> VehicleParams:
    _check_keys(entry, _PARAM_KEYS | {"pid"}, path)
    overrides = {}
    for key in _PARAM_KEYS_POSITIVE & set(entry):
        overrides[key] = _number(entry, key, path, positive=True)
    for key in _PARAM_KEYS_NONNEG & set(entry):
        overrides[key] = _number(entry, key, path, nonneg=True)
    if "pid" in entry:
        pid = entry["pid"]
        if not isinstance(pid, dict):
            _fail("'pid' must be an object", f"{path}.pid")
        _check_keys(pid, {"kp", "ki", "kd"}, f"{path}.pid")
        overrides["pid"] = {k: _number(pid, k, f"{path}.pid", nonneg=True) for k in pid}
    try:
        return VehicleParams().override(**overrides)
    except Exception as exc:
        _fail(str(exc), path)


def _parse_sensors(entry: dict, path: str) -> SensorSuite:
    _check_keys(entry, {"rangefinder", "lidar", "gps", "range_noise_sigma"}, path)
    kwargs = {}
    for name in ("rangefinder", "lidar", "gps"):
        sub = entry.get(name)
        if sub is None:
            continue
        if not isinstance(sub, dict):
            _fail(f"'{name}' must be an object", f"{path}.{name}")
        allowed = {"enabled", "rate"} | ({"sigma"} if name == "gps" else set())
        _check_keys(sub, allowed, f"{path}.{name}")
        if "enabled" in sub:
            if not isinstance(sub["enabled"], bool):
                _fail("'enabled' must be a boolean", f"{path}.{name}.enabled")
            kwargs[f"{name}_enabled"] = sub["enabled"]
        if "rate" in sub:
            kwargs[f"{name}_rate"] = _number(sub, "rate", f"{path}.{name}", positive=True)
        if name == "gps" and "sigma" in sub:
            kwargs["gps_sigma"] = _number(sub, "sigma", f"{path}.{name}", nonneg=True)
    if "range_noise_sigma" in entry:
        kwargs["range_noise_sigma"] = _number(entry, "range_noise_sigma", path, nonneg=True)
    return SensorSuite(**kwargs)


def _parse_binding(entry: dict, path: str) -> ControllerBinding:
    if not isinstance(entry, dict):
        _fail("'controller' must be an object", path)
    kind = entry.get("kind")
    if kind not in _CONTROLLER_KINDS:
        _fail(f"controller kind must be one of {sorted(_CONTROLLER_KINDS)}, got {kind!r}",
              f"{path}.kind")
    _check_keys(entry, _CONTROLLER_KINDS[kind] | {"kind", "period", "obstaclestopper"}, path)
    period = _number(entry, "period", path, 0.02, positive=True)
    params = {k: entry[k] for k in _CONTROLLER_KINDS[kind] & set(entry)}

    stopper = None
    if "obstaclestopper" in entry:
        sub = entry["obstaclestopper"]
        if not isinstance(sub, dict):
            _fail("'obstaclestopper' must be an object", f"{path}.obstaclestopper")
        spath = f"{path}.obstaclestopper"
        _check_keys(sub, {"enabled", "d_safe", "a_brake", "cone_half_angle", "strict"}, spath)
        if sub.get("enabled", True):
            stopper = StopperConfig(
                d_safe=_number(sub, "d_safe", spath, 3.0, positive=True),
                a_brake=_number(sub, "a_brake", spath, 3.0, positive=True),
                cone_half_angle=_number(sub, "cone_half_angle", spath, math.pi / 6, positive=True),
                strict=bool(sub.get("strict", False)),
            )
    return ControllerBinding(kind=kind, period=period, params=params, stopper=stopper)


def _parse_vehicle(entry: dict, index: int) -> VehicleSpawn:
    path = f"vehicles[{index}]"
    if not isinstance(entry, dict):
        _fail("vehicle must be an object", path)
    _check_keys(entry, {"name", "pose", "params", "sensors", "controller"}, path)
    name = entry.get("name")
    if not isinstance(name, str) or not name or any(c not in _NAME_SEGMENT for c in name):
        _fail(f"vehicle name must be a nonempty [A-Za-z0-9_]+ string, got {name!r}", f"{path}.name")

    pose_obj = entry.get("pose", {})
    if not isinstance(pose_obj, dict):
        _fail("'pose' must be an object", f"{path}.pose")
    _check_keys(pose_obj, {"x", "y", "theta"}, f"{path}.pose")
    pose = Pose2D(
        x=_number(pose_obj, "x", f"{path}.pose", 0.0),
        y=_number(pose_obj, "y", f"{path}.pose", 0.0),
        theta=_number(pose_obj, "theta", f"{path}.pose", 0.0),
    )

    params_obj = entry.get("params", {})
    if not isinstance(params_obj, dict):
        _fail("'params' must be an object", f"{path}.params")
    params = _parse_params(params_obj, f"{path}.params")

    sensors_obj = entry.get("sensors", {})
    if not isinstance(sensors_obj, dict):
        _fail("'sensors' must be an object", f"{path}.sensors")
    sensors = _parse_sensors(sensors_obj, f"{path}.sensors")

    if "controller" not in entry:
        _fail("vehicle needs a 'controller' binding", path)
    binding = _parse_binding(entry["controller"], f"{path}.controller")
    return VehicleSpawn(name=name, pose=pose, params=params, sensors=sensors, binding=binding)


def parse_world(text: str) -> WorldModel:
    """Parse and validate a world document; raises WorldFormatError."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise WorldFormatError(f"invalid JSON: {exc.msg}", f"line {exc.lineno}, column {exc.colno}") from exc
    if not isinstance(doc, dict):
        _fail("world document must be a JSON object", "")

    _check_keys(doc, {"schema_version", "step", "real_time_factor", "obstacles", "vehicles"}, "")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        _fail(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})", "schema_version")
    step = _number(doc, "step", "", positive=True)
    rtf = _number(doc, "real_time_factor", "", 0.0, nonneg=True)

    obstacles_raw = doc.get("obstacles", [])
    if not isinstance(obstacles_raw, list):
        _fail("'obstacles' must be an array", "obstacles")
    obstacles = tuple(_parse_obstacle(o, i) for i, o in enumerate(obstacles_raw))
    seen: set[str] = set()
    for i, obstacle in enumerate(obstacles):
        if obstacle.id in seen:
            _fail(f"duplicate obstacle id {obstacle.id!r}", f"obstacles[{i}].id")
        seen.add(obstacle.id)

    vehicles_raw = doc.get("vehicles", [])
    if not isinstance(vehicles_raw, list):
        _fail("'vehicles' must be an array", "vehicles")
    spawns = tuple(_parse_vehicle(v, i) for i, v in enumerate(vehicles_raw))
    seen.clear()
    for i, spawn in enumerate(spawns):
        if spawn.name in seen:
            _fail(f"duplicate vehicle name {spawn.name!r}", f"vehicles[{i}].name")
        seen.add(spawn.name)

    return WorldModel(step=step, real_time_factor=rtf, obstacles=obstacles, spawns=spawns)


def vehicle_entry(spawn: VehicleSpawn) -> dict:
    """A spawn as its canonical world-file JSON entry (all fields explicit)."""
    binding = spawn.binding
    controller: dict = {"kind": binding.kind, "period": binding.period}
    controller.update(binding.params)
    if binding.stopper is not None:
        controller["obstaclestopper"] = {"enabled": True, **asdict(binding.stopper)}
    suite = spawn.sensors
    return {
        "name": spawn.name,
        "pose": {"x": spawn.pose.x, "y": spawn.pose.y, "theta": spawn.pose.theta},
        "params": asdict(spawn.params),
        "sensors": {
            "rangefinder": {"enabled": suite.rangefinder_enabled, "rate": suite.rangefinder_rate},
            "lidar": {"enabled": suite.lidar_enabled, "rate": suite.lidar_rate},
            "gps": {"enabled": suite.gps_enabled, "rate": suite.gps_rate, "sigma": suite.gps_sigma},
            "range_noise_sigma": suite.range_noise_sigma,
        },
        "controller": controller,
    }


def parse_vehicle_entry(entry: dict, index: int = 0) -> VehicleSpawn:
    return _parse_vehicle(entry, index)


def serialize_world(world: WorldModel) -> str:
    """Canonical form: all fields explicit, keys sorted, stable float text."""
    obstacles = []
    for obstacle in world.obstacles:
        entry: dict = {"id": obstacle.id}
        if isinstance(obstacle.shape, Box):
            entry["type"] = "box"
        else:
            entry["type"] = "cylinder"
        entry.update(asdict(obstacle.shape))
        obstacles.append(entry)

    doc = {
        "schema_version": SCHEMA_VERSION,
        "step": world.step,
        "real_time_factor": world.real_time_factor,
        "obstacles": obstacles,
        "vehicles": [vehicle_entry(s) for s in world.spawns],
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"
