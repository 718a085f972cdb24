import json
import math

import numpy as np
import pytest

from catsim.core import Pose2D, VehicleParams, VehicleState
from catsim.errors import WorldFormatError
from catsim.world import (
    Box,
    Cylinder,
    Obstacle,
    Ray,
    WorldModel,
    footprint_box,
    parse_world,
    raycast,
    serialize_world,
)

MINIMAL = '{"schema_version": 1, "step": 0.001, "vehicles": []}'

VEHICLE_DOC = {
    "schema_version": 1,
    "step": 0.001,
    "obstacles": [
        {"id": "wall", "type": "box", "cx": 10.0, "cy": 0.0, "yaw": 0.0,
         "sx": 1.0, "sy": 1.0, "height": 1.0},
    ],
    "vehicles": [
        {"name": "car1", "pose": {"x": 0.0, "y": 0.0, "theta": 0.0},
         "controller": {"kind": "constant", "schedule": [[0.0, 3.0]]}},
    ],
}


def point_in_shape(shape, p):
    x, y, z = p
    if isinstance(shape, Box):
        dx, dy = x - shape.cx, y - shape.cy
        c, s = math.cos(shape.yaw), math.sin(shape.yaw)
        lx = dx * c + dy * s
        ly = -dx * s + dy * c
        return (abs(lx) <= shape.sx / 2 and abs(ly) <= shape.sy / 2
                and 0.0 <= z <= shape.height)
    dx, dy = x - shape.cx, y - shape.cy
    return dx * dx + dy * dy <= shape.radius ** 2 and 0.0 <= z <= shape.height


def march_oracle(shapes, origin, direction, max_range, ds=2e-4):
    # independent oracle: walk the ray until a point falls inside a solid
    s = ds
    while s <= max_range:
        p = tuple(o + s * d for o, d in zip(origin, direction))
        if any(point_in_shape(shape, p) for shape in shapes):
            return s
        s += ds
    return None


class TestParse:
    def test_minimal(self):
        world = parse_world(MINIMAL)
        assert world.step == 0.001
        assert world.real_time_factor == 0.0
        assert world.obstacles == ()
        assert world.spawns == ()

    def test_box_obstacle(self):
        world = parse_world(json.dumps(VEHICLE_DOC))
        assert len(world.obstacles) == 1
        shape = world.obstacles[0].shape
        assert isinstance(shape, Box) and shape.cx == 10.0

    def test_vehicle_spawn_defaults(self):
        world = parse_world(json.dumps(VEHICLE_DOC))
        spawn = world.spawns[0]
        assert spawn.name == "car1"
        assert spawn.params == VehicleParams()
        assert spawn.sensors.rangefinder_rate == 75.0
        assert spawn.binding.kind == "constant"
        assert spawn.binding.period == 0.02

    def test_duplicate_vehicle_name(self):
        doc = json.loads(json.dumps(VEHICLE_DOC))
        doc["vehicles"].append(doc["vehicles"][0])
        with pytest.raises(WorldFormatError, match="car1"):
            parse_world(json.dumps(doc))

    def test_duplicate_obstacle_id(self):
        doc = json.loads(json.dumps(VEHICLE_DOC))
        doc["obstacles"].append(doc["obstacles"][0])
        with pytest.raises(WorldFormatError, match="wall"):
            parse_world(json.dumps(doc))

    def test_unknown_key_has_path(self):
        doc = json.loads(json.dumps(VEHICLE_DOC))
        doc["vehicles"][0]["color"] = "red"
        with pytest.raises(WorldFormatError, match=r"vehicles\[0\]\.color"):
            parse_world(json.dumps(doc))

    def test_syntax_error_has_line(self):
        with pytest.raises(WorldFormatError, match="line"):
            parse_world("{\n  broken\n}")

    def test_nonpositive_step(self):
        with pytest.raises(WorldFormatError, match="step"):
            parse_world('{"schema_version": 1, "step": 0.0}')

    def test_nonpositive_extent(self):
        doc = json.loads(json.dumps(VEHICLE_DOC))
        doc["obstacles"][0]["sx"] = -1.0
        with pytest.raises(WorldFormatError, match="sx"):
            parse_world(json.dumps(doc))

    def test_bad_schema_version(self):
        with pytest.raises(WorldFormatError, match="schema_version"):
            parse_world('{"schema_version": 99, "step": 0.001}')

    def test_serialize_parse_fixed_point(self):
        world = parse_world(json.dumps(VEHICLE_DOC))
        canonical = serialize_world(world)
        reparsed = parse_world(canonical)
        assert reparsed == world
        assert serialize_world(reparsed) == canonical


class TestRaycast:
    def ray(self, ox=0.0, oy=0.0, oz=0.5, dx=1.0, dy=0.0, dz=0.0):
        n = math.sqrt(dx * dx + dy * dy + dz * dz)
        return Ray((ox, oy, oz), (dx / n, dy / n, dz / n))

    def test_empty_world(self):
        assert raycast(WorldModel(), [], self.ray(), 80.0) is None

    def test_box_face_ahead(self):
        wall = Obstacle("w", Box(cx=10.5, cy=0.0, yaw=0.0, sx=1.0, sy=4.0, height=2.0))
        world = WorldModel(obstacles=(wall,))
        d = raycast(world, [], self.ray(), 80.0)
        assert d == pytest.approx(10.0, abs=1e-9)

    def test_cylinder_ahead(self):
        cyl = Obstacle("c", Cylinder(cx=5.0, cy=0.0, radius=1.0, height=2.0))
        world = WorldModel(obstacles=(cyl,))
        d = raycast(world, [], self.ray(), 80.0)
        assert d == pytest.approx(4.0, abs=1e-9)
        oracle = march_oracle([cyl.shape], (0.0, 0.0, 0.5), (1.0, 0.0, 0.0), 80.0)
        assert d == pytest.approx(oracle, abs=5e-4)

    def test_march_oracle_oblique(self):
        shapes = [
            Box(cx=8.0, cy=1.0, yaw=0.4, sx=2.0, sy=3.0, height=2.0),
            Cylinder(cx=6.0, cy=-2.0, radius=0.8, height=3.0),
        ]
        world = WorldModel(obstacles=tuple(Obstacle(str(i), s) for i, s in enumerate(shapes)))
        for dy in (-0.3, 0.0, 0.2, 0.5):
            direction = np.array([1.0, dy, 0.05])
            direction /= np.linalg.norm(direction)
            ray = Ray((0.0, 0.0, 0.5), tuple(direction))
            d = raycast(world, [], ray, 80.0)
            oracle = march_oracle(shapes, ray.origin, ray.direction, 80.0)
            if oracle is None:
                assert d is None
            else:
                assert d == pytest.approx(oracle, abs=5e-4)

    def test_beyond_max_range(self):
        wall = Obstacle("w", Box(cx=100.0, sx=1.0, sy=4.0, height=2.0))
        assert raycast(WorldModel(obstacles=(wall,)), [], self.ray(), 80.0) is None

    def test_height_window(self):
        low = Obstacle("low", Box(cx=10.0, sx=1.0, sy=4.0, height=0.3))
        world = WorldModel(obstacles=(low,))
        assert raycast(world, [], self.ray(oz=0.5), 80.0) is None  # beam passes over
        assert raycast(world, [], self.ray(oz=0.2), 80.0) is not None

    def test_monotone_under_added_obstacles(self):
        far = Obstacle("far", Box(cx=20.5, sx=1.0, sy=4.0, height=2.0))
        near = Obstacle("near", Cylinder(cx=7.0, cy=0.0, radius=0.5, height=2.0))
        d_far = raycast(WorldModel(obstacles=(far,)), [], self.ray(), 80.0)
        d_both = raycast(WorldModel(obstacles=(far, near)), [], self.ray(), 80.0)
        assert d_both <= d_far

    def test_vehicle_footprint_hit(self):
        params = VehicleParams()
        other = VehicleState(pose=Pose2D(20.0, 0.0, 0.0))
        d = raycast(WorldModel(), [(other, params)], self.ray(), 80.0)
        # rear face of the footprint box sits overhang_rear behind the rear axle
        assert d == pytest.approx(20.0 - params.overhang_rear, abs=1e-9)

    def test_rigid_transform_equivariance(self):
        shapes = (Obstacle("b", Box(cx=12.0, cy=3.0, yaw=0.7, sx=2.0, sy=1.0, height=2.0)),
                  Obstacle("c", Cylinder(cx=9.0, cy=-1.0, radius=1.2, height=2.0)))
        world = WorldModel(obstacles=shapes)
        ray = self.ray(dy=0.25)
        base = raycast(world, [], ray, 80.0)
        for angle, tx, ty in [(0.6, 5.0, -2.0), (-1.2, -3.0, 7.0), (2.9, 0.0, 0.0)]:
            c, s = math.cos(angle), math.sin(angle)

            def xform_xy(x, y):
                return (c * x - s * y + tx, s * x + c * y + ty)

            moved = []
            for obstacle in shapes:
                sh = obstacle.shape
                nx, ny = xform_xy(sh.cx, sh.cy)
                if isinstance(sh, Box):
                    moved.append(Obstacle(obstacle.id, Box(nx, ny, sh.yaw + angle, sh.sx, sh.sy, sh.height)))
                else:
                    moved.append(Obstacle(obstacle.id, Cylinder(nx, ny, sh.radius, sh.height)))
            ox, oy = xform_xy(ray.origin[0], ray.origin[1])
            dx, dy = c * ray.direction[0] - s * ray.direction[1], s * ray.direction[0] + c * ray.direction[1]
            moved_ray = Ray((ox, oy, ray.origin[2]), (dx, dy, ray.direction[2]))
            d = raycast(WorldModel(obstacles=tuple(moved)), [], moved_ray, 80.0)
            assert d == pytest.approx(base, abs=1e-9)

    def test_ray_from_inside_box_returns_exit(self):
        box = Obstacle("b", Box(cx=0.0, cy=0.0, yaw=0.0, sx=4.0, sy=4.0, height=2.0))
        d = raycast(WorldModel(obstacles=(box,)), [], self.ray(), 80.0)
        assert d == pytest.approx(2.0, abs=1e-9)


def test_footprint_geometry():
    params = VehicleParams()
    box = footprint_box(Pose2D(0.0, 0.0, 0.0), params)
    assert box.sx == pytest.approx(params.l + 1.8)
    assert box.sy == pytest.approx(params.w + 0.3)
    assert box.height == 1.5
    # front face at l + overhang_front, rear face at -overhang_rear
    assert box.cx + box.sx / 2 == pytest.approx(params.l + params.overhang_front)
    assert box.cx - box.sx / 2 == pytest.approx(-params.overhang_rear)
