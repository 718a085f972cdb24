"""Canonical binary layouts for every message type that crosses the bus.

These layouts are the unit of bit-exactness for bag files: little-endian
fixed-width integers, floats stored as raw 8-byte IEEE-754 patterns, strings
as u16-length-prefixed UTF-8. See docs/bag-format.md.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass

from .core import Pose2D, SimTime, VehicleState, VelocityCommand
from .errors import BagError
from .sensors import GpsFix, LaserScan, PointCloud
from .world import VehicleSpawn, parse_vehicle_entry, vehicle_entry

TAG_CMD = 0  # VelocityCommand
TAG_STATE = 1  # VehicleState ground truth
TAG_SCAN = 2  # LaserScan
TAG_POINTS = 3  # PointCloud
TAG_GPS = 4  # GpsFix
TAG_SPAWN = 5  # VehicleSpawn request
TAG_CLOCK = 6  # SimTime
TAG_DIAG = 7  # Diagnostic

TAG_NAMES = {
    TAG_CMD: "cmd",
    TAG_STATE: "state",
    TAG_SCAN: "scan",
    TAG_POINTS: "points",
    TAG_GPS: "gps",
    TAG_SPAWN: "spawn",
    TAG_CLOCK: "clock",
    TAG_DIAG: "diag",
}


@dataclass(frozen=True, slots=True)
class Diagnostic:
    source: str  # vehicle or subsystem name
    message: str


TAG_OF_TYPE = {
    VelocityCommand: TAG_CMD,
    VehicleState: TAG_STATE,
    LaserScan: TAG_SCAN,
    PointCloud: TAG_POINTS,
    GpsFix: TAG_GPS,
    VehicleSpawn: TAG_SPAWN,
    SimTime: TAG_CLOCK,
    Diagnostic: TAG_DIAG,
}
TYPE_OF_TAG = {tag: cls for cls, tag in TAG_OF_TYPE.items()}

_TIME = struct.Struct("<Qd")


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def _unpack_str(data: bytes, off: int) -> tuple[str, int]:
    (n,) = struct.unpack_from("<H", data, off)
    off += 2
    return data[off:off + n].decode("utf-8"), off + n


def encode_payload(tag: int, payload) -> bytes:
    if tag == TAG_CMD:
        return struct.pack("<dd", payload.v_set, payload.delta_set)
    if tag == TAG_STATE:
        s = payload
        return _TIME.pack(s.t.ticks, s.t.step) + struct.pack(
            "<9d", s.pose.x, s.pose.y, s.pose.theta, s.v, s.delta,
            s.delta_left, s.delta_right, s.omega_left, s.omega_right)
    if tag == TAG_SCAN:
        s = payload
        head = _TIME.pack(s.t.ticks, s.t.step) + struct.pack(
            "<dddI", s.angle_min, s.angle_increment, s.range_max, len(s.ranges))
        return head + struct.pack(f"<{len(s.ranges)}d", *s.ranges)
    if tag == TAG_POINTS:
        c = payload
        head = _TIME.pack(c.t.ticks, c.t.step) + struct.pack("<dI", c.range_max, len(c.points))
        flat = [v for p in c.points for v in p]
        return head + struct.pack(f"<{len(flat)}d", *flat)
    if tag == TAG_GPS:
        g = payload
        return _TIME.pack(g.t.ticks, g.t.step) + struct.pack("<ddd", g.x, g.y, g.sigma)
    if tag == TAG_SPAWN:
        doc = json.dumps(vehicle_entry(payload), sort_keys=True, separators=(",", ":"))
        return doc.encode("utf-8")
    if tag == TAG_CLOCK:
        return _TIME.pack(payload.ticks, payload.step)
    if tag == TAG_DIAG:
        return _pack_str(payload.source) + _pack_str(payload.message)
    raise BagError(f"unknown type tag {tag}")


def decode_payload(tag: int, data: bytes):
    try:
        if tag == TAG_CMD:
            v, d = struct.unpack("<dd", data)
            return VelocityCommand(v, d)
        if tag == TAG_STATE:
            ticks, step = _TIME.unpack_from(data, 0)
            x, y, theta, v, delta, dl, dr, ol, orr = struct.unpack_from("<9d", data, _TIME.size)
            return VehicleState(pose=Pose2D(x, y, theta), v=v, delta=delta,
                                delta_left=dl, delta_right=dr, omega_left=ol,
                                omega_right=orr, t=SimTime(ticks, step))
        if tag == TAG_SCAN:
            ticks, step = _TIME.unpack_from(data, 0)
            amin, ainc, rmax, n = struct.unpack_from("<dddI", data, _TIME.size)
            off = _TIME.size + struct.calcsize("<dddI")
            ranges = struct.unpack_from(f"<{n}d", data, off)
            return LaserScan(t=SimTime(ticks, step), ranges=ranges, angle_min=amin,
                             angle_increment=ainc, n_beams=n, range_max=rmax)
        if tag == TAG_POINTS:
            ticks, step = _TIME.unpack_from(data, 0)
            rmax, n = struct.unpack_from("<dI", data, _TIME.size)
            off = _TIME.size + struct.calcsize("<dI")
            flat = struct.unpack_from(f"<{3 * n}d", data, off)
            points = tuple((flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]) for i in range(n))
            return PointCloud(t=SimTime(ticks, step), points=points, range_max=rmax)
        if tag == TAG_GPS:
            ticks, step = _TIME.unpack_from(data, 0)
            x, y, sigma = struct.unpack_from("<ddd", data, _TIME.size)
            return GpsFix(t=SimTime(ticks, step), x=x, y=y, sigma=sigma)
        if tag == TAG_SPAWN:
            return parse_vehicle_entry(json.loads(data.decode("utf-8")))
        if tag == TAG_CLOCK:
            ticks, step = _TIME.unpack_from(data, 0)
            return SimTime(ticks, step)
        if tag == TAG_DIAG:
            source, off = _unpack_str(data, 0)
            message, _ = _unpack_str(data, off)
            return Diagnostic(source, message)
    except (struct.error, ValueError, KeyError) as exc:
        raise BagError(f"cannot decode tag {tag} payload: {exc}") from exc
    raise BagError(f"unknown type tag {tag}")
