"""Simulated perception: planar rangefinder, multi-beam lidar, noisy GPS.

Each sensor samples ground truth on its own rate grid. Rates are aligned
to the fixed step by a floor-increment rule: a rate r is due on tick k when
floor(t_k * r) increments, which yields exactly round(T * r) samples over T
seconds with at most one tick of jitter. Range sensors are noise-free by
default (a Gaussian range-noise hook exists but ships disabled); GPS noise
is drawn from a per-sensor seeded stream so vehicles never perturb each
other's randomness.
"""
from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import SimTime, VehicleParams, VehicleState
from .errors import DomainError
from .world import WorldModel, raycast_batch, world_shapes

RANGEFINDER_BEAMS = 180
RANGEFINDER_INCREMENT = 0.0175  # rad
RANGEFINDER_RANGE_MAX = 80.0  # m
RANGEFINDER_QUANTUM = 0.01  # m
RANGEFINDER_HEIGHT = 0.75  # m above ground

LIDAR_H_BEAMS = 100
LIDAR_V_BEAMS = 20
LIDAR_H_MIN = -0.4  # rad
LIDAR_H_MAX = 0.4
LIDAR_V_MIN = -0.034906585
LIDAR_V_MAX = 0.326
LIDAR_RANGE_MAX = 50.0
LIDAR_QUANTUM = 0.02
LIDAR_HEIGHT = 1.5

NO_RETURN = math.inf


@dataclass(frozen=True, slots=True)
class LaserScan:
    """One 180-beam half-plane sweep; inf marks a beam with no return."""

    t: SimTime
    ranges: tuple[float, ...]
    angle_min: float = 0.0
    angle_max: float = math.pi
    angle_increment: float = RANGEFINDER_INCREMENT
    n_beams: int = RANGEFINDER_BEAMS
    range_max: float = RANGEFINDER_RANGE_MAX


@dataclass(frozen=True, slots=True)
class PointCloud:
    """Sensor-frame hit points from the lidar beam grid; misses are omitted."""

    t: SimTime
    points: tuple[tuple[float, float, float], ...]
    range_max: float = LIDAR_RANGE_MAX


@dataclass(frozen=True, slots=True)
class GpsFix:
    t: SimTime
    x: float
    y: float
    sigma: float


@dataclass(frozen=True, slots=True)
class SensorMount:
    """Where a sensor sits in its parent vehicle's frame, and how often it fires."""

    parent: str
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    yaw: float = 0.0
    rate: float = 1.0  # Hz


def default_rangefinder_mount(name: str, params: VehicleParams, rate: float = 75.0) -> SensorMount:
    """Front bumper, facing forward."""
    return SensorMount(parent=name, x=params.l + params.overhang_front, y=0.0,
                       z=RANGEFINDER_HEIGHT, yaw=0.0, rate=rate)


def default_lidar_mount(name: str, params: VehicleParams, rate: float = 5.0) -> SensorMount:
    """Roof center."""
    forward = (params.l + params.overhang_front - params.overhang_rear) / 2.0
    return SensorMount(parent=name, x=forward, y=0.0, z=LIDAR_HEIGHT, yaw=0.0, rate=rate)


def is_sampling_tick(tick: int, step: float, rate: float) -> bool:
    """True when this tick is a sampling instant for the given rate."""
    if rate <= 0.0:
        return False
    if tick == 0:
        return True
    return math.floor(tick * step * rate) > math.floor((tick - 1) * step * rate)


def derive_rng(seed: int, *names: str) -> random.Random:
    """Independent stream keyed by (seed, names...): stable across runs and
    unaffected by any other vehicle's or sensor's draws."""
    digest = hashlib.sha256("/".join([str(seed), *names]).encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "little"))


def _mount_frame(state: VehicleState, mount: SensorMount) -> tuple[np.ndarray, float]:
    theta = state.pose.theta
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    origin = np.array([
        state.pose.x + mount.x * cos_t - mount.y * sin_t,
        state.pose.y + mount.x * sin_t + mount.y * cos_t,
        mount.z,
    ])
    return origin, theta + mount.yaw


def _quantize(distances: np.ndarray, quantum: float, range_max: float) -> np.ndarray:
    hits = np.isfinite(distances)
    q = np.round(distances[hits] / quantum) * quantum
    q = np.clip(q, quantum, range_max)
    out = distances.copy()
    out[hits] = q
    return out


def sample_rangefinder(
    world: WorldModel,
    others: Sequence[tuple[VehicleState, VehicleParams]],
    state: VehicleState,
    mount: SensorMount,
    t: SimTime,
    noise_sigma: float = 0.0,
    rng: random.Random | None = None,
) -> LaserScan:
    """Raycast the 180-beam fan and quantize ranges to 0.01 m.

    Beam k points at k*increment along the right-to-left sweep, so k = 0 is
    the sensor's right, the fan crosses straight ahead near the middle, and
    the last beam falls one increment short of the left. ``others`` must
    exclude the sensing vehicle.
    """
    origin, yaw = _mount_frame(state, mount)
    beam_angles = np.arange(RANGEFINDER_BEAMS) * RANGEFINDER_INCREMENT
    headings = yaw + beam_angles - math.pi / 2.0
    directions = np.stack([np.cos(headings), np.sin(headings), np.zeros_like(headings)], axis=1)
    origins = np.broadcast_to(origin, (RANGEFINDER_BEAMS, 3))
    distances = raycast_batch(world_shapes(world, others), origins, directions,
                              RANGEFINDER_RANGE_MAX)
    if noise_sigma > 0.0 and rng is not None:
        noise = np.array([rng.gauss(0.0, noise_sigma) for _ in range(RANGEFINDER_BEAMS)])
        distances = np.where(np.isfinite(distances), distances + noise, distances)
    distances = _quantize(distances, RANGEFINDER_QUANTUM, RANGEFINDER_RANGE_MAX)
    return LaserScan(t=t, ranges=tuple(float(r) for r in distances))


def lidar_beam_grid() -> tuple[np.ndarray, np.ndarray]:
    """(vertical, horizontal) angle pairs in row-major order: vertical outer."""
    h = np.linspace(LIDAR_H_MIN, LIDAR_H_MAX, LIDAR_H_BEAMS)
    v = np.linspace(LIDAR_V_MIN, LIDAR_V_MAX, LIDAR_V_BEAMS)
    vv, hh = np.meshgrid(v, h, indexing="ij")
    return vv.ravel(), hh.ravel()


def sample_lidar(
    world: WorldModel,
    others: Sequence[tuple[VehicleState, VehicleParams]],
    state: VehicleState,
    mount: SensorMount,
    t: SimTime,
    noise_sigma: float = 0.0,
    rng: random.Random | None = None,
) -> PointCloud:
    """Raycast the 20x100 beam grid; hits become sensor-frame points with
    ranges quantized to 0.02 m, misses are dropped."""
    origin, yaw = _mount_frame(state, mount)
    vv, hh = lidar_beam_grid()
    cos_v = np.cos(vv)
    local = np.stack([cos_v * np.cos(hh), cos_v * np.sin(hh), np.sin(vv)], axis=1)
    cos_y, sin_y = math.cos(yaw), math.sin(yaw)
    directions = np.stack([
        local[:, 0] * cos_y - local[:, 1] * sin_y,
        local[:, 0] * sin_y + local[:, 1] * cos_y,
        local[:, 2],
    ], axis=1)
    origins = np.broadcast_to(origin, (local.shape[0], 3))
    distances = raycast_batch(world_shapes(world, others), origins, directions, LIDAR_RANGE_MAX)
    if noise_sigma > 0.0 and rng is not None:
        noise = np.array([rng.gauss(0.0, noise_sigma) for _ in range(local.shape[0])])
        distances = np.where(np.isfinite(distances), distances + noise, distances)
    distances = _quantize(distances, LIDAR_QUANTUM, LIDAR_RANGE_MAX)
    hits = np.isfinite(distances)
    pts = local[hits] * distances[hits, None]
    return PointCloud(t=t, points=tuple((float(p[0]), float(p[1]), float(p[2])) for p in pts))


def sample_gps(state: VehicleState, sigma: float, rng: random.Random, t: SimTime) -> GpsFix:
    """Ground-truth position plus independent zero-mean Gaussian noise."""
    if sigma < 0.0:
        raise DomainError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0.0:
        return GpsFix(t=t, x=state.pose.x, y=state.pose.y, sigma=0.0)
    return GpsFix(
        t=t,
        x=state.pose.x + rng.gauss(0.0, sigma),
        y=state.pose.y + rng.gauss(0.0, sigma),
        sigma=sigma,
    )
