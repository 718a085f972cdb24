"""Fixed-step scheduler: actuator/physics/sensor/controller phases, spawning,
real-time pacing, recording, and offline controller replay.

Tick t runs in a fixed phase order: (1) deliver envelopes flushed at the end
of tick t-1 and drain operator input, (2) run period-due controllers,
(3) apply obstaclestopper filters, (4) step actuators and integrate poses,
(5) sample due sensors from the post-step world, (6) publish ground truth and
the clock, (7) flush the bus (which also feeds the recorder and UI taps).
A controller fault isolates its vehicle: the command stream holds at zero and
a diagnostic is published; strict mode aborts instead.
"""
from __future__ import annotations

import math
import queue
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field

from . import wire
from .bag import BagFile, Recorder
from .bus import LatestWins, LosslessQueue, MessageBus, Publisher, Subscription
from .controllers import (
    HeadwayEstimate,
    Node,
    TeleopNode,
    build_controller,
    headway_from_scan,
    obstaclestopper_filter,
)
from .core import SimTime, VehicleParams, VehicleState, VelocityCommand
from .errors import BindingError, CatsimError, SpawnError
from .sensors import (
    GpsFix,
    LaserScan,
    PointCloud,
    SensorMount,
    default_lidar_mount,
    default_rangefinder_mount,
    derive_rng,
    is_sampling_tick,
    sample_gps,
    sample_lidar,
    sample_rangefinder,
)
from .vehicle import ActuatorState, integrate_pose, step_actuators
from .wire import Diagnostic
from .world import VehicleSpawn, WorldModel

SpawnRequest = VehicleSpawn  # runtime spawn requests reuse the world-file entry shape


class EngineFault(CatsimError):
    """A controller raised in strict mode."""


@dataclass(frozen=True, slots=True)
class Scenario:
    world: WorldModel
    duration: float | None = None  # seconds; None = unbounded
    seed: int = 0


@dataclass
class ExitSummary:
    ticks: int
    sim_seconds: float
    wall_seconds: float
    topic_counts: dict[str, int]
    min_headway: dict[str, float | None]
    faults: list[str] = field(default_factory=list)

    def format(self) -> str:
        lines = [
            f"ticks: {self.ticks} ({self.sim_seconds:.3f} s simulated, "
            f"{self.wall_seconds:.3f} s wall)",
            "messages per topic:",
        ]
        for topic in sorted(self.topic_counts):
            lines.append(f"  {topic}: {self.topic_counts[topic]}")
        lines.append("min headway per vehicle:")
        for name in sorted(self.min_headway):
            d = self.min_headway[name]
            lines.append(f"  {name}: {'n/a' if d is None else f'{d:.2f} m'}")
        for fault in self.faults:
            lines.append(f"fault: {fault}")
        return "\n".join(lines)


class _VehicleRuntime:
    def __init__(self, engine: "Engine", spawn: VehicleSpawn):
        self.name = spawn.name
        self.params = spawn.params
        self.suite = spawn.sensors
        self.binding = spawn.binding
        self.state = VehicleState(pose=spawn.pose.normalized(),
                                  t=SimTime(engine.tick_index, engine.step))
        self.act = ActuatorState()
        self.cmd = VelocityCommand(0.0, 0.0)
        self.last_out = VelocityCommand(0.0, 0.0)
        self.period_ticks = max(1, round(spawn.binding.period / engine.step))
        self.node: Node = build_controller(spawn.binding, spawn.params)
        self.faulted = False
        self.min_headway: float | None = None
        self.latest_scan = None
        self.cone = (spawn.binding.stopper.cone_half_angle if spawn.binding.stopper
                     else math.pi / 6)

        bus = engine.bus
        prefix = f"/{self.name}"
        out_channel = "cmd_vel_in" if spawn.binding.stopper else "cmd_vel"
        self.out_pub: Publisher = bus.advertise(f"{prefix}/{out_channel}", VelocityCommand)
        self.filtered_pub: Publisher | None = None
        if spawn.binding.stopper:
            self.filtered_pub = bus.advertise(f"{prefix}/cmd_vel", VelocityCommand)
        self.state_pub = bus.advertise(f"{prefix}/state", VehicleState)
        if self.suite.rangefinder_enabled:
            self.scan_pub = bus.advertise(f"{prefix}/scan", LaserScan)
            self.rf_mount = default_rangefinder_mount(self.name, self.params,
                                                      self.suite.rangefinder_rate)
            self.rf_rng = derive_rng(engine.seed, self.name, "rangefinder")
        if self.suite.lidar_enabled:
            self.points_pub = bus.advertise(f"{prefix}/points", PointCloud)
            self.lidar_mount = default_lidar_mount(self.name, self.params,
                                                   self.suite.lidar_rate)
            self.lidar_rng = derive_rng(engine.seed, self.name, "lidar")
        if self.suite.gps_enabled:
            self.gps_pub = bus.advertise(f"{prefix}/gps", GpsFix)
            self.gps_mount = SensorMount(parent=self.name, rate=self.suite.gps_rate)
            self.gps_rng = derive_rng(engine.seed, self.name, "gps")

        self.cmd_sub: Subscription = bus.subscribe(f"{prefix}/cmd_vel")
        self.scan_sub: Subscription = bus.subscribe(f"{prefix}/scan")
        self.node.attach(bus, self.name)


class Engine:
    def __init__(self, scenario: Scenario, strict: bool = False):
        self.scenario = scenario
        self.step = scenario.world.step
        self.seed = scenario.seed
        self.strict = strict
        self.tick_index = 0
        self.bus = MessageBus()
        self.bus.set_time(SimTime(0, self.step))
        self.clock_pub = self.bus.advertise("/clock", SimTime)
        self.spawn_pub = self.bus.advertise("/spawn", VehicleSpawn)
        self.diag_pub = self.bus.advertise("/diagnostics", Diagnostic)
        self.world = scenario.world
        self.faults: list[str] = []
        self._vehicles: dict[str, _VehicleRuntime] = {}
        self._order: list[_VehicleRuntime] = []
        self._pending_spawns: list[VehicleSpawn] = []
        self._pending_despawns: list[str] = []
        self._registry_lock = threading.Lock()
        self._teleop_q: "queue.Queue[tuple[str, float, float]]" = queue.Queue()
        self._topic_counts: dict[str, int] = defaultdict(int)
        self.bus.add_tap(self._count_tap)
        self.ui_store: LatestWins | None = None
        self._recorders: list[tuple[LosslessQueue, Recorder, threading.Thread]] = []

        for spawn in sorted(scenario.world.spawns, key=lambda s: s.name):
            self._add_vehicle(spawn, publish=False)

    # --- wiring ---------------------------------------------------------

    def _count_tap(self, envelopes):
        for env in envelopes:
            self._topic_counts[env.topic] += 1

    def enable_ui_tap(self) -> LatestWins:
        if self.ui_store is None:
            self.ui_store = LatestWins()
            self.bus.add_tap(self.ui_store)
        return self.ui_store

    def attach_recorder(self, path: str, patterns=None) -> Recorder:
        """Record matching traffic from the current tick on. The consumer runs
        on its own thread; the engine never blocks on it."""
        q = LosslessQueue()
        recorder = Recorder(path, self.seed, self.step,
                            tag_lookup=lambda t: self.bus.topic_tags[t],
                            patterns=patterns)
        self.bus.add_tap(q)

        def drain():
            while not q.closed:
                recorder.consume(q.drain())
            recorder.consume(q.drain(timeout=None))

        thread = threading.Thread(target=drain, name=f"recorder:{path}", daemon=True)
        thread.start()
        self._recorders.append((q, recorder, thread))
        return recorder

    def _finalize_recorders(self):
        for q, recorder, thread in self._recorders:
            q.close()
            thread.join()
            recorder.close()
        self._recorders.clear()

    def _add_vehicle(self, spawn: VehicleSpawn, publish: bool):
        if spawn.name in self._vehicles:
            raise SpawnError(f"duplicate vehicle name {spawn.name!r}")
        rt = _VehicleRuntime(self, spawn)
        with self._registry_lock:
            self._vehicles[spawn.name] = rt
            self._order = [self._vehicles[n] for n in sorted(self._vehicles)]
        if publish:
            self.spawn_pub.publish(spawn)

    # --- public control surface ------------------------------------------

    def spawn(self, request: VehicleSpawn):
        """Queue a spawn; it takes effect at the start of the next tick."""
        if request.name in self._vehicles or any(p.name == request.name
                                                 for p in self._pending_spawns):
            raise SpawnError(f"duplicate vehicle name {request.name!r}")
        self._pending_spawns.append(request)

    def despawn(self, name: str):
        if name not in self._vehicles:
            raise SpawnError(f"unknown vehicle {name!r}")
        self._pending_despawns.append(name)

    def send_teleop(self, vehicle: str, v_set: float, delta_set: float):
        """Thread-safe operator input; applied at the next tick, latest wins."""
        with self._registry_lock:
            rt = self._vehicles.get(vehicle)
            if rt is None:
                raise SpawnError(f"unknown vehicle {vehicle!r}")
            if not isinstance(rt.node, TeleopNode):
                raise BindingError(f"vehicle {vehicle!r} is not teleop-bound")
        self._teleop_q.put((vehicle, float(v_set), float(delta_set)))

    def vehicle_registry(self) -> dict[str, dict]:
        with self._registry_lock:
            return {
                name: {
                    "teleop": isinstance(rt.node, TeleopNode),
                    "v_max": rt.params.v_max,
                    "delta_max": rt.params.delta_max,
                }
                for name, rt in self._vehicles.items()
            }

    # --- tick loop --------------------------------------------------------

    def tick(self):
        t = SimTime(self.tick_index, self.step)
        self.bus.set_time(t)

        # apply queued spawns/despawns, then operator input
        for name in self._pending_despawns:
            with self._registry_lock:
                self._vehicles.pop(name, None)
                self._order = [self._vehicles[n] for n in sorted(self._vehicles)]
        self._pending_despawns.clear()
        pending, self._pending_spawns = self._pending_spawns, []
        for request in pending:
            self._add_vehicle(request, publish=True)
        while True:
            try:
                name, v_set, delta_set = self._teleop_q.get_nowait()
            except queue.Empty:
                break
            rt = self._vehicles.get(name)
            if rt is not None and isinstance(rt.node, TeleopNode):
                rt.node.set_input(v_set, delta_set)

        # (1) deliver last tick's traffic
        for rt in self._order:
            for env in rt.cmd_sub.poll():
                rt.cmd = env.payload
            for env in rt.scan_sub.poll():
                rt.latest_scan = env.payload
                estimate = headway_from_scan(env.payload, rt.cone)
                if estimate.valid:
                    if rt.min_headway is None or estimate.d < rt.min_headway:
                        rt.min_headway = estimate.d
            rt.node.poll()

        # (2) period-due controllers
        due = [rt for rt in self._order if self.tick_index % rt.period_ticks == 0]
        for rt in due:
            rt.last_out = self._compute_command(rt, t)
            rt.out_pub.publish(rt.last_out)

        # (3) obstaclestopper filters
        for rt in due:
            if rt.filtered_pub is not None:
                if rt.latest_scan is not None:
                    estimate = headway_from_scan(rt.latest_scan,
                                                 rt.binding.stopper.cone_half_angle)
                else:
                    estimate = HeadwayEstimate.none()
                filtered = obstaclestopper_filter(rt.last_out, estimate, rt.binding.stopper)
                rt.filtered_pub.publish(filtered)

        # (4) actuators + pose integration
        for rt in self._order:
            rt.act = step_actuators(rt.act, rt.cmd, rt.params, self.step)
            rt.state = integrate_pose(rt.state, rt.act, rt.params, self.step)

        # (5) due sensors, (vehicle, sensor) name order
        for rt in self._order:
            others = None
            if rt.suite.gps_enabled and is_sampling_tick(self.tick_index, self.step,
                                                         rt.suite.gps_rate):
                rt.gps_pub.publish(sample_gps(rt.state, rt.suite.gps_sigma, rt.gps_rng, t))
            if rt.suite.lidar_enabled and is_sampling_tick(self.tick_index, self.step,
                                                           rt.suite.lidar_rate):
                others = [(o.state, o.params) for o in self._order if o is not rt]
                rt.points_pub.publish(sample_lidar(
                    self.world, others, rt.state, rt.lidar_mount, t,
                    rt.suite.range_noise_sigma, rt.lidar_rng))
            if rt.suite.rangefinder_enabled and is_sampling_tick(self.tick_index, self.step,
                                                                 rt.suite.rangefinder_rate):
                if others is None:
                    others = [(o.state, o.params) for o in self._order if o is not rt]
                rt.scan_pub.publish(sample_rangefinder(
                    self.world, others, rt.state, rt.rf_mount, t,
                    rt.suite.range_noise_sigma, rt.rf_rng))

        # (6) ground truth + clock
        for rt in self._order:
            rt.state_pub.publish(rt.state)
        self.clock_pub.publish(t)

        # (7) flush to subscriptions and bridge taps
        self.bus.flush_tick()
        self.tick_index += 1

    def _compute_command(self, rt: _VehicleRuntime, t: SimTime) -> VelocityCommand:
        if rt.faulted:
            return VelocityCommand(0.0, 0.0)
        try:
            return rt.node.compute(t)
        except Exception as exc:  # isolate the vehicle, keep the run alive
            rt.faulted = True
            message = f"controller fault on {rt.name} at tick {self.tick_index}: {exc!r}"
            self.faults.append(message)
            self.diag_pub.publish(Diagnostic(source=rt.name, message=message))
            if self.strict:
                raise EngineFault(message) from exc
            return VelocityCommand(0.0, 0.0)

    def run(self, duration: float | None = None, rtf: float | None = None) -> ExitSummary:
        """Loop tick() for the given duration (scenario duration by default),
        pacing wall time to sim/rtf when rtf > 0."""
        seconds = duration if duration is not None else self.scenario.duration
        if seconds is None:
            raise CatsimError("run() needs a duration (scenario or argument)")
        factor = self.scenario.world.real_time_factor if rtf is None else rtf
        n_ticks = round(seconds / self.step)
        per_tick = self.step / factor if factor > 0.0 else 0.0
        start = time.perf_counter()
        deadline = start
        try:
            for _ in range(n_ticks):
                self.tick()
                if per_tick > 0.0:
                    deadline += per_tick
                    remaining = deadline - time.perf_counter()
                    if remaining > 0.002:
                        time.sleep(remaining - 0.002)
                    while time.perf_counter() < deadline:
                        pass
        finally:
            self._finalize_recorders()
        wall = time.perf_counter() - start
        return ExitSummary(
            ticks=self.tick_index,
            sim_seconds=self.tick_index * self.step,
            wall_seconds=wall,
            topic_counts=dict(self._topic_counts),
            min_headway={rt.name: rt.min_headway for rt in self._order},
            faults=list(self.faults),
        )


def replay_commands(bag: BagFile, spawn: VehicleSpawn) -> list[tuple[int, int, bytes]]:
    """Re-run one controller offline against recorded inputs.

    Feeds every recorded topic except the controller's own output back
    through a fresh bus at its original tick, runs the controller on its
    period grid, and returns (tick, seq, payload bytes) of the commands it
    produces. A faithful recording makes this bit-identical to the live run.
    """
    bus = MessageBus()
    bus.set_time(SimTime(0, bag.step))
    out_channel = "cmd_vel_in" if spawn.binding.stopper else "cmd_vel"
    out_topic = f"/{spawn.name}/{out_channel}"
    publishers: dict[int, Publisher] = {}
    for tid, name, tag in bag.topics:
        if name != out_topic:
            publishers[tid] = bus.advertise(name, wire.TYPE_OF_TAG[tag])
    out_pub = bus.advertise(out_topic, VelocityCommand)

    node = build_controller(spawn.binding, spawn.params)
    node.attach(bus, spawn.name)
    period_ticks = max(1, round(spawn.binding.period / bag.step))

    by_tick: dict[int, list] = defaultdict(list)
    for record in bag.records:
        if record.topic_id in publishers:
            by_tick[record.t].append(record)

    outputs: list[tuple[int, int, bytes]] = []
    for tick in range(bag.duration_ticks):
        t = SimTime(tick, bag.step)
        bus.set_time(t)
        node.poll()
        if tick % period_ticks == 0:
            cmd = node.compute(t)
            env = out_pub.publish(cmd)
            outputs.append((tick, env.seq, wire.encode_payload(wire.TAG_CMD, cmd)))
        for record in by_tick.get(tick, ()):
            publishers[record.topic_id].publish(bag.decode(record))
        bus.flush_tick()
    return outputs
