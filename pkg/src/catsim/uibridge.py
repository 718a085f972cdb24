"""WebSocket bridge for the browser UI: live frames out, teleop in.

Serves `ws://host:port/live` plus the static frontend assets over plain
HTTP on the same port. Frames are composed from the bus's latest-wins tap
at a fixed wall-clock cadence per client, so a slow client only drops its
own frames; nothing feeds back into the simulation except explicit teleop
commands, which enter the engine through its thread-safe queue and take
effect at the next tick. Protocol: docs/ui-protocol.md.
"""
from __future__ import annotations

import json
import math
import threading
import time
from http import HTTPStatus
from pathlib import Path

from websockets.http11 import Response
from websockets.sync.server import serve

from .controllers import headway_from_scan
from .errors import CatsimError
from .world import Box, Cylinder

SCAN_DECIMATION = 3  # 180 beams -> 60 in the overlay
FRAME_INTERVAL = 0.05  # s, 20 Hz target per client

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".map": "application/json",
    ".json": "application/json",
}

_FALLBACK_PAGE = b"""<!doctype html>
<html><head><title>catsim</title></head>
<body style="font-family: monospace; background: #111; color: #ddd">
<h3>catsim UI bridge is running</h3>
<p>No frontend build found. Build it with:</p>
<pre>cd frontend && npm install && npm run build</pre>
<p>then restart with --ui-assets pointing at frontend/dist.</p>
</body></html>"""


def obstacle_entries(world) -> list[dict]:
    out = []
    for obstacle in world.obstacles:
        shape = obstacle.shape
        if isinstance(shape, Box):
            out.append({"id": obstacle.id, "type": "box", "cx": shape.cx, "cy": shape.cy,
                        "yaw": shape.yaw, "sx": shape.sx, "sy": shape.sy})
        elif isinstance(shape, Cylinder):
            out.append({"id": obstacle.id, "type": "cylinder", "cx": shape.cx,
                        "cy": shape.cy, "radius": shape.radius})
    return out


class UiBridge:
    def __init__(self, engine, host: str = "127.0.0.1", port: int = 8023,
                 assets_dir: str | Path | None = None):
        self.engine = engine
        self.host = host
        self.port = port
        self.assets_dir = Path(assets_dir) if assets_dir else None
        self.store = engine.enable_ui_tap()
        self._server = None
        self._thread: threading.Thread | None = None
        self.frames_sent = 0

    # --- frame composition -------------------------------------------------

    def compose_frame(self) -> dict:
        snap = self.store.snapshot()
        registry = self.engine.vehicle_registry()
        frame = {"type": "frame", "t": None, "vehicles": [], "scans": {},
                 "headways": {}, "commands": {}}
        clock = snap.get("/clock")
        if clock is not None:
            frame["t"] = clock.payload.seconds
        for name in sorted(registry):
            env = snap.get(f"/{name}/state")
            if env is None:
                continue
            s = env.payload
            frame["vehicles"].append({
                "name": name, "x": s.pose.x, "y": s.pose.y, "theta": s.pose.theta,
                "v": s.v, "delta": s.delta,
            })
            scan_env = snap.get(f"/{name}/scan")
            if scan_env is not None:
                scan = scan_env.payload
                ranges = [None if math.isinf(r) else r
                          for r in scan.ranges[::SCAN_DECIMATION]]
                frame["scans"][name] = {
                    "angle_min": scan.angle_min,
                    "increment": scan.angle_increment * SCAN_DECIMATION,
                    "ranges": ranges,
                }
                estimate = headway_from_scan(scan, math.pi / 6)
                if estimate.valid:
                    frame["headways"][name] = estimate.d
            commands = {}
            cmd_in = snap.get(f"/{name}/cmd_vel_in")
            cmd_out = snap.get(f"/{name}/cmd_vel")
            if cmd_in is not None:
                commands["requested"] = {"v": cmd_in.payload.v_set,
                                         "delta": cmd_in.payload.delta_set}
            if cmd_out is not None:
                commands["applied"] = {"v": cmd_out.payload.v_set,
                                       "delta": cmd_out.payload.delta_set}
            if commands:
                frame["commands"][name] = commands
        return frame

    def hello(self) -> dict:
        return {
            "type": "hello",
            "obstacles": obstacle_entries(self.engine.world),
            "vehicles": self.engine.vehicle_registry(),
            "scan_decimation": SCAN_DECIMATION,
        }

    # --- connection handling ------------------------------------------------

    def _handle(self, ws):
        try:
            ws.send(json.dumps(self.hello()))
            next_frame = time.monotonic()
            while True:
                try:
                    raw = ws.recv(timeout=0.0)
                    self._handle_client_message(ws, raw)
                except TimeoutError:
                    pass
                now = time.monotonic()
                if now >= next_frame:
                    ws.send(json.dumps(self.compose_frame()))
                    self.frames_sent += 1
                    # skip straight to the next slot: stale frames are dropped
                    next_frame = now + FRAME_INTERVAL
                else:
                    time.sleep(min(FRAME_INTERVAL / 5.0, next_frame - now))
        except Exception:
            return  # connection closed; client reconnects and gets a fresh hello

    def _handle_client_message(self, ws, raw):
        try:
            msg = json.loads(raw)
        except (TypeError, ValueError):
            ws.send(json.dumps({"type": "reject", "reason": "invalid JSON"}))
            return
        if msg.get("type") != "teleop":
            ws.send(json.dumps({"type": "reject",
                                "reason": f"unknown message type {msg.get('type')!r}"}))
            return
        try:
            self.engine.send_teleop(str(msg.get("vehicle")),
                                    float(msg.get("v", 0.0)),
                                    float(msg.get("delta", 0.0)))
        except (CatsimError, TypeError, ValueError) as exc:
            ws.send(json.dumps({"type": "reject", "vehicle": msg.get("vehicle"),
                                "reason": str(exc)}))
            return
        ws.send(json.dumps({"type": "ack", "vehicle": msg.get("vehicle")}))

    def _serve_static(self, connection, request):
        path = request.path.split("?", 1)[0]
        if path == "/live":
            return None  # proceed with the WebSocket handshake
        if path == "/":
            path = "/index.html"
        body = None
        content_type = _CONTENT_TYPES.get(Path(path).suffix, "application/octet-stream")
        if self.assets_dir is not None:
            candidate = (self.assets_dir / path.lstrip("/")).resolve()
            inside = str(candidate).startswith(str(self.assets_dir.resolve()))
            if inside and candidate.is_file():
                body = candidate.read_bytes()
        if body is None and path == "/index.html":
            body, content_type = _FALLBACK_PAGE, "text/html; charset=utf-8"
        if body is None:
            return connection.respond(HTTPStatus.NOT_FOUND, "not found\n")
        response = connection.respond(HTTPStatus.OK, "")
        response.headers["Content-Type"] = content_type
        return Response(200, "OK", response.headers, body)

    # --- lifecycle -----------------------------------------------------------

    def start(self):
        self._server = serve(self._handle, self.host, self.port,
                             process_request=self._serve_static)
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        name="ui-bridge", daemon=True)
        self._thread.start()

    def stop(self):
        if self._server is not None:
            self._server.shutdown()
            self._thread.join(timeout=2.0)
            self._server = None
