"""Live teleoperation service: one simulated world, many viewers, one driver.

``SessionCore`` is the sans-io protocol brain: plain methods turn inbound
message text into reply lists and advance the world one tick at a time, so
every protocol rule is unit-testable without sockets or clocks.  The FastAPI
wrapper owns the actual loop: a single asyncio task steps the world at the
5 Hz model tick and rebroadcasts the freshest state between ticks so the
stream stays at or above 15 Hz.

Protocol (JSON per message, see schema/teleop_wire.schema.json):

* server -> client on connect: ``hello`` with joint/gain limits
* client -> server: ``command`` (latest wins between ticks; the first sender
  holds the single command token until it disconnects)
* client -> server: ``record`` start/stop -> server replies ``record_ack``;
  episodes persist in the run-directory format
* server -> client: ``state`` broadcasts, identical for every viewer
* any malformed or ill-timed message -> ``error`` reply, session preserved;
  a client dropping mid-recording finalizes its episode flagged
"""

import base64
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..controller import SimPlant
from ..simworld import (
    CommandOutOfBoundsError,
    MaterialError,
    MaterialParams,
    ServoCommand,
    SimWorld,
    rasterize,
)
from .rundir import RunDirectory, pgm_bytes

WIRE_SCHEMA_VERSION = 1
BROADCAST = None  # Reply.to sentinel: deliver to every connected client


@dataclass(frozen=True)
class Reply:
    to: str | None  # client id, or BROADCAST
    payload: dict


def _error(to: str, msg: str) -> Reply:
    return Reply(to, {"type": "error", "msg": msg})


@dataclass
class _Recording:
    owner: str
    material: MaterialParams
    theta: list = field(default_factory=list)
    theta_dot: list = field(default_factory=list)
    theta_ref: list = field(default_factory=list)
    k_ref: list = field(default_factory=list)
    frames: list = field(default_factory=list)

    def append(self, state, cmd: ServoCommand, frame: np.ndarray) -> None:
        self.theta.append(state.theta.copy())
        self.theta_dot.append(state.theta_dot.copy())
        self.theta_ref.append(np.asarray(cmd.theta_ref, dtype=np.float64))
        self.k_ref.append(float(cmd.k_ref))
        self.frames.append(frame)

    def __len__(self) -> int:
        return len(self.theta)


class SessionCore:
    """Protocol state machine around one plant; no sockets, no clocks."""

    def __init__(self, world: SimWorld | None = None,
                 material: MaterialParams = MaterialParams(0.05, 0.10),
                 record_root=None, settle_seconds: float = 2.0):
        self.plant = SimPlant.hanging(world or SimWorld.default(), material,
                                      settle_s=settle_seconds)
        theta = self.plant.state.theta
        self._cmd = ServoCommand((float(theta[0]), float(theta[1])),
                                 0.5 * sum(self.plant.world.arm.k_ref_range))
        self._pending: ServoCommand | None = None
        self.clients: set[str] = set()
        self.command_holder: str | None = None
        self.recording: _Recording | None = None
        self.run: RunDirectory | None = None
        self._record_root = Path(record_root) if record_root is not None else None
        self.tick_count = 0

    # -- connection lifecycle -------------------------------------------------

    def connect(self, cid: str) -> list[Reply]:
        self.clients.add(cid)
        arm = self.plant.world.arm
        cam = self.plant.world.camera
        return [Reply(cid, {
            "type": "hello",
            "schema_version": WIRE_SCHEMA_VERSION,
            "dt": self.plant.world.tick_dt,
            "limits": {
                "theta_lo": [float(v) for v in arm.limits_lo()],
                "theta_hi": [float(v) for v in arm.limits_hi()],
                "k_lo": float(arm.k_ref_range[0]),
                "k_hi": float(arm.k_ref_range[1]),
            },
            "arm": {
                "base": [float(v) for v in arm.base],
                "link_lengths": [float(v) for v in arm.link_lengths],
            },
            "camera": {
                "center": [float(v) for v in cam.center],
                "pitch": float(cam.pitch),
                "width": int(cam.width),
                "height": int(cam.height),
            },
        })]

    def disconnect(self, cid: str) -> list[Reply]:
        self.clients.discard(cid)
        if self.command_holder == cid:
            self.command_holder = None
        replies: list[Reply] = []
        if self.recording is not None and self.recording.owner == cid:
            name, steps = self._finalize_recording(flagged=True)
            if name is not None:
                replies.append(Reply(BROADCAST, {
                    "type": "record_ack", "action": "stop",
                    "episode": name, "steps": steps, "flagged": True,
                }))
        return replies

    # -- inbound messages -------------------------------------------------------

    def handle(self, cid: str, text: str) -> list[Reply]:
        try:
            msg = json.loads(text)
        except json.JSONDecodeError:
            return [_error(cid, "message is not valid JSON")]
        if not isinstance(msg, dict) or not isinstance(msg.get("type"), str):
            return [_error(cid, "message must be an object with a string 'type'")]
        if msg["type"] == "command":
            return self._handle_command(cid, msg)
        if msg["type"] == "record":
            return self._handle_record(cid, msg)
        return [_error(cid, f"unknown message type {msg['type']!r}")]

    def _handle_command(self, cid: str, msg: dict) -> list[Reply]:
        if self.command_holder is not None and self.command_holder != cid:
            return [_error(cid, "command token is held by another client")]
        theta_ref = msg.get("theta_ref")
        k_ref = msg.get("k_ref")
        if (not isinstance(theta_ref, list) or len(theta_ref) != 2
                or not all(isinstance(v, (int, float)) and math.isfinite(v)
                           for v in theta_ref)):
            return [_error(cid, "theta_ref must be a list of two finite numbers")]
        if not isinstance(k_ref, (int, float)) or not math.isfinite(k_ref):
            return [_error(cid, "k_ref must be a finite number")]
        cmd = ServoCommand((float(theta_ref[0]), float(theta_ref[1])), float(k_ref))
        try:
            self.plant.world.validate_command(cmd)
        except CommandOutOfBoundsError as err:
            return [_error(cid, str(err))]
        self.command_holder = cid  # only a valid command claims the token
        self._pending = cmd  # latest wins; applied at the next tick
        return []

    def _handle_record(self, cid: str, msg: dict) -> list[Reply]:
        action = msg.get("action")
        if action == "start":
            if self.recording is not None:
                return [_error(cid, "a recording is already in progress")]
            material_spec = msg.get("material")
            if not isinstance(material_spec, dict):
                return [_error(cid, "record start needs a material object "
                                    "with c_damp and c_mass")]
            try:
                material = MaterialParams(float(material_spec.get("c_damp", "nan")),
                                          float(material_spec.get("c_mass", "nan")))
            except (MaterialError, TypeError, ValueError) as err:
                return [_error(cid, f"invalid material: {err}")]
            self.plant.material = material  # the cloth in hand changes now
            self.recording = _Recording(owner=cid, material=material)
            return [Reply(cid, {"type": "record_ack", "action": "start",
                                "episode": None, "steps": 0, "flagged": False})]
        if action == "stop":
            if self.recording is None:
                return [_error(cid, "no recording is in progress")]
            if self.recording.owner != cid:
                return [_error(cid, "the recording belongs to another client")]
            if len(self.recording) == 0:
                self.recording = None
                return [_error(cid, "recording held no completed ticks; nothing saved")]
            name, steps = self._finalize_recording(flagged=False)
            if name is None:
                return [_error(cid, "this session has no output directory; "
                                    "restart the service with --out to persist")]
            return [Reply(cid, {"type": "record_ack", "action": "stop",
                                "episode": name, "steps": steps, "flagged": False})]
        return [_error(cid, "record action must be 'start' or 'stop'")]

    def _finalize_recording(self, flagged: bool) -> tuple[str | None, int]:
        rec, self.recording = self.recording, None
        if rec is None or len(rec) == 0:
            return None, 0
        if self._record_root is None:
            return None, len(rec)
        if self.run is None:
            meta = self._record_root / "meta.json"
            self.run = (RunDirectory(self._record_root) if meta.is_file()
                        else RunDirectory.create(self._record_root, kind="teleop",
                                                 seed=None, policy="teleop"))
        name = self.run.add_episode(
            material=rec.material, policy="teleop", seed=None,
            trial_id=len(self.run.meta["episodes"]),
            theta=np.stack(rec.theta), theta_dot=np.stack(rec.theta_dot),
            theta_ref=np.stack(rec.theta_ref), k_ref=np.asarray(rec.k_ref),
            frames=np.stack(rec.frames), flagged=flagged)
        return name, len(rec)

    # -- world advancement -------------------------------------------------------

    def tick(self) -> dict:
        """Advance one 0.2 s world tick under the freshest command."""
        if self._pending is not None:
            self._cmd = self._pending
            self._pending = None
        if self.recording is not None:
            frame = rasterize(self.plant.world.camera, self.plant.state.x)
            self.recording.append(self.plant.state, self._cmd, frame)
        self.plant.step(self._cmd.as_array())
        self.tick_count += 1
        return self.state_payload(include_frame=True)

    def state_payload(self, include_frame: bool = False) -> dict:
        state = self.plant.state
        payload = {
            "type": "state",
            "t": float(state.t),
            "theta": [float(v) for v in state.theta],
            "cloth": [[float(x), float(y)] for x, y in state.x],
        }
        if include_frame:
            frame = rasterize(self.plant.world.camera, state.x)
            payload["frame"] = base64.b64encode(pgm_bytes(frame)).decode("ascii")
        return payload


# ---------------------------------------------------------------------------
# FastAPI wrapper
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ServeSettings:
    record_dir: str | None = None
    material: tuple[float, float] = (0.05, 0.10)
    broadcast_hz: float = 20.0
    settle_seconds: float = 2.0
    static_dir: str | None = None

    def __post_init__(self):
        if self.broadcast_hz < 15.0:
            raise ValueError("the state stream contract requires >= 15 Hz")


class _Hub:
    """Connected sockets plus reply routing; lives on the app's event loop."""

    def __init__(self):
        self.sockets: dict[str, object] = {}

    async def dispatch(self, replies: list[Reply]) -> None:
        for reply in replies:
            if reply.to is BROADCAST:
                await self.broadcast(reply.payload)
            elif reply.to in self.sockets:
                await self._send(reply.to, reply.payload)

    async def broadcast(self, payload: dict) -> None:
        for cid in list(self.sockets):
            await self._send(cid, payload)

    async def _send(self, cid: str, payload: dict) -> None:
        ws = self.sockets.get(cid)
        if ws is None:
            return
        try:
            await ws.send_text(json.dumps(payload))
        except Exception:
            self.sockets.pop(cid, None)  # dead socket; disconnect handler follows


def create_app(settings: ServeSettings | None = None):
    """The ASGI app: /ws teleop endpoint plus optional static UI hosting."""
    import asyncio
    import uuid
    from contextlib import asynccontextmanager

    from fastapi import FastAPI, WebSocket, WebSocketDisconnect

    settings = settings or ServeSettings()
    core = SessionCore(material=MaterialParams(*settings.material),
                       record_root=settings.record_dir,
                       settle_seconds=settings.settle_seconds)
    hub = _Hub()

    @asynccontextmanager
    async def lifespan(app):
        task = asyncio.create_task(_ticker())
        try:
            yield
        finally:
            task.cancel()
            try:
                await task
            except asyncio.CancelledError:
                pass

    async def _ticker():
        period = 1.0 / settings.broadcast_hz
        world_dt = core.plant.world.tick_dt
        acc = world_dt  # first loop iteration performs a world tick
        while True:
            if acc >= world_dt - 1e-9:
                acc = 0.0
                payload = core.tick()
            else:
                payload = core.state_payload()
            await hub.broadcast(payload)
            await asyncio.sleep(period)
            acc += period

    app = FastAPI(lifespan=lifespan)
    app.state.core = core
    app.state.hub = hub

    @app.websocket("/ws")
    async def ws_endpoint(websocket: WebSocket):
        await websocket.accept()
        cid = uuid.uuid4().hex
        hub.sockets[cid] = websocket
        await hub.dispatch(core.connect(cid))
        try:
            while True:
                text = await websocket.receive_text()
                await hub.dispatch(core.handle(cid, text))
        except WebSocketDisconnect:
            pass
        finally:
            hub.sockets.pop(cid, None)
            await hub.dispatch(core.disconnect(cid))

    static_dir = settings.static_dir
    if static_dir and Path(static_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    return app


def serve(settings: ServeSettings, host: str = "127.0.0.1", port: int = 8765) -> None:
    """Run the teleop service until interrupted."""
    import uvicorn

    uvicorn.run(create_app(settings), host=host, port=port, log_level="info")
