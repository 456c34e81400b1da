"""WebSocket session endpoint for the operator console.

One operator connection at a time; a second connection is rejected with an
error frame. The session loop owns all mutable state and runs at the scene
rate: incoming messages are applied in arrival order, input is resampled by
zero-order hold, and a sequence-numbered state snapshot is broadcast after
every tick (latest wins; stale snapshots are droppable by the client).

HTTP side channels (outside the ws protocol):

* ``GET /model``      robot model JSON for client-side forward kinematics
* ``GET /handshake``  probe configuration plus server FK frames, so the
  client can verify its own FK against the server before rendering
* ``GET /scene``      camera intrinsics, rate, frame-graph snapshot
* ``POST /transport`` play / pause / seek of a server-side trace source
"""

from __future__ import annotations

import asyncio
import contextlib
import logging
import time

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .calibration import FrameGraph
from .kinematics import forward_kinematics, model_to_dict
from .retarget import GloveSample, WristSample
from .service import (
    ProtocolError,
    SceneConfig,
    build_frame_graph,
    build_session,
    encode_error,
    encode_state,
    parse_client_message,
)
from .session import InputTick, TeleopSession
from .streams import load_trace, resample_zero_order_hold

logger = logging.getLogger(__name__)


class SessionHub:
    """Mutable server-side state shared between the loop and the endpoints."""

    def __init__(self, scene: SceneConfig, trace_path=None):
        self.scene = scene
        self.session: TeleopSession = build_session(scene)
        self.graph: FrameGraph = build_frame_graph(scene)
        self.seq = 0
        self.camera: str | None = scene.cameras[0].name if scene.cameras else None
        self.operator: WebSocket | None = None
        self.queue: asyncio.Queue = asyncio.Queue()
        self.started = time.perf_counter()
        self.last_input: tuple | None = None  # (pose, glove angles) held for ZOH
        self.trace_frames = (
            resample_zero_order_hold(load_trace(trace_path), scene.rate_hz) if trace_path else []
        )
        self.trace_cursor = 0
        self.trace_playing = False

    def now(self) -> float:
        return time.perf_counter() - self.started

    def probe_config(self) -> np.ndarray:
        rng = np.random.Generator(np.random.PCG64(0))
        m = self.scene.robot_model
        return rng.uniform(m.lowers, m.uppers)

    def handshake_doc(self) -> dict:
        q = self.probe_config()
        frames = forward_kinematics(self.scene.robot_model, q)
        return {
            "probe_q": [float(v) for v in q],
            "frames": [f.to_dict() for f in frames],
            "joint_names": [j.name for j in self.scene.robot_model.joints],
        }

    def scene_doc(self) -> dict:
        return {
            "rate_hz": self.scene.rate_hz,
            "hand_joints_offset": self.scene.hand_joints_offset,
            "gate_threshold": self.scene.gate_threshold,
            "cameras": [
                {
                    "name": c.name,
                    "pose_source": c.pose_source,
                    "intrinsics": vars(c.intrinsics),
                }
                for c in self.scene.cameras
            ],
            "frames": self.graph.snapshot(),
            "trace_frames": len(self.trace_frames),
        }

    # -- loop ------------------------------------------------------------
    def _apply_message(self, kind: str, payload):
        if kind == "input":
            tick: InputTick = payload
            self.last_input = (tick.wrist.pose, tick.glove.angles)
        elif kind == "pedal":
            self.session.step(payload)
        elif kind == "view":
            self.camera = payload

    def tick(self):
        """One session step: drain queued messages, then a ZOH input tick."""
        while True:
            try:
                kind, payload = self.queue.get_nowait()
            except asyncio.QueueEmpty:
                break
            self._apply_message(kind, payload)
        if self.trace_playing and self.trace_cursor < len(self.trace_frames):
            wrist, glove = self.trace_frames[self.trace_cursor]
            self.trace_cursor += 1
            self.last_input = (wrist.pose, glove.angles)
            if self.trace_cursor >= len(self.trace_frames):
                self.trace_playing = False
        if self.last_input is not None:
            t = self.now()
            pose, angles = self.last_input
            self.session.step(InputTick(WristSample(t, pose), GloveSample(t, angles)))
        self.seq += 1
        return encode_state(self.seq, self.session, self.graph.snapshot(), self.camera)


def make_app(scene: SceneConfig, trace_path=None, ui_dir=None) -> FastAPI:
    app = FastAPI(title="phantomarm session")
    hub = SessionHub(scene, trace_path)
    app.state.hub = hub

    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    @app.get("/model")
    def model():
        return model_to_dict(scene.robot_model)

    @app.get("/handshake")
    def handshake():
        return hub.handshake_doc()

    @app.get("/scene")
    def scene_info():
        return hub.scene_doc()

    @app.post("/transport")
    async def transport(cmd: dict):
        action = cmd.get("action")
        if action == "play":
            hub.trace_playing = True
        elif action == "pause":
            hub.trace_playing = False
        elif action == "seek":
            t = float(cmd.get("t", 0.0))
            hub.trace_cursor = int(max(0.0, t) * scene.rate_hz)
            hub.trace_cursor = min(hub.trace_cursor, max(len(hub.trace_frames) - 1, 0))
        else:
            return encode_error("bad_transport", f"unknown action '{action}'")
        return {"ok": True, "playing": hub.trace_playing, "cursor": hub.trace_cursor}

    @app.websocket("/ws")
    async def operator_ws(ws: WebSocket):
        await ws.accept()
        if hub.operator is not None:
            await ws.send_json(encode_error("busy", "another operator is connected"))
            await ws.close()
            return
        hub.operator = ws
        logger.info("operator connected")

        async def receiver():
            while True:
                doc = await ws.receive_json()
                try:
                    kind, payload = parse_client_message(doc)
                except ProtocolError as exc:
                    await ws.send_json(encode_error("bad_message", str(exc)))
                    continue
                hub.queue.put_nowait((kind, payload))

        recv_task = asyncio.create_task(receiver())
        try:
            period = 1.0 / scene.rate_hz
            while True:
                state = hub.tick()
                await ws.send_json(state)
                await asyncio.sleep(period)
        except (WebSocketDisconnect, RuntimeError, asyncio.CancelledError):
            pass
        finally:
            recv_task.cancel()
            with contextlib.suppress(asyncio.CancelledError, WebSocketDisconnect, RuntimeError):
                await recv_task
            hub.operator = None
            logger.info("operator disconnected")

    return app


def serve(scene: SceneConfig, port: int, host: str = "127.0.0.1", trace_path=None, ui_dir=None):
    import uvicorn

    app = make_app(scene, trace_path, ui_dir)
    logger.info("serving session on %s:%d (rate %.0f Hz)", host, port, scene.rate_hz)
    uvicorn.run(app, host=host, port=port, log_level="warning")
