"""Message-framed service endpoints for the console and keypoint producers.

One process serves:
  GET /spec      read-only hand description (links, limits, actuator order)
  GET /grasps    the grasp preset roster with joint angles
  WS  /state     state stream, one JSON text message per control tick
  WS  /command   console commands: joint targets, grasp names, replay control
  WS  /keypoints keypoint producer input (teleop mode)

State fan-out never blocks the control loop: each socket reads from its
own bounded queue and silently loses oldest messages if it stalls.
"""

from __future__ import annotations

import json
import threading
import time
from collections import deque
from pathlib import Path
from typing import Mapping

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from starlette.concurrency import run_in_threadpool

from .grasps import load_presets
from .hand_model import (
    ACTUATOR_ORDER,
    ALL_JOINT_IDS,
    DIGITS,
    JointAngles,
    JointId,
    Segment,
    HandSpec,
    project_coupling,
)
from .motor_bus import (
    PRESENT_CURRENT,
    PRESENT_POSITION,
    VirtualBus,
    parse_sync_read_values,
    sync_read_frame,
    sync_write_goal_positions,
)
from .retargeting import KeypointFrame
from .serialization import dumps_canonical
from .service import (
    DEFAULT_RATE_HZ,
    StateBroadcaster,
    StateMessage,
    TeleopPipeline,
    default_motor_bank,
    read_session,
)
from .tendon import joint_to_motor, motor_to_joint


def spec_document_for_clients(spec: HandSpec) -> dict:
    """Everything a remote console needs to render and command the hand."""
    joints = []
    for jid in ALL_JOINT_IDS:
        j = spec.joint(jid)
        joints.append({
            "name": jid.name,
            "digit": jid.digit.value,
            "slot": jid.slot.value,
            "active": j.active,
            "kind": j.kind.value,
            "limits": list(j.limits),
            "rolling_radius": j.rolling_radius,
        })
    digits = []
    for d in DIGITS:
        base = spec.base_transform(d)
        digits.append({
            "name": d.value,
            "links": {s.value: spec.link_length(d, s) for s in Segment},
            "base_origin": base[:3, 3].tolist(),
            "base_rotation": base[:3, :3].tolist(),
        })
    return {
        "name": spec.name,
        "version": spec.version,
        "palm_length": spec.palm_length,
        "finger_length": spec.finger_length,
        "mass": spec.mass,
        "actuator_order": [j.name for j in ACTUATOR_ORDER],
        "joints": joints,
        "digits": digits,
    }


class SimRuntime:
    """Virtual hand steered by direct joint targets, grasp presets or
    recorded-session playback; publishes state at a fixed rate."""

    def __init__(self, spec: HandSpec, rate_hz: float = DEFAULT_RATE_HZ):
        self.spec = spec
        self.rate_hz = rate_hz
        self.dt = 1.0 / rate_hz
        self.bus: VirtualBus = default_motor_bank(spec)
        self.broadcaster = StateBroadcaster()
        self.presets = {p.name: p for p in load_presets(spec=spec)}
        self._lock = threading.Lock()
        self._targets = JointAngles.zeros()
        self._replay: deque | None = None
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self.fault = False
        self._motor_ids = sorted(self.bus.motors)
        self.ticks = 0

    # -- command surface -------------------------------------------------
    def set_joint_targets(self, updates: Mapping[str, float]) -> dict[str, float]:
        if self.fault:
            raise RuntimeError("runtime is in fault state; reset before commanding")
        parsed: dict[JointId, float] = {}
        for name, value in updates.items():
            jid = JointId.parse(name)
            lo, hi = self.spec.joint(jid).limits
            if not lo - 1e-9 <= float(value) <= hi + 1e-9:
                raise ValueError(f"{name} target {value} outside limits [{lo}, {hi}]")
            parsed[jid] = float(value)
        with self._lock:
            self._targets = project_coupling(self._targets.replace(parsed))
            applied = {jid.name: self._targets[jid] for jid in parsed}
        return applied

    def set_grasp(self, name: str) -> dict[str, float]:
        if name not in self.presets:
            raise KeyError(name)
        preset = self.presets[name]
        with self._lock:
            self._targets = preset.q
        return {jid.name: preset.q[jid] for jid in ACTUATOR_ORDER}

    def targets(self) -> JointAngles:
        with self._lock:
            return self._targets

    def start_replay(self, path: str | Path) -> int:
        _, entries = read_session(path)
        commands = deque(
            {int(k): float(v) for k, v in e["spools"].items()}
            for e in entries if e.get("kind") == "command"
        )
        if not commands:
            raise ValueError("session contains no commands")
        with self._lock:
            self._replay = commands
        return len(commands)

    def stop_replay(self) -> None:
        with self._lock:
            self._replay = None

    def reset_fault(self) -> None:
        self.fault = False

    # -- control loop ------------------------------------------------------
    def step_once(self, now: float | None = None) -> StateMessage:
        now = time.monotonic() if now is None else now
        with self._lock:
            replay = self._replay
            if replay:
                spools = replay.popleft()
                if not replay:
                    self._replay = None
            else:
                spools = joint_to_motor(self.spec, self._targets)
        self.bus.handle_frame(sync_write_goal_positions(spools))
        self.bus.step(self.dt)
        positions = parse_sync_read_values(
            PRESENT_POSITION, self.bus.handle_frame(sync_read_frame(PRESENT_POSITION, self._motor_ids)))
        currents = parse_sync_read_values(
            PRESENT_CURRENT, self.bus.handle_frame(sync_read_frame(PRESENT_CURRENT, self._motor_ids)))
        achieved, saturated = motor_to_joint(self.spec, positions)
        message = StateMessage(
            t=now,
            joints=achieved,
            motor_positions=positions,
            motor_currents=currents,
            stale=False,
            saturated=saturated,
            fault=self.fault,
            latency_ms=0.0,
        )
        self.ticks += 1
        self.broadcaster.publish(message)
        return message

    def _loop(self) -> None:
        next_tick = time.monotonic()
        while not self._stop.is_set():
            self.step_once()
            next_tick += self.dt
            delay = next_tick - time.monotonic()
            if delay > 0:
                self._stop.wait(delay)
            else:
                next_tick = time.monotonic()

    def start(self) -> None:
        if self._thread is None:
            self._stop.clear()
            self._thread = threading.Thread(target=self._loop, daemon=True)
            self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread:
            self._thread.join(timeout=2.0)
            self._thread = None


def apply_command(runtime: SimRuntime, command: Mapping) -> dict:
    """Validate and apply one console command; returns the acknowledgment."""
    kind = command.get("kind")
    try:
        if kind == "joints":
            applied = runtime.set_joint_targets(command.get("targets", {}))
            return {"ok": True, "kind": kind, "applied": applied}
        if kind == "grasp":
            applied = runtime.set_grasp(command.get("name", ""))
            return {"ok": True, "kind": kind, "name": command.get("name"),
                    "applied": applied}
        if kind == "replay":
            action = command.get("action")
            if action == "start":
                count = runtime.start_replay(command["path"])
                return {"ok": True, "kind": kind, "action": action, "commands": count}
            if action == "stop":
                runtime.stop_replay()
                return {"ok": True, "kind": kind, "action": action}
            return {"ok": False, "error": f"unknown replay action {action!r}"}
        return {"ok": False, "error": f"unknown command kind {kind!r}"}
    except KeyError as exc:
        return {"ok": False, "error": f"unknown grasp {exc}",
                "valid_names": sorted(runtime.presets)}
    except (ValueError, RuntimeError) as exc:
        return {"ok": False, "error": str(exc)}


def create_app(
    runtime: SimRuntime | None = None,
    pipeline: TeleopPipeline | None = None,
    console_dir: str | Path | None = None,
) -> FastAPI:
    if runtime is None and pipeline is None:
        raise ValueError("need a sim runtime or a teleop pipeline to serve")
    spec = runtime.spec if runtime is not None else pipeline.spec
    broadcaster = runtime.broadcaster if runtime is not None else pipeline.broadcaster
    if broadcaster is None:
        raise ValueError("pipeline must be built with a broadcaster to serve state")
    presets = runtime.presets if runtime is not None else {p.name: p for p in load_presets(spec=spec)}

    from contextlib import asynccontextmanager

    @asynccontextmanager
    async def lifespan(_app):
        if runtime is not None:
            runtime.start()
        try:
            yield
        finally:
            if runtime is not None:
                runtime.stop()

    app = FastAPI(title="tendonhand service", lifespan=lifespan)
    app.state.runtime = runtime

    # the console may be served from another origin (static dev server)
    from fastapi.middleware.cors import CORSMiddleware

    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["GET"], allow_headers=["*"])

    @app.get("/spec")
    def get_spec():
        return spec_document_for_clients(spec)

    @app.get("/grasps")
    def get_grasps():
        return [
            {
                "name": p.name,
                "category": p.category.value,
                "angles": {jid.name: p.q[jid] for jid in p.q},
            }
            for p in presets.values()
        ]

    @app.websocket("/state")
    async def state_stream(ws: WebSocket):
        await ws.accept()
        sub = broadcaster.subscribe()
        try:
            while True:
                message = await run_in_threadpool(sub.get, 1.0)
                if message is None:
                    continue
                await ws.send_text(dumps_canonical(message.to_record()))
        except WebSocketDisconnect:
            pass
        finally:
            broadcaster.unsubscribe(sub)

    @app.websocket("/command")
    async def command_channel(ws: WebSocket):
        await ws.accept()
        try:
            while True:
                raw = await ws.receive_text()
                try:
                    command = json.loads(raw)
                except json.JSONDecodeError:
                    await ws.send_text(dumps_canonical({"ok": False, "error": "invalid JSON"}))
                    continue
                if runtime is None:
                    ack = {"ok": False, "error": "console commands need the sim runtime"}
                else:
                    ack = apply_command(runtime, command)
                await ws.send_text(dumps_canonical(ack))
        except WebSocketDisconnect:
            pass

    @app.websocket("/keypoints")
    async def keypoint_input(ws: WebSocket):
        await ws.accept()
        if pipeline is None:
            await ws.send_text(dumps_canonical(
                {"ok": False, "error": "no teleop pipeline running"}))
            await ws.close()
            return
        try:
            while True:
                raw = await ws.receive_text()
                try:
                    frame = KeypointFrame.from_record(json.loads(raw))
                except (json.JSONDecodeError, KeyError, ValueError) as exc:
                    await ws.send_text(dumps_canonical({"ok": False, "error": str(exc)}))
                    continue
                pipeline.mailbox.put(frame)
        except WebSocketDisconnect:
            pass

    if console_dir is not None:
        # mounted last so the API routes keep precedence
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(console_dir), html=True), name="console")

    return app
