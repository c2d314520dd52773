"""Teleoperation runtime: keypoint ingestion, fixed-rate control loop,
session recording and state fan-out.

Three stages with explicit contracts: an ingest side writes the newest
keypoint frame into a latest-value mailbox; the control loop (single
writer) ticks at a fixed rate pulling the newest frame through
retarget -> smooth -> coupling -> spool mapping and on to the bus; state
messages fan out through bounded per-subscriber queues that drop oldest
when a consumer stalls, so the loop never blocks.

Replays are deterministic: a lockstep clock derived from the recorded
timestamps, a pure pipeline, and canonical serialization give bit-equal
command logs for identical inputs (same profile and hand-spec hashes).
"""

from __future__ import annotations

import json
import math
import threading
import time
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from .hand_model import ACTUATOR_ORDER, HandSpec, JointAngles, project_coupling
from .hand_spec_io import hand_spec_hash
from .motor_bus import (
    PRESENT_CURRENT,
    PRESENT_POSITION,
    VirtualBus,
    VirtualMotor,
    parse_sync_read_values,
    sync_read_frame,
    sync_write_goal_positions,
)
from .retargeting import (
    CalibrationProfile,
    FrameRejected,
    KeypointFrame,
    keypoints_to_angles,
    retarget,
    smooth,
)
from .serialization import dumps_canonical
from .tendon import joint_to_motor, motor_to_joint

SESSION_SCHEMA = "session/1"
STATE_SCHEMA = "state/1"
DEFAULT_RATE_HZ = 30.0
STALE_AFTER_S = 0.2
BUS_RETRIES = 3
SUBSCRIBER_QUEUE = 64


class ServiceError(Exception):
    pass


class LimitViolation(ServiceError):
    """A command left the robot joint limits; the pipeline refuses to emit it."""


@dataclass(frozen=True)
class StateMessage:
    t: float
    joints: JointAngles
    motor_positions: Mapping[int, float]
    motor_currents: Mapping[int, float]
    stale: bool
    saturated: bool
    fault: bool
    latency_ms: float

    def to_record(self) -> dict:
        return {
            "schema": STATE_SCHEMA,
            "t": self.t,
            "joints": {jid.name: self.joints[jid] for jid in self.joints},
            "motor_positions": {str(k): v for k, v in self.motor_positions.items()},
            "motor_currents": {str(k): v for k, v in self.motor_currents.items()},
            "flags": {"stale": self.stale, "saturated": self.saturated, "fault": self.fault},
            "latency_ms": self.latency_ms,
        }


class LatestFrameMailbox:
    """Single-slot mailbox: writers overwrite, the reader takes the newest."""

    def __init__(self):
        self._lock = threading.Lock()
        self._frame: KeypointFrame | None = None

    def put(self, frame: KeypointFrame) -> None:
        with self._lock:
            if self._frame is None or frame.timestamp > self._frame.timestamp:
                self._frame = frame

    def peek(self) -> KeypointFrame | None:
        with self._lock:
            return self._frame


class Subscription:
    def __init__(self, maxlen: int):
        self._queue: deque = deque(maxlen=maxlen)
        self._cond = threading.Condition()
        self.dropped = 0
        self.closed = False

    def _push(self, item) -> None:
        with self._cond:
            if len(self._queue) == self._queue.maxlen:
                self.dropped += 1
            self._queue.append(item)
            self._cond.notify()

    def get(self, timeout: float | None = None):
        with self._cond:
            if not self._queue:
                self._cond.wait(timeout)
            return self._queue.popleft() if self._queue else None

    def drain(self) -> list:
        with self._cond:
            items = list(self._queue)
            self._queue.clear()
            return items

    def close(self) -> None:
        with self._cond:
            self.closed = True
            self._cond.notify_all()


class StateBroadcaster:
    """Non-blocking fan-out; slow subscribers lose oldest messages."""

    def __init__(self, queue_size: int = SUBSCRIBER_QUEUE):
        self._queue_size = queue_size
        self._subs: list[Subscription] = []
        self._lock = threading.Lock()

    def subscribe(self) -> Subscription:
        sub = Subscription(self._queue_size)
        with self._lock:
            self._subs.append(sub)
        return sub

    def unsubscribe(self, sub: Subscription) -> None:
        sub.close()
        with self._lock:
            if sub in self._subs:
                self._subs.remove(sub)
        sub.drain()

    def publish(self, message: StateMessage) -> None:
        with self._lock:
            subs = list(self._subs)
        for sub in subs:
            if not sub.closed:
                sub._push(message)

    @property
    def subscriber_count(self) -> int:
        with self._lock:
            return len(self._subs)


class SessionWriter:
    """Line-delimited session file: header, then tagged entries."""

    def __init__(self, path: str | Path, profile_hash: str, spec_hash: str, rate_hz: float):
        self._fh = open(path, "w", encoding="utf-8")
        self._fh.write(dumps_canonical({
            "schema": SESSION_SCHEMA,
            "profile_hash": profile_hash,
            "spec_hash": spec_hash,
            "rate_hz": rate_hz,
        }) + "\n")

    def write(self, kind: str, record: dict) -> None:
        self._fh.write(dumps_canonical({"kind": kind, **record}) + "\n")

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_session(path: str | Path) -> tuple[dict, list[dict]]:
    with open(path, "r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("schema") != SESSION_SCHEMA:
            raise ServiceError(f"unsupported session schema {header.get('schema')!r}")
        entries = [json.loads(line) for line in fh if line.strip()]
    return header, entries


def session_frames(entries: Iterable[dict]) -> list[KeypointFrame]:
    return [KeypointFrame.from_record(e) for e in entries if e.get("kind") == "frame"]


def session_command_log(path: str | Path) -> list[str]:
    """Canonical command lines of a session, for bit-exact comparison."""
    _, entries = read_session(path)
    return [dumps_canonical(e) for e in entries if e.get("kind") == "command"]


def default_motor_bank(spec: HandSpec) -> VirtualBus:
    params = spec.motor_params or {}
    motors = [
        VirtualMotor(
            id=route.motor,
            current_limit=float(params.get("current_limit_ma", 600.0)),
            torque_constant=float(params.get("torque_constant_nm_per_a", 0.85)),
            max_velocity=float(params.get("max_velocity_rad_s", 8.0)),
        )
        for route in spec.routes
    ]
    return VirtualBus(motors)


class TeleopPipeline:
    """Fixed-rate retargeting loop over a latest-value frame mailbox.

    Pure with respect to its inputs: the same frame sequence and tick
    clock produce identical commands. Stale input (no frame newer than
    the hold window) keeps the last target and raises the stale flag.
    """

    def __init__(
        self,
        spec: HandSpec,
        profile: CalibrationProfile,
        bus: VirtualBus | None = None,
        rate_hz: float = DEFAULT_RATE_HZ,
        broadcaster: StateBroadcaster | None = None,
        session: SessionWriter | None = None,
        stale_after: float = STALE_AFTER_S,
    ):
        profile.validate()
        self.spec = spec
        self.profile = profile
        self.bus = bus if bus is not None else default_motor_bank(spec)
        self.rate_hz = rate_hz
        self.dt = 1.0 / rate_hz
        self.broadcaster = broadcaster
        self.session = session
        self.stale_after = stale_after
        self.mailbox = LatestFrameMailbox()
        self._target = JointAngles.zeros()
        self._last_frame_t: float | None = None
        self._last_consumed_t: float | None = None
        self.fault = False
        self.ticks = 0
        self.stale_ticks = 0
        self.frames_consumed = 0
        self.frames_rejected = 0
        self.commands = 0
        self._motor_ids = sorted(self.bus.motors)

    def _check_limits(self, q: JointAngles) -> None:
        for jid in ACTUATOR_ORDER:
            lo, hi = self.spec.joint(jid).limits
            if q[jid] < lo - 1e-9 or q[jid] > hi + 1e-9:
                raise LimitViolation(f"{jid.name} target {q[jid]:.4f} outside [{lo}, {hi}]")

    def tick(self, now: float) -> StateMessage:
        start = time.perf_counter()
        frame = self.mailbox.peek()
        stale = True
        if frame is not None and now - frame.timestamp <= self.stale_after:
            if self._last_consumed_t != frame.timestamp:
                self._last_consumed_t = frame.timestamp
                try:
                    angles = keypoints_to_angles(frame)
                except FrameRejected:
                    # degenerate geometry: drop the frame, hold the target
                    self.frames_rejected += 1
                else:
                    raw = retarget(self.profile, angles)
                    self._target = project_coupling(
                        smooth(self._target, raw, self.profile.ema_alpha))
                    self.frames_consumed += 1
                    if self.session:
                        self.session.write("frame", frame.to_record())
            stale = False
        self.stale_ticks += stale

        self._check_limits(self._target)
        spools = joint_to_motor(self.spec, self._target)
        if not self.fault:
            delivered = False
            for _ in range(BUS_RETRIES):
                try:
                    self.bus.handle_frame(sync_write_goal_positions(spools))
                    delivered = True
                    break
                except Exception:
                    continue
            if not delivered:
                self.fault = True  # targets frozen from here on
            else:
                self.commands += 1
                if self.session:
                    self.session.write("command", {
                        "t": now,
                        "spools": {str(k): v for k, v in spools.items()},
                        "stale": stale,
                    })

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
            stale=stale,
            saturated=saturated,
            fault=self.fault,
            latency_ms=(time.perf_counter() - start) * 1e3,
        )
        self.ticks += 1
        if self.session:
            self.session.write("state", message.to_record())
        if self.broadcaster:
            self.broadcaster.publish(message)
        return message

    def summary(self) -> dict:
        return {
            "ticks": self.ticks,
            "frames_consumed": self.frames_consumed,
            "frames_rejected": self.frames_rejected,
            "stale_ticks": self.stale_ticks,
            "commands": self.commands,
            "fault": self.fault,
        }


def run_pipeline_on_stream(
    spec: HandSpec,
    profile: CalibrationProfile,
    frames: Iterable[KeypointFrame],
    rate_hz: float = DEFAULT_RATE_HZ,
    session_path: str | Path | None = None,
    broadcaster: StateBroadcaster | None = None,
    extra_ticks: int = 5,
) -> dict:
    """Deterministic lockstep run over a recorded stream.

    Tick times derive from the stream's timestamps; wall clock never
    enters the loop, so two runs over the same stream are bit-identical.
    """
    frames = list(frames)
    if not frames:
        raise ServiceError("empty keypoint stream")
    session = None
    if session_path is not None:
        session = SessionWriter(
            session_path,
            profile_hash=profile.content_hash(),
            spec_hash=spec_content_hash(spec),
            rate_hz=rate_hz,
        )
    pipeline = TeleopPipeline(
        spec, profile, rate_hz=rate_hz, broadcaster=broadcaster, session=session)
    dt = 1.0 / rate_hz
    t0 = frames[0].timestamp
    t_end = frames[-1].timestamp
    idx = 0
    tick_count = int(math.floor((t_end - t0) / dt)) + 1 + extra_ticks
    try:
        for k in range(tick_count):
            now = t0 + k * dt
            while idx < len(frames) and frames[idx].timestamp <= now:
                pipeline.mailbox.put(frames[idx])
                idx += 1
            pipeline.tick(now)
    finally:
        if session:
            session.close()
    return pipeline.summary()


_SPEC_HASH_CACHE: dict[int, str] = {}


def spec_content_hash(spec: HandSpec) -> str:
    key = id(spec)
    if key not in _SPEC_HASH_CACHE:
        _SPEC_HASH_CACHE[key] = hand_spec_hash({
            "name": spec.name,
            "links": [[l.digit.value, l.segment.value, l.length] for l in spec.links],
            "joints": [[j.id.name, j.kind.value, list(j.limits), j.rolling_radius or 0.0]
                       for j in spec.joints],
            "routes": [[r.id, r.motor, r.spool_radius, r.slack_offset,
                        r.friction_mu, r.wrap_angle] for r in spec.routes],
        })
    return _SPEC_HASH_CACHE[key]


def replay_session(
    spec: HandSpec,
    profile: CalibrationProfile,
    session_path: str | Path,
    out_path: str | Path,
    rate_hz: float | None = None,
) -> dict:
    """Re-run a recorded session's frames; writes a fresh session file.

    Refuses to replay against a different profile or hand spec than the
    one the session was recorded with.
    """
    header, entries = read_session(session_path)
    if header["profile_hash"] != profile.content_hash():
        raise ServiceError("session was recorded with a different calibration profile")
    if header["spec_hash"] != spec_content_hash(spec):
        raise ServiceError("session was recorded with a different hand spec")
    frames = session_frames(entries)
    return run_pipeline_on_stream(
        spec, profile, frames,
        rate_hz=rate_hz or float(header.get("rate_hz", DEFAULT_RATE_HZ)),
        session_path=out_path,
    )


class RealtimeLoop:
    """Wall-clock driver for the pipeline, for live sockets."""

    def __init__(self, pipeline: TeleopPipeline):
        self.pipeline = pipeline
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self.tick_durations: deque = deque(maxlen=512)
        self.tick_intervals: deque = deque(maxlen=512)

    def start(self) -> None:
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def _run(self) -> None:
        period = self.pipeline.dt
        next_tick = time.monotonic()
        last_start = None
        while not self._stop.is_set():
            start = time.monotonic()
            if last_start is not None:
                self.tick_intervals.append(start - last_start)
            last_start = start
            self.pipeline.tick(now=start)
            self.tick_durations.append(time.monotonic() - start)
            next_tick += period
            delay = next_tick - time.monotonic()
            if delay > 0:
                self._stop.wait(delay)
            else:
                next_tick = time.monotonic()

    def stop(self) -> None:
        self._stop.set()
        if self._thread:
            self._thread.join(timeout=2.0)
