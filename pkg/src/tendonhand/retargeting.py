"""Operator hand keypoints to robot joint targets.

Calibration records each joint's operator range; teleoperation then maps
the operator's current angle, normalized against that range, linearly
onto the robot's calibrated limits, smooths targets with an exponential
moving average, and maps the wrist pose into the robot workspace.

Landmark layout (21 points, index table also in docs/formats.md):
0 wrist; thumb 1-4 (base, mid, distal, tip); index 5-8; middle 9-12;
ring 13-16; pinky 17-20 (base knuckle, mid, distal, tip for each).

Angle conventions per digit (base landmark c0, chain c0 c1 c2 c3):
the digit triad is (m = unit(c0 - wrist), l = unit(palm_normal x m),
n = m x l). Base flexion = atan2(d.n, d.m) and abduction =
atan2(d.l, d.m) for the proximal segment d = c1 - c0; the coupled
distal angle is the unsigned angle between consecutive segments.
The robot's coupled actuator takes the operator's proximal
interphalangeal angle (not the distal one).
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

from . import transforms as tf
from .hand_model import (
    ACTUATOR_ORDER,
    ACTIVE_SLOTS,
    DIGITS,
    Digit,
    HandSpec,
    JointAngles,
    JointId,
    Slot,
    project_coupling,
)
from .serialization import content_hash, dumps_canonical

KEYPOINT_SCHEMA = "keypoints/1"
PROFILE_SCHEMA = "calibration-profile/1"

LANDMARKS_PER_HAND = 21
_DIGIT_BASE_INDEX = {
    Digit.THUMB: 1,
    Digit.INDEX: 5,
    Digit.MIDDLE: 9,
    Digit.RING: 13,
    Digit.PINKY: 17,
}

CONFIDENCE_MIN = 0.5
UNDER_CALIBRATED_SPAN = 0.05  # rad


class RetargetingError(Exception):
    pass


class FrameRejected(RetargetingError):
    """Degenerate keypoint geometry; the frame carries no usable pose."""


class ProfileError(RetargetingError):
    pass


@dataclass(frozen=True)
class KeypointFrame:
    timestamp: float
    landmarks: np.ndarray            # (21, 3) m, operator hand frame
    wrist_pose: np.ndarray           # 4x4, wrist relative to torso
    confidence: float = 1.0

    def __post_init__(self):
        lm = np.asarray(self.landmarks, dtype=float)
        if lm.shape != (LANDMARKS_PER_HAND, 3):
            raise ValueError(f"landmarks must be {LANDMARKS_PER_HAND}x3, got {lm.shape}")
        object.__setattr__(self, "landmarks", lm)
        wp = np.asarray(self.wrist_pose, dtype=float)
        if wp.shape != (4, 4):
            raise ValueError("wrist_pose must be a 4x4 transform")
        object.__setattr__(self, "wrist_pose", wp)
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")

    def to_record(self) -> dict:
        return {
            "t": self.timestamp,
            "landmarks": self.landmarks.tolist(),
            "wrist_pos": self.wrist_pose[:3, 3].tolist(),
            "wrist_quat": tf.quat_from_matrix(self.wrist_pose).tolist(),
            "confidence": self.confidence,
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> "KeypointFrame":
        pose = tf.matrix_from_quat(rec["wrist_quat"], rec["wrist_pos"])
        return cls(float(rec["t"]), np.array(rec["landmarks"], dtype=float), pose,
                   float(rec.get("confidence", 1.0)))


def write_keypoint_stream(path: str | Path, frames: Iterable[KeypointFrame]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_canonical({"schema": KEYPOINT_SCHEMA}) + "\n")
        for frame in frames:
            fh.write(dumps_canonical(frame.to_record()) + "\n")


def read_keypoint_stream(path: str | Path) -> Iterator[KeypointFrame]:
    with open(path, "r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("schema") != KEYPOINT_SCHEMA:
            raise RetargetingError(f"unsupported keypoint schema {header.get('schema')!r}")
        last_t = -math.inf
        for line in fh:
            line = line.strip()
            if not line:
                continue
            frame = KeypointFrame.from_record(json.loads(line))
            if frame.timestamp <= last_t:
                raise RetargetingError(
                    f"timestamps must increase strictly ({frame.timestamp} after {last_t})")
            last_t = frame.timestamp
            yield frame


def _unit(v: np.ndarray, what: str) -> np.ndarray:
    n = np.linalg.norm(v)
    if n < 1e-9:
        raise FrameRejected(f"degenerate {what} (zero-length vector)")
    return v / n


def _palm_triad(lm: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(distal, lateral, normal) unit axes of the operator palm."""
    wrist = lm[0]
    distal = _unit((lm[5] + lm[17]) / 2.0 - wrist, "palm distal axis")
    across = lm[5] - lm[17]
    lateral = across - distal * (across @ distal)
    lateral = _unit(lateral, "palm lateral axis")
    normal = np.cross(distal, lateral)
    return distal, lateral, normal


def keypoints_to_angles(frame: KeypointFrame) -> dict[JointId, float]:
    """Active-joint operator angles extracted from one keypoint frame."""
    lm = frame.landmarks
    _, _, palm_normal = _palm_triad(lm)
    wrist = lm[0]
    out: dict[JointId, float] = {}
    for digit in DIGITS:
        base = _DIGIT_BASE_INDEX[digit]
        c0, c1, c2 = lm[base], lm[base + 1], lm[base + 2]
        m = _unit(c0 - wrist, f"{digit.value} metacarpal")
        lateral = np.cross(palm_normal, m)
        lateral = _unit(lateral, f"{digit.value} lateral axis")
        normal = np.cross(m, lateral)

        d1 = _unit(c1 - c0, f"{digit.value} proximal segment")
        out[JointId(digit, Slot.MCP_FLEX)] = math.atan2(d1 @ normal, d1 @ m)
        out[JointId(digit, Slot.MCP_ABD)] = math.atan2(d1 @ lateral, d1 @ m)

        d2 = _unit(c2 - c1, f"{digit.value} middle segment")
        cross = np.linalg.norm(np.cross(d1, d2))
        out[JointId(digit, Slot.PIP)] = math.atan2(cross, d1 @ d2)
    return out


@dataclass(frozen=True)
class OperatorRange:
    """Per-joint [min, max] operator angles observed during calibration."""

    ranges: Mapping[JointId, tuple[float, float]]
    under_calibrated: tuple[JointId, ...] = ()
    frames_used: int = 0

    def span(self, jid: JointId) -> float:
        lo, hi = self.ranges[jid]
        return hi - lo


def calibrate_operator(
    frames: Iterable[KeypointFrame],
    confidence_min: float = CONFIDENCE_MIN,
) -> OperatorRange:
    """Running per-joint min/max over a stream; low-confidence frames dropped.

    Joints whose observed span stays below the under-calibration threshold
    are flagged (and a warning lists them).
    """
    lo: dict[JointId, float] = {}
    hi: dict[JointId, float] = {}
    used = 0
    for frame in frames:
        if frame.confidence < confidence_min:
            continue
        try:
            angles = keypoints_to_angles(frame)
        except FrameRejected:
            continue
        used += 1
        for jid, value in angles.items():
            lo[jid] = min(lo.get(jid, value), value)
            hi[jid] = max(hi.get(jid, value), value)
    if used == 0:
        raise RetargetingError("calibration stream contained no usable frames")
    flagged = tuple(j for j in ACTUATOR_ORDER if hi[j] - lo[j] < UNDER_CALIBRATED_SPAN)
    if flagged:
        warnings.warn(
            "under-calibrated joints (span < "
            f"{UNDER_CALIBRATED_SPAN} rad): {', '.join(j.name for j in flagged)}",
            stacklevel=2,
        )
    return OperatorRange(
        ranges={j: (lo[j], hi[j]) for j in ACTUATOR_ORDER},
        under_calibrated=flagged,
        frames_used=used,
    )


def merge_ranges(a: OperatorRange, b: OperatorRange) -> OperatorRange:
    """Envelope union; appending calibration data never shrinks a range."""
    ranges = {}
    for jid in ACTUATOR_ORDER:
        alo, ahi = a.ranges[jid]
        blo, bhi = b.ranges[jid]
        ranges[jid] = (min(alo, blo), max(ahi, bhi))
    flagged = tuple(j for j in ACTUATOR_ORDER if ranges[j][1] - ranges[j][0] < UNDER_CALIBRATED_SPAN)
    return OperatorRange(ranges, flagged, a.frames_used + b.frames_used)


DEFAULT_EMA_ALPHA = 0.3


@dataclass(frozen=True)
class CalibrationProfile:
    """Per-joint robot limits + operator biological range + workspace map."""

    robot_limits: Mapping[JointId, tuple[float, float]]
    operator_range: OperatorRange
    workspace_map: np.ndarray                 # 4x4 affine, torso -> robot base
    workspace_box: tuple[np.ndarray, np.ndarray]   # (lo, hi) position clamp, m
    ema_alpha: float = DEFAULT_EMA_ALPHA
    version: str = PROFILE_SCHEMA

    def __post_init__(self):
        if not 0.0 < self.ema_alpha <= 1.0:
            raise ProfileError(f"ema_alpha {self.ema_alpha} outside (0, 1]")
        object.__setattr__(self, "workspace_map", np.asarray(self.workspace_map, dtype=float))
        lo, hi = self.workspace_box
        object.__setattr__(self, "workspace_box",
                           (np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)))

    def validate(self) -> None:
        for jid in ACTUATOR_ORDER:
            if jid not in self.robot_limits:
                raise ProfileError(f"profile missing robot limits for {jid.name}")
            if jid not in self.operator_range.ranges:
                raise ProfileError(f"profile missing operator range for {jid.name}")
            olo, ohi = self.operator_range.ranges[jid]
            if not ohi > olo:
                raise ProfileError(f"zero-width operator range for {jid.name}")
        if not np.all(np.isfinite(self.workspace_map)):
            raise ProfileError("workspace map must be finite")

    def to_document(self) -> dict:
        return {
            "schema": self.version,
            "ema_alpha": self.ema_alpha,
            "robot_limits": {j.name: list(self.robot_limits[j]) for j in ACTUATOR_ORDER},
            "operator_range": {j.name: list(self.operator_range.ranges[j]) for j in ACTUATOR_ORDER},
            "under_calibrated": [j.name for j in self.operator_range.under_calibrated],
            "frames_used": self.operator_range.frames_used,
            "workspace_map": self.workspace_map.tolist(),
            "workspace_box": [self.workspace_box[0].tolist(), self.workspace_box[1].tolist()],
        }

    @classmethod
    def from_document(cls, doc: Mapping) -> "CalibrationProfile":
        if doc.get("schema") != PROFILE_SCHEMA:
            raise ProfileError(f"unsupported profile schema {doc.get('schema')!r}")
        ranges = {JointId.parse(k): tuple(v) for k, v in doc["operator_range"].items()}
        op = OperatorRange(
            ranges=ranges,
            under_calibrated=tuple(JointId.parse(n) for n in doc.get("under_calibrated", [])),
            frames_used=int(doc.get("frames_used", 0)),
        )
        return cls(
            robot_limits={JointId.parse(k): tuple(v) for k, v in doc["robot_limits"].items()},
            operator_range=op,
            workspace_map=np.array(doc["workspace_map"], dtype=float),
            workspace_box=(np.array(doc["workspace_box"][0]), np.array(doc["workspace_box"][1])),
            ema_alpha=float(doc["ema_alpha"]),
        )

    def content_hash(self) -> str:
        return content_hash(self.to_document())


def save_profile(profile: CalibrationProfile, path: str | Path) -> None:
    Path(path).write_text(dumps_canonical(profile.to_document()) + "\n", encoding="utf-8")


def load_profile(path: str | Path) -> CalibrationProfile:
    profile = CalibrationProfile.from_document(json.loads(Path(path).read_text(encoding="utf-8")))
    profile.validate()
    return profile


def robot_limits_from_spec(spec: HandSpec) -> dict[JointId, tuple[float, float]]:
    """Robot joint ranges discovered by sweeping each motor to its extremes.

    Emulates the manual move-to-extremes step on the virtual hand: drive
    each spool across its reachable interval and record the achieved joint
    envelope, rather than copying configured limits.
    """
    from .tendon import joint_to_motor, motor_to_joint, spool_box

    box = spool_box(spec)
    neutral = joint_to_motor(spec, JointAngles.zeros())
    lo = {j: math.inf for j in ACTUATOR_ORDER}
    hi = {j: -math.inf for j in ACTUATOR_ORDER}
    for motor in box:
        for end in (0, 1):
            spools = dict(neutral)
            spools[motor] = box[motor][end]
            q, _ = motor_to_joint(spec, spools)
            for jid in ACTUATOR_ORDER:
                lo[jid] = min(lo[jid], q[jid])
                hi[jid] = max(hi[jid], q[jid])
    return {j: (lo[j], hi[j]) for j in ACTUATOR_ORDER}


def default_profile(
    spec: HandSpec,
    operator_range: OperatorRange,
    ema_alpha: float = DEFAULT_EMA_ALPHA,
) -> CalibrationProfile:
    profile = CalibrationProfile(
        robot_limits=robot_limits_from_spec(spec),
        operator_range=operator_range,
        workspace_map=np.eye(4),
        workspace_box=(np.array([-0.6, -0.6, 0.0]), np.array([0.6, 0.6, 1.2])),
        ema_alpha=ema_alpha,
    )
    profile.validate()
    return profile


def retarget(profile: CalibrationProfile, operator_angles: Mapping[JointId, float]) -> JointAngles:
    """Linear map from operator range onto robot limits, clamped, coupled.

    u = clamp((theta - op_min) / (op_max - op_min), 0, 1);
    target = robot_min + u * (robot_max - robot_min).
    """
    updates: dict[JointId, float] = {}
    for jid in ACTUATOR_ORDER:
        olo, ohi = profile.operator_range.ranges[jid]
        if not ohi > olo:
            raise ProfileError(f"zero-width operator range for {jid.name}")
        rlo, rhi = profile.robot_limits[jid]
        u = (operator_angles[jid] - olo) / (ohi - olo)
        u = min(max(u, 0.0), 1.0)
        updates[jid] = rlo + u * (rhi - rlo)
    return project_coupling(JointAngles.zeros().replace(updates))


def smooth(prev: JointAngles, new: JointAngles, alpha: float) -> JointAngles:
    """Exponential moving average, per joint: alpha*new + (1-alpha)*prev."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha {alpha} outside (0, 1]")
    if alpha == 1.0:
        return new
    return JointAngles.from_array(alpha * new.array() + (1.0 - alpha) * prev.array())


def retarget_wrist(profile: CalibrationProfile, wrist_pose: np.ndarray) -> tuple[np.ndarray, bool]:
    """Map the torso-frame wrist pose into the robot workspace.

    Position goes through the affine workspace map and is clamped to the
    configured box (flagged); orientation passes through after the map's
    fixed rotation.
    """
    wrist_pose = np.asarray(wrist_pose, dtype=float)
    A = profile.workspace_map
    out = np.eye(4)
    out[:3, :3] = A[:3, :3] @ wrist_pose[:3, :3]
    pos = A[:3, :3] @ wrist_pose[:3, 3] + A[:3, 3]
    lo, hi = profile.workspace_box
    clamped_pos = np.minimum(np.maximum(pos, lo), hi)
    out[:3, 3] = clamped_pos
    return out, bool(np.any(clamped_pos != pos))


# --------------------------------------------------------------------------
# Synthetic landmark generation (exact inverse of the extraction above)
# --------------------------------------------------------------------------

_OPERATOR_SEGMENTS = {
    # base offset in the palm frame, then three segment lengths (m)
    Digit.THUMB: (np.array([0.030, 0.005, 0.020]), (0.045, 0.032, 0.025)),
    Digit.INDEX: (np.array([0.025, 0.0, 0.085]), (0.042, 0.026, 0.020)),
    Digit.MIDDLE: (np.array([0.008, 0.0, 0.088]), (0.046, 0.029, 0.021)),
    Digit.RING: (np.array([-0.009, 0.0, 0.085]), (0.042, 0.027, 0.020)),
    Digit.PINKY: (np.array([-0.026, 0.0, 0.078]), (0.033, 0.021, 0.018)),
}


def synthesize_landmarks(angles: Mapping[JointId, float]) -> np.ndarray:
    """Landmarks of a synthetic operator hand posed at the given angles.

    Built to invert keypoints_to_angles exactly (same triads and angle
    definitions), for oracle roundtrips and synthetic streams. Flexion
    and abduction magnitudes must stay below pi/2.
    """
    lm = np.zeros((LANDMARKS_PER_HAND, 3))
    # palm triad must match the extraction's: normal from index/pinky knuckles
    idx_base = _OPERATOR_SEGMENTS[Digit.INDEX][0]
    pinky_base = _OPERATOR_SEGMENTS[Digit.PINKY][0]
    distal = _unit((idx_base + pinky_base) / 2.0, "palm distal")
    across = idx_base - pinky_base
    lateral_p = _unit(across - distal * (across @ distal), "palm lateral")
    palm_normal = np.cross(distal, lateral_p)

    def rotate(v, a, ax):
        return (v * math.cos(a) + np.cross(ax, v) * math.sin(a)
                + ax * (ax @ v) * (1 - math.cos(a)))

    for digit in DIGITS:
        base_offset, lengths = _OPERATOR_SEGMENTS[digit]
        c0 = base_offset
        m = _unit(c0, f"{digit.value} base")
        lateral = _unit(np.cross(palm_normal, m), f"{digit.value} lateral")
        normal = np.cross(m, lateral)

        flex = angles.get(JointId(digit, Slot.MCP_FLEX), 0.0)
        abd = angles.get(JointId(digit, Slot.MCP_ABD), 0.0)
        if abs(flex) >= math.pi / 2 or abs(abd) >= math.pi / 2:
            raise ValueError("synthetic hand supports base angles below pi/2 only")
        d1 = m + normal * math.tan(flex) + lateral * math.tan(abd)
        d1 = d1 / np.linalg.norm(d1)

        coupled = angles.get(JointId(digit, Slot.PIP), 0.0)
        axis = np.cross(d1, normal)
        norm = np.linalg.norm(axis)
        axis = lateral if norm < 1e-9 else axis / norm
        d2 = rotate(d1, coupled, axis)
        d3 = rotate(d2, coupled, axis)

        idx = _DIGIT_BASE_INDEX[digit]
        lm[idx] = c0
        lm[idx + 1] = lm[idx] + d1 * lengths[0]
        lm[idx + 2] = lm[idx + 1] + d2 * lengths[1]
        lm[idx + 3] = lm[idx + 2] + d3 * lengths[2]
    return lm


def synthetic_frame(angles: Mapping[JointId, float], t: float,
                    wrist_pose: np.ndarray | None = None,
                    confidence: float = 1.0) -> KeypointFrame:
    pose = np.eye(4) if wrist_pose is None else wrist_pose
    return KeypointFrame(t, synthesize_landmarks(angles), pose, confidence)


def synthetic_sweep(
    n_frames: int = 120,
    rate_hz: float = 30.0,
    amplitude: Mapping[Slot, tuple[float, float]] | None = None,
    dwell: int = 0,
) -> list[KeypointFrame]:
    """A full range-of-motion sweep: every joint covers its amplitude.

    dwell repeats the extreme poses for that many frames (operators hold
    their extremes during calibration, which also lets smoothing settle).
    """
    amplitude = amplitude or {
        Slot.MCP_ABD: (-0.4, 0.4),
        Slot.MCP_FLEX: (0.0, 1.3),
        Slot.PIP: (0.0, 1.4),
    }
    base = [0.5 - 0.5 * math.cos(2 * math.pi * i / max(n_frames - 1, 1))
            for i in range(n_frames)]
    peak = max(range(n_frames), key=lambda i: base[i])
    levels = ([0.0] * dwell + base[: peak + 1] + [base[peak]] * dwell
              + base[peak + 1:] + [0.0] * dwell)
    frames = []
    for i, level in enumerate(levels):
        angles = {}
        for digit in DIGITS:
            for slot in ACTIVE_SLOTS:
                lo, hi = amplitude[slot]
                angles[JointId(digit, slot)] = lo + (hi - lo) * level
        frames.append(synthetic_frame(angles, t=i / rate_hz))
    return frames
